"""Acceptance suite: one function per exit criterion.

Every function returns a ``CriterionResult``; ``run_all`` executes them in
order.  Tolerances and runtime budgets are fixed here and nowhere else.
"""

from __future__ import annotations

import filecmp
import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List

import numpy as np

from .certificates import (
    PowerFunction,
    WeakRateInputs,
    check_w3,
    strong_inputs_from_model,
    strong_radius,
    validate_certificate,
    weak_fixed_point,
)
from .langevin import SimConfig, simulate, stationary_check, linear_gaussian_drift
from .laplace import (
    BoundInputs,
    bvm_audit,
    cameron_martin_shift_check,
    feldman_hajek_check,
    h_bound,
    k_bound,
    kl_commuting_gaussians,
    kl_estimate,
    laplace_pair,
)
from .model import (
    ModelInstance,
    eps2_envelope,
    eval_empirical_loglik,
    exact_posterior,
    sample_whitened_noise,
    synthesize_data,
    theta_star_preset,
)
from .nonconjugate import CubicPerturbation
from .spectral import (
    STREAM_TAIL,
    DiagonalOperator,
    GaussianSpec,
    PowerLaw,
    SpectralVector,
    op_norm,
    standard_normals,
)


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float
    budget: float

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"[{verdict}] criterion {self.number}: {self.name} -- {self.detail} ({self.seconds:.2f}s / {self.budget:g}s)"


def coercive_model(dim: int, n: int, seed: int = 7) -> ModelInstance:
    """``Q = diag(m^-2)``, ``A = diag(m^2)`` so that ``QA = I`` (coercivity constant 1)."""
    q = DiagonalOperator.power(1.0, 2.0, dim)
    a = DiagonalOperator.power(1.0, -2.0, dim)
    return synthesize_data(q, a, theta_star_preset("smooth", q), n, seed)


def posterior_quantile_radius(m: ModelInstance, level: float, n_samples: int, seed: int) -> float:
    post = exact_posterior(m)
    z = standard_normals(seed, STREAM_TAIL, n_samples, m.dim)
    draws = post.mean.coeffs + np.sqrt(post.cov.eigs) * z
    return float(np.quantile(np.linalg.norm(draws - m.theta_star.coeffs, axis=1), level))


def loglog_slope(xs, ys) -> float:
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)[0])


# ---------------------------------------------------------------------------


def criterion_1(threads: int = 1):
    worst = 0.0
    for n in (10, 1000):
        m = coercive_model(64, n)
        post = exact_posterior(m)
        pair = laplace_pair(m, post)
        worst = max(worst, kl_commuting_gaussians(pair.posterior, pair.laplace))
    return worst <= 1e-10, f"max KL(posterior || Laplace) = {worst:.3e} <= 1e-10"


def criterion_2(threads: int = 1):
    m = coercive_model(16, 100)
    cfg = SimConfig(dt=1.0, t_end=20.0 * m.n, n_replicas=10_000, scheme="exact_ou", seed=2, threads=threads)
    rep = stationary_check(m, cfg)
    return rep.max_abs_z < 4, f"max |z| = {rep.max_abs_z:.3f} < 4 over 16 modes"


def criterion_3(threads: int = 1):
    worst_slack = math.inf
    failures = []
    for n in (100, 1000, 10_000):
        m = coercive_model(64, n)
        for delta in (0.5, 0.1, 0.01):
            cert = strong_radius(strong_inputs_from_model(m, delta, c_universal=1.0))
            cert = validate_certificate(cert, m, 20_000, seed=3)
            ev = cert.empirical_validation
            worst_slack = min(worst_slack, delta + 3 * ev["std_error"] - ev["tail_mass"])
            if not ev["passed"]:
                failures.append((n, delta, ev["tail_mass"]))
    ok = not failures
    return ok, f"9 (n, delta) cells, min slack {worst_slack:.4f}" + ("" if ok else f"; failures {failures}")


def criterion_4(threads: int = 1):
    ns = (100, 1000, 10_000, 100_000)
    delta = 0.1
    radii, quant = [], []
    for n in ns:
        m = coercive_model(64, n)
        radii.append(strong_radius(strong_inputs_from_model(m, delta)).radius)
        quant.append(posterior_quantile_radius(m, 1 - delta, 20_000, seed=4))
    s_cert, s_emp = loglog_slope(ns, radii), loglog_slope(ns, quant)
    ok = abs(s_cert + 0.5) <= 0.05 and abs(s_emp + 0.5) <= 0.05
    return ok, f"slopes: certified {s_cert:.4f}, empirical {s_emp:.4f} (target -0.5 +/- 0.05)"


def w3_symbolic(p: float, q: float) -> bool:
    return p >= q + 1 and p * p >= 3 + q * q - q


W3_GRID = [(p, q) for p in (1.0, 1.5, 2.0, 2.5, 3.0) for q in (0.0, 0.5, 1.0, 2.0)]


def criterion_5(threads: int = 1):
    inp = WeakRateInputs(PowerFunction(1, 2), PowerFunction(1, 0), eps=0.1, b=0.0,
                         tr_q=0.01, q_opnorm=0.02 / math.log(10), n=1, delta=0.1)
    z = weak_fixed_point(inp).radius
    exact = (0.1 + math.sqrt(0.01 + 0.12)) / 2
    rel = abs(z - exact) / exact
    grid = np.geomspace(1e-2, 1e2, 60)
    mismatches = [(p, q) for p, q in W3_GRID
                  if check_w3(PowerFunction(1, p), PowerFunction(1, q), grid).passed != w3_symbolic(p, q)]
    ok = rel <= 1e-9 and not mismatches
    return ok, f"root rel. error {rel:.2e}; W.3 verdict mismatches {len(mismatches)}/20 {mismatches}"


def criterion_6(threads: int = 1):
    m = coercive_model(64, 100)
    z = sample_whitened_noise(m.q, m.a, 10_000, seed=6)
    norms = np.linalg.norm(z, axis=1) / math.sqrt(m.n)
    parts, ok = [], True
    for delta in (0.1, 0.01):
        cover = float(np.mean(norms <= eps2_envelope(m.qaq_trace, m.qaq_opnorm, m.n, delta)))
        ok &= cover >= 1 - delta
        parts.append(f"delta={delta}: coverage {cover:.4f}")
    return ok, "; ".join(parts)


def criterion_7(threads: int = 1):
    q = DiagonalOperator.power(1.0, 2.0, 256)
    families = {  # product lambda_m mu_m ~ m^-rho; l2 iff rho > 1/2
        "rho=2": (DiagonalOperator.power(1.0, 0.0, 256), "equivalent"),
        "rho=0": (DiagonalOperator.power(1.0, -2.0, 256), "singular"),
        "rho=1/2": (DiagonalOperator.power(1.0, -1.5, 256), "singular"),
    }
    fh = {k: feldman_hajek_check(q, h, 10).verdict for k, (h, _) in families.items()}
    fh_ok = all(fh[k] == want for k, (_, want) in families.items())
    inside = cameron_martin_shift_check(q, SpectralVector.from_decay(PowerLaw(1.0, 2.0), 256)).in_cm
    outside = cameron_martin_shift_check(q, SpectralVector.from_decay(PowerLaw(1.0, 1.0), 256)).in_cm
    ok = fh_ok and inside and not outside
    return ok, f"F-H verdicts {fh}; CM shifts in_cm: a=mu -> {inside}, a=sqrt(mu) -> {outside}"


def criterion_8(threads: int = 8):
    # gradient vs central finite differences
    m = coercive_model(32, 50)
    rng = np.random.default_rng(8)
    worst = 0.0
    h = 1e-5
    for _ in range(20):
        theta = rng.standard_normal(m.dim) * m.theta_star.coeffs.max()
        g = eval_empirical_loglik(m, SpectralVector(theta)).gradient_precond.coeffs
        fd = np.empty(m.dim)
        for k in range(m.dim):
            e = np.zeros(m.dim)
            e[k] = h
            fd[k] = (eval_empirical_loglik(m, SpectralVector(theta + e)).value
                     - eval_empirical_loglik(m, SpectralVector(theta - e)).value) / (2 * h)
        worst = max(worst, float(np.max(np.abs(m.mu * fd - g)) / np.max(np.abs(g))))
    # thread-count invariance through the CLI
    from .cli import run

    with tempfile.TemporaryDirectory() as tmp:
        cfg_path = Path(tmp) / "c.toml"
        cfg_path.write_text(
            "seed = 11\n[model]\ndim = 16\nn = 100\n[sim]\nn_replicas = 3000\nt_end = 50.0\ndt = 0.05\n"
            "scheme = \"semi_implicit_euler\"\nrecord_times = [10.0, 50.0]\n"
        )
        outs = []
        for k in (1, threads):
            out = Path(tmp) / f"t{k}"
            code = run(["simulate", "--config", str(cfg_path), "--out", str(out), "--threads", str(k)])
            outs.append((code, out))
        names = ["moments.csv", "per_mode.csv", "summary.csv"]
        identical = all(c == 0 for c, _ in outs) and all(
            filecmp.cmp(outs[0][1] / f, outs[1][1] / f, shallow=False) for f in names)
    # KL(p||p) = 0 and KL >= 0
    kl_self, kl_min = 0.0, math.inf
    for _ in range(1000):
        d = int(rng.integers(1, 12))
        p = GaussianSpec(SpectralVector(rng.normal(size=d)), DiagonalOperator(rng.uniform(0.05, 3, d)))
        r = GaussianSpec(SpectralVector(rng.normal(size=d)), DiagonalOperator(rng.uniform(0.05, 3, d)))
        kl_self = max(kl_self, abs(kl_commuting_gaussians(p, p)))
        kl_min = min(kl_min, kl_commuting_gaussians(p, r))
    ok = worst < 1e-6 and identical and kl_self == 0.0 and kl_min >= 0.0
    return ok, (f"FD rel. error {worst:.2e}; threads 1 vs {threads} identical={identical}; "
                f"max KL(p||p)={kl_self:g}; min KL={kl_min:.3e}")


def fixture_kl(n: int, kappa: float, n_replicas: int, seed: int, threads: int = 1):
    """Langevin-based KL(posterior || Laplace) on the cubic fixture, plus the fixture."""
    m = coercive_model(16, n)
    fx = CubicPerturbation(m, kappa)
    rates = 1.0 / n + m.mu * m.lam
    cfg = SimConfig(dt=0.01, t_end=10.0 / float(rates.min()), n_replicas=n_replicas,
                    scheme="semi_implicit_euler", seed=seed, threads=threads)
    tr = simulate(fx.drift(), m.q, n, m.theta_star.coeffs, cfg)
    est = kl_estimate(tr.final_states, fx.log_target, fx.laplace_gaussian(), 200_000, seed)
    return est, fx


def h_grid_monotone() -> bool:
    ns = np.geomspace(1e2, 1e6, 9)
    ok = True
    for alpha in (0.3, 0.4, 0.5):
        hs, ks = [], []
        for n in ns:
            env = 1.0 / math.sqrt(n)
            inp = BoundInputs(a_smooth=1.0, eps1_2=env, eps2_2=env, l2=0.5, alpha=alpha, sigma=1.0,
                              lambda_min=1.0, q_opnorm=1.0, tr_q=1.644934, n=int(n), delta=0.1)
            hs.append(h_bound(inp).value)
            ks.append(k_bound(inp).value)
        ok &= bool(np.all(np.diff(hs) <= 0) and np.all(np.diff(ks) <= 0))
    return ok


def criterion_9(threads: int = 1):
    monotone = h_grid_monotone()
    kappa = 1.0
    ns = (10, 100, 1000)
    estimates, bounds = [], []
    c_cal = None
    for n in ns:
        est, fx = fixture_kl(n, kappa, 20_000, seed=9, threads=threads)
        audit = bvm_audit(fx.model, 200, 1.0, seed=9, precond_gradient=fx.precond_gradient,
                          precond_hessian_star=fx.precond_hessian_star())
        a_smooth = audit["BvM.1"].empirical
        unit = BoundInputs(a_smooth=a_smooth, eps1_2=0.0, eps2_2=0.0, l2=0.0, alpha=0.5, sigma=1.0,
                           lambda_min=float(fx.model.lam.min()), q_opnorm=op_norm(fx.model.q),
                           tr_q=float(fx.model.mu.sum()), n=n, delta=0.1)
        if c_cal is None:
            c_cal = est.value / h_bound(unit).value
        bound = h_bound(BoundInputs(**{**unit.to_dict(), "c1": c_cal, "c2": c_cal})).value
        estimates.append(est)
        bounds.append(bound)
    below = all(e.value <= b + 3 * e.std_error for e, b in zip(estimates[1:], bounds[1:]))
    detail = ", ".join(f"n={n}: KL={e.value:.2e}+/-{e.std_error:.1e} H={b:.2e}"
                       for n, e, b in zip(ns, estimates, bounds))
    return monotone and below, f"H/K nonincreasing={monotone}; c1=c2={c_cal:.3g}; {detail}"


CRITERIA: Dict[int, tuple] = {
    1: ("conjugate Laplace collapse", criterion_1, 1.0),
    2: ("SPDE stationarity", criterion_2, 60.0),
    3: ("strong certificate validity", criterion_3, 120.0),
    4: ("n^-1/2 contraction scaling", criterion_4, 120.0),
    5: ("fixed-point solver and (W.3) checker", criterion_5, 5.0),
    6: ("eps2 coverage", criterion_6, 10.0),
    7: ("measure-comparison checkers", criterion_7, 5.0),
    8: ("numerical hygiene", criterion_8, 30.0),
    9: ("H/K bound behavior", criterion_9, 180.0),
}


def run_criterion(number: int, threads: int = 1) -> CriterionResult:
    name, fn, budget = CRITERIA[number]
    t0 = time.perf_counter()
    kwargs = {"threads": threads} if number != 8 else {"threads": max(threads, 8)}
    ok, detail = fn(**kwargs)
    elapsed = time.perf_counter() - t0
    on_time = elapsed < budget
    if not on_time:
        detail += f"; runtime budget exceeded"
    return CriterionResult(number, name, bool(ok) and on_time, detail, elapsed, budget)


def run_all(threads: int = 1, report: Callable[[str], None] = print) -> List[CriterionResult]:
    results = []
    for k in sorted(CRITERIA):
        res = run_criterion(k, threads)
        report(res.line())
        results.append(res)
    return results
