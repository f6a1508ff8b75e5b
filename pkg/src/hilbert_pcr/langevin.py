"""Preconditioned Langevin dynamics on the spectral truncation.

Each replica follows

    d theta = [-theta/n - (1/n) Q grad V(theta) + Q grad F_n(theta)] dt + sqrt(2/n) dW^Q

with the Q-Wiener process expanded in the eigenbasis, so mode ``m`` receives
independent Brownian increments of variance ``(2/n) mu_m dt``.  For affine
drifts every mode is a scalar Ornstein-Uhlenbeck process and is advanced with
its exact Gaussian transition; other drifts use a semi-implicit Euler step.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .model import AssumptionError, ModelInstance, audit_assumptions, exact_posterior
from .spectral import (
    REPLICA_BLOCK,
    STREAM_LANGEVIN,
    STREAM_TAIL,
    DiagonalOperator,
    GaussianSpec,
    SpectralError,
    SpectralVector,
    block_rng,
    standard_normals,
)
from .tables import write_csv

SCHEMES = ("exact_ou", "semi_implicit_euler")
Grad = Callable[[np.ndarray], np.ndarray]


class DivergenceError(RuntimeError):
    def __init__(self, replica: int, step: int, norm: float):
        super().__init__(f"replica {replica} diverged at step {step} (||theta|| = {norm:.3g})")
        self.replica = replica
        self.step = step


@dataclass(frozen=True)
class DriftSpec:
    """Preconditioned gradients of the log-likelihood and of the prior potential.

    Both callables map an ``(R, M)`` array of states to ``(R, M)`` gradients.
    ``implicit_slope`` is a nonpositive per-mode slope that semi-implicit Euler
    treats implicitly together with ``-theta/n``.
    """

    likelihood_grad: Grad
    prior_grad: Grad
    linearity_tag: str = "general"
    implicit_slope: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.linearity_tag not in ("linear", "general"):
            raise ValueError(f"unknown linearity tag {self.linearity_tag!r}")

    def total(self, theta: np.ndarray, n: int) -> np.ndarray:
        """Drift without the ``-theta/n`` term."""
        return self.likelihood_grad(theta) - self.prior_grad(theta) / n

    def affine_coefficients(self, dim: int, n: int) -> Tuple[np.ndarray, np.ndarray]:
        """Per-mode ``(slope, intercept)`` of a diagonal affine drift."""
        intercept = self.total(np.zeros((1, dim)), n)[0]
        jac = self.total(np.eye(dim), n) - intercept
        slope = np.diag(jac).copy()
        off = jac - np.diag(slope)
        if np.max(np.abs(off), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(slope))):
            raise SpectralError("linear drift couples modes; the eigenbasis must be shared")
        return slope, intercept


def linear_gaussian_drift(m: ModelInstance) -> DriftSpec:
    zero = lambda t: np.zeros_like(t)  # noqa: E731
    return DriftSpec(m.precond_gradient, zero, "linear", implicit_slope=-m.mu * m.lam)


@dataclass(frozen=True)
class SimConfig:
    dt: float
    t_end: float
    n_replicas: int
    scheme: str = "exact_ou"
    record_times: Tuple[float, ...] = ()
    seed: int = 0
    guard: float = 1e8
    threads: int = 1
    p_values: Tuple[int, ...] = (2, 4)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not (0 < self.dt < self.t_end):
            raise ValueError("need 0 < dt < t_end")
        if self.n_replicas < 2:
            raise ValueError("need at least two replicas for standard errors")
        times = tuple(float(t) for t in self.record_times) or (float(self.t_end),)
        if list(times) != sorted(times) or times[0] < 0 or times[-1] > self.t_end:
            raise ValueError("record_times must be sorted inside [0, t_end]")
        object.__setattr__(self, "record_times", times)
        if any(p <= 0 or p % 2 for p in self.p_values):
            raise ValueError("moment orders must be positive even integers")

    @classmethod
    def for_model(cls, m: ModelInstance, **overrides) -> "SimConfig":
        """Defaults tied to the model's relaxation rates ``1/n + mu_m lambda_m``."""
        rates = 1.0 / m.n + m.mu * m.lam
        params = dict(dt=0.1 / float(np.max(rates)), t_end=10.0 / float(np.min(rates)),
                      n_replicas=1000)
        params.update(overrides)
        return cls(**params)


@dataclass
class PerModeStats:
    mean: np.ndarray
    variance: np.ndarray
    n_replicas: int

    @property
    def mean_se(self) -> np.ndarray:
        return np.sqrt(self.variance / self.n_replicas)


@dataclass
class MomentTrace:
    times: List[float]
    p_norms: Dict[int, Tuple[np.ndarray, np.ndarray]]
    per_mode_stats: PerModeStats
    final_states: np.ndarray = field(repr=False)

    def rows(self):
        for p in sorted(self.p_norms):
            est, se = self.p_norms[p]
            for t, e, s in zip(self.times, est, se):
                yield {"time": t, "p": p, "estimate": e, "std_error": s}

    def to_csv(self, path) -> None:
        write_csv(path, ["time", "p", "estimate", "std_error"], self.rows())


def _segments(cfg: SimConfig) -> Tuple[List[float], List[int]]:
    """Time increments and the number of steps taken in each of them."""
    if cfg.scheme == "exact_ou":
        bounds = [0.0, *cfg.record_times]
        return [b - a for a, b in zip(bounds, bounds[1:])], [1] * len(cfg.record_times)
    idx = [int(round(t / cfg.dt)) for t in cfg.record_times]
    steps = [b - a for a, b in zip([0, *idx], idx)]
    return [cfg.dt] * len(idx), steps


def simulate(
    model_drift: DriftSpec,
    q: DiagonalOperator,
    n: int,
    theta_init,
    cfg: SimConfig,
    center: Optional[SpectralVector] = None,
) -> MomentTrace:
    """Evolve ``cfg.n_replicas`` independent trajectories and collect moments.

    ``theta_init`` is one vector (shared start, ``theta*`` by default in the
    experiments) or an ``(R, M)`` array of per-replica starts.  Moments are
    ``E ||theta_t - center||^p`` with ``center`` defaulting to the shared start.
    """
    dim = q.dim
    init = np.asarray(theta_init, dtype=float)
    if init.ndim == 1:
        if init.size != dim:
            raise SpectralError("theta_init dimension mismatch")
        init = np.broadcast_to(init, (cfg.n_replicas, dim))
    elif init.shape != (cfg.n_replicas, dim):
        raise SpectralError(f"theta_init rows must have shape {(cfg.n_replicas, dim)}")
    if center is None:
        if np.asarray(theta_init).ndim != 1:
            raise SpectralError("pass center when replicas start from different points")
        center_c = np.asarray(theta_init, dtype=float)
    else:
        center_c = center.coeffs
    mu = q.eigs
    inv_n = 1.0 / n

    if cfg.scheme == "exact_ou":
        if model_drift.linearity_tag != "linear":
            raise ValueError("exact_ou needs a drift tagged linear")
        slope, intercept = model_drift.affine_coefficients(dim, n)
        rate = inv_n - slope
        if np.any(rate <= 0):
            raise SpectralError("exact OU transition needs positive per-mode relaxation rates")
        stationary_mean = intercept / rate
    else:
        implicit = (np.zeros(dim) if model_drift.implicit_slope is None
                    else np.asarray(model_drift.implicit_slope, dtype=float))
        if np.any(implicit > 0):
            raise SpectralError("implicit slope must be nonpositive")
    increments, steps = _segments(cfg)
    n_rec = len(cfg.record_times)
    n_blocks = math.ceil(cfg.n_replicas / REPLICA_BLOCK)

    def run_block(b: int):
        lo = b * REPLICA_BLOCK
        hi = min(lo + REPLICA_BLOCK, cfg.n_replicas)
        theta = np.array(init[lo:hi], dtype=float)
        rng = block_rng(cfg.seed, STREAM_LANGEVIN, b)
        dists = np.empty((n_rec, hi - lo))
        step = 0
        for r, (h, k) in enumerate(zip(increments, steps)):
            if cfg.scheme == "exact_ou":
                if h > 0:
                    decay = np.exp(-rate * h)
                    sd = np.sqrt(mu * -np.expm1(-2.0 * rate * h) / (n * rate))
                    z = rng.standard_normal(theta.shape)
                    theta = stationary_mean + (theta - stationary_mean) * decay + sd * z
                step += 1
                _guard(theta, cfg.guard, lo, step)
            else:
                denom = 1.0 + h * (inv_n - implicit)
                noise_sd = np.sqrt(2.0 * h * mu / n)
                for _ in range(k):
                    z = rng.standard_normal(theta.shape)
                    explicit = model_drift.total(theta, n) - implicit * theta
                    theta = (theta + h * explicit + noise_sd * z) / denom
                    step += 1
                    _guard(theta, cfg.guard, lo, step)
            dists[r] = np.linalg.norm(theta - center_c, axis=1)
        return dists, theta

    def attempt(b: int):
        try:
            return run_block(b)
        except DivergenceError as exc:
            return exc

    if cfg.threads > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(attempt, range(n_blocks)))
    else:
        results = [attempt(b) for b in range(n_blocks)]
    failures = [r for r in results if isinstance(r, DivergenceError)]
    if failures:
        # same report whatever the scheduling: earliest step, then lowest replica
        raise min(failures, key=lambda e: (e.step, e.replica))

    dists = np.concatenate([r[0] for r in results], axis=1)
    final = np.concatenate([r[1] for r in results], axis=0)
    R = cfg.n_replicas
    p_norms = {}
    for p in cfg.p_values:
        vals = dists**p
        p_norms[p] = (vals.mean(axis=1), vals.std(axis=1, ddof=1) / math.sqrt(R))
    actual_times = list(np.cumsum([h * k for h, k in zip(increments, steps)]))
    stats = PerModeStats(final.mean(axis=0), final.var(axis=0, ddof=1), R)
    return MomentTrace(actual_times, p_norms, stats, final)


def _guard(theta: np.ndarray, guard: float, offset: int, step: int) -> None:
    norms = np.linalg.norm(theta, axis=1)
    bad = ~(norms <= guard)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise DivergenceError(offset + i, step, float(norms[i]))


# ---------------------------------------------------------------------------
# stationarity and tail mass


@dataclass
class DistanceReport:
    exact: GaussianSpec
    stats: PerModeStats
    z_mean: np.ndarray
    z_var: np.ndarray
    t_end: float
    threshold: float = 4.0

    @property
    def max_abs_z(self) -> float:
        return float(max(np.max(np.abs(self.z_mean)), np.max(np.abs(self.z_var))))

    @property
    def passed(self) -> bool:
        return self.max_abs_z < self.threshold

    def rows(self):
        for m in range(self.exact.dim):
            yield {
                "mode": m + 1,
                "mean": self.stats.mean[m],
                "variance": self.stats.variance[m],
                "exact_mean": self.exact.mean.coeffs[m],
                "exact_variance": self.exact.cov.eigs[m],
                "z_mean": self.z_mean[m],
                "z_var": self.z_var[m],
            }

    def to_csv(self, path) -> None:
        write_csv(path, ["mode", "mean", "variance", "exact_mean", "exact_variance", "z_mean", "z_var"],
                  self.rows())


def compare_to_gaussian(stats: PerModeStats, target: GaussianSpec, t_end: float) -> DistanceReport:
    R = stats.n_replicas
    v = target.cov.eigs
    z_mean = (stats.mean - target.mean.coeffs) / np.sqrt(v / R)
    z_var = (stats.variance - v) / (v * math.sqrt(2.0 / (R - 1)))
    return DistanceReport(target, stats, z_mean, z_var, t_end)


def stationary_check(
    model: ModelInstance,
    cfg: SimConfig,
    theta_init=None,
    audit_pairs: int = 64,
    audit_radius: float = 1.0,
) -> DistanceReport:
    """Compare Langevin end-states with the exact conjugate posterior, mode by mode.

    Refuses (``AssumptionError``) when the sampled audit refutes (A.1), (A.2)
    or (B), since the posterior is then not guaranteed to be the invariant law.
    """
    audit = audit_assumptions(model, audit_pairs, audit_radius, cfg.seed)
    for cond in ("A.1", "A.2", "B"):
        if audit[cond].status == "fail":
            raise AssumptionError(cond, "audit failed; stationarity cannot be certified")
    start = model.theta_star.coeffs if theta_init is None else theta_init
    trace = simulate(linear_gaussian_drift(model), model.q, model.n, start, cfg,
                     center=model.theta_star)
    return compare_to_gaussian(trace.per_mode_stats, exact_posterior(model), trace.times[-1])


@dataclass(frozen=True)
class TailMass:
    mass: float
    se: float
    sampler: str
    warnings: Tuple[str, ...] = ()


def tail_mass_estimate(
    model: ModelInstance,
    radius: float,
    n_samples: int,
    sampler: str,
    seed: int,
    stationarity: Optional[DistanceReport] = None,
    sim_cfg: Optional[SimConfig] = None,
) -> TailMass:
    """Posterior mass of ``{||theta - theta*|| >= radius}`` with its binomial standard error."""
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    notes = []
    if sampler == "exact":
        draws = _exact_draws(model, n_samples, seed)
    elif sampler == "langevin":
        cfg = sim_cfg or SimConfig.for_model(model, n_replicas=n_samples, seed=seed)
        draws = simulate(linear_gaussian_drift(model), model.q, model.n, model.theta_star.coeffs,
                         cfg, center=model.theta_star).final_states
        if stationarity is None or not stationarity.passed:
            notes.append("langevin end-states used without a passing stationarity check")
            warnings.warn(notes[-1], RuntimeWarning, stacklevel=2)
    else:
        raise ValueError(f"unknown sampler {sampler!r}")
    dist = np.linalg.norm(draws - model.theta_star.coeffs, axis=1)
    mass = float(np.mean(dist >= radius))
    se = math.sqrt(mass * (1.0 - mass) / dist.size)
    return TailMass(mass, se, sampler, tuple(notes))


def _exact_draws(model: ModelInstance, n_samples: int, seed: int) -> np.ndarray:
    post = exact_posterior(model)
    z = standard_normals(seed, STREAM_TAIL, n_samples, model.dim)
    return post.mean.coeffs + np.sqrt(post.cov.eigs) * z
