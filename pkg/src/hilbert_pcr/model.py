"""Linear Gaussian white-noise experiment in a shared eigenbasis.

Observations ``X_i = G theta* + eps_i`` are reduced to the sufficient
statistic ``Xbar_n``.  Only the diagonal composites enter any formula: the
prior covariance ``Q`` (eigenvalues ``mu_m``) and the information operator
``A = G* Gamma^{-1} G`` (eigenvalues ``lambda_m``).  The data are stored as
``c_m``, the coefficients of ``G* Gamma^{-1} Xbar_n``, so that

    c_m = lambda_m theta*_m + sqrt(lambda_m) g_m / sqrt(n),    g_m ~ N(0, 1),

and the whitened fluctuation ``Z = Q G* Gamma^{-1} xi`` has coefficients
``mu_m sqrt(lambda_m) g_m``, i.e. ``Z ~ N(0, QAQ)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .spectral import (
    STREAM_AUDIT,
    STREAM_DATA_NOISE,
    DiagonalOperator,
    GaussianSpec,
    NonFiniteError,
    PowerLaw,
    SpectralError,
    SpectralVector,
    cameron_martin_norm,
    op_norm,
    standard_normals,
)


class AssumptionError(Exception):
    """A modelling assumption needed for a certificate does not hold."""

    def __init__(self, condition: str, message: str):
        super().__init__(f"({condition}) {message}")
        self.condition = condition


# ---------------------------------------------------------------------------
# unknown-truth presets


def theta_star_preset(kind: str, q: DiagonalOperator, **params) -> SpectralVector:
    """Build ``theta*`` inside the Cameron-Martin space of ``q``.

    ``smooth``: ``m**(-s)`` rescaled to Cameron-Martin norm ``norm`` (default 1).
    ``spike``: ``amplitude`` on a single ``mode`` (1-based).
    ``list``: explicit ``values``.
    """
    dim = q.dim
    if kind == "smooth":
        s = float(params.get("s", 2.0))
        target = float(params.get("norm", 1.0))
        raw = SpectralVector.from_decay(PowerLaw(1.0, s), dim)
        scale = target / cameron_martin_norm(raw, q)
        return SpectralVector(raw.coeffs * scale, decay=PowerLaw(scale, s))
    if kind == "spike":
        mode = int(params.get("mode", 1))
        if not 1 <= mode <= dim:
            raise SpectralError(f"spike mode {mode} outside 1..{dim}")
        coeffs = np.zeros(dim)
        coeffs[mode - 1] = float(params.get("amplitude", 1.0))
        return SpectralVector(coeffs)
    if kind == "list":
        values = np.asarray(params["values"], dtype=float)
        if values.size != dim:
            raise SpectralError(f"theta_star list has {values.size} entries, truncation is {dim}")
        return SpectralVector(values)
    raise SpectralError(f"unknown theta_star preset {kind!r}")


# ---------------------------------------------------------------------------
# model instance


@dataclass(frozen=True)
class ModelInstance:
    q: DiagonalOperator
    a: DiagonalOperator
    theta_star: SpectralVector
    n: int
    data_coeffs: SpectralVector
    qaq_trace: float
    qaq_opnorm: float
    noise: Optional[SpectralVector] = None
    noise_seed: Optional[int] = None

    def __post_init__(self):
        dims = {self.q.dim, self.a.dim, self.theta_star.dim, self.data_coeffs.dim}
        if len(dims) != 1:
            raise SpectralError(f"model components disagree on truncation: {sorted(dims)}")
        if self.n < 1:
            raise SpectralError("sample size must be a positive integer")
        if self.q.positivity_class != "strictly-positive":
            raise SpectralError("prior covariance must be strictly positive")
        cameron_martin_norm(self.theta_star, self.q)

    @property
    def dim(self) -> int:
        return self.q.dim

    @property
    def mu(self) -> np.ndarray:
        return self.q.eigs

    @property
    def lam(self) -> np.ndarray:
        return self.a.eigs

    @property
    def qa(self) -> DiagonalOperator:
        return self.q.compose(self.a)

    @property
    def qaq(self) -> DiagonalOperator:
        return self.q.compose(self.a).compose(self.q)

    def invariant_violations(self) -> List[str]:
        """Names of the instance-level conditions that fail; empty when all hold."""
        bad = []
        if np.any(self.lam < 0):
            bad.append("information operator has negative eigenvalues")
        if not math.isfinite(self.qaq_trace):
            bad.append("(L.2) QAQ is not trace-class")
        if np.min(self.mu * self.lam) <= 0:
            bad.append("(L.1) QA is not coercive")
        return bad

    def precond_gradient(self, theta) -> np.ndarray:
        """``Q grad F_n`` for a vector or rows of vectors."""
        theta = np.asarray(theta, dtype=float)
        return self.mu * (self.data_coeffs.coeffs - self.lam * theta)

    def population_gradient(self, theta) -> np.ndarray:
        """``Q grad F = -QA (theta - theta*)``."""
        theta = np.asarray(theta, dtype=float)
        return -self.mu * self.lam * (theta - self.theta_star.coeffs)


def _qaq_summaries(q: DiagonalOperator, a: DiagonalOperator):
    with np.errstate(over="ignore", invalid="ignore"):
        eigs = a.eigs * q.eigs * q.eigs
        tr = float(np.sum(eigs))
    if not np.isfinite(tr):
        raise NonFiniteError(
            "sum of lambda_m mu_m^2 overflowed; lower the truncation level or check the decay laws"
        )
    return tr, float(np.max(np.abs(eigs)))


def sample_whitened_noise(q: DiagonalOperator, a: DiagonalOperator, n_draws: int, seed: int) -> np.ndarray:
    """``n_draws`` rows of ``Z ~ N(0, QAQ)``; row 0 is the draw used by ``synthesize_data``."""
    if np.any(a.eigs < 0):
        raise SpectralError("noise covariance QAQ needs a nonnegative information operator")
    g = standard_normals(seed, STREAM_DATA_NOISE, n_draws, q.dim)
    return q.eigs * np.sqrt(a.eigs) * g


def synthesize_data(
    q: DiagonalOperator,
    a: DiagonalOperator,
    theta_star: SpectralVector,
    n: int,
    noise_seed: int,
    zero_noise: bool = False,
) -> ModelInstance:
    """Draw the sufficient statistic and return the model instance.

    The same ``noise_seed`` reuses the same standardized fluctuation at every
    ``n``, so sweeps over ``n`` share common random numbers.
    """
    if not (q.dim == a.dim == theta_star.dim):
        raise SpectralError("q, a and theta_star must share the truncation level")
    tr, opn = _qaq_summaries(q, a)
    if zero_noise:
        z = np.zeros(q.dim)
        data = a.eigs * theta_star.coeffs
    else:
        if np.any(a.eigs < 0):
            raise SpectralError("noisy data need a nonnegative information operator")
        g = standard_normals(noise_seed, STREAM_DATA_NOISE, 1, q.dim)[0]
        z = q.eigs * np.sqrt(a.eigs) * g
        data = a.eigs * theta_star.coeffs + np.sqrt(a.eigs) * g / math.sqrt(n)
    return ModelInstance(
        q=q,
        a=a,
        theta_star=theta_star,
        n=int(n),
        data_coeffs=SpectralVector(data),
        qaq_trace=tr,
        qaq_opnorm=opn,
        noise=SpectralVector(z),
        noise_seed=None if zero_noise else noise_seed,
    )


def with_sample_size(m: ModelInstance, n: int) -> ModelInstance:
    """Regenerate ``m`` at another sample size with the same noise seed."""
    return synthesize_data(m.q, m.a, m.theta_star, n, m.noise_seed or 0, zero_noise=m.noise_seed is None)


# ---------------------------------------------------------------------------
# likelihood, posterior, MAP


@dataclass(frozen=True)
class LikelihoodEval:
    value: float
    gradient_precond: SpectralVector
    hessian_precond: DiagonalOperator


def eval_empirical_loglik(m: ModelInstance, theta: SpectralVector) -> LikelihoodEval:
    """Empirical log-likelihood ``F_n`` with the additive constant set to zero.

    ``F_n(theta) = -1/2 <A theta, theta> + <theta, c>``; the dropped constant
    ``-1/2 ||Gamma^{-1/2} Xbar_n||^2`` does not depend on ``theta``.
    """
    if theta.dim != m.dim:
        raise SpectralError(f"dimension mismatch: {theta.dim} vs {m.dim}")
    t = theta.coeffs
    c = m.data_coeffs.coeffs
    value = float(-0.5 * np.sum(m.lam * t * t) + np.sum(t * c))
    grad = SpectralVector(m.precond_gradient(t))
    return LikelihoodEval(value, grad, DiagonalOperator(-m.mu * m.lam))


def exact_posterior(m: ModelInstance) -> GaussianSpec:
    """Conjugate posterior ``N((Q^{-1} + nA)^{-1} n c, (Q^{-1} + nA)^{-1})``."""
    denom = 1.0 + m.n * m.mu * m.lam
    cov = m.mu / denom
    mean = m.n * m.mu * m.data_coeffs.coeffs / denom
    return GaussianSpec(SpectralVector(mean), DiagonalOperator(cov))


def om_functional(m: ModelInstance, theta) -> np.ndarray:
    """Negative log posterior density relative to Lebesgue on the truncation.

    ``-n F_n(theta) + 1/2 ||theta||_{H_Q}^2`` (V = 0); minimized by the MAP.
    """
    t = np.atleast_2d(np.asarray(theta, dtype=float))
    c = m.data_coeffs.coeffs
    loglik = -0.5 * np.sum(m.lam * t * t, axis=1) + t @ c
    return -m.n * loglik + 0.5 * np.sum(t * t / m.mu, axis=1)


def compute_map(m: ModelInstance) -> SpectralVector:
    """Unique minimizer of the OM functional, from ``(Q^{-1} + nA) theta = n c``."""
    precision = 1.0 / m.mu + m.n * m.lam
    if np.any(precision <= 0):
        raise AssumptionError("Covariance_PD", "OM functional is not strictly convex")
    return SpectralVector(m.n * m.data_coeffs.coeffs / precision)


# ---------------------------------------------------------------------------
# constants of the strong-concavity certificate


def coercivity_status(m: ModelInstance) -> str:
    """Classify ``inf_m mu_m lambda_m`` beyond the truncation.

    Returns ``coercive`` (power laws with a constant product), ``non-coercive``
    (product decays to 0), ``unbounded`` (product grows, so QA is unbounded),
    ``truncation-only`` (no decay law to extrapolate), or ``indefinite``.
    """
    prod = m.mu * m.lam
    if np.min(prod) <= 0:
        return "indefinite" if np.any(prod < 0) else "non-coercive"
    lq, la = m.q.power_law, m.a.power_law
    if lq is None or la is None:
        return "truncation-only"
    e = lq.exponent + la.exponent
    if abs(e) < 1e-12:
        return "coercive"
    return "non-coercive" if e > 0 else "unbounded"


@dataclass(frozen=True)
class ModelConstants:
    L1: float
    mu: float
    B: float
    eps1: float
    eps2: float
    B_tight: float = 0.0
    coercivity: str = "coercive"


def eps2_envelope(qaq_trace: float, qaq_opnorm: float, n: int, delta: float) -> float:
    """Gaussian-concentration quantile of ``||Z|| / sqrt(n)`` at level ``1 - delta``."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return (math.sqrt(qaq_trace) + math.sqrt(2.0 * qaq_opnorm * math.log(1.0 / delta))) / math.sqrt(n)


def model_constants(m: ModelInstance, delta: float) -> ModelConstants:
    """``L1 = ||QA||_op``, ``mu = inf mu_m lambda_m``, ``B = 1``, ``eps1 = 0`` and ``eps2``.

    Raises ``AssumptionError`` naming (L.1) when the coercivity audit fails or
    when the decay laws show the infimum over the full sequence is zero.
    """
    status = coercivity_status(m)
    if status in ("indefinite", "non-coercive", "unbounded"):
        raise AssumptionError(
            "L.1", f"QA is {status}: strong-concavity certificate unavailable"
        )
    prod = m.mu * m.lam
    return ModelConstants(
        L1=float(np.max(prod)),
        mu=float(np.min(prod)),
        B=1.0,
        eps1=0.0,
        eps2=eps2_envelope(m.qaq_trace, m.qaq_opnorm, m.n, delta),
        coercivity=status,
    )


# ---------------------------------------------------------------------------
# assumption audits


@dataclass(frozen=True)
class AuditEntry:
    condition: str
    status: str  # pass | fail | vacuous
    empirical: float
    analytic: Optional[float] = None
    witness: Optional[tuple] = None
    note: str = ""


@dataclass(frozen=True)
class AuditReport:
    entries: tuple = field(default_factory=tuple)

    @property
    def status(self) -> str:
        states = {e.status for e in self.entries}
        if "fail" in states:
            return "fail"
        if states == {"vacuous"} or not states:
            return "vacuous"
        return "pass"

    def __getitem__(self, condition: str) -> AuditEntry:
        for e in self.entries:
            if e.condition == condition:
                return e
        raise KeyError(condition)

    def failed(self) -> List[str]:
        return [e.condition for e in self.entries if e.status == "fail"]

    def rows(self):
        for e in self.entries:
            yield {
                "condition": e.condition,
                "status": e.status,
                "empirical": e.empirical,
                "analytic": float("nan") if e.analytic is None else e.analytic,
                "note": e.note,
            }


def sample_ball_pairs(center: np.ndarray, radius: float, n_pairs: int, seed: int, stream: int = STREAM_AUDIT):
    """Pairs of points drawn uniformly from the ball around ``center``, plus axis probes.

    The probes ``(center + radius/2 e_m, center)`` make coordinate-aligned
    extremes visible to the audits.
    """
    dim = center.size
    g = standard_normals(seed, stream, 2 * n_pairs, dim + 1)
    dirs = g[:, :dim] / np.linalg.norm(g[:, :dim], axis=1, keepdims=True)
    # radial law r U^{1/M} from the extra normal column, mapped to a uniform
    from scipy.special import ndtr

    u = ndtr(g[:, dim])
    pts = center + radius * dirs * u[:, None] ** (1.0 / dim)
    probes = center + 0.5 * radius * np.eye(dim)
    first = np.vstack([pts[:n_pairs], probes])
    second = np.vstack([pts[n_pairs:], np.tile(center, (dim, 1))])
    return first, second


def audit_gradients(
    likelihood_grad: Callable[[np.ndarray], np.ndarray],
    population_grad: Callable[[np.ndarray], np.ndarray],
    prior_grad: Callable[[np.ndarray], np.ndarray],
    theta_star: np.ndarray,
    n: int,
    radius: float,
    n_pairs: int,
    seed: int,
    analytic: Optional[dict] = None,
) -> AuditReport:
    """Sample-based falsification audit of (A.1), (A.2), (B), (C.1), (C.3).

    Gradients are preconditioned (``Q grad``) and vectorized over rows.  Passing
    means no sampled pair violated the inequality; for general drifts this can
    refute an assumption but never prove it.
    """
    analytic = analytic or {}
    if radius <= 0 or n_pairs < 0:
        return AuditReport(tuple(
            AuditEntry(c, "vacuous", float("nan"), analytic.get(c), note="no nondegenerate pairs")
            for c in ("A.1", "A.2", "B", "C.1", "C.3")
        ))
    t1, t2 = sample_ball_pairs(theta_star, radius, n_pairs, seed)
    d = t1 - t2
    dn = np.linalg.norm(d, axis=1)
    keep = dn > 0
    t1, t2, d, dn = t1[keep], t2[keep], d[keep], dn[keep]
    g1, g2 = likelihood_grad(t1), likelihood_grad(t2)
    p1, p2 = prior_grad(t1), prior_grad(t2)
    entries = []
    tol = 1e-9

    def _witness(i):
        return (tuple(t1[i]), tuple(t2[i]))

    # (A.1) Lipschitz constants of the preconditioned gradients
    lip = np.linalg.norm(g1 - g2, axis=1) / dn
    i = int(np.argmax(lip))
    L1 = analytic.get("A.1")
    ok = L1 is None or lip[i] <= L1 * (1 + tol) + tol
    entries.append(AuditEntry("A.1", "pass" if ok else "fail", float(lip[i]), L1,
                              None if ok else _witness(i)))

    # (A.2) linear growth
    pts = np.vstack([t1, t2])
    gg = likelihood_grad(pts)
    growth = np.sum(gg * gg, axis=1) / (1.0 + np.sum(pts * pts, axis=1))
    i = int(np.argmax(growth))
    C1 = analytic.get("A.2")
    ok = C1 is None or growth[i] <= C1 * (1 + tol)
    entries.append(AuditEntry("A.2", "pass" if ok else "fail", float(growth[i]), C1,
                              None if ok else (tuple(pts[i]),)))

    # (B) monotone drift
    mono = (-np.sum((p1 - p2) * d, axis=1) / n + np.sum((g1 - g2) * d, axis=1)) / dn**2
    i = int(np.argmax(mono))
    ok = mono[i] <= tol
    entries.append(AuditEntry("B", "pass" if ok else "fail", float(mono[i]), analytic.get("B"),
                              None if ok else _witness(i)))

    # (C.1) one-point strong concavity of the population log-likelihood
    h = pts - theta_star
    hn2 = np.sum(h * h, axis=1)
    nz = hn2 > 0
    ratio = -np.sum(population_grad(pts[nz]) * h[nz], axis=1) / hn2[nz]
    i = int(np.argmin(ratio))
    mu = analytic.get("C.1")
    ok = ratio[i] > 0 and (mu is None or ratio[i] >= mu * (1 - tol) - tol)
    entries.append(AuditEntry("C.1", "pass" if ok else "fail", float(ratio[i]), mu,
                              None if ok else (tuple(pts[nz][i]), tuple(theta_star))))

    # (C.3) one-sided prior control
    hn = np.sqrt(hn2[nz])
    prior_term = -np.sum(prior_grad(pts[nz]) * h[nz], axis=1) / hn
    i = int(np.argmax(prior_term))
    B = analytic.get("C.3", 1.0)
    ok = prior_term[i] <= B * (1 + tol) + tol
    entries.append(AuditEntry("C.3", "pass" if ok else "fail", float(prior_term[i]), B,
                              None if ok else (tuple(pts[nz][i]),)))
    return AuditReport(tuple(entries))


def audit_assumptions(m: ModelInstance, n_pairs: int, radius: float, seed: int) -> AuditReport:
    """Audit (A.1), (A.2), (B), (C.1), (C.3) for the linear Gaussian model.

    Analytic values reported alongside the sampled ones: ``L1 = ||QA||_op``,
    ``C1 = 2 max(L1^2, ||Qc||^2)``, monotonicity slope ``max(-mu_m lambda_m)``,
    ``mu = min mu_m lambda_m`` and ``B = 1`` (any ``B >= 0`` works since V = 0).
    """
    prod = m.mu * m.lam
    qc = m.mu * m.data_coeffs.coeffs
    L1 = float(np.max(np.abs(prod)))
    analytic = {
        "A.1": L1,
        "A.2": 2.0 * max(L1**2, float(np.sum(qc * qc))),
        "B": float(np.max(-prod)),
        "C.1": float(np.min(prod)),
        "C.3": 1.0,
    }
    zero = lambda t: np.zeros_like(t)  # noqa: E731
    return audit_gradients(
        m.precond_gradient, m.population_gradient, zero,
        m.theta_star.coeffs, m.n, radius, n_pairs, seed, analytic,
    )
