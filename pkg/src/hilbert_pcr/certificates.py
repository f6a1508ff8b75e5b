"""Contraction-radius certificates.

Two certificates are offered.  The strong-concavity radius is a closed-form
four-term sum; the weak-concavity radius is the positive root of a scalar
fixed-point equation in ``z``,

    psi(z) = eps * zeta(z) * z + (B/n) z + tr(Q)/n + log(1/delta) ||Q||_op / n,

located by a grid scan for the sign change followed by bisection.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from .langevin import tail_mass_estimate
from .model import ModelInstance, model_constants
from .spectral import op_norm, trace
from .tables import fmt


class CertificateError(ValueError):
    """The hypotheses needed to issue a certificate are not met."""


# ---------------------------------------------------------------------------
# scalar envelope functions


@dataclass(frozen=True)
class PowerFunction:
    """``coef * r**exponent`` on ``r >= 0``."""

    coef: float = 1.0
    exponent: float = 1.0

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.exponent == 0:
            return self.coef * np.ones_like(r)
        return self.coef * r**self.exponent

    def to_dict(self) -> dict:
        return {"kind": "power", "coef": self.coef, "exponent": self.exponent}


@dataclass(frozen=True)
class TabulatedFunction:
    """Monotone (PCHIP) interpolation of tabulated values, linear extrapolation past the ends."""

    xs: Tuple[float, ...]
    ys: Tuple[float, ...]

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        ys = np.asarray(self.ys, dtype=float)
        if xs.size < 2 or xs.shape != ys.shape or np.any(np.diff(xs) <= 0):
            raise ValueError("tabulated function needs >= 2 strictly increasing abscissae")
        object.__setattr__(self, "_interp", PchipInterpolator(xs, ys, extrapolate=True))

    def __call__(self, r):
        return self._interp(np.asarray(r, dtype=float))

    def to_dict(self) -> dict:
        return {"kind": "tabulated", "xs": list(self.xs), "ys": list(self.ys)}


def function_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind", None)
    if kind == "power":
        return PowerFunction(float(d.get("coef", 1.0)), float(d["exponent"]))
    if kind == "tabulated":
        return TabulatedFunction(tuple(d["xs"]), tuple(d["ys"]))
    raise ValueError(f"unknown scalar function kind {kind!r}")


# ---------------------------------------------------------------------------
# certificate record


def _flatten(prefix: str, value, out: Dict[str, object]) -> None:
    if isinstance(value, dict):
        for k, v in value.items():
            _flatten(f"{prefix}.{k}" if prefix else str(k), v, out)
    elif isinstance(value, (list, tuple)):
        out[prefix] = "[" + ", ".join(fmt(v) for v in value) + "]"
    else:
        out[prefix] = fmt(value)


def canonical_text(mapping: dict) -> str:
    """Sorted ``key = value`` lines with 17-significant-digit floats."""
    flat: Dict[str, object] = {}
    _flatten("", mapping, flat)
    return "".join(f"{k} = {flat[k]}\n" for k in sorted(flat))


@dataclass(frozen=True)
class Certificate:
    kind: str
    radius: float
    inputs: dict
    terms: dict = field(default_factory=dict)
    admissibility: Tuple[Tuple[str, bool, object], ...] = ()
    empirical_validation: Optional[dict] = None

    @property
    def inputs_digest(self) -> str:
        return hashlib.sha256(canonical_text(self.inputs).encode()).hexdigest()

    @property
    def valid(self) -> bool:
        """False when any admissibility entry failed; the radius is then advisory only."""
        return self.radius > 0 and all(ok for _, ok, _ in self.admissibility)

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "radius": self.radius,
            "valid": self.valid,
            "inputs": self.inputs,
            "inputs_digest": self.inputs_digest,
            "terms": self.terms,
            "admissibility": {name: {"passed": ok, "witness": "" if w is None else w}
                              for name, ok, w in self.admissibility},
        }
        if self.empirical_validation is not None:
            d["empirical_validation"] = self.empirical_validation
        return d

    def to_canonical_text(self) -> str:
        return canonical_text(self.to_dict())


# ---------------------------------------------------------------------------
# strong concavity


@dataclass(frozen=True)
class StrongRateInputs:
    tr_q: float
    q_opnorm: float
    mu: float
    b: float
    eps1: float
    eps2: float
    n: int
    delta: float
    c_universal: float = 1.0

    def __post_init__(self):
        if self.mu <= 0:
            raise CertificateError("(C.1) concavity constant mu must be positive")
        if self.b < 0 or self.eps1 < 0 or self.eps2 < 0:
            raise CertificateError("B, eps1 and eps2 must be nonnegative")
        if not 0 < self.delta < 1:
            raise CertificateError("delta must lie in (0, 1)")
        if self.n < 1 or self.c_universal <= 0:
            raise CertificateError("n must be >= 1 and c positive")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("tr_q", "q_opnorm", "mu", "b", "eps1", "eps2", "n", "delta", "c_universal")}


def strong_inputs_from_model(m: ModelInstance, delta: float, c_universal: float = 1.0) -> StrongRateInputs:
    """Strong-concavity inputs for the linear Gaussian model (``B = 1``, ``eps1 = 0``)."""
    k = model_constants(m, delta)
    return StrongRateInputs(trace(m.q), op_norm(m.q), k.mu, k.B, k.eps1, k.eps2, m.n, delta, c_universal)


def strong_radius(inp: StrongRateInputs) -> Certificate:
    """``c sqrt(tr Q/(n mu)) + B/(n mu) + eps2/mu + c sqrt(||Q|| log(1/delta)/(n mu))``."""
    if inp.eps1 > inp.mu / 6:
        raise CertificateError(
            f"hypothesis unmet: n too small for (C.2) envelope (eps1={inp.eps1:g} > mu/6={inp.mu / 6:g})"
        )
    nmu = inp.n * inp.mu
    terms = {
        "trace_term": inp.c_universal * math.sqrt(inp.tr_q / nmu),
        "prior_term": inp.b / nmu,
        "fluctuation_term": inp.eps2 / inp.mu,
        "confidence_term": inp.c_universal * math.sqrt(inp.q_opnorm * math.log(1 / inp.delta) / nmu),
    }
    radius = terms["trace_term"] + terms["prior_term"] + terms["fluctuation_term"] + terms["confidence_term"]
    adm = (("eps1<=mu/6", True, None), ("radius>0", radius > 0, None))
    return Certificate("strong", radius, inp.to_dict(), terms, adm)


# ---------------------------------------------------------------------------
# weak concavity


@dataclass(frozen=True)
class WeakRateInputs:
    psi: object
    zeta: object
    eps: float
    b: float
    tr_q: float
    q_opnorm: float
    n: int
    delta: float
    z_max: float = 1e3
    grid_points: int = 1000

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise CertificateError("delta must lie in (0, 1)")
        if self.eps < 0 or self.b < 0 or self.z_max <= 0:
            raise CertificateError("eps, B must be nonnegative and z_max positive")

    def rhs(self, z):
        z = np.asarray(z, dtype=float)
        return (self.eps * self.zeta(z) * z + self.b / self.n * z
                + self.tr_q / self.n + math.log(1 / self.delta) * self.q_opnorm / self.n)

    def residual(self, z):
        return self.psi(z) - self.rhs(z)

    def grid(self) -> np.ndarray:
        return np.geomspace(self.z_max * 1e-6, self.z_max, self.grid_points)

    def to_dict(self) -> dict:
        return {"psi": self.psi.to_dict(), "zeta": self.zeta.to_dict(), "eps": self.eps, "b": self.b,
                "tr_q": self.tr_q, "q_opnorm": self.q_opnorm, "n": self.n, "delta": self.delta,
                "z_max": self.z_max, "grid_points": self.grid_points}


def w4_liminf(inp: WeakRateInputs) -> float:
    """Grid estimate of ``liminf psi(z) / (z zeta(z))``: the minimum over the top decade."""
    z = inp.grid()
    top = z[z >= inp.z_max / 10]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = inp.psi(top) / (top * inp.zeta(top))
    ratio = np.where(np.isfinite(ratio), ratio, np.inf)
    return float(np.min(ratio))


def bisect(f, lo: float, hi: float, rtol: float = 1e-10, max_iter: int = 400) -> float:
    """Bisection on a bracket with ``f(lo) < 0 <= f(hi)``."""
    flo = f(lo)
    if not (flo < 0 <= f(hi)):
        raise CertificateError("bisection needs a sign-changing bracket")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= rtol * hi:
            break
    return 0.5 * (lo + hi)


def weak_fixed_point(inp: WeakRateInputs, rtol: float = 1e-10) -> Certificate:
    """Positive root ``z*(n, delta)`` of the weak-concavity fixed-point equation."""
    liminf = w4_liminf(inp)
    if not liminf > inp.eps:
        raise CertificateError(f"(W.4) violated at this (n,delta): liminf estimate {liminf:g} <= eps {inp.eps:g}")
    z = np.concatenate([[0.0], inp.grid()])
    f = np.asarray(inp.residual(z), dtype=float)
    neg = f < 0
    admissibility = [("W.4", True, liminf)]
    if not np.any(neg):
        # every term on the right vanishes: only the degenerate root z = 0 remains
        admissibility.append(("radius>0", False, 0.0))
        return Certificate("weak", 0.0, inp.to_dict(), {"liminf_ratio": liminf}, tuple(admissibility))
    if np.all(neg[1:]):
        raise CertificateError(f"(W.4) violated at this (n,delta): no sign change up to z_max={inp.z_max:g}")
    signs = np.sign(f[f != 0])
    changes = int(np.count_nonzero(np.diff(signs)))
    if changes > 1:
        raise CertificateError(f"non-admissible (psi, zeta) pair: {changes} sign changes of the residual")
    i = int(np.flatnonzero(~neg)[0])
    root = bisect(lambda x: float(inp.residual(x)), float(z[i - 1]), float(z[i]), rtol=rtol)
    admissibility.append(("unique_sign_change", True, changes))
    admissibility.append(("radius>0", root > 0, None))
    terms = {"liminf_ratio": liminf, "residual_at_root": float(inp.residual(root))}
    return Certificate("weak", root, inp.to_dict(), terms, tuple(admissibility))


@dataclass(frozen=True)
class AdmissibilityReport:
    worst_margin: Dict[str, float]
    first_violation: Dict[str, Optional[float]]

    @property
    def passed(self) -> bool:
        return all(v is None for v in self.first_violation.values())


def _d1(f, r, h):
    return (f(r + h) - f(r - h)) / (2 * h)


def _d2(f, r, h):
    return (f(r + h) - 2 * f(r) + f(r - h)) / (h * h)


def check_w3(psi, zeta, grid: Sequence[float], tol: float = 1e-5) -> AdmissibilityReport:
    """Grid check of the two differential inequalities and the convexity of ``psi o xi``.

    Margins are normalized by the magnitude of the terms, so ``tol`` is a
    relative tolerance.  ``xi`` (inverse of ``r -> r zeta(r)``) is evaluated by
    root finding at each point.
    """
    r = np.asarray(grid, dtype=float)
    h = r * 1e-5
    p, dp, d2p = psi(r), _d1(psi, r, h), _d2(psi, r, h)
    zt, dz, d2z = zeta(r), _d1(zeta, r, h), _d2(zeta, r, h)

    lhs1, rhs1 = r * dp * zt, r * p * dz + p * zt
    m1 = (lhs1 - rhs1) / (np.abs(lhs1) + np.abs(r * p * dz) + np.abs(p * zt) + 1e-300)
    lhs2 = r * r * d2p * zt + r * dp * zt
    rhs2 = 3 * p * zt + r * r * p * d2z
    m2 = (lhs2 - rhs2) / (np.abs(r * r * d2p * zt) + np.abs(r * dp * zt) + np.abs(3 * p * zt)
                          + np.abs(r * r * p * d2z) + 1e-300)

    def xi(y):
        g = lambda x: x * float(zeta(x)) - y  # noqa: E731
        hi = max(1.0, y)
        while g(hi) < 0:
            hi *= 2.0
        return brentq(g, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)

    y = r * zt
    m3 = np.empty_like(r)
    for j, yj in enumerate(y):
        hy = 0.05 * yj
        vals = [float(psi(xi(v))) for v in (yj - hy, yj, yj + hy)]
        m3[j] = (vals[0] - 2 * vals[1] + vals[2]) / (abs(vals[0]) + 2 * abs(vals[1]) + abs(vals[2]) + 1e-300)

    worst, first = {}, {}
    for name, m, t in (("W.3 first-order", m1, tol), ("W.3 second-order", m2, tol),
                       ("W.3 convexity of psi(xi)", m3, 1e-9)):
        worst[name] = float(np.min(m))
        bad = np.flatnonzero(m < -t)
        first[name] = float(r[bad[0]]) if bad.size else None
    return AdmissibilityReport(worst, first)


# ---------------------------------------------------------------------------
# empirical validation


def validate_certificate(cert: Certificate, model: ModelInstance, n_samples: int, seed: int) -> Certificate:
    """Attach the exact-posterior tail mass outside ``cert.radius``; pass iff mass <= delta + 3 SE."""
    delta = float(cert.inputs["delta"])
    tm = tail_mass_estimate(model, cert.radius, n_samples, "exact", seed)
    passed = tm.mass <= delta + 3 * tm.se
    return replace(cert, empirical_validation={
        "tail_mass": tm.mass, "std_error": tm.se, "delta": delta, "passed": passed,
        "slack": delta - tm.mass, "n_samples": n_samples,
    })
