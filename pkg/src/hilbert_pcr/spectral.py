"""Finite spectral truncation of a separable Hilbert space.

Every object lives in one fixed orthonormal eigenbasis ``e_1, ..., e_M``.
Vectors are coefficient arrays, self-adjoint operators are eigenvalue arrays,
and Gaussian measures are a mean vector plus a diagonal covariance.  Infinite
sums that are truncated at ``M`` report an analytic tail estimate whenever the
underlying sequence follows a power law.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Optional, Sequence, Union

import numpy as np

DEFAULT_DIM = 256
_U64 = 2**64 - 1

# random-stream identifiers; one per consumer so draws never collide
STREAM_GAUSSIAN = 0
STREAM_DATA_NOISE = 1
STREAM_LANGEVIN = 2
STREAM_AUDIT = 3
STREAM_FERNIQUE = 4
STREAM_KL_REFERENCE = 5
STREAM_TAIL = 6
STREAM_LANGEVIN_INIT = 7

REPLICA_BLOCK = 256


class SpectralError(ValueError):
    """Invalid spectral object or operation."""


class NonFiniteError(SpectralError):
    """A NaN or infinite value reached a spectral computation."""


class NotInCameronMartinSpace(SpectralError):
    """A vector has a nonzero coefficient on a null direction of the covariance."""


def _frozen_array(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains NaN or infinite entries")
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# decay-law descriptors


@dataclass(frozen=True)
class PowerLaw:
    """Sequence ``scale * m**(-exponent)`` for ``m = 1, 2, ...``.

    Negative exponents describe growing sequences (unbounded operators such
    as an information operator whose product with the covariance is bounded).
    """

    scale: float
    exponent: float

    def __post_init__(self):
        if not (np.isfinite(self.scale) and np.isfinite(self.exponent)):
            raise NonFiniteError("power law parameters must be finite")
        if self.scale == 0:
            raise SpectralError("power law scale must be nonzero")

    def values(self, dim: int) -> np.ndarray:
        m = np.arange(1, dim + 1, dtype=float)
        return self.scale * m ** (-self.exponent)

    def tail_sum(self, dim: int) -> Optional[float]:
        """Integral bound ``scale * int_M^inf x**(-exponent) dx`` or None when divergent."""
        if self.exponent <= 1:
            return None
        return abs(self.scale) * dim ** (1.0 - self.exponent) / (self.exponent - 1.0)

    def to_dict(self) -> dict:
        return {"kind": "power", "scale": float(self.scale), "exponent": float(self.exponent)}


@dataclass(frozen=True)
class Explicit:
    values: tuple

    def to_dict(self) -> dict:
        return {"kind": "explicit", "values": [float(v) for v in self.values]}


Decay = Union[PowerLaw, Explicit]


def decay_from_dict(spec: Mapping) -> Decay:
    """Parse ``{kind: "power", scale, exponent}`` or ``{kind: "explicit", values}``."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind == "power":
        allowed = {"scale", "exponent"}
        if set(spec) != allowed:
            raise SpectralError(f"power decay needs keys {sorted(allowed)}, got {sorted(spec)}")
        return PowerLaw(float(spec["scale"]), float(spec["exponent"]))
    if kind == "explicit":
        if set(spec) != {"values"}:
            raise SpectralError(f"explicit decay needs key 'values', got {sorted(spec)}")
        return Explicit(tuple(float(v) for v in spec["values"]))
    raise SpectralError(f"unknown decay kind {kind!r}")


def decay_to_dict(decay: Decay) -> dict:
    return decay.to_dict()


# ---------------------------------------------------------------------------
# core types


@dataclass(frozen=True, eq=False)
class SpectralVector:
    """Coefficients of a Hilbert-space element in the shared eigenbasis.

    ``decay`` optionally records a power law followed by the coefficient
    magnitudes, which lets membership tests extrapolate beyond the truncation.
    """

    coeffs: np.ndarray
    decay: Optional[PowerLaw] = None

    def __post_init__(self):
        object.__setattr__(self, "coeffs", _frozen_array(self.coeffs, "coeffs"))
        if self.coeffs.size == 0:
            raise SpectralError("a spectral vector needs at least one mode")

    @classmethod
    def zeros(cls, dim: int) -> "SpectralVector":
        return cls(np.zeros(dim))

    @classmethod
    def from_decay(cls, decay: PowerLaw, dim: int) -> "SpectralVector":
        return cls(decay.values(dim), decay=decay)

    @property
    def dim(self) -> int:
        return self.coeffs.size

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.coeffs, dtype=dtype)

    def __eq__(self, other):
        if not isinstance(other, SpectralVector):
            return NotImplemented
        return self.dim == other.dim and bool(np.array_equal(self.coeffs, other.coeffs))

    def __hash__(self):
        return hash(self.coeffs.tobytes())


POSITIVITY_CLASSES = ("strictly-positive", "nonnegative", "indefinite")


def _classify(eigs: np.ndarray) -> str:
    if np.all(eigs > 0):
        return "strictly-positive"
    if np.all(eigs >= 0):
        return "nonnegative"
    return "indefinite"


@dataclass(frozen=True, eq=False)
class DiagonalOperator:
    """Self-adjoint operator diagonal in the shared eigenbasis."""

    eigs: np.ndarray
    decay: Decay = None
    positivity_class: str = field(default=None)

    def __post_init__(self):
        eigs = _frozen_array(self.eigs, "eigs")
        object.__setattr__(self, "eigs", eigs)
        if self.decay is None:
            object.__setattr__(self, "decay", Explicit(tuple(eigs.tolist())))
        observed = _classify(eigs) if eigs.size else "nonnegative"
        if self.positivity_class is None:
            object.__setattr__(self, "positivity_class", observed)
        elif self.positivity_class not in POSITIVITY_CLASSES:
            raise SpectralError(f"unknown positivity class {self.positivity_class!r}")
        elif POSITIVITY_CLASSES.index(observed) > POSITIVITY_CLASSES.index(self.positivity_class):
            raise SpectralError(
                f"eigenvalues are {observed} but operator was declared {self.positivity_class}"
            )

    @classmethod
    def power(cls, scale: float, exponent: float, dim: int = DEFAULT_DIM) -> "DiagonalOperator":
        law = PowerLaw(scale, exponent)
        return cls(law.values(dim), decay=law)

    @classmethod
    def explicit(cls, values: Sequence[float]) -> "DiagonalOperator":
        return cls(np.asarray(values, dtype=float))

    @classmethod
    def from_decay(cls, decay: Decay, dim: int = DEFAULT_DIM) -> "DiagonalOperator":
        if isinstance(decay, PowerLaw):
            return cls(decay.values(dim), decay=decay)
        return cls(np.asarray(decay.values, dtype=float), decay=decay)

    @property
    def dim(self) -> int:
        return self.eigs.size

    @property
    def power_law(self) -> Optional[PowerLaw]:
        return self.decay if isinstance(self.decay, PowerLaw) else None

    def apply(self, v) -> np.ndarray:
        """Apply to a vector or a batch of coefficient rows."""
        return np.asarray(v, dtype=float) * self.eigs

    def compose(self, other: "DiagonalOperator") -> "DiagonalOperator":
        """Product of two commuting operators, keeping power-law structure when possible."""
        _check_dims(self.dim, other.dim)
        law = None
        if self.power_law is not None and other.power_law is not None:
            law = PowerLaw(self.power_law.scale * other.power_law.scale,
                           self.power_law.exponent + other.power_law.exponent)
        return DiagonalOperator(self.eigs * other.eigs, decay=law)

    def truncate(self, dim: int) -> "DiagonalOperator":
        if isinstance(self.decay, PowerLaw):
            return DiagonalOperator.power(self.decay.scale, self.decay.exponent, dim)
        return DiagonalOperator(self.eigs[:dim])


@dataclass(frozen=True)
class GaussianSpec:
    """Gaussian measure with diagonal covariance in the shared eigenbasis."""

    mean: SpectralVector
    cov: DiagonalOperator

    def __post_init__(self):
        _check_dims(self.mean.dim, self.cov.dim)
        if self.cov.positivity_class != "strictly-positive":
            raise SpectralError("Gaussian covariance must be strictly positive")
        tr = float(np.sum(self.cov.eigs))
        if not (np.isfinite(tr) and tr > 0):
            raise NonFiniteError("Gaussian covariance trace must be finite and positive")

    @classmethod
    def centered(cls, cov: DiagonalOperator) -> "GaussianSpec":
        return cls(SpectralVector.zeros(cov.dim), cov)

    @property
    def dim(self) -> int:
        return self.cov.dim

    def logpdf(self, x) -> np.ndarray:
        """Mode-wise Gaussian log-density summed over modes, for rows of ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        var = self.cov.eigs
        r = x - self.mean.coeffs
        return -0.5 * np.sum(r * r / var + np.log(2 * np.pi * var), axis=1)


def _check_dims(a: int, b: int) -> None:
    if a != b:
        raise SpectralError(f"dimension mismatch: {a} vs {b}")


# ---------------------------------------------------------------------------
# counter-based randomness


def block_rng(seed: int, stream: int, block: int = 0, step: int = 0) -> np.random.Generator:
    """Philox generator keyed by ``(seed, stream)`` at counter ``(block, step)``.

    A replica block always sees the same normals no matter which worker runs
    it or in which order blocks are scheduled.
    """
    if seed < 0 or seed > _U64:
        raise SpectralError("seed must be an unsigned 64-bit integer")
    key = np.array([seed, stream], dtype=np.uint64)
    counter = np.array([0, 0, block, step], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def standard_normals(seed: int, stream: int, n_rows: int, dim: int) -> np.ndarray:
    """``(n_rows, dim)`` standard normals, generated in fixed replica blocks."""
    out = np.empty((n_rows, dim))
    for block, start in enumerate(range(0, n_rows, REPLICA_BLOCK)):
        stop = min(start + REPLICA_BLOCK, n_rows)
        out[start:stop] = block_rng(seed, stream, block).standard_normal((stop - start, dim))
    return out


# ---------------------------------------------------------------------------
# operations


class Truncated(NamedTuple):
    value: float
    tail_estimate: Optional[float]


def trace(op: DiagonalOperator, with_tail: bool = False):
    """Sum of eigenvalues over the truncation.

    With ``with_tail=True`` returns ``Truncated(value, tail_estimate)`` where the
    tail is the integral bound of the power law beyond ``M`` (None otherwise).
    """
    if op.positivity_class == "indefinite":
        raise SpectralError("trace of an indefinite operator is not a covariance trace")
    value = float(np.sum(op.eigs))
    if not np.isfinite(value):
        raise NonFiniteError("trace overflowed; reduce the truncation level")
    if not with_tail:
        return value
    tail = op.power_law.tail_sum(op.dim) if op.power_law is not None else None
    return Truncated(value, tail)


def op_norm(op: DiagonalOperator) -> float:
    if op.dim == 0:
        raise SpectralError("operator norm of an empty operator is undefined")
    return float(np.max(np.abs(op.eigs)))


def cameron_martin_norm(v: SpectralVector, q: DiagonalOperator) -> float:
    """``||Q^{-1/2} v||`` in the shared eigenbasis."""
    _check_dims(v.dim, q.dim)
    if np.any(q.eigs < 0):
        raise SpectralError("Cameron-Martin norm needs a nonnegative covariance")
    null = q.eigs == 0
    if np.any(v.coeffs[null] != 0):
        m = int(np.flatnonzero(null & (v.coeffs != 0))[0]) + 1
        raise NotInCameronMartinSpace(f"mode {m} has zero variance but nonzero coefficient")
    c = v.coeffs[~null]
    with np.errstate(over="ignore"):
        total = float(np.sum(c * c / q.eigs[~null]))
    if not np.isfinite(total):
        raise NonFiniteError("Cameron-Martin norm overflowed")
    return float(np.sqrt(total))


def sample_gaussian(spec: GaussianSpec, seed: int, n_samples: Optional[int] = None):
    """Exact draw ``mean + cov^{1/2} z``; a batch of rows when ``n_samples`` is given."""
    rows = 1 if n_samples is None else n_samples
    z = standard_normals(seed, STREAM_GAUSSIAN, rows, spec.dim)
    x = spec.mean.coeffs + np.sqrt(spec.cov.eigs) * z
    if n_samples is None:
        return SpectralVector(x[0])
    return x


@dataclass(frozen=True)
class FerniqueReport:
    finite_estimate: float
    std_error: float
    alpha_bound: float
    divergent: bool
    analytic: float


def fernique_check(spec: GaussianSpec, alpha: float, n_samples: int, seed: int) -> FerniqueReport:
    """Monte Carlo estimate of ``E exp(alpha ||x||^2)`` with the admissibility bound.

    The per-mode moment generating function is finite iff
    ``alpha < 1/(2 sigma_m^2)``, so the whole expectation is finite iff
    ``alpha < 1/(2 ||cov||_op)``.
    """
    if alpha <= 0:
        raise SpectralError("alpha must be positive")
    bound = 1.0 / (2.0 * op_norm(spec.cov))
    divergent = alpha >= bound
    z = standard_normals(seed, STREAM_FERNIQUE, n_samples, spec.dim)
    x = spec.mean.coeffs + np.sqrt(spec.cov.eigs) * z
    with np.errstate(over="ignore"):
        vals = np.exp(alpha * np.sum(x * x, axis=1))
    est = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else float("inf")
    if divergent:
        analytic = float("inf")
    else:
        s = spec.cov.eigs
        m = spec.mean.coeffs
        d = 1.0 - 2.0 * alpha * s
        analytic = float(np.exp(np.sum(-0.5 * np.log(d) + alpha * m * m / d)))
    return FerniqueReport(est, se, bound, divergent, analytic)
