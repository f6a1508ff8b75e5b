"""Experiment configuration: TOML files validated against a typed schema.

Unknown keys are rejected with the offending dotted path, so a typo never
silently falls back to a default.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, List, Optional, Tuple

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .certificates import canonical_text
from .model import ModelInstance, synthesize_data, theta_star_preset
from .spectral import DiagonalOperator, decay_from_dict


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 64
    n: int = 1000
    seed: int = 7
    q: dict = field(default_factory=lambda: {"kind": "power", "scale": 1.0, "exponent": 2.0})
    a: dict = field(default_factory=lambda: {"kind": "power", "scale": 1.0, "exponent": -2.0})
    theta_star: dict = field(default_factory=lambda: {"preset": "smooth", "s": 2.0, "norm": 1.0})

    def build(self, n: Optional[int] = None) -> ModelInstance:
        try:
            q = DiagonalOperator.from_decay(decay_from_dict(self.q), self.dim)
            a = DiagonalOperator.from_decay(decay_from_dict(self.a), self.dim)
            params = dict(self.theta_star)
            preset = params.pop("preset")
            theta = theta_star_preset(preset, q, **params)
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"model: {exc}") from exc
        return synthesize_data(q, a, theta, self.n if n is None else n, self.seed)


@dataclass(frozen=True)
class SimSection:
    scheme: str = "exact_ou"
    n_replicas: int = 10000
    dt: Optional[float] = None
    t_end: Optional[float] = None
    record_times: Tuple[float, ...] = ()
    guard: float = 1e8
    p_values: Tuple[int, ...] = (2, 4)


@dataclass(frozen=True)
class WeakSection:
    psi: dict = field(default_factory=lambda: {"kind": "power", "coef": 1.0, "exponent": 2.0})
    zeta: dict = field(default_factory=lambda: {"kind": "power", "coef": 1.0, "exponent": 0.0})
    eps: Optional[float] = None
    z_max: float = 1e3


@dataclass(frozen=True)
class CertificateSection:
    delta: float = 0.1
    c_universal: float = 1.0
    n_samples: int = 20000
    weak: Optional[WeakSection] = None


@dataclass(frozen=True)
class LaplaceSection:
    alpha: float = 0.5
    sigma: float = 1.0
    delta: float = 0.1
    c1: float = 1.0
    c2: float = 1.0


@dataclass(frozen=True)
class SweepSection:
    parameter: str = "n"
    values: Tuple[float, ...] = (100, 1000, 10000)
    n_samples: int = 20000


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "out"
    model: ModelConfig = field(default_factory=ModelConfig)
    sim: SimSection = field(default_factory=SimSection)
    certificate: CertificateSection = field(default_factory=CertificateSection)
    laplace: LaplaceSection = field(default_factory=LaplaceSection)
    sweep: SweepSection = field(default_factory=SweepSection)

    def semantic_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("output_dir")
        return d

    @property
    def digest(self) -> str:
        return hashlib.sha256(canonical_text(self.semantic_dict()).encode()).hexdigest()


_NESTED = {
    ExperimentConfig: {"model": ModelConfig, "sim": SimSection, "certificate": CertificateSection,
                       "laplace": LaplaceSection, "sweep": SweepSection},
    CertificateSection: {"weak": WeakSection},
}


def _build(cls, raw: Any, path: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or 'config'} must be a table")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(names))
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"unknown key {where}{unknown[0]}")
    kwargs = {}
    for key, value in raw.items():
        sub = _NESTED.get(cls, {}).get(key)
        p = f"{path}.{key}" if path else key
        if sub is not None:
            kwargs[key] = _build(sub, value, p)
        else:
            kwargs[key] = _coerce(names[key], value, p)
    return cls(**kwargs)


def _coerce(f: dataclasses.Field, value, path: str):
    default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
    if isinstance(default, tuple) or (isinstance(value, list) and default is None):
        if not isinstance(value, list):
            raise ConfigError(f"{path} must be a list")
        return tuple(value)
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{path} must be a table")
        return dict(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path} must be a boolean")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path} must be an integer")
        return value
    if isinstance(default, float) or default is None:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path} must be a string")
        return value
    return value


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"not valid TOML: {exc}") from exc
    cfg = _build(ExperimentConfig, raw, "")
    _validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return parse_config(text)


def _validate(cfg: ExperimentConfig) -> None:
    checks: List[Tuple[bool, str]] = [
        (cfg.seed >= 0, "seed must be a nonnegative 64-bit integer"),
        (cfg.model.dim >= 1, "model.dim must be positive"),
        (cfg.model.n >= 1, "model.n must be positive"),
        (cfg.sim.scheme in ("exact_ou", "semi_implicit_euler"), "sim.scheme must be exact_ou or semi_implicit_euler"),
        (cfg.sim.n_replicas >= 2, "sim.n_replicas must be >= 2"),
        (0 < cfg.certificate.delta < 1, "certificate.delta must lie in (0, 1)"),
        (0.25 < cfg.laplace.alpha <= 0.5, "laplace.alpha must lie in (1/4, 1/2]"),
        (cfg.sweep.parameter in ("n", "delta"), "sweep.parameter must be n or delta"),
        ("preset" in cfg.model.theta_star, "model.theta_star needs a preset"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)
