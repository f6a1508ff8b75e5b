"""Posterior contraction and Laplace-approximation laboratory on a spectral truncation."""

from .spectral import (
    DiagonalOperator,
    Explicit,
    GaussianSpec,
    PowerLaw,
    SpectralVector,
    cameron_martin_norm,
    fernique_check,
    op_norm,
    sample_gaussian,
    trace,
)
from .model import (
    ModelInstance,
    audit_assumptions,
    compute_map,
    eval_empirical_loglik,
    exact_posterior,
    model_constants,
    synthesize_data,
    theta_star_preset,
)

__version__ = "0.1.0"
