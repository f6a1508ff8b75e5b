"""Non-conjugate fixture: the linear Gaussian model with a cubic drift perturbation.

The log-likelihood gains a separable quartic term centered at the truth,

    F_n^kappa(theta) = F_n(theta) - (kappa/4) sum_m (theta_m - theta*_m)^4,

so the population maximizer stays at ``theta*`` and the population Hessian
there is still ``-A``.  The preconditioned drift picks up
``-kappa mu_m (theta_m - theta*_m)^3``, which keeps it monotone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .langevin import DriftSpec
from .laplace import laplace_covariance
from .model import ModelInstance
from .spectral import GaussianSpec, SpectralVector


@dataclass(frozen=True)
class CubicPerturbation:
    model: ModelInstance
    kappa: float

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative to keep the drift monotone")

    def precond_gradient(self, theta) -> np.ndarray:
        m = self.model
        h = np.asarray(theta, dtype=float) - m.theta_star.coeffs
        return m.precond_gradient(theta) - self.kappa * m.mu * (h * h * h)

    def population_gradient(self, theta) -> np.ndarray:
        m = self.model
        h = np.asarray(theta, dtype=float) - m.theta_star.coeffs
        return m.population_gradient(theta) - self.kappa * m.mu * (h * h * h)

    def precond_hessian_star(self) -> np.ndarray:
        return -self.model.mu * self.model.lam

    def drift(self) -> DriftSpec:
        zero = lambda t: np.zeros_like(t)  # noqa: E731
        return DriftSpec(self.precond_gradient, zero, "general",
                         implicit_slope=-self.model.mu * self.model.lam)

    def loglik(self, theta) -> np.ndarray:
        m = self.model
        t = np.atleast_2d(np.asarray(theta, dtype=float))
        h = t - m.theta_star.coeffs
        return (-0.5 * np.sum(m.lam * t * t, axis=1) + t @ m.data_coeffs.coeffs
                - 0.25 * self.kappa * np.sum((h * h) ** 2, axis=1))

    def log_target(self, theta) -> np.ndarray:
        """Unnormalized log posterior density on the truncation (Gaussian prior, V = 0)."""
        t = np.atleast_2d(np.asarray(theta, dtype=float))
        return self.model.n * self.loglik(t) - 0.5 * np.sum(t * t / self.model.mu, axis=1)

    def map_estimate(self) -> SpectralVector:
        """Mode-wise root of the strictly decreasing OM stationarity equation."""
        m = self.model
        out = np.empty(m.dim)
        for i in range(m.dim):
            mu, lam, c, ts = m.mu[i], m.lam[i], m.data_coeffs.coeffs[i], m.theta_star.coeffs[i]

            def g(t):
                return m.n * (c - lam * t - self.kappa * (t - ts) ** 3) - t / mu

            lo, hi = -1.0, 1.0
            while g(lo) < 0:
                lo *= 2
            while g(hi) > 0:
                hi *= 2
            out[i] = brentq(g, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps)
        return SpectralVector(out)

    def laplace_gaussian(self) -> GaussianSpec:
        """``N(MAP, (Q^{-1} + n H*)^{-1})`` with ``H* = A`` the population Fisher information."""
        m = self.model
        return GaussianSpec(self.map_estimate(), laplace_covariance(m.q, m.a, m.n))
