import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from scipy.integrate import quad

from hilbert_pcr.acceptance import coercive_model, fixture_kl
from hilbert_pcr.laplace import (
    BoundInputs,
    PositiveDefinitenessError,
    bvm_audit,
    calibrate_sigma,
    cameron_martin_shift_check,
    feldman_hajek_check,
    h_bound,
    k_bound,
    kl_commuting_gaussians,
    kl_estimate,
    kl_mode_terms,
    laplace_covariance,
    laplace_pair,
)
from hilbert_pcr.model import compute_map, exact_posterior, synthesize_data, theta_star_preset
from hilbert_pcr.nonconjugate import CubicPerturbation
from hilbert_pcr.spectral import (
    DiagonalOperator,
    GaussianSpec,
    PowerLaw,
    SpectralVector,
    sample_gaussian,
    trace,
)


def gauss(mean, var):
    return GaussianSpec(SpectralVector(mean), DiagonalOperator.explicit(var))


def bound_inputs(**kw):
    base = dict(a_smooth=1.0, eps1_2=0.0, eps2_2=0.0, l2=0.0, alpha=0.5, sigma=1.0, lambda_min=1.0,
                q_opnorm=1.0, tr_q=1.644934, n=10_000, delta=0.1)
    base.update(kw)
    return BoundInputs(**base)


class TestLaplaceCovariance:
    def test_no_information(self):
        q = DiagonalOperator.power(1.0, 2.0, 8)
        out = laplace_covariance(q, DiagonalOperator.explicit([0.0] * 8), 1)
        np.testing.assert_array_equal(out.eigs, q.eigs)

    def test_scalar(self):
        out = laplace_covariance(DiagonalOperator.explicit([0.5]), DiagonalOperator.explicit([2.0]), 100)
        assert out.eigs[0] == pytest.approx(0.5 / 101, rel=1e-15)

    @given(st.lists(st.tuples(st.floats(1e-3, 10), st.floats(0, 10)), min_size=1, max_size=16),
           st.integers(1, 10**6))
    def test_information_reduces_variance(self, pairs, n):
        q = DiagonalOperator.explicit([p[0] for p in pairs])
        h = DiagonalOperator.explicit([p[1] for p in pairs])
        out = laplace_covariance(q, h, n)
        assert np.all(out.eigs <= q.eigs) and trace(out) <= trace(q)

    def test_positive_definiteness(self):
        with pytest.raises(PositiveDefinitenessError, match="mode 2"):
            laplace_covariance(DiagonalOperator.explicit([1.0, 1.0]), DiagonalOperator.explicit([1.0, -0.2]), 10)


class TestConjugateCollapse:
    @pytest.mark.parametrize("source", ["population", "empirical"])
    @pytest.mark.parametrize("n", [10, 1000])
    def test_laplace_is_posterior(self, source, n):
        m = coercive_model(64, n)
        pair = laplace_pair(m, exact_posterior(m), source)
        assert kl_commuting_gaussians(pair.posterior, pair.laplace) <= 1e-12
        np.testing.assert_allclose(pair.laplace.mean.coeffs, pair.posterior.mean.coeffs, rtol=1e-15)


class TestFeldmanHajek:
    def test_summable_product(self):
        q = DiagonalOperator.power(1.0, 2.0, 256)
        rep = feldman_hajek_check(q, DiagonalOperator.power(1.0, 0.0, 256), 10)
        assert rep.verdict == "equivalent" and rep.fh1_converges
        # partial sum + integral tail brackets a long-range summation oracle
        m = np.arange(1, 2_000_001, dtype=float)
        x = 10 * m**-2
        oracle = math.fsum((x / (1 + x)) ** 2)
        assert rep.fh1_partial_sum < oracle <= rep.fh1_partial_sum + rep.fh1_tail_estimate

    def test_bounded_not_square_summable(self):
        q = DiagonalOperator.power(1.0, 2.0, 256)
        rep = feldman_hajek_check(q, DiagonalOperator.power(1.0, -2.0, 256), 10)
        assert rep.verdict == "singular" and rep.fh1_converges is False and rep.caveat
        assert rep.fh1_partial_sum == pytest.approx(256 * (10 / 11) ** 2, rel=1e-12)

    def test_zero_perturbation(self):
        rep = feldman_hajek_check(DiagonalOperator.power(1, 2, 16), DiagonalOperator.explicit([0.0] * 16), 5)
        assert rep.verdict == "equivalent" and rep.fh1_partial_sum == 0 and rep.ratio_band == (1.0, 1.0)

    @given(st.floats(-1.0, 3.0), st.floats(0.5, 3.0))
    def test_power_law_verdict_is_l2_criterion(self, rho, p):
        assume(abs(rho - 0.5) > 1e-9)
        q = DiagonalOperator.power(1.0, p, 64)
        h = DiagonalOperator.power(1.0, rho - p, 64)
        assert (feldman_hajek_check(q, h, 7).verdict == "equivalent") == (rho > 0.5)

    def test_explicit_lists_are_inconclusive(self):
        rep = feldman_hajek_check(DiagonalOperator.explicit([1.0, 0.5]), DiagonalOperator.explicit([1.0, 1.0]), 3)
        assert rep.verdict == "inconclusive"


class TestCameronMartinShift:
    def test_inside(self):
        q = DiagonalOperator.power(1.0, 2.0, 256)
        rep = cameron_martin_shift_check(q, SpectralVector.from_decay(PowerLaw(1.0, 2.0), 256))
        assert rep.in_cm
        assert rep.norm == pytest.approx(math.pi / math.sqrt(6), rel=1e-5)

    def test_outside(self):
        q = DiagonalOperator.power(1.0, 2.0, 256)
        rep = cameron_martin_shift_check(q, SpectralVector.from_decay(PowerLaw(1.0, 1.0), 256))
        assert not rep.in_cm and math.isinf(rep.norm)

    def test_zero_shift(self):
        rep = cameron_martin_shift_check(DiagonalOperator.power(1, 2, 8), SpectralVector.zeros(8))
        assert rep.in_cm and rep.norm == 0


class TestKL:
    def test_identity(self):
        p = gauss([0.3, -1.0], [1.0, 2.0])
        assert kl_commuting_gaussians(p, p) == 0.0

    def test_mean_shift(self):
        p, r = gauss([0.2], [1.0]), gauss([0.0], [1.0])
        assert kl_commuting_gaussians(p, r) == pytest.approx(0.02, rel=1e-14)
        x = sample_gaussian(p, 3, 200_000)
        est = kl_estimate(x, p.logpdf, r, 200_000, seed=3)
        assert abs(est.value - 0.02) <= 4 * est.std_error

    def test_variance_ratio_against_quadrature(self):
        p, r = gauss([0.0], [2.0]), gauss([0.0], [1.0])
        lp = lambda t: -t * t / 4 - 0.5 * math.log(4 * math.pi)  # noqa: E731
        lr = lambda t: -t * t / 2 - 0.5 * math.log(2 * math.pi)  # noqa: E731
        oracle = quad(lambda t: math.exp(lp(t)) * (lp(t) - lr(t)), -60, 60, epsabs=1e-14)[0]
        assert kl_commuting_gaussians(p, r) == pytest.approx(0.1534264, abs=1e-7)
        assert kl_commuting_gaussians(p, r) == pytest.approx(oracle, rel=1e-10)

    @given(st.integers(1, 10), st.integers(0, 2**32))
    def test_gibbs_inequality(self, dim, seed):
        rng = np.random.default_rng(seed)
        p = gauss(rng.normal(size=dim), rng.uniform(0.05, 3, dim))
        r = gauss(rng.normal(size=dim), rng.uniform(0.05, 3, dim))
        terms = kl_mode_terms(p, r)
        assert np.all(terms >= 0) and kl_commuting_gaussians(p, r) > 0

    def test_truncation_growth_is_monotone(self):
        m = coercive_model(64, 100)
        post = exact_posterior(m)
        prior = GaussianSpec.centered(m.q)
        cums = np.cumsum(kl_mode_terms(post, prior))
        assert np.all(np.diff(cums) >= 0)


class TestBounds:
    def test_h_reduces_to_first_term(self):
        inp = bound_inputs(a_smooth=0.7, n=40, lambda_min=0.5, c1=2.0)
        assert h_bound(inp).value == pytest.approx(2.0 * 0.49 / (40 * 0.5), rel=1e-15)

    def test_h_worked_example(self):
        inp = bound_inputs(eps2_2=1e-2)
        assert h_bound(inp).value == pytest.approx(2e-4, rel=1e-12)
        assert h_bound(inp).terms == pytest.approx((1e-4, 1e-4), rel=1e-12)

    @given(st.floats(0.2501, 0.5), st.floats(0, 2), st.floats(0, 2))
    def test_h_nonincreasing_in_n(self, alpha, a, l2):
        vals = [h_bound(bound_inputs(alpha=alpha, a_smooth=a, l2=l2, eps1_2=n**-0.5, eps2_2=n**-0.5,
                                     n=int(n))).value
                for n in np.geomspace(1e2, 1e6, 9)]
        assert all(b <= a_ * (1 + 1e-12) for a_, b in zip(vals, vals[1:]))

    def test_k_worked_example(self):
        k = k_bound(bound_inputs(eps2_2=1e-2))
        tr = 1.644934
        assert k.value == pytest.approx((tr * tr + 4) * 1e-4 + (tr + 4) * 1e-4, rel=1e-14)
        # the reference figure rounds tr(Q)^2 to 2.70581
        assert k.value == pytest.approx(1.2350744e-3, abs=5e-10)
        assert "O(1/n)" in k.advisory

    def test_k_without_sigma(self):
        inp = bound_inputs(eps2_2=1e-2, sigma=1e-300)
        assert k_bound(inp).value == pytest.approx((1.644934**2 + 1.644934) * 1e-4, rel=1e-12)

    @given(st.floats(0.2501, 0.5), st.floats(0, 5), st.floats(0, 1), st.floats(1e-3, 5))
    def test_k_nonnegative_and_nonincreasing(self, alpha, a, e, sigma):
        vals = [k_bound(bound_inputs(alpha=alpha, a_smooth=a, eps2_2=e / math.sqrt(n), sigma=sigma,
                                     n=int(n))).value for n in np.geomspace(1e2, 1e6, 9)]
        assert min(vals) >= 0 and all(b <= a_ * (1 + 1e-12) for a_, b in zip(vals, vals[1:]))

    def test_input_domain(self):
        with pytest.raises(ValueError):
            bound_inputs(alpha=0.25)
        with pytest.raises(ValueError):
            h_bound(bound_inputs(lambda_min=0.0))

    def test_sigma_calibration_matches_manual_quantile(self):
        q = DiagonalOperator.power(1.0, 2.0, 16)
        a = DiagonalOperator.power(1.0, -2.0, 16)
        t = theta_star_preset("smooth", q)
        factory = lambda s: synthesize_data(q, a, t, 100, s)  # noqa: E731
        errs = [np.linalg.norm(compute_map(factory(s)).coeffs - t.coeffs) for s in range(200)]
        got = calibrate_sigma(factory, 100, 0.5, 0.1, 200)
        assert got == pytest.approx(np.quantile(errs, 0.9) * 10, rel=1e-14)


class TestBvmAudit:
    def test_linear_model_is_exactly_quadratic(self):
        m = coercive_model(16, 100)
        rep = bvm_audit(m, 100, 1.0, seed=2)
        assert rep["BvM.1"].empirical == 0.0 and rep["BvM.2"].empirical == 0.0
        from hilbert_pcr.model import sample_ball_pairs
        t1, t2 = sample_ball_pairs(m.theta_star.coeffs, 1.0, 100, 2)
        dev = (m.precond_gradient(t1) - m.precond_gradient(t2)) + m.mu * m.lam * (t1 - t2)
        assert np.max(np.abs(dev)) < 1e-10

    def test_cubic_fixture_is_detected(self):
        fx = CubicPerturbation(coercive_model(16, 100), 1.0)
        rep = bvm_audit(fx.model, 100, 1.0, seed=2, precond_gradient=fx.precond_gradient,
                        precond_hessian_star=fx.precond_hessian_star())
        assert rep["BvM.1"].empirical > 0 and rep["BvM.1"].witness is not None

    def test_zero_radius(self):
        rep = bvm_audit(coercive_model(8, 10), 50, 0.0, seed=1)
        assert all(e.status == "vacuous" for e in rep.entries)


class TestCubicFixture:
    def test_map_is_stationary(self):
        fx = CubicPerturbation(coercive_model(16, 50), 1.0)
        t = fx.map_estimate().coeffs
        h = 1e-6
        grad = np.array([(fx.log_target(t + h * e)[0] - fx.log_target(t - h * e)[0]) / (2 * h)
                         for e in np.eye(16)])
        assert np.max(np.abs(grad)) < 1e-4

    def test_no_perturbation_is_conjugate(self):
        fx = CubicPerturbation(coercive_model(16, 50), 0.0)
        post = exact_posterior(fx.model)
        assert kl_commuting_gaussians(post, fx.laplace_gaussian()) <= 1e-12

    def test_negative_kappa_rejected(self):
        with pytest.raises(ValueError):
            CubicPerturbation(coercive_model(4, 10), -1.0)

    def test_langevin_kl_estimate_against_quadrature(self):
        est, fx = fixture_kl(10, 1.0, 10_000, seed=31)
        m, g = fx.model, fx.laplace_gaussian()
        oracle = 0.0
        for i in range(m.dim):
            mu, lam, c, ts = m.mu[i], m.lam[i], m.data_coeffs.coeffs[i], m.theta_star.coeffs[i]
            mg, sg = g.mean.coeffs[i], math.sqrt(g.cov.eigs[i])

            def raw(t):
                return m.n * (-0.5 * lam * t * t + t * c - 0.25 * (t - ts) ** 4) - 0.5 * t * t / mu

            lp = lambda t: raw(t) - raw(mg)  # noqa: E731
            lo, hi = mg - 12 * sg, mg + 12 * sg
            Z = quad(lambda t: math.exp(lp(t)), lo, hi, epsrel=1e-12, limit=200)[0]
            lg = lambda t: -0.5 * (t - mg) ** 2 / sg**2 - 0.5 * math.log(2 * math.pi * sg**2)  # noqa: E731
            oracle += quad(lambda t: math.exp(lp(t)) / Z * (lp(t) - math.log(Z) - lg(t)), lo, hi,
                           epsrel=1e-9, limit=200)[0]
        assert oracle == pytest.approx(0.0114, rel=0.01)
        assert abs(est.value - oracle) <= 4 * est.std_error
