import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hilbert_pcr.spectral import (
    DiagonalOperator,
    GaussianSpec,
    NonFiniteError,
    NotInCameronMartinSpace,
    PowerLaw,
    SpectralError,
    SpectralVector,
    block_rng,
    cameron_martin_norm,
    decay_from_dict,
    fernique_check,
    op_norm,
    sample_gaussian,
    standard_normals,
    trace,
)

positive_lists = st.lists(st.floats(1e-6, 1e3), min_size=1, max_size=20)


def basel_partial(n_terms):
    # exact rational partial sum, independent of floating-point accumulation
    s = sum(Fraction(1, m * m) for m in range(1, n_terms + 1))
    return float(s)


class TestTrace:
    def test_power_law_against_basel(self):
        op = DiagonalOperator.power(1.0, 2.0, 10_000)
        t = trace(op, with_tail=True)
        assert t.value == pytest.approx(1.644834, abs=1e-4)
        assert t.tail_estimate <= 1e-4
        # partial sum plus tail brackets zeta(2) = pi^2/6
        assert abs(t.value + t.tail_estimate - math.pi**2 / 6) < 1e-7

    def test_partial_sum_matches_rational_oracle(self):
        op = DiagonalOperator.power(1.0, 2.0, 300)
        assert trace(op) == pytest.approx(basel_partial(300), rel=1e-14)

    def test_trivial_cases(self):
        assert trace(DiagonalOperator.explicit([0, 0, 0])) == 0
        assert trace(DiagonalOperator.explicit([2, 1, 0.5])) == 3.5

    def test_indefinite_rejected(self):
        with pytest.raises(SpectralError):
            trace(DiagonalOperator.explicit([1.0, -0.5]))

    def test_divergent_law_has_no_tail(self):
        assert trace(DiagonalOperator.power(1.0, 1.0, 50), with_tail=True).tail_estimate is None

    @given(positive_lists)
    def test_trace_dominates_top_eigenvalue(self, eigs):
        op = DiagonalOperator.explicit(eigs)
        assert trace(op) >= op_norm(op) * (1 - 1e-15)


class TestOpNorm:
    def test_examples(self):
        assert op_norm(DiagonalOperator.explicit([2, 1, 0.5])) == 2
        assert op_norm(DiagonalOperator.power(3.0, 1.5, 100)) == 3
        assert op_norm(DiagonalOperator.explicit([-1, 0.5])) == 1


class TestCameronMartin:
    def test_single_mode(self):
        v = SpectralVector([1.0, 0.0])
        assert cameron_martin_norm(v, DiagonalOperator.explicit([4, 1])) == 0.5

    def test_zero(self):
        assert cameron_martin_norm(SpectralVector.zeros(5), DiagonalOperator.power(1, 2, 5)) == 0

    def test_power_law_against_summation(self):
        v = SpectralVector.from_decay(PowerLaw(1.0, 2.0), 100)
        got = cameron_martin_norm(v, DiagonalOperator.power(1.0, 2.0, 100))
        assert got == pytest.approx(math.sqrt(basel_partial(100)), rel=1e-13)
        assert got == pytest.approx(1.2787, abs=1e-4)

    def test_zero_variance_with_mass(self):
        with pytest.raises(NotInCameronMartinSpace):
            cameron_martin_norm(SpectralVector([1.0, 1.0]), DiagonalOperator.explicit([1.0, 0.0]))

    @given(positive_lists, st.data())
    def test_embedding_inequality(self, eigs, data):
        v = np.array(data.draw(st.lists(st.floats(-10, 10), min_size=len(eigs), max_size=len(eigs))))
        q = DiagonalOperator.explicit(eigs)
        lhs = cameron_martin_norm(SpectralVector(v), q)
        assert lhs >= np.linalg.norm(v) / math.sqrt(op_norm(q)) * (1 - 1e-12)


class TestValidation:
    def test_nonfinite_poison(self):
        with pytest.raises(NonFiniteError):
            DiagonalOperator.explicit([1.0, np.nan])
        with pytest.raises(NonFiniteError):
            SpectralVector([np.inf])

    def test_decay_dict_roundtrip(self):
        law = PowerLaw(2.0, 1.5)
        assert decay_from_dict(law.to_dict()) == law
        with pytest.raises(SpectralError):
            decay_from_dict({"kind": "power", "scale": 1.0})
        with pytest.raises(SpectralError):
            decay_from_dict({"kind": "wavelet"})

    def test_declared_positivity_enforced(self):
        with pytest.raises(SpectralError):
            DiagonalOperator(np.array([1.0, 0.0]), positivity_class="strictly-positive")

    def test_compose_keeps_power_law(self):
        c = DiagonalOperator.power(1, 2, 8).compose(DiagonalOperator.power(1, -2, 8))
        assert c.power_law == PowerLaw(1.0, 0.0)
        np.testing.assert_allclose(c.eigs, 1.0, rtol=1e-15)


class TestSampling:
    def test_near_degenerate_covariance(self):
        m = np.array([1.0, -2.0, 3.0])
        spec = GaussianSpec(SpectralVector(m), DiagonalOperator.explicit([1e-30] * 3))
        assert np.max(np.abs(sample_gaussian(spec, seed=1).coeffs - m)) < 1e-10

    def test_determinism(self):
        spec = GaussianSpec.centered(DiagonalOperator.power(1, 2, 16))
        np.testing.assert_array_equal(sample_gaussian(spec, 5, 100), sample_gaussian(spec, 5, 100))
        assert not np.array_equal(sample_gaussian(spec, 5, 100), sample_gaussian(spec, 6, 100))

    def test_moments_within_three_se(self):
        N = 100_000
        spec = GaussianSpec(SpectralVector([0.3, -1.0]), DiagonalOperator.explicit([1.0, 4.0]))
        x = sample_gaussian(spec, 2, N)
        var = np.array([1.0, 4.0])
        assert np.all(np.abs(x.mean(axis=0) - spec.mean.coeffs) <= 3 * np.sqrt(var / N))
        assert np.all(np.abs(x.var(axis=0, ddof=1) - var) <= 3 * var * math.sqrt(2 / (N - 1)))

    def test_streams_are_prefix_stable(self):
        # a longer request extends a shorter one block by block
        a = standard_normals(9, 0, 300, 4)
        b = standard_normals(9, 0, 600, 4)
        np.testing.assert_array_equal(a, b[:300])

    def test_seed_range(self):
        block_rng(2**64 - 1, 0)
        with pytest.raises(SpectralError):
            block_rng(2**64, 0)
        with pytest.raises(SpectralError):
            block_rng(-1, 0)


class TestFernique:
    def test_scalar_mgf(self):
        # E exp(x^2/4) has infinite variance, so the MC error decays slowly
        rep = fernique_check(GaussianSpec.centered(DiagonalOperator.explicit([1.0])), 0.25, 400_000, 3)
        assert not rep.divergent
        assert rep.analytic == pytest.approx(1 / math.sqrt(0.5), rel=1e-14)
        assert rep.finite_estimate == pytest.approx(math.sqrt(2), rel=0.03)

    def test_boundary_flagged(self):
        rep = fernique_check(GaussianSpec.centered(DiagonalOperator.explicit([1.0])), 0.5, 100, 3)
        assert rep.divergent and rep.alpha_bound == 0.5 and math.isinf(rep.analytic)

    def test_power_law_product(self):
        cov = DiagonalOperator.power(1.0, 2.0, 64)
        rep = fernique_check(GaussianSpec.centered(cov), 0.1, 100_000, 4)
        oracle = math.prod((1 - 0.2 / m**2) ** -0.5 for m in range(1, 65))
        assert rep.analytic == pytest.approx(oracle, rel=1e-12)
        assert abs(rep.finite_estimate - oracle) <= 4 * rep.std_error

    @given(st.floats(0.01, 5.0), st.floats(0.01, 3.0))
    def test_verdict_matches_mgf_domain(self, top, alpha):
        cov = DiagonalOperator.explicit([top, top / 3])
        rep = fernique_check(GaussianSpec.centered(cov), alpha, 4, 0)
        assert rep.divergent == (not alpha < 1 / (2 * top))

