import dataclasses
import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from hilbert_pcr.certificates import (
    CertificateError,
    PowerFunction,
    StrongRateInputs,
    TabulatedFunction,
    WeakRateInputs,
    check_w3,
    function_from_dict,
    strong_inputs_from_model,
    strong_radius,
    validate_certificate,
    weak_fixed_point,
)
from hilbert_pcr.model import synthesize_data, theta_star_preset
from hilbert_pcr.spectral import DiagonalOperator

GRID = np.geomspace(1e-2, 1e2, 60)


def coercive(dim=64, n=1000, seed=7):
    q = DiagonalOperator.power(1.0, 2.0, dim)
    a = DiagonalOperator.power(1.0, -2.0, dim)
    return synthesize_data(q, a, theta_star_preset("smooth", q), n, seed)


def strong(**kw):
    base = dict(tr_q=1.644934, q_opnorm=1.0, mu=1.0, b=1.0, eps1=0.0, eps2=0.05, n=1000, delta=0.1)
    base.update(kw)
    return strong_radius(StrongRateInputs(**base))


def decimal_radius(tr, qn, mu, b, eps2, n, delta, c=1):
    getcontext().prec = 50
    D = Decimal
    nmu = D(n) * D(mu)
    return (D(c) * (D(tr) / nmu).sqrt() + D(b) / nmu + D(eps2) / D(mu)
            + D(c) * (D(qn) * (1 / D(delta)).ln() / nmu).sqrt())


class TestStrongRadius:
    def test_worked_example(self):
        cert = strong()
        oracle = decimal_radius("1.644934", 1, 1, 1, "0.05", 1000, "0.1")
        assert cert.radius == pytest.approx(0.1395430, abs=1e-6)
        assert abs(Decimal(cert.radius) - oracle) < Decimal("1e-15")
        assert cert.terms["trace_term"] == pytest.approx(0.0405577, abs=1e-7)
        assert cert.terms["confidence_term"] == pytest.approx(0.0479853, abs=1e-7)

    def test_only_trace_term_survives(self):
        cert = strong(delta=1 - 1e-15, eps2=0.0, b=0.0)
        assert cert.radius == pytest.approx(math.sqrt(1.644934 / 1000), rel=1e-7)

    def test_root_n_scaling_of_sqrt_terms(self):
        a = strong(eps2=0.05, n=1000)
        b = strong(eps2=0.05 / math.sqrt(2), n=2000)
        for key in ("trace_term", "fluctuation_term", "confidence_term"):
            assert a.terms[key] / b.terms[key] == pytest.approx(math.sqrt(2), abs=1e-9)

    def test_envelope_hypothesis(self):
        with pytest.raises(CertificateError, match="n too small"):
            strong(eps1=0.2)

    def test_input_validation(self):
        with pytest.raises(CertificateError):
            strong(mu=0.0)
        with pytest.raises(CertificateError):
            strong(delta=1.0)

    @given(st.floats(10, 1e6), st.floats(1e-4, 0.9), st.floats(0.1, 10))
    def test_monotonicity(self, n, delta, mu):
        n = int(n)

        def r(n_, d_, mu_):
            return strong(n=n_, delta=d_, mu=mu_, eps2=0.3 / math.sqrt(n_)).radius

        base = r(n, delta, mu)
        assert r(2 * n, delta, mu) <= base
        assert r(n, delta / 2, mu) >= base
        assert r(n, delta, 2 * mu) <= base

    def test_digest_reproducibility(self):
        a, b = strong(), strong()
        assert a.inputs_digest == b.inputs_digest and a.radius == b.radius
        assert strong(c_universal=2.0).inputs_digest != a.inputs_digest
        assert a.to_canonical_text() == b.to_canonical_text()


class TestWeakFixedPoint:
    def quad(self, **kw):
        base = dict(psi=PowerFunction(1, 2), zeta=PowerFunction(1, 0), eps=0.1, b=0.0, tr_q=0.01,
                    q_opnorm=0.02 / math.log(10), n=1, delta=0.1)
        base.update(kw)
        return WeakRateInputs(**base)

    def test_quadratic_root(self):
        inp = self.quad()
        cert = weak_fixed_point(inp)
        exact = (0.1 + math.sqrt(0.01 + 0.12)) / 2
        assert cert.radius == pytest.approx(0.2302776, abs=1e-7)
        assert abs(cert.radius - exact) <= 1e-9 * exact
        assert cert.valid
        assert abs(float(inp.residual(cert.radius))) <= 1e-9 * max(1.0, float(inp.psi(cert.radius)))

    def test_unique_sign_change(self):
        inp = self.quad()
        f = inp.residual(np.concatenate([[0.0], inp.grid()]))
        s = np.sign(f[f != 0])
        assert np.count_nonzero(np.diff(s)) == 1

    def test_degenerate_root_voids_certificate(self):
        cert = weak_fixed_point(self.quad(eps=0.0, tr_q=0.0, q_opnorm=0.0))
        assert cert.radius == 0.0 and not cert.valid

    def test_w4_violation(self):
        with pytest.raises(CertificateError, match="W.4"):
            weak_fixed_point(self.quad(psi=PowerFunction(1, 1), eps=2.0))

    def test_consistent_with_strong_certificate(self):
        ns = [100, 1000, 10_000]
        weak, sqrt_terms = [], []
        for n in ns:
            m = coercive(64, n)
            s = strong_radius(strong_inputs_from_model(m, 0.1))
            inp = WeakRateInputs(PowerFunction(s.inputs["mu"], 2), PowerFunction(1, 0), eps=s.inputs["eps2"],
                                 b=0.0, tr_q=s.inputs["tr_q"], q_opnorm=s.inputs["q_opnorm"], n=n, delta=0.1)
            weak.append(weak_fixed_point(inp).radius)
            sqrt_terms.append(s.terms["trace_term"] + s.terms["confidence_term"])
        ratios = np.array(weak) / np.array(sqrt_terms)
        assert np.all((ratios >= 0.5) & (ratios <= 2.0)), ratios
        slope = np.polyfit(np.log(ns), np.log(weak), 1)[0]
        assert slope == pytest.approx(-0.5, abs=0.02)

    def test_tabulated_envelope(self):
        xs = np.geomspace(1e-4, 1e4, 200)
        inp = self.quad(psi=TabulatedFunction(tuple(xs), tuple(xs**2)))
        exact = (0.1 + math.sqrt(0.13)) / 2
        assert weak_fixed_point(inp).radius == pytest.approx(exact, rel=1e-4)


def w3_symbolic(p, q):
    return p >= q + 1 and p * p >= 3 + q * q - q


class TestW3:
    def test_pass_case(self):
        rep = check_w3(PowerFunction(1, 3), PowerFunction(1, 1), GRID)
        assert rep.passed
        # the first-order margin is r^(p+q) (p - q - 1) > 0 in relative form
        assert rep.worst_margin["W.3 first-order"] > 0

    def test_first_order_failure_has_witness(self):
        rep = check_w3(PowerFunction(1, 1.5), PowerFunction(1, 1), GRID)
        assert not rep.passed
        assert rep.first_violation["W.3 first-order"] == GRID[0]

    def test_constant_zeta_quadratic_psi(self):
        assert check_w3(PowerFunction(1, 2), PowerFunction(1, 0), GRID).passed

    @pytest.mark.parametrize("p", [1.0, 1.5, 2.0, 2.5, 3.0])
    @pytest.mark.parametrize("q", [0.0, 0.5, 1.0, 2.0])
    def test_grid_matches_symbolic(self, p, q):
        assert check_w3(PowerFunction(1, p), PowerFunction(1, q), GRID).passed == w3_symbolic(p, q)

    @given(st.floats(0.5, 4.0), st.floats(0.0, 2.5))
    def test_random_pairs_match_symbolic(self, p, q):
        # keep clear of the boundaries where the verdict is decided by rounding
        assume(abs(p - q - 1) > 1e-3 and abs(p * p - 3 - q * q + q) > 1e-3)
        assert check_w3(PowerFunction(1, p), PowerFunction(1, q), GRID[::6]).passed == w3_symbolic(p, q)


class TestFunctions:
    def test_roundtrip(self):
        for f in (PowerFunction(2.0, 1.5), TabulatedFunction((0.0, 1.0, 2.0), (0.0, 1.0, 4.0))):
            g = function_from_dict(f.to_dict())
            assert g.to_dict() == f.to_dict()
        with pytest.raises(ValueError):
            function_from_dict({"kind": "spline"})

    def test_pchip_is_monotone(self):
        f = TabulatedFunction((0.0, 1.0, 2.0, 3.0), (0.0, 0.1, 3.0, 3.1))
        x = np.linspace(0, 3, 301)
        assert np.all(np.diff(f(x)) >= 0)


class TestValidation:
    def test_certificate_holds(self):
        m = coercive(64, 1000)
        cert = validate_certificate(strong_radius(strong_inputs_from_model(m, 0.1)), m, 20_000, seed=1)
        ev = cert.empirical_validation
        assert ev["passed"] and ev["tail_mass"] <= 0.1

    def test_zero_radius_fails(self):
        m = coercive(64, 1000)
        cert = dataclasses.replace(strong_radius(strong_inputs_from_model(m, 0.1)), radius=0.0)
        ev = validate_certificate(cert, m, 5000, seed=1).empirical_validation
        assert ev["tail_mass"] == 1.0 and not ev["passed"]

    def test_inflated_radius_has_slack(self):
        m = coercive(64, 1000)
        cert = strong_radius(strong_inputs_from_model(m, 0.1))
        cert = dataclasses.replace(cert, radius=10 * cert.radius)
        ev = validate_certificate(cert, m, 5000, seed=1).empirical_validation
        assert ev["passed"] and ev["tail_mass"] == 0.0 and ev["slack"] == pytest.approx(0.1)
