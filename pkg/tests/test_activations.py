import json
import math

import numpy as np
import pytest
import scipy.integrate as si
from hypothesis import given, settings
from hypothesis import strategies as st

from ntkc import (
    ActivationSpec,
    NumericError,
    activation_moments,
    center,
    closed_form_moments_Q,
    closed_form_moments_T,
    gauss_expect,
    weak_moment,
)

SQRT2PI = math.sqrt(2.0 * math.pi)


def gauss_quad_oracle(f, tau, breakpoints=()):
    """Adaptive quadrature of E[f(tau*xi)] with interval splitting."""
    pts = sorted(b / tau for b in breakpoints if abs(b / tau) < 12.0)

    def integrand(x):
        return f(tau * x) * math.exp(-0.5 * x * x) / SQRT2PI

    val, err = si.quad(integrand, -12.0, 12.0, points=pts or None, limit=300)
    assert err < 1e-7
    return val


class TestGaussExpect:
    def test_odd_function_vanishes(self):
        assert gauss_expect(lambda t: t, 1.0) == pytest.approx(0.0, abs=1e-14)

    def test_unit_second_moment(self):
        assert gauss_expect(lambda t: t * t, 1.0) == pytest.approx(1.0, rel=1e-13)

    def test_polynomial_exactness(self):
        # order q integrates polynomials up to degree 2q-1 exactly
        val = gauss_expect(lambda t: t**6, 1.3, order=4)
        assert val == pytest.approx(15.0 * 1.3**6, rel=1e-12)

    def test_relu_half_gaussian(self):
        # E[relu(xi)] = 1/sqrt(2*pi); raw quadrature converges only ~O(1/q)
        # on the kink (the moment engine integrates relu piecewise-exactly,
        # see test_relu below)
        val = gauss_expect(lambda t: np.maximum(t, 0.0), 1.0, order=511)
        assert val == pytest.approx(1.0 / SQRT2PI, abs=1e-3)

    def test_rejects_bad_order_and_tau(self):
        with pytest.raises(ValueError):
            gauss_expect(lambda t: t, 1.0, order=1)
        with pytest.raises(ValueError):
            gauss_expect(lambda t: t, 0.0)

    def test_nonfinite_raises(self):
        with pytest.raises(NumericError):
            gauss_expect(lambda t: np.where(t > 0, np.inf, 0.0), 1.0)


class TestWeakMoments:
    def test_sign_first_weak_moment(self):
        # E[sign'(xi)] = E[xi sign(xi)] = E[|xi|] = sqrt(2/pi)
        assert weak_moment(ActivationSpec("sign"), 1.0, 1) == pytest.approx(
            math.sqrt(2.0 / math.pi), rel=1e-14
        )

    def test_relu_second_weak_moment(self):
        # E[relu''(xi)] = E[relu(xi)(xi^2-1)] = phi(0)
        assert weak_moment(ActivationSpec("relu"), 1.0, 2) == pytest.approx(
            1.0 / SQRT2PI, rel=1e-14
        )

    def test_linear_second_weak_moment_zero(self):
        for tau in (0.3, 1.0, 2.7):
            assert weak_moment(ActivationSpec("linear"), tau, 2) == 0.0

    def test_step_first_weak_moment(self):
        # step' is a Dirac at 0: E[step'(tau xi)] = phi(0)/tau
        for tau in (0.5, 1.0, 2.0):
            assert weak_moment(ActivationSpec("step"), tau, 1) == pytest.approx(
                1.0 / (SQRT2PI * tau), rel=1e-13
            )

    def test_k_range_validated(self):
        with pytest.raises(ValueError):
            weak_moment(ActivationSpec("relu"), 1.0, 5)


class TestActivationMoments:
    def test_linear(self):
        m = activation_moments(ActivationSpec("linear"), 1.0)
        assert (m.m0, m.d1, m.d2, m.d3) == (0.0, 1.0, 0.0, 0.0)
        assert (m.sq, m.dsq, m.g2, m.g4) == (1.0, 1.0, 1.0, 0.0)

    def test_relu(self):
        m = activation_moments(ActivationSpec("relu"), 1.0)
        assert m.m0 == pytest.approx(1.0 / SQRT2PI, rel=1e-14)
        assert m.sq == pytest.approx(0.5, rel=1e-14)
        assert m.d1 == pytest.approx(0.5, rel=1e-14)
        assert m.dsq == pytest.approx(0.5, rel=1e-14)

    def test_sigma_t_mean_matches_tail_probability(self):
        # E[sigma_T] = P(|xi| > 1) for a=1, symmetric unit thresholds
        m = activation_moments(ActivationSpec("sigma_T", (1.0, -1.0, 1.0)), 1.0)
        assert m.m0 == pytest.approx(1.0 - math.erf(1.0 / math.sqrt(2.0)), rel=1e-14)

    def test_centered_relu_variance(self):
        mc = activation_moments(center(ActivationSpec("relu"), 1.0), 1.0)
        assert mc.m0 == pytest.approx(0.0, abs=1e-9)
        assert math.sqrt(mc.sq) == pytest.approx(
            math.sqrt(0.5 - 1.0 / (2.0 * math.pi)), rel=1e-14
        )
        assert mc.g2 == pytest.approx((1.0 - 1.0 / math.pi) / 2.0, rel=1e-13)

    def test_smooth_path_cos(self):
        # E[cos(tau xi)] = exp(-tau^2/2); d2 = -exp(-tau^2/2)
        tau = 0.8
        m = activation_moments(ActivationSpec("cos"), tau)
        assert m.m0 == pytest.approx(math.exp(-tau * tau / 2.0), rel=1e-12)
        assert m.d1 == pytest.approx(0.0, abs=1e-13)
        assert m.d2 == pytest.approx(-math.exp(-tau * tau / 2.0), rel=1e-10)

    def test_dsq_infinite_for_jumps(self):
        for kind, params in [
            ("sign", ()),
            ("step", ()),
            ("sigma_T", (1.0, -1.0, 1.0)),
            ("sigma_Q", (1.0, 0.5, -1.0, -0.3, 0.3, 1.0)),
        ]:
            assert math.isinf(activation_moments(ActivationSpec(kind, params), 1.0).dsq)

    @pytest.mark.parametrize(
        "kind,params",
        [
            ("relu", ()),
            ("leaky_relu", (0.2,)),
            ("abs", ()),
            ("sigmoid", ()),
            ("sin", ()),
            ("erf", ()),
            ("poly", (0.2, 1.0)),
            ("sigma_T", (1.3, -0.7, 1.1)),
        ],
    )
    def test_oracle_agreement(self, kind, params):
        spec = ActivationSpec(kind, params)
        tau = 0.9
        m = activation_moments(spec, tau)
        breaks = {"relu": (0,), "leaky_relu": (0,), "abs": (0,),
                  "sigma_T": params[1:] if kind == "sigma_T" else ()}.get(kind, ())
        f = lambda t: np.asarray(spec(t), dtype=float)
        assert m.m0 == pytest.approx(gauss_quad_oracle(f, tau, breaks), abs=1e-9)
        assert m.sq == pytest.approx(
            gauss_quad_oracle(lambda t: f(t) ** 2, tau, breaks), abs=1e-9
        )
        he2 = lambda t: f(t) * ((t / tau) ** 2 - 1.0) / tau**2
        assert m.d2 == pytest.approx(gauss_quad_oracle(he2, tau, breaks), abs=1e-8)


class TestCentering:
    def test_relu_shift_value(self):
        c = center(ActivationSpec("relu"), 1.0)
        assert c.center_shift == pytest.approx(1.0 / SQRT2PI, rel=1e-14)
        assert activation_moments(c, 1.0).m0 == pytest.approx(0.0, abs=1e-9)

    def test_linear_shift_zero(self):
        assert center(ActivationSpec("linear"), 1.7).center_shift == 0.0

    def test_idempotent(self):
        c1 = center(ActivationSpec("sigmoid"), 0.7)
        c2 = center(c1, 0.7)
        assert abs(c2.center_shift - c1.center_shift) <= 1e-9

    def test_derivative_moments_unchanged_exactly(self):
        for kind, params in [("relu", ()), ("sigma_T", (1.2, -0.4, 0.9)), ("sigmoid", ())]:
            spec = ActivationSpec(kind, params)
            m = activation_moments(spec, 1.1)
            mc = activation_moments(center(spec, 1.1), 1.1)
            assert (m.d1, m.d2, m.d3, m.dsq) == (mc.d1, mc.d2, mc.d3, mc.dsq)


class TestIntegrationByParts:
    @pytest.mark.parametrize("kind,params", [
        ("sigmoid", ()), ("sin", ()), ("erf", ()), ("poly", (0.3, -0.5)),
    ])
    def test_weak_equals_pointwise_derivative(self, kind, params):
        spec = ActivationSpec(kind, params)
        for tau in (0.4, 1.0, 2.5):
            weak = weak_moment(spec, tau, 1)
            pointwise = gauss_expect(lambda t: spec.derivative(t), tau, order=127)
            assert abs(weak - pointwise) <= 1e-8


@st.composite
def sigma_t_params(draw):
    a = draw(st.floats(0.1, 4.0))
    s1 = draw(st.floats(-3.0, 1.5))
    s2 = draw(st.floats(s1 + 0.05, s1 + 4.0))
    return a, s1, s2


@st.composite
def sigma_q_params(draw):
    b1 = draw(st.floats(-3.0, 3.0).filter(lambda v: abs(v) > 0.05))
    b2 = draw(st.floats(-3.0, 3.0).filter(lambda v: abs(v) > 0.05))
    r1 = draw(st.floats(-3.0, 0.5))
    r2 = draw(st.floats(r1 + 0.05, r1 + 2.0))
    r3 = draw(st.floats(r2, r2 + 2.0))
    r4 = draw(st.floats(r3 + 0.05, r3 + 2.0))
    return b1, b2, r1, r2, r3, r4


class TestClosedForms:
    def test_symmetric_thresholds_kill_d1(self):
        cf = closed_form_moments_T(1.0, -1.0, 1.0, 1.0)
        assert cf.d1 == 0.0

    def test_printed_d1_value(self):
        cf = closed_form_moments_T(1.0, -1.0, 2.0, 1.0)
        expect = (math.exp(-2.0) - math.exp(-0.5)) / SQRT2PI
        assert cf.d1 == pytest.approx(expect, rel=1e-12)

    def test_collapsed_q_equals_t(self):
        # b2 window of zero measure: three-level degenerates to two-level
        cf_q = closed_form_moments_Q(1.2, 0.7, -0.8, 0.1, 0.1, 1.4, 0.9)
        cf_t = closed_form_moments_T(1.2, -0.8, 1.4, 0.9)
        assert cf_q.d1 == pytest.approx(cf_t.d1, abs=1e-12)
        assert cf_q.sq == pytest.approx(cf_t.sq, abs=1e-12)
        assert cf_q.g2 == pytest.approx(cf_t.g2, abs=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(sigma_t_params(), st.floats(0.2, 3.0))
    def test_sigma_t_vs_quadrature(self, params, tau):
        a, s1, s2 = params
        cf = closed_form_moments_T(a, s1, s2, tau)
        spec = ActivationSpec("sigma_T", (a, s1, s2))
        f = lambda t: np.asarray(spec(t), dtype=float)
        m0 = gauss_quad_oracle(f, tau, (s1, s2))
        assert cf.m0 == pytest.approx(m0, abs=1e-6)
        d1 = gauss_quad_oracle(lambda t: f(t) * t / tau, tau, (s1, s2)) / tau
        assert cf.d1 == pytest.approx(d1, abs=1e-6)
        sq = gauss_quad_oracle(lambda t: (f(t) - m0) ** 2, tau, (s1, s2))
        assert cf.sq == pytest.approx(sq, abs=1e-6)
        g2 = gauss_quad_oracle(
            lambda t: (f(t) - m0) ** 2 * ((t / tau) ** 2 - 1.0), tau, (s1, s2)
        ) / (2.0 * tau**2)
        assert cf.g2 == pytest.approx(g2, abs=1e-6)

    @settings(max_examples=25, deadline=None)
    @given(sigma_q_params(), st.floats(0.2, 3.0))
    def test_sigma_q_vs_quadrature(self, params, tau):
        b1, b2, r1, r2, r3, r4 = params
        cf = closed_form_moments_Q(b1, b2, r1, r2, r3, r4, tau)
        spec = ActivationSpec("sigma_Q", params)
        f = lambda t: np.asarray(spec(t), dtype=float)
        m0 = gauss_quad_oracle(f, tau, (r1, r2, r3, r4))
        assert cf.m0 == pytest.approx(m0, abs=1e-6)
        d2 = gauss_quad_oracle(
            lambda t: f(t) * ((t / tau) ** 2 - 1.0), tau, (r1, r2, r3, r4)
        ) / tau**2
        assert cf.d2 == pytest.approx(d2, abs=1e-6)
        sq = gauss_quad_oracle(lambda t: (f(t) - m0) ** 2, tau, (r1, r2, r3, r4))
        assert cf.sq == pytest.approx(sq, abs=1e-6)

    def test_invalid_parameters_rejected(self):
        with pytest.raises(ValueError):
            closed_form_moments_T(1.0, 1.0, -1.0, 1.0)
        with pytest.raises(ValueError):
            closed_form_moments_Q(1.0, 1.0, 0.5, 0.2, 0.6, 1.0, 1.0)
        with pytest.raises(ValueError):
            closed_form_moments_T(1.0, -1.0, 1.0, 0.0)


class TestSignFlip:
    # negation is expressible inside the catalog for the parameterized kinds
    @pytest.mark.parametrize(
        "spec,neg",
        [
            (
                ActivationSpec("sigma_T", (1.4, -0.6, 0.8)),
                ActivationSpec("sigma_T", (-1.4, -0.6, 0.8)),
            ),
            (
                ActivationSpec("poly", (0.2, 1.0)),
                ActivationSpec("poly", (-0.2, -1.0)),
            ),
            (
                ActivationSpec("sigma_Q", (1.1, -0.4, -1.0, -0.2, 0.5, 1.3)),
                ActivationSpec("sigma_Q", (-1.1, 0.4, -1.0, -0.2, 0.5, 1.3)),
            ),
        ],
    )
    def test_negation_leaves_alpha_drivers(self, spec, neg):
        tau = 1.2
        t = np.linspace(-3, 3, 13)
        np.testing.assert_allclose(neg(t), -spec(t), atol=1e-14)
        m = activation_moments(spec, tau)
        mn = activation_moments(neg, tau)
        assert mn.d1**2 == pytest.approx(m.d1**2, abs=1e-12)
        assert mn.d2**2 == pytest.approx(m.d2**2, abs=1e-12)
        assert mn.sq == pytest.approx(m.sq, abs=1e-12)
        assert mn.dsq == m.dsq or mn.dsq == pytest.approx(m.dsq, abs=1e-12)
        assert mn.g2 == pytest.approx(m.g2, abs=1e-12)
        assert mn.g4 == pytest.approx(m.g4, abs=1e-12)


class TestSpecValidationAndSerialization:
    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            ActivationSpec("exp")

    def test_param_invariants(self):
        with pytest.raises(ValueError):
            ActivationSpec("sigma_T", (1.0, 2.0, 1.0))
        with pytest.raises(ValueError):
            ActivationSpec("sigma_Q", (1.0, 1.0, 0.0, -0.1, 0.5, 1.0))
        with pytest.raises(ValueError):
            ActivationSpec("leaky_relu", (1.5,))

    def test_json_round_trip(self):
        spec = ActivationSpec("sigma_Q", (1.5, -0.5, -1.0, -0.2, 0.3, 1.2), 0.25)
        loaded = ActivationSpec.from_json(spec.to_json())
        assert loaded == spec
        payload = json.loads(spec.to_json())
        assert payload["kind"] == "sigma_Q"
        assert payload["center_shift"] == 0.25

    def test_jump_kinds_refuse_pointwise_derivative(self):
        with pytest.raises(ValueError):
            ActivationSpec("sign").derivative(0.5)
