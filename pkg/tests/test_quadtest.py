import math

import numpy as np
import pytest

from arbcheck import exprlang as el
from arbcheck import quadtest as qt
from arbcheck.model import QMatrix, RegimeSet, StateInterval, SwitchingModel

HALF = StateInterval(0.0, math.inf, 1.0)
REALS = StateInterval(-math.inf, math.inf, 0.0)


def riemann_v(f, g, x0, x, n=4000):
    """Brute-force nested midpoint Riemann sum for the scale integral.

    Independent of the library's ODE formulation: builds the inner
    antiderivative F(y) = int 2 f and the inner integral explicitly.
    """
    ys = np.linspace(x0, x, n + 1)
    mid = 0.5 * (ys[1:] + ys[:-1])
    h = ys[1] - ys[0]
    fv = np.array([f(t) for t in mid])
    gv = np.array([g(t) for t in mid])
    big_f = np.concatenate([[0.0], np.cumsum(2.0 * fv * h)])  # F at the ys
    big_f_mid = 0.5 * (big_f[1:] + big_f[:-1])
    inner_increments = 2.0 * np.exp(big_f_mid) / gv * h
    inner = np.concatenate([[0.0], np.cumsum(inner_increments)])  # H at the ys
    inner_mid = 0.5 * (inner[1:] + inner[:-1])
    return float(np.sum(np.exp(-big_f_mid) * inner_mid * h))


class TestVValue:
    def test_flat_integrands_quadratic(self):
        # f = 0, g = 1 from x0 = 0: v(x) = x^2 exactly
        si = qt.ScaleIntegrand(el.parse("0"), el.parse("1"), REALS)
        for x in [0.5, 1.0, 2.0, -1.5]:
            assert qt.v_value(si, x) == pytest.approx(x * x, rel=1e-8)

    def test_constant_drift_ratio_closed_form(self):
        # f = 1, g = 1: v(x) = x - (1 - e^{-2x})/2 (hand antiderivative)
        si = qt.ScaleIntegrand(el.parse("1"), el.parse("1"), REALS)
        for x in [0.5, 1.0, 2.0]:
            want = x - (1.0 - math.exp(-2.0 * x)) / 2.0
            assert qt.v_value(si, x) == pytest.approx(want, rel=1e-8)
            brute = riemann_v(lambda t: 1.0, lambda t: 1.0, 0.0, x)
            assert qt.v_value(si, x) == pytest.approx(brute, abs=5e-6)

    def test_cev_matches_brute_force(self):
        # f = 0, g = z^2 (unit-elasticity scale), x0 = 1, x = 2
        si = qt.ScaleIntegrand(el.parse("0"), el.parse("x^2"), HALF)
        got = qt.v_value(si, 2.0)
        brute = riemann_v(lambda t: 0.0, lambda t: t * t, 1.0, 2.0, n=8000)
        assert got == pytest.approx(brute, abs=1e-6)

    def test_below_reference_point(self):
        si = qt.ScaleIntegrand(el.parse("0"), el.parse("x^2"), HALF)
        got = qt.v_value(si, 0.5)
        brute = riemann_v(lambda t: 0.0, lambda t: t * t, 1.0, 0.5, n=8000)
        assert got > 0
        assert got == pytest.approx(brute, abs=1e-6)

    def test_monotone_in_x_above_reference(self):
        si = qt.ScaleIntegrand(el.parse("0.3"), el.parse("1 + x^2"), HALF)
        xs = np.linspace(1.0, 8.0, 15)
        vals = [qt.v_value(si, float(x)) for x in xs]
        assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))

    def test_outside_interval_rejected(self):
        si = qt.ScaleIntegrand(el.parse("0"), el.parse("1"), HALF)
        with pytest.raises(ValueError):
            qt.v_value(si, -1.0)

    def test_domain_error_surfaces_as_failure(self):
        si = qt.ScaleIntegrand(el.parse("log(x - 10)"), el.parse("1"), HALF)
        with pytest.raises(qt.QuadratureFailure):
            qt.v_value(si, 2.0)


class TestClassifyBoundary:
    def test_quadratic_divergent_on_reals(self):
        si = qt.ScaleIntegrand(el.parse("0"), el.parse("1"), REALS)
        assert qt.classify_boundary(si, qt.Boundary.UPPER).status is qt.Status.DIVERGENT
        assert qt.classify_boundary(si, qt.Boundary.LOWER).status is qt.Status.DIVERGENT

    def test_convergent_upper_with_quadratic_envelope(self):
        # f = 1 constant, a(z) = z^2: limit is int dz/a < inf
        si = qt.ScaleIntegrand(el.parse("1"), el.parse("x^2"), HALF)
        v = qt.classify_boundary(si, qt.Boundary.UPPER)
        assert v.status is qt.Status.CONVERGENT
        assert v.estimate == pytest.approx(1.0, rel=1e-4)  # int_1^inf z^-2 dz

    @pytest.mark.parametrize("beta,want", [(1.5, qt.Status.CONVERGENT), (1.0, qt.Status.DIVERGENT)])
    def test_power_scale_with_unit_ratio(self, beta, want):
        si = qt.ScaleIntegrand(el.parse("1"), el.parse(f"x^{2 * beta}"), HALF)
        assert qt.classify_boundary(si, qt.Boundary.UPPER).status is want

    def test_oscillation_never_errors(self):
        # sign-flipping drift ratio: must return a verdict object, not raise
        si = qt.ScaleIntegrand(el.parse("0 - x"), el.parse("1"), REALS)
        v = qt.classify_boundary(si, qt.Boundary.UPPER)
        assert isinstance(v.status, qt.Status)

    def test_x0_invariance_statuses(self):
        for x0 in (0.5, 1.0, 2.0, 5.0):
            half = StateInterval(0.0, math.inf, x0)
            si_conv = qt.ScaleIntegrand(el.parse("1"), el.parse("x^2"), half)
            si_div = qt.ScaleIntegrand(el.parse("0"), el.parse("x^2"), half)
            assert qt.classify_boundary(si_conv, qt.Boundary.UPPER).status is qt.Status.CONVERGENT
            assert qt.classify_boundary(si_div, qt.Boundary.UPPER).status is qt.Status.DIVERGENT

    def test_diagnostics_csv(self):
        si = qt.ScaleIntegrand(el.parse("0"), el.parse("x^2"), HALF)
        v = qt.classify_boundary(si, qt.Boundary.UPPER)
        csv = v.to_csv()
        assert csv.splitlines()[0] == "cutoff,log_distance,partial"
        assert len(csv.splitlines()) == len(v.cutoffs) + 1
        assert v.exponent_fit is not None


class TestPowerLawOracle:
    """Classification of int_1^inf z^-p and int_0^1 z^(p-2): convergent
    exactly when p > 1; no undetermined verdicts outside |p-1| < 0.02."""

    PS = [0.5, 0.9, 0.98, 1.0, 1.02, 1.1, 2.0, 3.0]

    @pytest.mark.parametrize("p", PS)
    def test_upper(self, p):
        verdict = qt.reduced_const_u_test(el.parse(f"x^{p}"), HALF, qt.Boundary.UPPER)
        want = qt.Status.CONVERGENT if p > 1 else qt.Status.DIVERGENT
        assert verdict.status is want

    @pytest.mark.parametrize("p", PS)
    def test_lower(self, p):
        verdict = qt.reduced_const_u_test(el.parse(f"x^{2 - p}"), HALF, qt.Boundary.LOWER)
        want = qt.Status.CONVERGENT if p > 1 else qt.Status.DIVERGENT
        assert verdict.status is want

    def test_convergent_values_match_closed_form(self):
        # int_1^inf z^-2 = 1 and int_0^1 z^0 dz = 1
        up = qt.reduced_const_u_test(el.parse("x^2"), HALF, qt.Boundary.UPPER)
        assert up.estimate == pytest.approx(1.0, rel=1e-6)
        lo = qt.reduced_const_u_test(el.parse("x^2"), HALF, qt.Boundary.LOWER)
        assert lo.estimate == pytest.approx(1.0, rel=1e-6)


class TestReducedTest:
    def test_quadratic_envelope_convergent(self):
        v = qt.reduced_const_u_test(el.parse("x^2"), HALF, qt.Boundary.UPPER)
        assert v.status is qt.Status.CONVERGENT

    def test_harmonic_divergent(self):
        v = qt.reduced_const_u_test(el.parse("x"), HALF, qt.Boundary.UPPER)
        assert v.status is qt.Status.DIVERGENT

    def test_log_squared_convergent(self):
        # antiderivative of 1/(z log^2 z) is -1/log z: the limit exists
        v = qt.reduced_const_u_test(el.parse("x * log(1+x)^2"), HALF, qt.Boundary.UPPER)
        assert v.status is qt.Status.CONVERGENT

    ENVELOPES = [
        "x^2",
        "x",
        "1 + x^2",
        "x * log(1+x)^2",
        "2",
        "x^1.5",
        "x^0.5",
        "max(x, x^2)",
        "exp(x)",
        "x^3 / (1+x)",
    ]

    @pytest.mark.parametrize("a_src", ENVELOPES)
    def test_agrees_with_full_nested_test(self, a_src):
        a = el.parse(a_src)
        reduced = qt.reduced_const_u_test(a, HALF, qt.Boundary.UPPER)
        full = qt.classify_boundary(
            qt.ScaleIntegrand(el.parse("1"), a, HALF), qt.Boundary.UPPER
        )
        assert reduced.status is full.status


def cev(beta_list, b=None, c=None):
    n = len(beta_list)
    q = QMatrix([[0.0]]) if n == 1 else QMatrix([[-1.0, 1.0], [1.0, -1.0]])
    return SwitchingModel(
        regimes=RegimeSet(n),
        q=q,
        b=tuple(el.parse(b[j]) if b else el.Num(0.0) for j in range(n)),
        sigma=tuple(el.parse(f"x^{beta}") for beta in beta_list),
        c=tuple(el.parse(cc) for cc in c) if c else None,
    )


class TestFellerPriceTest:
    def test_unit_elasticity_both_divergent(self):
        m = cev([1.0])
        assert qt.feller_price_test(m, 1, qt.PriceBoundary.ZERO).status is qt.Status.DIVERGENT
        assert qt.feller_price_test(m, 1, qt.PriceBoundary.INFINITY).status is qt.Status.DIVERGENT

    def test_superlinear_convergent_at_infinity(self):
        # int_1^inf z^-2 dz = 1 < inf
        m = cev([1.5])
        v = qt.feller_price_test(m, 1, qt.PriceBoundary.INFINITY)
        assert v.status is qt.Status.CONVERGENT
        assert v.estimate == pytest.approx(1.0, rel=1e-6)

    def test_sublinear_convergent_at_zero(self):
        # int_0^1 z^0 dz = 1 < inf
        m = cev([0.5])
        v = qt.feller_price_test(m, 1, qt.PriceBoundary.ZERO)
        assert v.status is qt.Status.CONVERGENT
        assert v.estimate == pytest.approx(1.0, rel=1e-6)

    def test_requires_positive_halfline(self):
        m = SwitchingModel(
            regimes=RegimeSet(1),
            q=QMatrix([[0.0]]),
            b=(el.Num(0.0),),
            sigma=(el.parse("1 + x^2"),),
            interval=REALS,
            p0=1.0,
        )
        with pytest.raises(ValueError):
            qt.feller_price_test(m, 1, qt.PriceBoundary.ZERO)

    def test_regime_bounds_checked(self):
        with pytest.raises(ValueError):
            qt.feller_price_test(cev([1.0]), 2, qt.PriceBoundary.ZERO)


class TestGeneralVSwitching:
    def test_driftless_unit_elasticity_both_divergent(self):
        m = cev([1.0], c=["0"])
        r = qt.general_v_switching(m, 1)
        assert r.at_lower.status is qt.Status.DIVERGENT
        assert r.at_upper.status is qt.Status.DIVERGENT

    def test_kernel_equal_to_sigma_matches_feller_at_zero(self):
        # c = sigma gives drift ratio 1; at the zero boundary the nested test
        # reduces to the z/sigma^2 criterion for power-law scales
        for beta in (0.5, 0.9, 1.0, 1.1, 1.5):
            m = cev([beta], c=[f"x^{beta}"])
            nested = qt.general_v_switching(m, 1).at_lower.status
            feller = qt.feller_price_test(m, 1, qt.PriceBoundary.ZERO).status
            assert nested is feller, f"beta={beta}: {nested} vs {feller}"

    def test_quartic_scale_divergent_at_zero(self):
        m = cev([2.0], c=["0"])
        assert qt.general_v_switching(m, 1).at_lower.status is qt.Status.DIVERGENT

    def test_brute_force_cross_check_at_moderate_cutoffs(self):
        # nested v agrees with the Riemann oracle along the lower ladder
        m = cev([1.0], c=["0"])
        si = qt.ScaleIntegrand(el.parse("0"), el.parse("x^2"), HALF)
        for x in (0.5, 0.25, 0.125):
            got = qt.v_value(si, x)
            brute = riemann_v(lambda t: 0.0, lambda t: t * t, 1.0, x, n=20000)
            assert got == pytest.approx(brute, rel=2e-3)

    def test_default_kernel_cancels_drift_ratio(self):
        # with c = -b/sigma the drift ratio vanishes identically, so a drifted
        # model classifies exactly like the driftless one
        m_drift = cev([1.0], b=["0.5*x"])
        m_plain = cev([1.0])
        r1 = qt.general_v_switching(m_drift, 1)
        r2 = qt.general_v_switching(m_plain, 1)
        assert r1.at_lower.status is r2.at_lower.status
        assert r1.at_upper.status is r2.at_upper.status
