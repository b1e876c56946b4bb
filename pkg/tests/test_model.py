import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arbcheck import exprlang as el
from arbcheck.model import (
    CheckResult,
    ItoEnvelopeModel,
    QMatrix,
    RegimeSet,
    RegularityAttestation,
    StateInterval,
    SwitchingModel,
    TriState,
    localization_ladder,
    market_price_of_risk,
    price_defect_kernel,
    validate,
)

HALF = StateInterval(0.0, math.inf)
REALS = StateInterval(-math.inf, math.inf)


class TestStateInterval:
    def test_defaults(self):
        assert HALF.x0 == 1.0
        assert REALS.x0 == 0.0

    def test_ordering_enforced(self):
        with pytest.raises(ValueError):
            StateInterval(2.0, 1.0)
        with pytest.raises(ValueError):
            StateInterval(0.0, math.inf, x0=-1.0)

    def test_flags(self):
        assert HALF.is_positive_halfline and not HALF.is_real_line
        assert REALS.is_real_line and not REALS.is_positive_halfline


class TestLocalizationLadder:
    def test_halfline_doubling_rule(self):
        pairs = localization_ladder(StateInterval(0.0, math.inf, 1.0), 3)
        assert pairs == [(0.5, 2.0), (0.25, 4.0), (0.125, 8.0)]

    def test_real_line_additive_rule(self):
        pairs = localization_ladder(StateInterval(-math.inf, math.inf, 0.0), 2)
        assert pairs == [(-1.0, 1.0), (-2.0, 2.0)]

    @pytest.mark.parametrize(
        "interval,depth",
        [
            (StateInterval(0.0, math.inf, 1.0), 60),
            (StateInterval(0.0, math.inf, 3.0), 60),
            (StateInterval(-math.inf, math.inf, 0.5), 60),
            (StateInterval(1.0, 2.0), 45),
            (StateInterval(0.0, 5.0, 2.0), 45),
            (StateInterval(-math.inf, 0.0, -1.0), 45),
        ],
    )
    def test_strict_nesting(self, interval, depth):
        pairs = localization_ladder(interval, depth)
        lo, hi = interval.lower, interval.upper
        prev_l, prev_r = interval.x0, interval.x0
        for l_k, r_k in pairs:
            assert lo < l_k < prev_l
            assert prev_r < r_k < hi
            prev_l, prev_r = l_k, r_k

    def test_depth_beyond_float_resolution_raises(self):
        with pytest.raises(ValueError):
            localization_ladder(StateInterval(1.0, 2.0), 60)


class TestQMatrix:
    def test_valid_two_state(self):
        q = QMatrix([[-1.0, 1.0], [2.0, -2.0]])
        assert q.n == 2
        assert q.is_irreducible()
        assert np.allclose(q.entries.sum(axis=1), 0.0, atol=1e-12)

    def test_rejects_negative_rates(self):
        with pytest.raises(ValueError):
            QMatrix([[-1.0, -1.0], [1.0, -1.0]])

    def test_rejects_bad_row_sum(self):
        with pytest.raises(ValueError):
            QMatrix([[-1.0, 0.5], [1.0, -1.0]])

    def test_one_way_chain_not_irreducible(self):
        q = QMatrix([[-1.0, 1.0], [0.0, 0.0]])
        assert not q.is_irreducible()

    def test_single_state(self):
        assert QMatrix([[0.0]]).is_irreducible()

    @given(
        st.integers(min_value=2, max_value=5),
        st.floats(min_value=0.1, max_value=5.0),
        st.integers(min_value=0, max_value=2**31 - 1),
    )
    @settings(max_examples=100, deadline=None)
    def test_random_dense_generators_valid(self, n, scale, seed):
        r = np.random.default_rng(seed)
        off = r.uniform(0.1, scale, size=(n, n))
        np.fill_diagonal(off, 0.0)
        q_arr = off.copy()
        np.fill_diagonal(q_arr, -off.sum(axis=1))
        q = QMatrix(q_arr)
        assert q.is_irreducible()
        assert np.all(np.abs(q.entries.sum(axis=1)) <= 1e-12 * max(1.0, np.abs(q_arr).max()))


def cev_model(betas, b=None, q=None, attest_es=True):
    n = len(betas)
    if q is None:
        if n == 1:
            q = QMatrix([[0.0]])
        else:
            lam = 1.0
            q_arr = np.full((n, n), lam / (n - 1))
            np.fill_diagonal(q_arr, -lam)
            q = QMatrix(q_arr)
    flags = {f"es.{j + 1}": "true" for j in range(n)} if attest_es else {}
    return SwitchingModel(
        regimes=RegimeSet(n),
        q=q,
        b=tuple(el.parse(b[j]) if b else el.Num(0.0) for j in range(n)),
        sigma=tuple(el.parse(f"x^{beta}") for beta in betas),
        attestations=RegularityAttestation.from_dict(flags),
    )


class TestValidate:
    def test_cev_all_checks_pass(self):
        report = validate(cev_model([1.0, 1.5]))
        assert report.ok
        assert report.get("q_row_sums").status == "pass"
        assert report.get("q_irreducible").status == "pass"

    def test_sigma_zero_crossing_fails(self):
        m = SwitchingModel(
            regimes=RegimeSet(1),
            q=QMatrix([[0.0]]),
            b=(el.Num(0.0),),
            sigma=(el.parse("x - 1"),),
        )
        report = validate(m)
        assert not report.ok
        assert any("sigma_nonzero" in c.name for c in report.failures())

    def test_one_way_chain_flagged(self):
        m = SwitchingModel(
            regimes=RegimeSet(2),
            q=QMatrix([[-1.0, 1.0], [0.0, 0.0]]),
            b=(el.Num(0.0), el.Num(0.0)),
            sigma=(el.parse("x"), el.parse("x")),
        )
        report = validate(m)
        assert report.get("q_irreducible").status == "fail"

    def test_envelope_model(self):
        m = ItoEnvelopeModel(upper_a=el.parse("1 + x^2"), lower_a=el.parse("1"))
        report = validate(m)
        assert report.ok

    def test_envelope_order_violation(self):
        m = ItoEnvelopeModel(upper_a=el.parse("1"), lower_a=el.parse("1 + x^2"))
        report = validate(m)
        assert not report.ok


class TestMarketPriceOfRisk:
    def test_zero_drift(self):
        thetas = market_price_of_risk(cev_model([1.0]))
        assert thetas[0] == el.Num(0.0)

    def test_quotient_identity(self):
        m = SwitchingModel(
            regimes=RegimeSet(1), q=QMatrix([[0.0]]), b=(el.parse("x"),), sigma=(el.parse("x"),)
        )
        theta = market_price_of_risk(m)[0]
        for x in np.geomspace(0.01, 100, 41):
            assert el.evaluate(theta, x) == pytest.approx(1.0, rel=1e-14)

    @pytest.mark.parametrize("mu,beta", [(0.5, 0.5), (1.0, 1.0), (-0.3, 1.5), (2.0, 2.0)])
    def test_cev_theta_grid(self, mu, beta):
        # theta = mu x / x^beta must equal mu x^(1-beta) pointwise to ~1 ulp
        m = SwitchingModel(
            regimes=RegimeSet(1),
            q=QMatrix([[0.0]]),
            b=(el.parse(f"{mu} * x"),),
            sigma=(el.parse(f"x^{beta}"),),
        )
        theta = market_price_of_risk(m)[0]
        for x in np.geomspace(0.01, 100.0, 61):
            want = mu * x ** (1.0 - beta)
            assert el.evaluate(theta, x) == pytest.approx(want, rel=1e-14)

    def test_default_kernel_is_negated_theta(self):
        m = SwitchingModel(
            regimes=RegimeSet(1), q=QMatrix([[0.0]]), b=(el.parse("0.2*x"),), sigma=(el.parse("x"),)
        )
        assert m.c_is_default
        for x in np.geomspace(0.1, 10.0, 21):
            assert el.evaluate(m.c[0], x) == pytest.approx(-0.2, rel=1e-14)


class TestPriceDefectKernel:
    def test_zero_drift_kernel_is_sigma_over_x(self):
        m = cev_model([2.0])
        (c,) = price_defect_kernel(m)
        for x in np.geomspace(0.1, 10.0, 21):
            assert el.evaluate(c, x) == pytest.approx(x, rel=1e-14)

    def test_with_drift(self):
        m = SwitchingModel(
            regimes=RegimeSet(1), q=QMatrix([[0.0]]), b=(el.parse("0.1*x"),), sigma=(el.parse("x"),)
        )
        (c,) = price_defect_kernel(m)
        for x in np.geomspace(0.1, 10.0, 21):
            assert el.evaluate(c, x) == pytest.approx(1.0 - 0.1, rel=1e-13)


class TestAttestations:
    def test_tristate_parse(self):
        assert TriState.parse("true") is TriState.TRUE
        assert TriState.parse("FALSE") is TriState.FALSE
        assert TriState.parse("unknown") is TriState.UNKNOWN
        with pytest.raises(ValueError):
            TriState.parse("maybe")

    def test_unknown_is_default(self):
        att = RegularityAttestation.from_dict({"es.1": "true"})
        assert att.es(1) is TriState.TRUE
        assert att.es(2) is TriState.UNKNOWN
        assert att.get("chain_recurrent") is TriState.UNKNOWN

    def test_with_flag_round_trip(self):
        att = RegularityAttestation().with_flag("yw.one.lower_a", True)
        assert att.yw("one", "lower_a") is TriState.TRUE
        assert RegularityAttestation.from_dict(att.as_dict()) == att


class TestModelInvariants:
    def test_qmatrix_size_mismatch(self):
        with pytest.raises(ValueError):
            SwitchingModel(
                regimes=RegimeSet(2),
                q=QMatrix([[0.0]]),
                b=(el.Num(0.0), el.Num(0.0)),
                sigma=(el.parse("x"), el.parse("x")),
            )

    def test_horizon_must_be_finite(self):
        with pytest.raises(ValueError):
            SwitchingModel(
                regimes=RegimeSet(1),
                q=QMatrix([[0.0]]),
                b=(el.Num(0.0),),
                sigma=(el.parse("x"),),
                horizon=math.inf,
            )

    def test_p0_positive(self):
        with pytest.raises(ValueError):
            SwitchingModel(
                regimes=RegimeSet(1),
                q=QMatrix([[0.0]]),
                b=(el.Num(0.0),),
                sigma=(el.parse("x"),),
                p0=-1.0,
            )

    def test_immutability(self):
        m = cev_model([1.0])
        with pytest.raises(Exception):
            m.p0 = 2.0
        with pytest.raises(Exception):
            m.q.entries[0, 0] = 5.0
