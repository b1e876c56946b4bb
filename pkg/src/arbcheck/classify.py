"""Arbitrage classification: combine boundary verdicts and attestations.

Every verdict is three-valued (Holds / Fails / Inconclusive) and carries a
certificate naming the decision rule, the numerically established facts and
the attested hypotheses it consumed.  A verdict is decided only when every
hypothesis of its rule is either attested true or established numerically;
an unknown attestation yields Inconclusive, never a guess.

Rules used for regime-switching price models on (0, inf), writing
``I0(j) = int_0^1 z/sigma^2(z, j) dz`` and ``Ioo(j) = int_1^inf z/sigma^2(z, j) dz``:

* minimal local martingale measure exists   iff I0(j) diverges for all j;
* the candidate density is a strict martingale density iff Ioo(j) diverges
  for all j;
* minimal martingale measure exists         iff both hold;
* some regime with convergent I0 kills every structure-preserving ELMM, and
  a convergent Ioo kills every structure-preserving EMM.

The negative directions need per-regime volatility regularity (attested) and
chain recurrence, which is automatic for finite irreducible chains.  For
stochastic-exponential envelope models the positive route needs the
localizing-sequence and envelope-bound attestations; ``int dz/upper_a = inf``
upgrades the ELMM to an EMM, while ``int dz/lower_a < inf`` plus a
pathwise-uniqueness attestation for (1, lower_a) rules out every strict
martingale density.

A financial bubble is reported when an ELMM exists but the price under it is
a strict local martingale (no EMM / no strict martingale density).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from . import exprlang, quadtest
from .exprlang import Expr
from .model import (
    FLAG_C_LOCALLY_BOUNDED,
    FLAG_ENVELOPE_BOUNDS,
    FLAG_LOCALIZING_SEQUENCE,
    ItoEnvelopeModel,
    RegularityAttestation,
    StateInterval,
    SwitchingModel,
    TriState,
    ValidationError,
    validate,
)
from .quadtest import (
    Boundary,
    BoundaryVerdict,
    LadderConfig,
    DEFAULT_LADDER,
    PriceBoundary,
    ScaleIntegrand,
    Status,
    VTestResult,
    classify_boundary,
    feller_price_test,
    reduced_const_u_test,
)

__all__ = [
    "VerdictStatus",
    "Certificate",
    "Verdict",
    "ArbitrageReport",
    "InternalContradictionError",
    "classify_switching_market",
    "classify_ito_market",
    "classify_exponential",
    "cev_closed_form",
]


class InternalContradictionError(RuntimeError):
    """Both a positive and a negative route closed numerically; the quadrature
    must have misclassified a boundary."""


class VerdictStatus:
    HOLDS = "holds"
    FAILS = "fails"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class Certificate:
    rule: str
    statement: str


@dataclass(frozen=True)
class Verdict:
    status: str
    certificate: Optional[Certificate] = None
    inputs: tuple = ()  # names of boundary facts / attestations consumed
    reason: str = ""

    @property
    def holds(self) -> bool:
        return self.status == VerdictStatus.HOLDS

    @property
    def fails(self) -> bool:
        return self.status == VerdictStatus.FAILS

    @property
    def decided(self) -> bool:
        return self.status != VerdictStatus.INCONCLUSIVE

    def as_dict(self) -> dict:
        return {
            "status": self.status,
            "certificate": None
            if self.certificate is None
            else {"rule": self.certificate.rule, "statement": self.certificate.statement},
            "inputs": list(self.inputs),
            "reason": self.reason,
        }


def _holds(rule, statement, inputs=()) -> Verdict:
    return Verdict(VerdictStatus.HOLDS, Certificate(rule, statement), tuple(inputs))


def _fails(rule, statement, inputs=()) -> Verdict:
    return Verdict(VerdictStatus.FAILS, Certificate(rule, statement), tuple(inputs))


def _inconclusive(reason, inputs=()) -> Verdict:
    return Verdict(VerdictStatus.INCONCLUSIVE, None, tuple(inputs), reason)


@dataclass(frozen=True)
class ArbitrageReport:
    smd: Verdict
    elmm_mlmm: Verdict
    emm_mmm: Verdict
    bubble: Verdict
    structure_preserving_L: Verdict
    structure_preserving_M: Verdict
    z_is_martingale: Verdict
    diagnostics: dict = field(default_factory=dict, compare=False)

    FIELDS = (
        "smd",
        "elmm_mlmm",
        "emm_mmm",
        "bubble",
        "structure_preserving_L",
        "structure_preserving_M",
        "z_is_martingale",
    )

    def __post_init__(self):
        self._check_consistency()

    def _check_consistency(self):
        if self.emm_mmm.holds and not self.elmm_mlmm.holds:
            raise InternalContradictionError("EMM holds but ELMM does not")
        if self.emm_mmm.holds and not self.bubble.fails:
            raise InternalContradictionError("EMM holds but bubble not ruled out")
        if self.elmm_mlmm.holds and self.smd.fails and not self.bubble.holds:
            raise InternalContradictionError("ELMM without SMD must be a bubble")

    def verdicts(self) -> dict:
        return {name: getattr(self, name) for name in self.FIELDS}

    @property
    def all_decided(self) -> bool:
        return all(v.decided for v in self.verdicts().values())

    def as_dict(self) -> dict:
        return {
            "verdicts": {name: v.as_dict() for name, v in self.verdicts().items()},
            "diagnostics": self.diagnostics,
        }

    def to_json(self, indent=2) -> str:
        return json.dumps(self.as_dict(), indent=indent, sort_keys=True)

    def to_table(self) -> str:
        names = {
            "smd": "strict martingale density exists",
            "elmm_mlmm": "equivalent local mart. measure (minimal)",
            "emm_mmm": "equivalent mart. measure (minimal)",
            "bubble": "financial bubble",
            "structure_preserving_L": "structure-preserving ELMM set nonempty",
            "structure_preserving_M": "structure-preserving EMM set nonempty",
            "z_is_martingale": "candidate density is a true martingale",
        }
        lines = []
        for key, v in self.verdicts().items():
            rule = v.certificate.rule if v.certificate else "-"
            extra = v.reason if v.reason else ""
            lines.append(f"{names[key]:<42} {v.status:<13} [{rule}] {extra}".rstrip())
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _require_validated(m):
    report = validate(m)
    if not report.ok:
        raise ValidationError(report)
    return report


def _status_name(bv: BoundaryVerdict) -> str:
    return bv.status.value


def _bubble_verdict(elmm: Verdict, smd: Verdict, emm: Verdict) -> Verdict:
    """Bubble = ELMM exists and (no strict martingale density or no EMM)."""
    if elmm.holds and (smd.fails or emm.fails):
        which = "no strict martingale density" if smd.fails else "no equivalent martingale measure"
        return _holds(
            "bubble-definition",
            f"local martingale measure exists while {which}: the price is a "
            "strict local martingale under every pricing measure",
            inputs=("elmm_mlmm", "smd" if smd.fails else "emm_mmm"),
        )
    if emm.holds:
        return _fails(
            "bubble-definition",
            "an equivalent martingale measure exists, so the price is a true "
            "martingale under it and no bubble forms",
            inputs=("emm_mmm",),
        )
    if elmm.fails:
        return _fails(
            "bubble-definition",
            "no equivalent local martingale measure exists; the bubble notion "
            "presupposes one",
            inputs=("elmm_mlmm",),
        )
    return _inconclusive("bubble needs a decided ELMM verdict together with the SMD/EMM side")


# ---------------------------------------------------------------------------
# switching-diffusion market
# ---------------------------------------------------------------------------


def classify_switching_market(
    m: SwitchingModel, config: LadderConfig = DEFAULT_LADDER
) -> ArbitrageReport:
    """Classify a positive regime-switching market via per-regime boundary tests.

    Runs the z/sigma^2 boundary test for every regime at both endpoints of
    (0, inf) and combines the outcomes as described in the module docstring.
    The candidate density is always the minimal-measure kernel built from the
    market price of risk, regardless of any custom ``c`` on the model.
    """
    _require_validated(m)
    n = m.n_regimes
    at_zero = [feller_price_test(m, j, PriceBoundary.ZERO, config) for j in range(1, n + 1)]
    at_inf = [feller_price_test(m, j, PriceBoundary.INFINITY, config) for j in range(1, n + 1)]
    es = [m.attestations.es(j) for j in range(1, n + 1)]
    es_all = all(f is TriState.TRUE for f in es)
    # finite irreducible chains are recurrent; the flag can also be set explicitly
    recurrent = m.q.is_irreducible() or m.attestations.get("chain_recurrent") is TriState.TRUE

    diag = {
        "per_regime": {
            str(j + 1): {"at_zero": at_zero[j].summary(), "at_infinity": at_inf[j].summary()}
            for j in range(n)
        },
        "es_attested": [f.value for f in es],
        "chain_recurrent": recurrent,
    }

    def regime_inputs(side, j):
        return f"boundary[{side}, regime {j + 1}]={_status_name((at_zero if side == '0' else at_inf)[j])}"

    zero_div = all(v.status is Status.DIVERGENT for v in at_zero)
    inf_div = all(v.status is Status.DIVERGENT for v in at_inf)
    zero_conv = [j for j, v in enumerate(at_zero) if v.status is Status.CONVERGENT]
    inf_conv = [j for j, v in enumerate(at_inf) if v.status is Status.CONVERGENT]
    zero_und = [j for j, v in enumerate(at_zero) if v.status is Status.UNDETERMINED]
    inf_und = [j for j, v in enumerate(at_inf) if v.status is Status.UNDETERMINED]

    # internal contradiction guard: all-divergent and some-convergent cannot
    # both be observed on the same side, but guard across routes anyway
    if zero_div and zero_conv:
        raise InternalContradictionError("zero-side both all-divergent and somewhere convergent")
    if inf_div and inf_conv:
        raise InternalContradictionError("infinity-side both all-divergent and somewhere convergent")

    # --- ELMM / MLMM
    if zero_div and es_all:
        elmm = _holds(
            "switching-mlmm-existence",
            "z/sigma^2 integral diverges at zero for every regime; the minimal "
            "local martingale measure exists",
            inputs=[regime_inputs("0", j) for j in range(n)] + ["es attested for all regimes"],
        )
    elif zero_conv and recurrent and all(es[j] is TriState.TRUE for j in zero_conv):
        j = zero_conv[0]
        elmm = _fails(
            "switching-no-mlmm",
            f"regime {j + 1} has a convergent z/sigma^2 integral at zero; the "
            "candidate density is a strict local martingale and the minimal "
            "local martingale measure does not exist",
            inputs=[regime_inputs("0", j), f"es.{j + 1}=true", "chain recurrent"],
        )
    else:
        missing = []
        if zero_und:
            missing.append(f"undetermined zero-side quadrature for regimes {[j + 1 for j in zero_und]}")
        if not es_all:
            missing.append("volatility regularity not attested for every regime")
        if zero_conv and not recurrent:
            missing.append("chain recurrence not established")
        elmm = _inconclusive("; ".join(missing) or "hypotheses not closed")

    # ---SMD (the candidate density as a strict martingale density)
    if inf_div and es_all:
        smd = _holds(
            "switching-smd-existence",
            "z/sigma^2 integral diverges at infinity for every regime; the "
            "candidate density is a strict martingale density",
            inputs=[regime_inputs("inf", j) for j in range(n)] + ["es attested for all regimes"],
        )
    elif inf_conv and recurrent and all(es[j] is TriState.TRUE for j in inf_conv):
        j = inf_conv[0]
        smd = _fails(
            "switching-no-smd",
            f"regime {j + 1} has a convergent z/sigma^2 integral at infinity; the "
            "density-price product is a strict local martingale, so the candidate "
            "is no strict martingale density and the minimal martingale measure "
            "does not exist",
            inputs=[regime_inputs("inf", j), f"es.{j + 1}=true", "chain recurrent"],
        )
    else:
        missing = []
        if inf_und:
            missing.append(f"undetermined infinity-side quadrature for regimes {[j + 1 for j in inf_und]}")
        if not es_all:
            missing.append("volatility regularity not attested for every regime")
        if inf_conv and not recurrent:
            missing.append("chain recurrence not established")
        smd = _inconclusive("; ".join(missing) or "hypotheses not closed")

    # --- EMM / MMM: needs both sides
    if elmm.holds and smd.holds:
        emm = _holds(
            "switching-mmm-existence",
            "both boundary integral families diverge for every regime; the "
            "minimal martingale measure exists",
            inputs=("elmm_mlmm", "smd"),
        )
    elif elmm.fails or smd.fails:
        emm = _fails(
            "switching-no-mmm",
            "a failed component rules the minimal martingale measure out",
            inputs=("elmm_mlmm",) if elmm.fails else ("smd",),
        )
    else:
        emm = _inconclusive("needs decided ELMM and SMD verdicts")

    # --- structure-preserving classes
    if zero_conv and all(es[j] is TriState.TRUE for j in zero_conv):
        j = zero_conv[0]
        sp_l = _fails(
            "no-structure-preserving-elmm",
            f"regime {j + 1} convergent at zero: no equivalent local martingale "
            "measure can keep the regime chain an irreducible recurrent Markov chain",
            inputs=[regime_inputs("0", j), f"es.{j + 1}=true"],
        )
    elif elmm.holds:
        sp_l = _holds(
            "mlmm-preserves-sources",
            "the minimal local martingale measure exists and leaves the chain "
            "law and independence of the risk sources unchanged",
            inputs=("elmm_mlmm",),
        )
    else:
        sp_l = _inconclusive("needs the ELMM verdict or a convergent-at-zero regime with regularity")

    if inf_conv and all(es[j] is TriState.TRUE for j in inf_conv):
        j = inf_conv[0]
        sp_m = _fails(
            "no-structure-preserving-emm",
            f"regime {j + 1} convergent at infinity: no equivalent martingale "
            "measure can keep the regime chain an irreducible recurrent Markov chain",
            inputs=[regime_inputs("inf", j), f"es.{j + 1}=true"],
        )
    elif sp_l.fails:
        sp_m = _fails(
            "no-structure-preserving-emm",
            "the structure-preserving EMM set is contained in the empty "
            "structure-preserving ELMM set",
            inputs=("structure_preserving_L",),
        )
    elif emm.holds:
        sp_m = _holds(
            "mlmm-preserves-sources",
            "the minimal martingale measure exists and leaves the chain law and "
            "independence of the risk sources unchanged",
            inputs=("emm_mmm",),
        )
    else:
        sp_m = _inconclusive("needs the EMM verdict or a convergent-at-infinity regime with regularity")

    # --- candidate density martingale property (minimal kernel)
    if elmm.holds:
        z_mart = _holds(
            "finite-switching-martingale-iff",
            "for a finite irreducible chain with per-regime regularity the "
            "candidate density is a martingale exactly when the scale integral "
            "diverges at both boundaries for every regime; the zero side decides "
            "here because the infinity side is automatic for the minimal kernel",
            inputs=("elmm_mlmm",),
        )
    elif elmm.fails:
        z_mart = _fails(
            "switching-strict-local-test",
            "an accessible regime with convergent boundary integral makes the "
            "candidate density a strict local martingale",
            inputs=("elmm_mlmm",),
        )
    else:
        z_mart = _inconclusive(elmm.reason)

    bubble = _bubble_verdict(elmm, smd, emm)
    return ArbitrageReport(
        smd=smd,
        elmm_mlmm=elmm,
        emm_mmm=emm,
        bubble=bubble,
        structure_preserving_L=sp_l,
        structure_preserving_M=sp_m,
        z_is_martingale=z_mart,
        diagnostics=diag,
    )


# ---------------------------------------------------------------------------
# stochastic-exponential (envelope) market
# ---------------------------------------------------------------------------


def classify_ito_market(
    m: ItoEnvelopeModel, config: LadderConfig = DEFAULT_LADDER
) -> ArbitrageReport:
    """Classify a stochastic-exponential market given its envelope data."""
    _require_validated(m)
    att = m.attestations
    loc = att.get(FLAG_LOCALIZING_SEQUENCE)
    env = att.get(FLAG_ENVELOPE_BOUNDS)

    upper_test = reduced_const_u_test(m.upper_a, m.interval, Boundary.UPPER, config)
    lower_test = None
    if m.lower_a is not None:
        lower_test = reduced_const_u_test(m.lower_a, m.interval, Boundary.UPPER, config)

    diag = {
        "upper_envelope_integral": upper_test.summary(),
        "lower_envelope_integral": None if lower_test is None else lower_test.summary(),
        "localizing_sequence_attested": loc.value,
        "envelope_bounds_attested": env.value,
    }

    if loc is TriState.TRUE and env is TriState.TRUE:
        elmm = _holds(
            "sem-mlmm-existence",
            "the stopped density family is uniformly integrable along the "
            "level-crossing localization and the squared volatility admits an "
            "integrable envelope; the minimal local martingale measure exists",
            inputs=(f"{FLAG_LOCALIZING_SEQUENCE}=true", f"{FLAG_ENVELOPE_BOUNDS}=true"),
        )
        z_mart = _holds(
            "ito-martingale-integral-test",
            "vanishing drift ratio under the minimal kernel plus an integrable "
            "volatility envelope force both boundary scale integrals to diverge",
            inputs=elmm.inputs,
        )
    else:
        missing = [
            name
            for name, flag in ((FLAG_LOCALIZING_SEQUENCE, loc), (FLAG_ENVELOPE_BOUNDS, env))
            if flag is not TriState.TRUE
        ]
        elmm = _inconclusive(
            f"attestations {missing} must be asserted true for the existence route"
        )
        z_mart = _inconclusive(elmm.reason)

    # SMD / EMM positive route through the upper envelope
    smd: Verdict
    emm: Verdict
    yw_one_lower = att.yw("one", "lower_a")
    no_smd_route = (
        m.lower_a is not None
        and yw_one_lower is TriState.TRUE
        and lower_test is not None
        and lower_test.status is Status.CONVERGENT
    )
    smd_route = elmm.holds and upper_test.status is Status.DIVERGENT
    if smd_route and no_smd_route:
        raise InternalContradictionError(
            "upper envelope integral diverges while lower envelope integral"
            " converges: envelopes are ordered, quadrature must be wrong"
        )
    if smd_route:
        smd = _holds(
            "sem-emm-smd-test",
            "int dz/upper_a diverges at infinity: the density-price product is "
            "a martingale, giving a strict martingale density",
            inputs=("elmm_mlmm", f"upper envelope at infinity={upper_test.status.value}"),
        )
        emm = _holds(
            "sem-emm-smd-test",
            "the minimal measure is an equivalent martingale measure",
            inputs=smd.inputs,
        )
    elif no_smd_route:
        smd = _fails(
            "sem-no-smd-test",
            "int dz/lower_a converges at infinity and (1, lower_a) has attested "
            "pathwise-uniqueness moduli: no strict martingale density exists",
            inputs=(
                f"lower envelope at infinity={lower_test.status.value}",
                "yw.one.lower_a=true",
            ),
        )
        emm = _fails(
            "sem-no-smd-test",
            "an equivalent martingale measure would supply a strict martingale "
            "density, which was ruled out",
            inputs=("smd",),
        )
    else:
        reasons = []
        if upper_test.status is Status.UNDETERMINED:
            reasons.append("upper envelope integral undetermined")
        elif upper_test.status is Status.CONVERGENT:
            reasons.append("upper envelope integral converges, existence route closed")
        if not elmm.holds:
            reasons.append("existence route needs the local-measure attestations")
        if m.lower_a is None:
            reasons.append("no lower envelope supplied for the exclusion route")
        elif yw_one_lower is not TriState.TRUE:
            reasons.append("pathwise-uniqueness moduli for (1, lower_a) not attested")
        elif lower_test is not None and lower_test.status is not Status.CONVERGENT:
            reasons.append(f"lower envelope integral {lower_test.status.value}")
        smd = _inconclusive("; ".join(reasons))
        emm = _inconclusive("; ".join(reasons))

    bubble = _bubble_verdict(elmm, smd, emm)
    inc = _inconclusive("structure-preserving classes are defined for switching markets only")
    return ArbitrageReport(
        smd=smd,
        elmm_mlmm=elmm,
        emm_mmm=emm,
        bubble=bubble,
        structure_preserving_L=inc,
        structure_preserving_M=inc,
        z_is_martingale=z_mart,
        diagnostics=diag,
    )


# ---------------------------------------------------------------------------
# generic stochastic exponential
# ---------------------------------------------------------------------------


def classify_exponential(
    m,
    config: LadderConfig = DEFAULT_LADDER,
) -> Verdict:
    """Martingale / strict-local-martingale verdict for a stochastic exponential.

    For a :class:`SwitchingModel` with explicit kernel ``c`` this runs the
    per-regime scale test with drift ratio (b + c sigma)/sigma^2; for a finite
    irreducible chain with per-regime regularity attested the answer is an
    equivalence, so divergence everywhere gives a martingale and any
    accessible convergent boundary gives a strict local martingale.

    For an :class:`ItoEnvelopeModel` the envelope pairs are tested: both
    upper-pair integrals divergent (plus localization and envelope-bound
    attestations) give a martingale; a convergent lower-pair integral with
    attested pathwise-uniqueness moduli gives a strict local martingale.
    """
    if isinstance(m, SwitchingModel):
        return _classify_exponential_switching(m, config)
    if isinstance(m, ItoEnvelopeModel):
        return _classify_exponential_ito(m, config)
    raise TypeError(f"not a market model: {m!r}")


def _classify_exponential_switching(m: SwitchingModel, config) -> Verdict:
    _require_validated(m)
    n = m.n_regimes
    es = [m.attestations.es(j) for j in range(1, n + 1)]
    es_all = all(f is TriState.TRUE for f in es)
    # expression-language kernels are continuous on the open interval, hence
    # locally bounded; an explicit false attestation overrides
    c_bounded = m.attestations.get(FLAG_C_LOCALLY_BOUNDED) is not TriState.FALSE
    recurrent = m.q.is_irreducible()
    results = [quadtest.general_v_switching(m, j, config) for j in range(1, n + 1)]
    statuses = [(r.at_lower.status, r.at_upper.status) for r in results]
    inputs = [
        f"v(regime {j + 1}): lower={lo.value}, upper={up.value}"
        for j, (lo, up) in enumerate(statuses)
    ]
    all_div = all(lo is Status.DIVERGENT and up is Status.DIVERGENT for lo, up in statuses)
    conv_regimes = [
        j for j, (lo, up) in enumerate(statuses) if Status.CONVERGENT in (lo, up)
    ]
    if not (es_all and c_bounded):
        return _inconclusive(
            "needs per-regime volatility regularity and a locally bounded kernel",
            inputs,
        )
    if all_div:
        return _holds(
            "switching-martingale-test",
            "the scale integral diverges at both boundaries for every regime; "
            "the stochastic exponential is a martingale",
            inputs,
        )
    if conv_regimes and (recurrent or conv_regimes[0] + 1 == m.regimes.initial):
        return _fails(
            "switching-strict-local-test",
            f"regime {conv_regimes[0] + 1} has a convergent scale integral at a "
            "boundary and is reachable; the stochastic exponential is a strict "
            "local martingale",
            inputs,
        )
    return _inconclusive("some boundary tests undetermined", inputs)


def _classify_exponential_ito(m: ItoEnvelopeModel, config) -> Verdict:
    _require_validated(m)
    att = m.attestations
    zero = exprlang.Num(0.0)
    upper_u = m.upper_u if m.upper_u is not None else zero
    lower_u = m.lower_u if m.lower_u is not None else zero
    mart_inputs = []
    if att.get(FLAG_LOCALIZING_SEQUENCE) is TriState.TRUE and att.get(FLAG_ENVELOPE_BOUNDS) is TriState.TRUE:
        up = classify_boundary(
            ScaleIntegrand(upper_u, m.upper_a, m.interval), Boundary.UPPER, config
        )
        lo = classify_boundary(
            ScaleIntegrand(lower_u, m.upper_a, m.interval), Boundary.LOWER, config
        )
        mart_inputs = [f"v(upper_u, upper_a) upper={up.status.value}", f"v(lower_u, upper_a) lower={lo.status.value}"]
        if up.status is Status.DIVERGENT and lo.status is Status.DIVERGENT:
            return _holds(
                "ito-martingale-integral-test",
                "both boundary scale integrals over the upper volatility envelope "
                "diverge; the stochastic exponential is a martingale",
                mart_inputs,
            )
    if m.lower_a is not None:
        sl_inputs = []
        if att.yw("lower_u", "lower_a") is TriState.TRUE and att.get(FLAG_ENVELOPE_BOUNDS) is TriState.TRUE:
            up = classify_boundary(
                ScaleIntegrand(lower_u, m.lower_a, m.interval), Boundary.UPPER, config
            )
            sl_inputs.append(f"v(lower_u, lower_a) upper={up.status.value}")
            if up.status is Status.CONVERGENT:
                return _fails(
                    "ito-strict-local-test",
                    "the scale integral over the lower pair converges at the upper "
                    "boundary; the stochastic exponential is a strict local martingale",
                    mart_inputs + sl_inputs,
                )
        if att.yw("upper_u", "lower_a") is TriState.TRUE and att.get(FLAG_ENVELOPE_BOUNDS) is TriState.TRUE:
            lo = classify_boundary(
                ScaleIntegrand(upper_u, m.lower_a, m.interval), Boundary.LOWER, config
            )
            sl_inputs.append(f"v(upper_u, lower_a) lower={lo.status.value}")
            if lo.status is Status.CONVERGENT:
                return _fails(
                    "ito-strict-local-test",
                    "the scale integral over the upper-ratio/lower-scale pair "
                    "converges at the lower boundary; the stochastic exponential "
                    "is a strict local martingale",
                    mart_inputs + sl_inputs,
                )
        mart_inputs += sl_inputs
    return _inconclusive(
        "neither the martingale nor the strict-local route closed (check "
        "attestations and boundary statuses)",
        mart_inputs,
    )


# ---------------------------------------------------------------------------
# closed-form power-law verdicts
# ---------------------------------------------------------------------------


def cev_closed_form(betas: Sequence[float]) -> ArbitrageReport:
    """Analytic verdicts for constant-elasticity volatility x^beta per regime.

    The boundary integrals are power integrals: z/sigma^2 = z^(1-2 beta), so
    divergence at zero means beta >= 1 and divergence at infinity means
    beta <= 1.  Hence: minimal local measure iff min beta >= 1; minimal
    martingale measure iff every beta equals 1; strict martingale density iff
    max beta <= 1.  Must agree with the numeric classification on the same
    model - a cross-validation invariant of the test suite.
    """
    betas = tuple(float(b) for b in betas)
    if not betas or any(b <= 0 or not math.isfinite(b) for b in betas):
        raise ValueError("need a finite positive volatility exponent per regime")
    rule = "cev-closed-form"
    inputs = tuple(f"beta({j + 1})={b:g}" for j, b in enumerate(betas))
    mn, mx = min(betas), max(betas)

    if mn >= 1.0:
        elmm = _holds(rule, "minimal local martingale measure exists (min beta >= 1)", inputs)
    else:
        elmm = _fails(rule, "no minimal local martingale measure (some beta < 1)", inputs)
    if mx <= 1.0:
        smd = _holds(rule, "candidate density is a strict martingale density (max beta <= 1)", inputs)
    else:
        smd = _fails(rule, "candidate density is no strict martingale density (some beta > 1)", inputs)
    if mn >= 1.0 and mx <= 1.0:
        emm = _holds(rule, "minimal martingale measure exists (every beta equals 1)", inputs)
    else:
        emm = _fails(rule, "no minimal martingale measure (some beta differs from 1)", inputs)

    sp_l = (
        _holds(rule, "structure-preserving local measures exist", inputs)
        if elmm.holds
        else _fails(rule, "no structure-preserving local measure", inputs)
    )
    sp_m = (
        _holds(rule, "structure-preserving martingale measures exist", inputs)
        if emm.holds
        else _fails(rule, "no structure-preserving martingale measure", inputs)
    )
    z_mart = (
        _holds(rule, "candidate density is a martingale", inputs)
        if elmm.holds
        else _fails(rule, "candidate density is a strict local martingale", inputs)
    )
    bubble = _bubble_verdict(elmm, smd, emm)
    return ArbitrageReport(
        smd=smd,
        elmm_mlmm=elmm,
        emm_mmm=emm,
        bubble=bubble,
        structure_preserving_L=sp_l,
        structure_preserving_M=sp_m,
        z_is_martingale=z_mart,
        diagnostics={"betas": list(betas)},
    )
