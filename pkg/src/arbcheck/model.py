"""Market model domain types and validation of standing assumptions.

Two model families are supported:

* :class:`SwitchingModel` - a positive diffusion whose drift ``b(x, j)`` and
  volatility ``sigma(x, j)`` switch with a continuous-time Markov chain on a
  finite regime set driven by a Q-matrix.
* :class:`ItoEnvelopeModel` - the stochastic exponential of a general Ito
  process, represented through Markovian envelopes: an upper/lower bound
  ``upper_a``/``lower_a`` on the squared volatility scale, drift-ratio bounds
  ``upper_u``/``lower_u``, and a time factor ``zeta``.

Regularity hypotheses that are analytic properties of function classes
(pathwise-uniqueness moduli, local volatility regularity per regime, the
localizing-sequence property) are not computable from expression trees; they
enter as tri-state attestations plus heuristic grid probes.

All model types are immutable after construction and safe to share across
threads.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from . import exprlang
from .exprlang import DomainError, Expr

__all__ = [
    "TriState",
    "StateInterval",
    "RegimeSet",
    "QMatrix",
    "RegularityAttestation",
    "SwitchingModel",
    "ItoEnvelopeModel",
    "MarketModel",
    "CheckResult",
    "ValidationReport",
    "ValidationError",
    "validate",
    "market_price_of_risk",
    "localization_ladder",
    "price_defect_kernel",
]

QROW_TOL = 1e-12


class TriState(enum.Enum):
    """Explicit attestation state; classification never upgrades UNKNOWN."""

    TRUE = "true"
    FALSE = "false"
    UNKNOWN = "unknown"

    @classmethod
    def parse(cls, text) -> "TriState":
        if isinstance(text, TriState):
            return text
        if isinstance(text, bool):
            return cls.TRUE if text else cls.FALSE
        t = str(text).strip().lower()
        for member in cls:
            if member.value == t:
                return member
        if t in ("yes", "1", "asserted", "asserted-true"):
            return cls.TRUE
        if t in ("no", "0", "asserted-false"):
            return cls.FALSE
        raise ValueError(f"not a tri-state value: {text!r}")


class ValidationError(ValueError):
    def __init__(self, report: "ValidationReport"):
        self.report = report
        lines = "; ".join(f"{c.name}: {c.detail}" for c in report.failures())
        super().__init__(f"model validation failed: {lines}")


@dataclass(frozen=True)
class StateInterval:
    """Open state interval (lower, upper) with an interior reference point.

    ``lower``/``upper`` may be ``-inf``/``inf``.  ``x0`` defaults to 1 for
    intervals bordering zero on the left and to 0 for the whole real line;
    boundary classifications do not depend on the admissible choice.
    """

    lower: float
    upper: float
    x0: Optional[float] = None

    def __post_init__(self):
        lo, hi = float(self.lower), float(self.upper)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if not lo < hi:
            raise ValueError(f"interval requires lower < upper, got ({lo}, {hi})")
        if math.isnan(lo) or math.isnan(hi):
            raise ValueError("interval endpoints must not be NaN")
        if self.x0 is None:
            object.__setattr__(self, "x0", self.default_x0(lo, hi))
        x0 = float(self.x0)
        object.__setattr__(self, "x0", x0)
        if not (lo < x0 < hi) or not math.isfinite(x0):
            raise ValueError(f"reference point {x0} not inside ({lo}, {hi})")

    @staticmethod
    def default_x0(lo: float, hi: float) -> float:
        if math.isinf(lo) and math.isinf(hi):
            return 0.0
        if math.isinf(hi):
            return lo + 1.0 if lo > -1.0 else lo / 2.0
        if math.isinf(lo):
            return hi - 1.0 if hi < 1.0 else hi / 2.0
        return 0.5 * (lo + hi)

    @property
    def is_positive_halfline(self) -> bool:
        return self.lower == 0.0 and math.isinf(self.upper)

    @property
    def is_real_line(self) -> bool:
        return math.isinf(self.lower) and math.isinf(self.upper)


def localization_ladder(interval: StateInterval, depth: int) -> list[tuple[float, float]]:
    """Strictly nested pairs (l_k, r_k) exhausting the interval.

    For (0, inf): l_k = 2^-k * min(x0, 1), r_k = 2^k * max(x0, 1).
    For the real line: (x0 - k, x0 + k).  Other intervals halve the distance
    to finite endpoints and double the distance to infinite ones.
    """
    if depth < 1:
        raise ValueError("ladder depth must be >= 1")
    lo, hi, x0 = interval.lower, interval.upper, interval.x0
    pairs = []
    if interval.is_real_line:
        scale = max(1.0, abs(x0))
        for k in range(1, depth + 1):
            pairs.append((x0 - k * scale, x0 + k * scale))
        return pairs
    if interval.is_positive_halfline:
        lbase = min(x0, 1.0)
        rbase = max(x0, 1.0)
        for k in range(1, depth + 1):
            pairs.append((lbase * 2.0 ** (-k), rbase * 2.0 ** k))
        return pairs
    prev_l, prev_r = x0, x0
    for k in range(1, depth + 1):
        if math.isinf(lo):
            lk = x0 - max(1.0, abs(x0)) * (2.0 ** k - 1.0)
        else:
            lk = lo + (x0 - lo) * 2.0 ** (-k)
        if math.isinf(hi):
            rk = x0 + max(1.0, abs(x0)) * (2.0 ** k - 1.0)
        else:
            rk = hi - (hi - x0) * 2.0 ** (-k)
        # strict nesting can exhaust float resolution near finite endpoints
        if not (lo < lk < prev_l and prev_r < rk < hi):
            raise ValueError(
                f"ladder depth {depth} exceeds float resolution for ({lo}, {hi}) at level {k}"
            )
        pairs.append((lk, rk))
        prev_l, prev_r = lk, rk
    return pairs


@dataclass(frozen=True)
class RegimeSet:
    """Finite regime index set {1, ..., count} with initial regime."""

    count: int
    initial: int = 1
    labels: Optional[tuple] = None

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("regime count must be >= 1 (and finite)")
        if not 1 <= self.initial <= self.count:
            raise ValueError(f"initial regime {self.initial} outside 1..{self.count}")
        if self.labels is not None:
            labels = tuple(str(s) for s in self.labels)
            if len(labels) != self.count:
                raise ValueError("label count must match regime count")
            object.__setattr__(self, "labels", labels)


def _strongly_connected(mask: np.ndarray) -> bool:
    n = mask.shape[0]
    if n == 1:
        return True

    def reach(adj):
        seen = np.zeros(n, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            i = stack.pop()
            for j in np.nonzero(adj[i])[0]:
                if not seen[j]:
                    seen[j] = True
                    stack.append(j)
        return bool(seen.all())

    return reach(mask) and reach(mask.T)


@dataclass(frozen=True)
class QMatrix:
    """Generator of a continuous-time Markov chain on {1, ..., N}.

    Construction enforces nonnegative off-diagonal rates and zero row sums
    (within 1e-12).  Irreducibility (strong connectivity of the positive-rate
    graph) is checked at validation time, not construction time, so that
    one-way chains such as change-point recipes remain representable.
    """

    entries: np.ndarray

    def __post_init__(self):
        q = np.array(self.entries, dtype=np.float64)
        if q.ndim != 2 or q.shape[0] != q.shape[1] or q.shape[0] < 1:
            raise ValueError("Q-matrix must be square and non-empty")
        off = q.copy()
        np.fill_diagonal(off, 0.0)
        if np.any(off < 0):
            raise ValueError("off-diagonal rates must be nonnegative")
        if np.any(np.diagonal(q) > QROW_TOL):
            raise ValueError("diagonal entries must be <= 0")
        rows = q.sum(axis=1)
        if np.any(np.abs(rows) > QROW_TOL * np.maximum(1.0, np.abs(q).max())):
            raise ValueError(f"rows must sum to zero, got residuals {rows}")
        q.setflags(write=False)
        object.__setattr__(self, "entries", q)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def is_irreducible(self) -> bool:
        return _strongly_connected(self.entries > 0)

    def __eq__(self, other):
        return isinstance(other, QMatrix) and np.array_equal(self.entries, other.entries)

    def __hash__(self):
        return hash(self.entries.tobytes())


# canonical attestation flag names
FLAG_C_LOCALLY_BOUNDED = "c_locally_bounded"
FLAG_LOCALIZING_SEQUENCE = "localizing_sequence_m1"
FLAG_ENVELOPE_BOUNDS = "envelope_bounds"
FLAG_CHAIN_RECURRENT = "chain_recurrent"


def _es_flag(j: int) -> str:
    return f"es.{j}"


def _yw_flag(f_name: str, g_name: str) -> str:
    return f"yw.{f_name}.{g_name}"


@dataclass(frozen=True)
class RegularityAttestation:
    """Tri-state flags for the non-computable hypotheses of the tests.

    Known flags: ``es.<j>`` (per-regime local volatility regularity),
    ``yw.<f>.<g>`` (pathwise-uniqueness moduli for an envelope pair, with
    ``f``, ``g`` in {one, lower_u, upper_u} x {lower_a, upper_a}),
    ``c_locally_bounded``, ``localizing_sequence_m1``, ``envelope_bounds``
    and ``chain_recurrent``.
    """

    flags: tuple = ()

    def __post_init__(self):
        normalized = []
        for name, value in dict(self.flags).items():
            normalized.append((str(name), TriState.parse(value)))
        object.__setattr__(self, "flags", tuple(sorted(normalized)))

    def get(self, name: str) -> TriState:
        for flag, value in self.flags:
            if flag == name:
                return value
        return TriState.UNKNOWN

    def es(self, j: int) -> TriState:
        return self.get(_es_flag(j))

    def yw(self, f_name: str, g_name: str) -> TriState:
        return self.get(_yw_flag(f_name, g_name))

    def with_flag(self, name: str, value) -> "RegularityAttestation":
        items = dict(self.flags)
        items[name] = TriState.parse(value)
        return RegularityAttestation(tuple(items.items()))

    def as_dict(self) -> dict:
        return {name: value.value for name, value in self.flags}

    @classmethod
    def from_dict(cls, mapping) -> "RegularityAttestation":
        return cls(tuple(mapping.items()))


def _theta_expr(b: Expr, sigma: Expr) -> Expr:
    if b == exprlang.Num(0.0):
        return exprlang.Num(0.0)
    return exprlang.div(b, sigma)


@dataclass(frozen=True)
class SwitchingModel:
    """Positive regime-switching diffusion dP = b(P, xi) dt + sigma(P, xi) dW.

    ``b``, ``sigma`` and the density kernel ``c`` are per-regime expression
    trees in the state variable.  When ``c`` is not given it defaults to the
    minimal-measure kernel ``-b/sigma``.
    """

    regimes: RegimeSet
    q: QMatrix
    b: tuple
    sigma: tuple
    c: Optional[tuple] = None
    interval: StateInterval = field(default_factory=lambda: StateInterval(0.0, math.inf, 1.0))
    p0: float = 1.0
    horizon: float = 1.0
    attestations: RegularityAttestation = field(default_factory=RegularityAttestation)
    c_is_default: bool = field(default=False, compare=False)

    def __post_init__(self):
        n = self.regimes.count
        if self.q.n != n:
            raise ValueError(f"Q-matrix size {self.q.n} != regime count {n}")
        b = tuple(self.b)
        sigma = tuple(self.sigma)
        if len(b) != n or len(sigma) != n:
            raise ValueError("need one b and one sigma expression per regime")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "sigma", sigma)
        if self.c is None:
            c = tuple(exprlang.Neg(_theta_expr(b[j], sigma[j])) for j in range(n))
            object.__setattr__(self, "c", c)
            object.__setattr__(self, "c_is_default", True)
        else:
            c = tuple(self.c)
            if len(c) != n:
                raise ValueError("need one c expression per regime")
            object.__setattr__(self, "c", c)
        if not (self.p0 > 0 and math.isfinite(self.p0)):
            raise ValueError("initial price must be positive and finite")
        if not (0 < self.horizon < math.inf):
            raise ValueError("time horizon must be finite and positive")
        if not (self.interval.lower < self.p0 < self.interval.upper):
            raise ValueError("initial price must lie inside the state interval")

    @property
    def n_regimes(self) -> int:
        return self.regimes.count

    def theta(self) -> tuple:
        return tuple(_theta_expr(self.b[j], self.sigma[j]) for j in range(self.n_regimes))

    def with_c(self, c: Sequence[Expr]) -> "SwitchingModel":
        return replace(self, c=tuple(c), c_is_default=False)

    def with_drift(self, b: Sequence[Expr]) -> "SwitchingModel":
        return replace(self, b=tuple(b))


def price_defect_kernel(m: SwitchingModel) -> tuple:
    """Kernel c' with E(int c' dW) = Z P / P0: c' = sigma/x - b/sigma per regime."""
    out = []
    for j in range(m.n_regimes):
        ratio = exprlang.div(m.sigma[j], exprlang.var())
        theta = _theta_expr(m.b[j], m.sigma[j])
        if theta == exprlang.Num(0.0):
            out.append(ratio)
        else:
            out.append(exprlang.sub(ratio, theta))
    return tuple(out)


@dataclass(frozen=True)
class ItoEnvelopeModel:
    """Stochastic-exponential market described through Markovian envelopes.

    ``upper_a`` (> 0) bounds the squared volatility scale from above,
    ``lower_a`` (optional, > 0) from below; ``upper_u``/``lower_u`` bound the
    drift ratio; ``zeta`` is a nonnegative integrable time factor.  The latent
    path-level coefficients are represented only through these envelopes.
    """

    upper_a: Expr
    lower_a: Optional[Expr] = None
    upper_u: Optional[Expr] = None
    lower_u: Optional[Expr] = None
    zeta: Expr = field(default_factory=lambda: exprlang.Num(1.0))
    interval: StateInterval = field(default_factory=lambda: StateInterval(-math.inf, math.inf, 0.0))
    s0: float = 0.0
    horizon: float = 1.0
    attestations: RegularityAttestation = field(default_factory=RegularityAttestation)

    def __post_init__(self):
        if not (0 < self.horizon < math.inf):
            raise ValueError("time horizon must be finite and positive")
        if not (self.interval.lower < self.s0 < self.interval.upper):
            raise ValueError("initial state must lie inside the state interval")


MarketModel = Union[SwitchingModel, ItoEnvelopeModel]


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

PASS = "pass"
FAIL = "fail"
HEURISTIC = "heuristic-pass"


@dataclass(frozen=True)
class CheckResult:
    name: str
    status: str  # pass | fail | heuristic-pass
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple

    @property
    def ok(self) -> bool:
        return all(c.status != FAIL for c in self.checks)

    def failures(self) -> list[CheckResult]:
        return [c for c in self.checks if c.status == FAIL]

    def get(self, name: str) -> Optional[CheckResult]:
        for c in self.checks:
            if c.name == name:
                return c
        return None

    def raise_on_failure(self):
        if not self.ok:
            raise ValidationError(self)

    def __str__(self):
        width = max((len(c.name) for c in self.checks), default=0)
        lines = [f"{c.name:<{width}}  {c.status:<14}  {c.detail}".rstrip() for c in self.checks]
        return "\n".join(lines)


def _validation_grid(interval: StateInterval, points: int = 241) -> np.ndarray:
    """Interior probe grid: geometric toward boundaries at 0/inf, linear on R."""
    lo, hi, x0 = interval.lower, interval.upper, interval.x0
    if interval.is_real_line:
        scale = max(1.0, abs(x0))
        return np.linspace(x0 - 24 * scale, x0 + 24 * scale, points)
    if interval.is_positive_halfline:
        return np.geomspace(min(x0, 1.0) * 2.0 ** -24, max(x0, 1.0) * 2.0 ** 24, points)
    ladder = localization_ladder(interval, 16)
    return np.linspace(ladder[-1][0], ladder[-1][1], points)


def _grid_eval(expr: Expr, grid: np.ndarray):
    fn = exprlang.compile_vector(expr)
    with np.errstate(all="ignore"):
        return fn(np.asarray(grid, dtype=np.float64))


def _check_sigma_nonzero(name, sigma_expr, grid, checks):
    vals = _grid_eval(sigma_expr, grid)
    bad = ~np.isfinite(vals)
    if bad.any():
        checks.append(
            CheckResult(name, FAIL, f"not finite at x={grid[bad][0]:.6g} (and {int(bad.sum()) - 1} more)")
        )
        return
    zero = vals == 0.0
    if zero.any():
        checks.append(CheckResult(name, FAIL, f"vanishes at x={grid[zero][0]:.6g}"))
        return
    sign_change = np.where(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]
    if sign_change.size:
        i = sign_change[0]
        checks.append(
            CheckResult(name, FAIL, f"changes sign between x={grid[i]:.6g} and x={grid[i + 1]:.6g} (zero crossing)")
        )
        return
    checks.append(CheckResult(name, HEURISTIC, "nonzero on probe grid"))


def _check_local_integrability(name, b_expr, sigma_expr, interval, checks):
    # probe (1 + |b|)/sigma^2 on a compact interior subgrid; finiteness of the
    # grid values is a heuristic stand-in for local integrability
    ladder = localization_ladder(interval, 6)
    lo, hi = ladder[-1]
    grid = np.linspace(lo, hi, 257)
    bvals = _grid_eval(b_expr, grid)
    svals = _grid_eval(sigma_expr, grid)
    with np.errstate(all="ignore"):
        ratio = (1.0 + np.abs(bvals)) / (svals * svals)
    if not np.all(np.isfinite(ratio)):
        i = int(np.nonzero(~np.isfinite(ratio))[0][0])
        checks.append(CheckResult(name, FAIL, f"(1+|b|)/sigma^2 not finite at x={grid[i]:.6g}"))
    else:
        checks.append(CheckResult(name, HEURISTIC, "finite on compact probe grid"))


def _check_positive(name, expr, grid, checks, strict=True, label="value"):
    vals = _grid_eval(expr, grid)
    if not np.all(np.isfinite(vals)):
        i = int(np.nonzero(~np.isfinite(vals))[0][0])
        checks.append(CheckResult(name, FAIL, f"{label} not finite at x={grid[i]:.6g}"))
        return None
    bad = vals <= 0 if strict else vals < 0
    if bad.any():
        i = int(np.nonzero(bad)[0][0])
        op = "<=" if strict else "<"
        checks.append(CheckResult(name, FAIL, f"{label} {op} 0 at x={grid[i]:.6g}"))
        return None
    checks.append(CheckResult(name, HEURISTIC, f"{label} positive on probe grid"))
    return vals


def _validate_switching(m: SwitchingModel) -> ValidationReport:
    checks: list[CheckResult] = []
    rows = m.q.entries.sum(axis=1)
    if np.max(np.abs(rows)) <= QROW_TOL * max(1.0, float(np.abs(m.q.entries).max())):
        checks.append(CheckResult("q_row_sums", PASS, "rows sum to zero within 1e-12"))
    else:
        checks.append(CheckResult("q_row_sums", FAIL, f"residuals {rows}"))
    if m.q.is_irreducible():
        checks.append(CheckResult("q_irreducible", PASS, "positive-rate graph strongly connected"))
    else:
        checks.append(
            CheckResult(
                "q_irreducible",
                FAIL,
                "positive-rate graph not strongly connected (one-way chains simulate "
                "fine but the chain-based classification theorems do not apply)",
            )
        )
    grid = _validation_grid(m.interval)
    interior = grid[(grid > m.interval.lower) & (grid < m.interval.upper)]
    for j in range(m.n_regimes):
        _check_sigma_nonzero(f"sigma_nonzero.{j + 1}", m.sigma[j], interior, checks)
        _check_local_integrability(f"local_integrability.{j + 1}", m.b[j], m.sigma[j], m.interval, checks)
    if m.interval.lower >= 0 and m.p0 <= m.interval.lower:
        checks.append(CheckResult("p0_interior", FAIL, "initial price outside interval"))
    else:
        checks.append(CheckResult("p0_interior", PASS, f"p0={m.p0:.6g} inside interval"))
    checks.append(CheckResult("horizon_finite", PASS, f"T={m.horizon:.6g}"))
    return ValidationReport(tuple(checks))


def _validate_ito(m: ItoEnvelopeModel) -> ValidationReport:
    checks: list[CheckResult] = []
    grid = _validation_grid(m.interval)
    upper_vals = _check_positive("upper_a_positive", m.upper_a, grid, checks, label="upper_a")
    if m.lower_a is not None:
        lower_vals = _check_positive("lower_a_positive", m.lower_a, grid, checks, label="lower_a")
        if upper_vals is not None and lower_vals is not None:
            bad = lower_vals > upper_vals * (1 + 1e-12)
            if bad.any():
                i = int(np.nonzero(bad)[0][0])
                checks.append(
                    CheckResult("envelope_order", FAIL, f"lower_a > upper_a at x={grid[i]:.6g}")
                )
            else:
                checks.append(CheckResult("envelope_order", HEURISTIC, "lower_a <= upper_a on probe grid"))
    tgrid = np.linspace(0.0, m.horizon, 257)
    zvals = _grid_eval(m.zeta, tgrid)
    if not np.all(np.isfinite(zvals)) or np.any(zvals < 0):
        checks.append(CheckResult("zeta_nonnegative", FAIL, "zeta must be finite and >= 0 on [0, T]"))
    else:
        checks.append(
            CheckResult("zeta_nonnegative", HEURISTIC, f"zeta >= 0, grid integral {np.trapezoid(zvals, tgrid):.6g}")
        )
    checks.append(CheckResult("horizon_finite", PASS, f"T={m.horizon:.6g}"))
    return ValidationReport(tuple(checks))


def validate(m: MarketModel) -> ValidationReport:
    """Check the standing assumptions; grid-based checks report heuristic-pass."""
    if isinstance(m, SwitchingModel):
        return _validate_switching(m)
    if isinstance(m, ItoEnvelopeModel):
        return _validate_ito(m)
    raise TypeError(f"not a market model: {m!r}")


def market_price_of_risk(m: SwitchingModel) -> tuple:
    """Per-regime symbolic quotient b/sigma (the market price of risk)."""
    return m.theta()
