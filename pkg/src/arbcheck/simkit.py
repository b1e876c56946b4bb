"""Monte Carlo engine for regime-switching diffusions and their densities.

The simulator follows the concatenation construction: a continuous-time
Markov chain is sampled first (exponential holding times with rate -q_jj,
next state proportional to the off-diagonal row), and between consecutive
jump times the state follows the frozen-regime SDE, with the grid refined so
every jump lands exactly on a step boundary.  The stochastic exponential
Z = E(int c(S, xi) dW) is accumulated in log space along the same Brownian
increments.

Step control: on top of the base grid dt, steps are capped so a single move
b h + sigma sqrt(h) stays below ``rel_cap`` times the local state scale; the
cap shrinks automatically inside volatility spikes and explosive drifts and
is what keeps the estimators' discretization bias below their Monte Carlo
noise for the power-law models in the regression suite.

Two defect estimators are provided and must agree (a test invariant):

* ``martingale_defect_direct`` simulates (S, xi, Z) jointly and averages Z_T
  (or Z_T S_T / S_0 for the price-side density);
* ``explosion_probability`` simulates the measure-tilted dynamics (drift
  b + c sigma) and estimates the probability of staying inside each
  localization level through the horizon, whose limit equals E[Z_T].

Everything is deterministic for a fixed (seed, n_paths, dt policy): every
path owns counter-based streams (see :mod:`arbcheck.rng`), so neither worker
count nor batch layout can change a single draw.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from numba import NumbaWarning, njit, prange

# the TBB-version probe warns on import in some environments; the fallback
# threading layer is equally correct and results are layer-independent
warnings.filterwarnings("ignore", category=NumbaWarning)

from . import exprlang
from .exprlang import Expr
from .model import SwitchingModel, localization_ladder, validate, ValidationError
from .rng import PURPOSE_CHAIN, PURPOSE_DIFFUSION, gauss_pair, uniform_pair

__all__ = [
    "DtPolicy",
    "RegimePath",
    "RegimePathBatch",
    "SamplePathBatch",
    "TerminalStats",
    "MCEstimate",
    "ExplosionStats",
    "STATUS_ALIVE",
    "STATUS_ABSORBED",
    "STATUS_OVERFLOW",
    "STATUS_NUMERIC",
    "sample_chain",
    "simulate_switching_sde",
    "girsanov_tilt",
    "martingale_defect_direct",
    "explosion_probability",
    "estimate_functional",
    "mc_estimate",
]

STATUS_ALIVE = 0
STATUS_ABSORBED = 1
STATUS_OVERFLOW = 2
STATUS_NUMERIC = 3

OVERFLOW_GUARD = 1.0e12
LOG_Z_GUARD = math.log(1.0e12)


@dataclass(frozen=True)
class DtPolicy:
    """Time-step policy: base grid dt (default T/2^12) plus a relative cap.

    ``rel_cap`` bounds |sigma| sqrt(h) and |b| h by rel_cap times the local
    state scale (the state itself on (0, inf), max(|x|, 1) on the real line);
    ``milstein`` adds the first-order volatility correction with a central
    finite-difference derivative.
    """

    dt: Optional[float] = None
    rel_cap: float = 0.1
    milstein: bool = False
    max_substeps: int = 200_000
    antithetic: bool = False

    def base_dt(self, horizon: float) -> float:
        return self.dt if self.dt is not None else horizon / 4096.0


@dataclass(frozen=True)
class RegimePath:
    """One chain trajectory: jump times (strictly increasing) and the regime
    before/after each jump; ``states[k]`` rules on [jump_times[k-1], jump_times[k])."""

    jump_times: np.ndarray
    states: np.ndarray  # len(jump_times) + 1, 1-based regimes
    horizon: float

    def state_at(self, t: float) -> int:
        idx = int(np.searchsorted(self.jump_times, t, side="right"))
        return int(self.states[idx])


@dataclass(frozen=True)
class RegimePathBatch:
    jump_times: np.ndarray  # (n, jmax) padded with +inf
    states: np.ndarray  # (n, jmax + 1) padded, 1-based
    n_jumps: np.ndarray  # (n,)
    horizon: float
    seed: int

    @property
    def n_paths(self) -> int:
        return self.jump_times.shape[0]

    def path(self, i: int) -> RegimePath:
        k = int(self.n_jumps[i])
        return RegimePath(
            jump_times=self.jump_times[i, :k].copy(),
            states=self.states[i, : k + 1].copy(),
            horizon=self.horizon,
        )

    def occupation_fractions(self, n_regimes: int) -> np.ndarray:
        """(n, N) matrix of the fraction of [0, T] spent in each regime."""
        n = self.n_paths
        out = np.zeros((n, n_regimes))
        times = np.where(np.isfinite(self.jump_times), self.jump_times, self.horizon)
        prev = np.zeros(n)
        jmax = self.jump_times.shape[1]
        for k in range(jmax + 1):
            t_k = times[:, k] if k < jmax else np.full(n, self.horizon)
            t_k = np.minimum(t_k, self.horizon)
            active = k <= self.n_jumps
            dur = np.where(active, np.maximum(t_k - prev, 0.0), 0.0)
            states = self.states[:, k] - 1
            for j in range(n_regimes):
                out[:, j] += np.where(active & (states == j), dur, 0.0)
            prev = np.maximum(prev, t_k)
        return out / self.horizon

    def transition_counts(self, n_regimes: int) -> np.ndarray:
        """(n, N, N) per-path counts of observed i -> j jumps."""
        n = self.n_paths
        out = np.zeros((n, n_regimes, n_regimes))
        jmax = self.jump_times.shape[1]
        for k in range(jmax):
            active = self.n_jumps > k
            src = self.states[:, k] - 1
            dst = self.states[:, k + 1] - 1
            for i in range(n_regimes):
                for j in range(n_regimes):
                    out[:, i, j] += np.where(active & (src == i) & (dst == j), 1.0, 0.0)
        return out


# ---------------------------------------------------------------------------
# chain sampling (exponential holding times, embedded-chain transitions)
# ---------------------------------------------------------------------------


@njit(inline="always", cache=True)
def _next_holding(seed, stream, ctr, rate):
    u, _ = uniform_pair(seed, stream, PURPOSE_CHAIN, ctr)
    return -math.log(u) / rate


@njit(inline="always", cache=True)
def _next_state(seed, stream, ctr, q, j, n):
    _, u = uniform_pair(seed, stream, PURPOSE_CHAIN, ctr)
    rate = -q[j, j]
    acc = 0.0
    target = u * rate
    last = -1
    for i in range(n):
        if i == j:
            continue
        if q[j, i] > 0.0:
            acc += q[j, i]
            last = i
            if target < acc:
                return i
    return last


@njit(cache=True)
def _chain_kernel(seed, n_paths, q, j0, T, jump_times, jump_states, n_jumps, jmax):
    n = q.shape[0]
    for p in range(n_paths):
        stream = np.uint64(p)
        ctr = 0
        j = j0
        t = 0.0
        k = 0
        jump_states[p, 0] = j + 1
        while True:
            rate = -q[j, j]
            if rate <= 0.0:
                break
            t += _next_holding(seed, stream, ctr, rate)
            ctr += 1
            if t >= T:
                break
            nxt = _next_state(seed, stream, ctr, q, j, n)
            ctr += 1
            if nxt < 0:
                break
            if k >= jmax:
                k += 1  # count overflow; caller re-allocates
                j = nxt
                continue
            jump_times[p, k] = t
            jump_states[p, k + 1] = nxt + 1
            j = nxt
            k += 1
        n_jumps[p] = k


def sample_chain(q, j0: int, T: float, n_paths: int, seed: int) -> RegimePathBatch:
    """Sample continuous-time chain paths on [0, T].

    Holding times are exponential with rate -q_jj; the next state is drawn
    from the off-diagonal row.  An absorbing row (q_jj = 0) simply stops
    jumping.  Path ``i`` depends only on (seed, i).
    """
    entries = np.ascontiguousarray(getattr(q, "entries", q), dtype=np.float64)
    n = entries.shape[0]
    if not 1 <= j0 <= n:
        raise ValueError(f"initial regime {j0} outside 1..{n}")
    jmax = 8
    while True:
        jump_times = np.full((n_paths, jmax), np.inf)
        jump_states = np.zeros((n_paths, jmax + 1), dtype=np.int64)
        n_jumps = np.zeros(n_paths, dtype=np.int64)
        _chain_kernel(
            np.uint64(seed), n_paths, entries, j0 - 1, T, jump_times, jump_states, n_jumps, jmax
        )
        overflow = int(n_jumps.max(initial=0))
        if overflow <= jmax:
            break
        jmax = max(jmax * 2, overflow)
    # forward-fill states beyond the last jump so state_at stays valid
    for k in range(1, jmax + 1):
        mask = n_jumps < k
        jump_states[mask, k] = jump_states[mask, k - 1]
    return RegimePathBatch(
        jump_times=jump_times, states=jump_states, n_jumps=n_jumps, horizon=T, seed=int(seed)
    )


# ---------------------------------------------------------------------------
# stack-program evaluation inside kernels
# ---------------------------------------------------------------------------

_OP_CONST = exprlang.OP_CONST
_OP_X = exprlang.OP_X
_OP_ADD = exprlang.OP_ADD
_OP_SUB = exprlang.OP_SUB
_OP_MUL = exprlang.OP_MUL
_OP_DIV = exprlang.OP_DIV
_OP_POW = exprlang.OP_POW
_OP_NEG = exprlang.OP_NEG
_OP_EXP = exprlang.OP_EXP
_OP_LOG = exprlang.OP_LOG
_OP_SQRT = exprlang.OP_SQRT
_OP_ABS = exprlang.OP_ABS
_OP_MIN = exprlang.OP_MIN
_OP_MAX = exprlang.OP_MAX


@njit(inline="always", cache=True)
def _eval_prog(ops, start, end, consts, x, stack):
    sp = 0
    for i in range(start, end):
        code = ops[i]
        op = code & 0xFF
        if op == _OP_CONST:
            stack[sp] = consts[code >> 8]
            sp += 1
        elif op == _OP_X:
            stack[sp] = x
            sp += 1
        elif op == _OP_NEG:
            stack[sp - 1] = -stack[sp - 1]
        elif op == _OP_ADD:
            stack[sp - 2] = stack[sp - 2] + stack[sp - 1]
            sp -= 1
        elif op == _OP_SUB:
            stack[sp - 2] = stack[sp - 2] - stack[sp - 1]
            sp -= 1
        elif op == _OP_MUL:
            stack[sp - 2] = stack[sp - 2] * stack[sp - 1]
            sp -= 1
        elif op == _OP_DIV:
            b = stack[sp - 1]
            stack[sp - 2] = stack[sp - 2] / b if b != 0.0 else np.nan
            sp -= 1
        elif op == _OP_POW:
            a = stack[sp - 2]
            b = stack[sp - 1]
            if a < 0.0:
                if b == np.floor(b):
                    stack[sp - 2] = a ** b
                else:
                    stack[sp - 2] = np.nan
            elif a == 0.0:
                if b > 0.0:
                    stack[sp - 2] = 0.0
                elif b == 0.0:
                    stack[sp - 2] = 1.0
                else:
                    stack[sp - 2] = np.nan
            else:
                stack[sp - 2] = a ** b
            sp -= 1
        elif op == _OP_EXP:
            stack[sp - 1] = np.exp(stack[sp - 1])
        elif op == _OP_LOG:
            v = stack[sp - 1]
            stack[sp - 1] = np.log(v) if v > 0.0 else np.nan
        elif op == _OP_SQRT:
            v = stack[sp - 1]
            stack[sp - 1] = np.sqrt(v) if v >= 0.0 else np.nan
        elif op == _OP_ABS:
            stack[sp - 1] = abs(stack[sp - 1])
        elif op == _OP_MIN:
            stack[sp - 2] = min(stack[sp - 2], stack[sp - 1])
            sp -= 1
        elif op == _OP_MAX:
            stack[sp - 2] = max(stack[sp - 2], stack[sp - 1])
            sp -= 1
    return stack[0]


@dataclass(frozen=True)
class _ProgramTable:
    """Flattened per-(kind, regime) stack programs for kernel evaluation."""

    ops: np.ndarray
    consts: np.ndarray
    bounds: np.ndarray  # (n_progs + 1,)
    n_regimes: int
    max_stack: int


def _compile_table(groups: Sequence[Sequence[Expr]]) -> _ProgramTable:
    """groups = [b exprs, sigma exprs, c exprs (optional)] -> one flat table."""
    all_ops = []
    all_consts: list[float] = []
    bounds = [0]
    max_stack = 1
    n_regimes = len(groups[0])
    for group in groups:
        assert len(group) == n_regimes
        for e in group:
            ops, consts, depth = exprlang.compile_program(e)
            offset = len(all_consts)
            shifted = [
                (int(code) & 0xFF) | ((((int(code) >> 8) + offset) << 8))
                if (int(code) & 0xFF) == _OP_CONST
                else int(code)
                for code in ops
            ]
            all_ops.extend(shifted)
            all_consts.extend(consts.tolist())
            bounds.append(len(all_ops))
            max_stack = max(max_stack, depth)
    return _ProgramTable(
        ops=np.asarray(all_ops, dtype=np.int64),
        consts=np.asarray(all_consts if all_consts else [0.0], dtype=np.float64),
        bounds=np.asarray(bounds, dtype=np.int64),
        n_regimes=n_regimes,
        max_stack=max_stack,
    )


# ---------------------------------------------------------------------------
# switching SDE kernel
# ---------------------------------------------------------------------------


@njit(parallel=True, cache=True)
def _sde_kernel(
    seed,
    n_paths,
    x0,
    T,
    dt_base,
    n_base,
    rel_cap,
    max_substeps,
    use_milstein,
    antithetic,
    multiplicative_scale,
    want_z,
    overflow_guard,
    jump_times,
    jump_states,
    n_jumps,
    ops,
    consts,
    bounds,
    n_regimes,
    stack_size,
    l_abs,
    r_abs,
    store_every,
    grid_x,
    grid_z,
    grid_regime,
    out_x,
    out_logz,
    out_status,
    out_exit_time,
    out_min,
    out_max,
):
    store = store_every > 0
    for p in prange(n_paths):
        stream = np.uint64(p >> 1) if antithetic else np.uint64(p)
        gsign = -1.0 if (antithetic and (p & 1) == 1) else 1.0
        stack = np.empty(stack_size, dtype=np.float64)
        x = x0
        logz = 0.0
        regime = jump_states[p, 0] - 1
        jptr = 0
        nj = n_jumps[p]
        status = STATUS_ALIVE
        exit_time = T
        xmin = x
        xmax = x
        ctr = 0
        g_spare = 0.0
        have_spare = False
        if store:
            grid_x[p, 0] = x
            grid_z[p, 0] = 1.0
            grid_regime[p, 0] = regime + 1
        for k in range(n_base):
            if status == STATUS_ALIVE:
                t = k * dt_base
                t_end = min((k + 1) * dt_base, T)
                guard = 0
                while t < t_end:
                    guard += 1
                    if guard > max_substeps:
                        status = STATUS_NUMERIC
                        exit_time = t
                        break
                    b_val = _eval_prog(
                        ops, bounds[regime], bounds[regime + 1], consts, x, stack
                    )
                    s_val = _eval_prog(
                        ops,
                        bounds[n_regimes + regime],
                        bounds[n_regimes + regime + 1],
                        consts,
                        x,
                        stack,
                    )
                    c_val = 0.0
                    if want_z:
                        c_val = _eval_prog(
                            ops,
                            bounds[2 * n_regimes + regime],
                            bounds[2 * n_regimes + regime + 1],
                            consts,
                            x,
                            stack,
                        )
                    if (
                        np.isnan(b_val)
                        or np.isnan(s_val)
                        or np.isnan(c_val)
                        or np.isinf(b_val)
                        or np.isinf(s_val)
                        or np.isinf(c_val)
                    ):
                        status = STATUS_NUMERIC
                        exit_time = t
                        break
                    scale = abs(x)
                    if not multiplicative_scale and scale < 1.0:
                        scale = 1.0
                    if scale < 1e-300:
                        scale = 1e-300
                    h = t_end - t
                    # regime jumps are grid points: never step across one
                    if jptr < nj and jump_times[p, jptr] < t_end:
                        dt_jump = jump_times[p, jptr] - t
                        if dt_jump < h:
                            h = dt_jump
                    if s_val != 0.0:
                        cap = (rel_cap * scale / abs(s_val)) ** 2
                        if cap < h:
                            h = cap
                    if b_val != 0.0:
                        cap = rel_cap * scale / abs(b_val)
                        if cap < h:
                            h = cap
                    if h <= 0.0:
                        h = 1e-18 * dt_base
                    sqh = math.sqrt(h)
                    if have_spare:
                        g = g_spare
                        have_spare = False
                    else:
                        g, g_spare = gauss_pair(seed, stream, PURPOSE_DIFFUSION, ctr)
                        ctr += 1
                        have_spare = True
                    g = g * gsign
                    dw = sqh * g
                    x_new = x + b_val * h + s_val * dw
                    if use_milstein:
                        delta = 1e-5 * (abs(x) if abs(x) > 1.0 else 1.0)
                        s_up = _eval_prog(
                            ops,
                            bounds[n_regimes + regime],
                            bounds[n_regimes + regime + 1],
                            consts,
                            x + delta,
                            stack,
                        )
                        s_dn = _eval_prog(
                            ops,
                            bounds[n_regimes + regime],
                            bounds[n_regimes + regime + 1],
                            consts,
                            x - delta,
                            stack,
                        )
                        ds = (s_up - s_dn) / (2.0 * delta)
                        if not (np.isnan(ds) or np.isinf(ds)):
                            x_new += 0.5 * s_val * ds * (dw * dw - h)
                    if want_z:
                        logz += c_val * dw - 0.5 * c_val * c_val * h
                    t_new = t + h
                    # land exactly on the jump / segment boundary
                    if jptr < nj:
                        tj = jump_times[p, jptr]
                        if t_new >= tj - 1e-15 * T and t < tj:
                            t_new = tj
                            regime = jump_states[p, jptr + 1] - 1
                            jptr += 1
                    if t_new > t_end - 1e-15 * T:
                        t_new = t_end
                    t = t_new
                    x = x_new
                    if np.isnan(x):
                        status = STATUS_NUMERIC
                        exit_time = t
                        break
                    if x < xmin:
                        xmin = x
                    if x > xmax:
                        xmax = x
                    if x <= l_abs or x >= r_abs:
                        status = STATUS_ABSORBED
                        exit_time = t
                        break
                    if abs(x) > overflow_guard or logz > LOG_Z_GUARD:
                        status = STATUS_OVERFLOW
                        exit_time = t
                        break
            if store and (k + 1) % store_every == 0:
                idx = (k + 1) // store_every
                grid_x[p, idx] = x
                grid_z[p, idx] = math.exp(logz)
                grid_regime[p, idx] = regime + 1
        out_x[p] = x
        out_logz[p] = logz
        out_status[p] = status
        out_exit_time[p] = exit_time
        out_min[p] = xmin
        out_max[p] = xmax


@dataclass(frozen=True)
class TerminalStats:
    """Per-path terminal data from a simulation run (no grid storage)."""

    x: np.ndarray
    logz: np.ndarray
    status: np.ndarray
    exit_time: np.ndarray
    x_min: np.ndarray
    x_max: np.ndarray
    seed: int
    dt: float

    @property
    def n_paths(self) -> int:
        return self.x.shape[0]

    def flagged_fraction(self) -> float:
        return float(np.mean(self.status != STATUS_ALIVE))


@dataclass(frozen=True)
class SamplePathBatch:
    """Simulated paths on a stored time grid plus terminal statistics."""

    grid: np.ndarray  # (M + 1,)
    values: np.ndarray  # (n, M + 1)
    z_values: np.ndarray  # (n, M + 1)
    regimes: np.ndarray  # (n, M + 1) 1-based
    chain: RegimePathBatch
    terminal: TerminalStats

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    def to_csv(self, max_paths: Optional[int] = None) -> str:
        lines = ["path_id,t,regime,state,z"]
        n = self.n_paths if max_paths is None else min(self.n_paths, max_paths)
        for p in range(n):
            for i, t in enumerate(self.grid):
                lines.append(
                    f"{p},{t!r},{int(self.regimes[p, i])},{self.values[p, i]!r},{self.z_values[p, i]!r}"
                )
        return "\n".join(lines) + "\n"


def _run_kernel(
    m: SwitchingModel,
    chains: RegimePathBatch,
    policy: DtPolicy,
    seed: int,
    c_exprs: Optional[Sequence[Expr]],
    ladder_depth: int,
    store_every: int = 0,
):
    T = m.horizon
    if abs(chains.horizon - T) > 1e-12 * max(1.0, T):
        raise ValueError(f"chain horizon {chains.horizon} != model horizon {T}")
    dt = policy.base_dt(T)
    n_base = max(1, int(math.ceil(T / dt - 1e-12)))
    n_paths = chains.n_paths
    groups = [list(m.b), list(m.sigma)]
    want_z = c_exprs is not None
    if want_z:
        groups.append(list(c_exprs))
    else:
        groups.append([exprlang.Num(0.0)] * m.n_regimes)
    table = _compile_table(groups)
    pairs = localization_ladder(m.interval, ladder_depth)
    l_abs, r_abs = pairs[-1]
    overflow_guard = max(OVERFLOW_GUARD, 8.0 * max(abs(l_abs), abs(r_abs)))
    out_x = np.empty(n_paths)
    out_logz = np.zeros(n_paths)
    out_status = np.zeros(n_paths, dtype=np.int64)
    out_exit = np.full(n_paths, T)
    out_min = np.empty(n_paths)
    out_max = np.empty(n_paths)
    if store_every > 0:
        m_pts = n_base // store_every + 1
        grid_x = np.empty((n_paths, m_pts))
        grid_z = np.empty((n_paths, m_pts))
        grid_regime = np.zeros((n_paths, m_pts), dtype=np.int64)
    else:
        grid_x = np.empty((1, 1))
        grid_z = np.empty((1, 1))
        grid_regime = np.zeros((1, 1), dtype=np.int64)
    _sde_kernel(
        np.uint64(seed),
        n_paths,
        float(m.p0),
        T,
        dt,
        n_base,
        policy.rel_cap,
        policy.max_substeps,
        policy.milstein,
        policy.antithetic,
        m.interval.is_positive_halfline,
        want_z,
        overflow_guard,
        chains.jump_times,
        chains.states,
        chains.n_jumps,
        table.ops,
        table.consts,
        table.bounds,
        table.n_regimes,
        max(table.max_stack, 2),
        float(l_abs),
        float(r_abs),
        store_every,
        grid_x,
        grid_z,
        grid_regime,
        out_x,
        out_logz,
        out_status,
        out_exit,
        out_min,
        out_max,
    )
    terminal = TerminalStats(
        x=out_x,
        logz=out_logz,
        status=out_status,
        exit_time=out_exit,
        x_min=out_min,
        x_max=out_max,
        seed=int(seed),
        dt=dt,
    )
    if store_every > 0:
        grid = np.minimum(np.arange(grid_x.shape[1]) * (dt * store_every), T)
        return terminal, (grid, grid_x, grid_z, grid_regime)
    return terminal, None


def simulate_switching_sde(
    m: SwitchingModel,
    chain,
    dt_policy: DtPolicy = DtPolicy(),
    seed: int = 0,
    ladder_depth: int = 40,
    store_every: int = 16,
    with_density: bool = True,
) -> SamplePathBatch:
    """Simulate the switching diffusion along pre-sampled chain paths.

    ``chain`` may be a :class:`RegimePathBatch` (one diffusion path per chain
    path) or a single :class:`RegimePath` (one diffusion path).  Paths are
    absorbed on leaving the deepest localization level and flagged on numeric
    overflow; the density Z is evolved from the model kernel ``c`` when
    ``with_density`` is set.
    """
    report = validate(m)
    if any(c.name.startswith(("sigma_nonzero", "p0")) and c.status == "fail" for c in report.checks):
        raise ValidationError(report)
    if isinstance(chain, RegimePath):
        k = len(chain.jump_times)
        batch = RegimePathBatch(
            jump_times=np.concatenate([chain.jump_times, [np.inf]])[None, :],
            states=np.concatenate([chain.states, [chain.states[-1]]])[None, :],
            n_jumps=np.asarray([k]),
            horizon=chain.horizon,
            seed=0,
        )
    else:
        batch = chain
    c_exprs = m.c if with_density else None
    terminal, stored = _run_kernel(
        m, batch, dt_policy, seed, c_exprs, ladder_depth, store_every=max(1, store_every)
    )
    grid, gx, gz, gr = stored
    return SamplePathBatch(
        grid=grid, values=gx, z_values=gz, regimes=gr, chain=batch, terminal=terminal
    )


def girsanov_tilt(m: SwitchingModel) -> SwitchingModel:
    """Drift change induced by the density kernel: b -> b + c sigma, c cleared.

    Survival probabilities of the tilted dynamics inside the localization
    ladder estimate E[Z_T] (see :func:`explosion_probability`).
    """
    new_b = []
    for j in range(m.n_regimes):
        if m.c_is_default:
            # c = -b/sigma cancels the drift exactly
            new_b.append(exprlang.Num(0.0))
        else:
            c = m.c[j]
            if c == exprlang.Num(0.0):
                new_b.append(m.b[j])
            else:
                new_b.append(exprlang.add(m.b[j], exprlang.mul(c, m.sigma[j])))
    return m.with_drift(new_b).with_c([exprlang.Num(0.0)] * m.n_regimes)


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    ci95_low: float
    ci95_high: float
    n_paths: int
    seed: int
    metadata: dict = field(default_factory=dict, compare=False)

    def as_dict(self) -> dict:
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "ci95_low": self.ci95_low,
            "ci95_high": self.ci95_high,
            "n_paths": self.n_paths,
            "seed": self.seed,
            "metadata": self.metadata,
        }


def mc_estimate(values: np.ndarray, seed: int, **metadata) -> MCEstimate:
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    mean = float(values.mean())
    sd = float(values.std(ddof=1)) if n > 1 else 0.0
    se = sd / math.sqrt(n) if n else math.nan
    return MCEstimate(
        mean=mean,
        stderr=se,
        ci95_low=mean - 1.96 * se,
        ci95_high=mean + 1.96 * se,
        n_paths=n,
        seed=int(seed),
        metadata=metadata,
    )


def martingale_defect_direct(
    m: SwitchingModel,
    c: Optional[Sequence[Expr]] = None,
    T: Optional[float] = None,
    n_paths: int = 100_000,
    seed: int = 0,
    dt_policy: DtPolicy = DtPolicy(),
    ladder_depth: int = 40,
    price_weighted: bool = False,
) -> MCEstimate:
    """Estimate E[Z_T] for Z = E(int c(S, xi) dW) by joint simulation.

    With ``price_weighted`` the estimator returns E[Z_T S_T]/S_0, the mean of
    the density-price product (equal to 1 exactly when the candidate density
    is a strict martingale density).  Overflowed/absorbed paths contribute
    their last value; their count is flagged in the metadata and a warning
    fires above 1% of paths.
    """
    if T is not None and T != m.horizon:
        m = replace(m, horizon=float(T))
    c_exprs = tuple(c) if c is not None else m.c
    chains = sample_chain(m.q, m.regimes.initial, m.horizon, n_paths, seed)
    terminal, _ = _run_kernel(m, chains, dt_policy, seed, c_exprs, ladder_depth)
    z = np.exp(terminal.logz)
    if price_weighted:
        z = z * terminal.x / m.p0
    flagged = int(np.sum(terminal.status != STATUS_ALIVE))
    est = mc_estimate(
        z,
        seed,
        estimator="direct-defect",
        price_weighted=price_weighted,
        dt=terminal.dt,
        rel_cap=dt_policy.rel_cap,
        scheme="milstein" if dt_policy.milstein else "euler",
        flagged_paths=flagged,
        flagged_fraction=flagged / n_paths,
        status_counts={
            "alive": int(np.sum(terminal.status == STATUS_ALIVE)),
            "absorbed": int(np.sum(terminal.status == STATUS_ABSORBED)),
            "overflow": int(np.sum(terminal.status == STATUS_OVERFLOW)),
            "numeric": int(np.sum(terminal.status == STATUS_NUMERIC)),
        },
        warnings=["flagged-path mass exceeds 1% of paths"] if flagged > 0.01 * n_paths else [],
    )
    return est


@dataclass(frozen=True)
class ExplosionStats:
    """Per-level survival of the tilted dynamics and the duality estimate."""

    levels: tuple  # ((l_n, r_n), ...)
    survival: np.ndarray
    stderr: np.ndarray
    n_paths: int
    seed: int
    plateaued: bool
    notes: tuple = ()

    @property
    def estimate(self) -> MCEstimate:
        n = len(self.survival)
        return MCEstimate(
            mean=float(self.survival[-1]),
            stderr=float(self.stderr[-1]),
            ci95_low=float(self.survival[-1] - 1.96 * self.stderr[-1]),
            ci95_high=float(self.survival[-1] + 1.96 * self.stderr[-1]),
            n_paths=self.n_paths,
            seed=self.seed,
            metadata={"estimator": "explosion-duality", "levels": n, "plateaued": self.plateaued},
        )

    def as_dict(self) -> dict:
        return {
            "levels": [[l, r] for l, r in self.levels],
            "survival": [float(v) for v in self.survival],
            "stderr": [float(v) for v in self.stderr],
            "n_paths": self.n_paths,
            "seed": self.seed,
            "plateaued": self.plateaued,
            "notes": list(self.notes),
        }


def explosion_probability(
    m_tilted: SwitchingModel,
    T: Optional[float] = None,
    ladder_depth: int = 40,
    n_paths: int = 100_000,
    seed: int = 0,
    dt_policy: DtPolicy = DtPolicy(),
) -> ExplosionStats:
    """Estimate, for each localization level, the probability that the tilted
    path stays inside (l_n, r_n) through the horizon.

    The survival sequence is nonincreasing in the level index and its limit
    equals the direct defect E[Z_T]; the last level is reported as the duality
    estimate, with a warning when the sequence has not plateaued within two
    standard errors.
    """
    if T is not None and T != m_tilted.horizon:
        m_tilted = replace(m_tilted, horizon=float(T))
    chains = sample_chain(m_tilted.q, m_tilted.regimes.initial, m_tilted.horizon, n_paths, seed)
    terminal, _ = _run_kernel(m_tilted, chains, dt_policy, seed, None, ladder_depth)
    pairs = localization_ladder(m_tilted.interval, ladder_depth)
    levels = np.asarray(pairs)
    # a path survives level n iff its running extremes never left (l_n, r_n);
    # flagged paths (overflow/numeric) count as exits at every level
    bad = terminal.status >= STATUS_OVERFLOW
    inside = (
        (terminal.x_min[:, None] > levels[None, :, 0])
        & (terminal.x_max[:, None] < levels[None, :, 1])
        & ~bad[:, None]
    )
    survival = inside.mean(axis=0)
    stderr = np.sqrt(np.maximum(survival * (1 - survival), 0.0) / n_paths)
    notes = []
    plateaued = True
    if len(survival) >= 2:
        gap = abs(survival[-1] - survival[-2])
        tol = 2.0 * max(stderr[-1], 1.0 / n_paths)
        plateaued = bool(gap <= tol)
        if not plateaued:
            notes.append(
                f"survival not plateaued: last-level gap {gap:.3g} exceeds 2 stderr {tol:.3g}"
            )
    return ExplosionStats(
        levels=tuple((float(l), float(r)) for l, r in pairs),
        survival=survival,
        stderr=stderr,
        n_paths=n_paths,
        seed=int(seed),
        plateaued=plateaued,
        notes=tuple(notes),
    )


def estimate_functional(
    paths: SamplePathBatch, payoff: Callable[[SamplePathBatch], np.ndarray], seed: Optional[int] = None
) -> MCEstimate:
    """Mean/stderr/CI of a path functional evaluated on a simulated batch."""
    values = np.asarray(payoff(paths), dtype=np.float64)
    if values.shape != (paths.n_paths,):
        raise ValueError("payoff must return one value per path")
    return mc_estimate(values, paths.terminal.seed if seed is None else seed, estimator="functional")
