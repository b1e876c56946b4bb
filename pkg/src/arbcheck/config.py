"""Model/run configuration files: parsing, validation and canonical output.

One INI-style file describes a model and the run parameters::

    [model]
    type = switching            ; or: ito_exponential
    interval = 0, inf
    x0 = 1.0
    p0 = 1.0
    horizon = 1.0

    [regimes]
    count = 2
    initial = 1

    [q]
    row1 = -1.0, 1.0
    row2 = 2.0, -2.0

    [coefficients]
    b.1 = 0
    b.2 = 0
    sigma.1 = x
    sigma.2 = x^1.5

    [attestations]
    es.1 = true
    es.2 = true

    [run]
    seed = 42
    paths = 100000

Envelope models replace [regimes]/[q] with coefficient keys ``upper_a``,
``lower_a``, ``upper_u``, ``lower_u`` and ``zeta`` (an expression in x, read
as a function of time).  ``dump_config`` emits a canonical form whose parse
reproduces the model exactly.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import exprlang
from .model import (
    ItoEnvelopeModel,
    MarketModel,
    QMatrix,
    RegimeSet,
    RegularityAttestation,
    StateInterval,
    SwitchingModel,
)

__all__ = ["RunConfig", "ConfigError", "parse_config", "load_config", "dump_config"]


class ConfigError(ValueError):
    def __init__(self, message: str, section: str = "", option: str = ""):
        where = f" in [{section}]" if section else ""
        where += f" option {option!r}" if option else ""
        super().__init__(f"config error{where}: {message}")
        self.section = section
        self.option = option


@dataclass(frozen=True)
class RunConfig:
    """A parsed model plus run parameters for the command-line front end."""

    model: MarketModel
    seed: Optional[int] = None
    paths: int = 100_000
    depth: int = 40
    dt: Optional[float] = None
    rel_cap: float = 0.1
    scheme: str = "euler"
    antithetic: bool = False
    workers: int = 1
    deterministic: bool = False
    defect_target: str = "zp"  # zp: density-price product; z: density alone
    out: Optional[str] = None
    rungs: int = 24
    cauchy_tol: float = 1.0e-5
    divergence_threshold: float = 1.0e6
    tilt_f: Optional[tuple] = None
    store_every: int = 16
    max_paths_dump: int = 100

    def __post_init__(self):
        if self.paths < 1 or self.depth < 1 or self.rungs < 4:
            raise ConfigError("paths, depth and rungs must be positive (rungs >= 4)")
        if self.dt is not None and not 0 < self.dt < math.inf:
            raise ConfigError("dt must be positive and finite")
        if self.rel_cap <= 0 or self.cauchy_tol <= 0 or self.divergence_threshold <= 0:
            raise ConfigError("tolerance knobs must be positive")
        if self.scheme not in ("euler", "milstein"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.defect_target not in ("zp", "z"):
            raise ConfigError(f"unknown defect target {self.defect_target!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


def _parse_expr(text: str, section: str, option: str):
    try:
        return exprlang.parse(text)
    except exprlang.ExprSyntaxError as err:
        raise ConfigError(f"bad expression {text!r}: {err}", section, option) from err


def _parse_endpoint(text: str):
    t = text.strip().lower()
    if t in ("inf", "+inf", "infinity"):
        return math.inf
    if t in ("-inf", "-infinity"):
        return -math.inf
    try:
        return float(t)
    except ValueError as err:
        raise ConfigError(f"bad interval endpoint {text!r}", "model", "interval") from err


def _get(cp, section, option, default=None, required=False):
    if cp.has_option(section, option):
        return cp.get(section, option).strip()
    if required:
        raise ConfigError("missing required option", section, option)
    return default


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as err:
        raise ConfigError(str(err)) from err
    if not cp.has_section("model"):
        raise ConfigError("missing [model] section")

    mtype = _get(cp, "model", "type", required=True).lower()
    interval_text = _get(cp, "model", "interval", default="0, inf" if mtype == "switching" else "-inf, inf")
    parts = [p for p in interval_text.split(",") if p.strip()]
    if len(parts) != 2:
        raise ConfigError(f"interval needs two endpoints, got {interval_text!r}", "model", "interval")
    lo, hi = _parse_endpoint(parts[0]), _parse_endpoint(parts[1])
    x0 = _get(cp, "model", "x0")
    interval = StateInterval(lo, hi, float(x0) if x0 is not None else None)
    horizon = float(_get(cp, "model", "horizon", default="1.0"))

    att_items = []
    if cp.has_section("attestations"):
        for key, value in cp.items("attestations"):
            att_items.append((key, value))
    attestations = RegularityAttestation(tuple(att_items))

    if mtype == "switching":
        if not cp.has_section("regimes"):
            raise ConfigError("switching models need a [regimes] section")
        count = int(_get(cp, "regimes", "count", required=True))
        initial = int(_get(cp, "regimes", "initial", default="1"))
        labels_text = _get(cp, "regimes", "labels")
        labels = tuple(s.strip() for s in labels_text.split(",")) if labels_text else None
        if not cp.has_section("q"):
            raise ConfigError("switching models need a [q] section")
        rows = []
        for i in range(1, count + 1):
            row_text = _get(cp, "q", f"row{i}", required=True)
            row = [float(v) for v in row_text.split(",")]
            if len(row) != count:
                raise ConfigError(f"row{i} must have {count} entries", "q", f"row{i}")
            rows.append(row)
        try:
            q = QMatrix(np.asarray(rows))
        except ValueError as err:
            raise ConfigError(str(err), "q") from err
        b, sigma, c = [], [], []
        any_c = any(cp.has_option("coefficients", f"c.{j}") for j in range(1, count + 1))
        for j in range(1, count + 1):
            b.append(_parse_expr(_get(cp, "coefficients", f"b.{j}", default="0"), "coefficients", f"b.{j}"))
            sigma.append(
                _parse_expr(
                    _get(cp, "coefficients", f"sigma.{j}", required=True), "coefficients", f"sigma.{j}"
                )
            )
            if any_c:
                c.append(
                    _parse_expr(
                        _get(cp, "coefficients", f"c.{j}", required=True), "coefficients", f"c.{j}"
                    )
                )
        try:
            model: MarketModel = SwitchingModel(
                regimes=RegimeSet(count, initial, labels),
                q=q,
                b=tuple(b),
                sigma=tuple(sigma),
                c=tuple(c) if any_c else None,
                interval=interval,
                p0=float(_get(cp, "model", "p0", default="1.0")),
                horizon=horizon,
                attestations=attestations,
            )
        except ValueError as err:
            raise ConfigError(str(err), "model") from err
    elif mtype in ("ito_exponential", "ito"):
        def opt_expr(name):
            text_val = _get(cp, "coefficients", name)
            return None if text_val is None else _parse_expr(text_val, "coefficients", name)

        upper_a = opt_expr("upper_a")
        if upper_a is None:
            raise ConfigError("envelope models need coefficients/upper_a", "coefficients", "upper_a")
        try:
            model = ItoEnvelopeModel(
                upper_a=upper_a,
                lower_a=opt_expr("lower_a"),
                upper_u=opt_expr("upper_u"),
                lower_u=opt_expr("lower_u"),
                zeta=opt_expr("zeta") or exprlang.Num(1.0),
                interval=interval,
                s0=float(_get(cp, "model", "s0", default="0.0")),
                horizon=horizon,
                attestations=attestations,
            )
        except ValueError as err:
            raise ConfigError(str(err), "model") from err
    else:
        raise ConfigError(f"unknown model type {mtype!r}", "model", "type")

    def run_get(option, default=None):
        return _get(cp, "run", option, default=default) if cp.has_section("run") else default

    tilt_text = run_get("tilt_f")
    tilt_f = tuple(float(v) for v in tilt_text.split(",")) if tilt_text else None
    dt_text = run_get("dt")
    seed_text = run_get("seed")
    try:
        return RunConfig(
            model=model,
            seed=int(seed_text) if seed_text is not None else None,
            paths=int(run_get("paths", "100000")),
            depth=int(run_get("depth", "40")),
            dt=float(dt_text) if dt_text is not None else None,
            rel_cap=float(run_get("rel_cap", "0.1")),
            scheme=run_get("scheme", "euler").lower(),
            antithetic=run_get("antithetic", "false").lower() in ("true", "1", "yes"),
            workers=int(run_get("workers", "1")),
            deterministic=run_get("deterministic", "false").lower() in ("true", "1", "yes"),
            defect_target=run_get("defect_target", "zp").lower(),
            out=run_get("out"),
            rungs=int(run_get("rungs", "24")),
            cauchy_tol=float(run_get("cauchy_tol", "1e-5")),
            divergence_threshold=float(run_get("m_div", "1e6")),
            tilt_f=tilt_f,
            store_every=int(run_get("store_every", "16")),
            max_paths_dump=int(run_get("max_paths_dump", "100")),
        )
    except ValueError as err:
        raise ConfigError(f"bad run option: {err}", "run") from err


def load_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def _fmt_float(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(float(v))


def dump_config(config: RunConfig) -> str:
    """Canonical text form; parsing it reproduces the model and run options."""
    m = config.model
    out = io.StringIO()
    out.write("[model]\n")
    if isinstance(m, SwitchingModel):
        out.write("type = switching\n")
    else:
        out.write("type = ito_exponential\n")
    out.write(f"interval = {_fmt_float(m.interval.lower)}, {_fmt_float(m.interval.upper)}\n")
    out.write(f"x0 = {_fmt_float(m.interval.x0)}\n")
    if isinstance(m, SwitchingModel):
        out.write(f"p0 = {_fmt_float(m.p0)}\n")
    else:
        out.write(f"s0 = {_fmt_float(m.s0)}\n")
    out.write(f"horizon = {_fmt_float(m.horizon)}\n\n")

    if isinstance(m, SwitchingModel):
        out.write("[regimes]\n")
        out.write(f"count = {m.regimes.count}\n")
        out.write(f"initial = {m.regimes.initial}\n")
        if m.regimes.labels:
            out.write(f"labels = {', '.join(m.regimes.labels)}\n")
        out.write("\n[q]\n")
        for i, row in enumerate(m.q.entries, start=1):
            out.write(f"row{i} = {', '.join(_fmt_float(v) for v in row)}\n")
        out.write("\n[coefficients]\n")
        for j in range(m.regimes.count):
            out.write(f"b.{j + 1} = {exprlang.pretty(m.b[j])}\n")
        for j in range(m.regimes.count):
            out.write(f"sigma.{j + 1} = {exprlang.pretty(m.sigma[j])}\n")
        if not m.c_is_default:
            for j in range(m.regimes.count):
                out.write(f"c.{j + 1} = {exprlang.pretty(m.c[j])}\n")
    else:
        out.write("[coefficients]\n")
        out.write(f"upper_a = {exprlang.pretty(m.upper_a)}\n")
        if m.lower_a is not None:
            out.write(f"lower_a = {exprlang.pretty(m.lower_a)}\n")
        if m.upper_u is not None:
            out.write(f"upper_u = {exprlang.pretty(m.upper_u)}\n")
        if m.lower_u is not None:
            out.write(f"lower_u = {exprlang.pretty(m.lower_u)}\n")
        out.write(f"zeta = {exprlang.pretty(m.zeta)}\n")

    if m.attestations.flags:
        out.write("\n[attestations]\n")
        for name, value in m.attestations.flags:
            out.write(f"{name} = {value.value}\n")

    out.write("\n[run]\n")
    if config.seed is not None:
        out.write(f"seed = {config.seed}\n")
    out.write(f"paths = {config.paths}\n")
    out.write(f"depth = {config.depth}\n")
    if config.dt is not None:
        out.write(f"dt = {_fmt_float(config.dt)}\n")
    out.write(f"rel_cap = {_fmt_float(config.rel_cap)}\n")
    out.write(f"scheme = {config.scheme}\n")
    out.write(f"antithetic = {'true' if config.antithetic else 'false'}\n")
    out.write(f"workers = {config.workers}\n")
    out.write(f"deterministic = {'true' if config.deterministic else 'false'}\n")
    out.write(f"defect_target = {config.defect_target}\n")
    if config.out:
        out.write(f"out = {config.out}\n")
    out.write(f"rungs = {config.rungs}\n")
    out.write(f"cauchy_tol = {_fmt_float(config.cauchy_tol)}\n")
    out.write(f"m_div = {_fmt_float(config.divergence_threshold)}\n")
    if config.tilt_f is not None:
        out.write(f"tilt_f = {', '.join(_fmt_float(v) for v in config.tilt_f)}\n")
    out.write(f"store_every = {config.store_every}\n")
    out.write(f"max_paths_dump = {config.max_paths_dump}\n")
    return out.getvalue()
