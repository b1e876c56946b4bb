"""Command-line front end.

Subcommands::

    arbcheck classify --config model.cfg [--out report.json]
    arbcheck defect   --config model.cfg [--seed N] [--paths N] [--target zp|z]
    arbcheck tilt     --config model.cfg [--verify]
    arbcheck simulate --config model.cfg [--out paths.csv]
    arbcheck validate --config model.cfg

Exit codes: 0 for a fully decided run, 2 when any verdict is inconclusive,
1 on configuration or validation errors.  With ``--deterministic`` reports
carry no timestamps and identical config + seed gives byte-identical output
for any worker count.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
import time

import numpy as np

from . import classify as cls
from . import measure, simkit
from .config import ConfigError, RunConfig, dump_config, load_config
from .exprlang import DomainError, ExprSyntaxError
from .model import ItoEnvelopeModel, SwitchingModel, ValidationError, validate
from .quadtest import LadderConfig
from .simkit import DtPolicy

__all__ = ["main"]


def _ladder_config(cfg: RunConfig) -> LadderConfig:
    return LadderConfig(
        rungs=cfg.rungs,
        cauchy_rel_tol=cfg.cauchy_tol,
        divergence_threshold=cfg.divergence_threshold,
    )


def _dt_policy(cfg: RunConfig) -> DtPolicy:
    return DtPolicy(
        dt=cfg.dt,
        rel_cap=cfg.rel_cap,
        milstein=cfg.scheme == "milstein",
        antithetic=cfg.antithetic,
    )


def _set_workers(n: int):
    import numba

    numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))


def _emit(payload: dict, cfg: RunConfig, out_path, deterministic: bool) -> str:
    if not deterministic:
        payload = dict(payload)
        payload["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def _require_seed(cfg: RunConfig) -> int:
    if cfg.seed is None:
        raise ConfigError("simulation requires an explicit seed ([run] seed or --seed)")
    return cfg.seed


def cmd_validate(cfg: RunConfig, args) -> int:
    report = validate(cfg.model)
    print(report)
    return 0 if report.ok else 1


def cmd_classify(cfg: RunConfig, args) -> int:
    ladder = _ladder_config(cfg)
    if isinstance(cfg.model, SwitchingModel):
        report = cls.classify_switching_market(cfg.model, ladder)
    else:
        report = cls.classify_ito_market(cfg.model, ladder)
    print(report.to_table())
    payload = {"command": "classify", "seed": cfg.seed, "report": report.as_dict()}
    text = _emit(payload, cfg, args.out or cfg.out, cfg.deterministic)
    if args.out or cfg.out:
        print(f"report written to {args.out or cfg.out}")
    return 0 if report.all_decided else 2


def cmd_defect(cfg: RunConfig, args) -> int:
    if not isinstance(cfg.model, SwitchingModel):
        raise ConfigError("defect estimation needs a switching model")
    seed = _require_seed(cfg)
    _set_workers(cfg.workers)
    m = cfg.model
    policy = _dt_policy(cfg)
    target = args.target or cfg.defect_target
    if target == "zp":
        from .model import price_defect_kernel

        kernel = price_defect_kernel(m)
        direct = simkit.martingale_defect_direct(
            m, c=None, n_paths=cfg.paths, seed=seed, dt_policy=policy,
            ladder_depth=cfg.depth, price_weighted=True,
        )
        tilted = simkit.girsanov_tilt(m.with_c(kernel))
    else:
        direct = simkit.martingale_defect_direct(
            m, c=None, n_paths=cfg.paths, seed=seed, dt_policy=policy, ladder_depth=cfg.depth
        )
        tilted = simkit.girsanov_tilt(m)
    explosion = simkit.explosion_probability(
        tilted, ladder_depth=cfg.depth, n_paths=cfg.paths, seed=seed, dt_policy=policy
    )
    dual = explosion.estimate
    gap = abs(direct.mean - dual.mean)
    combined = math.hypot(direct.stderr, dual.stderr)
    warnings = list(direct.metadata.get("warnings", []))
    if combined > 0 and gap > 3.0 * combined:
        warnings.append(
            f"duality gap {gap:.4g} exceeds 3 combined stderr ({3 * combined:.4g})"
        )
    if not explosion.plateaued:
        warnings.extend(explosion.notes)
    print(f"direct defect estimator   E[Z_T] = {direct.mean:.6f} +- {direct.stderr:.6f}")
    print(f"explosion duality         E[Z_T] = {dual.mean:.6f} +- {dual.stderr:.6f}")
    print(f"gap = {gap:.6f} (3 x combined stderr = {3 * combined:.6f})")
    for w in warnings:
        print(f"warning: {w}")
    payload = {
        "command": "defect",
        "seed": seed,
        "target": target,
        "direct": direct.as_dict(),
        "duality": explosion.as_dict(),
        "gap": gap,
        "warnings": warnings,
    }
    _emit(payload, cfg, args.out or cfg.out, cfg.deterministic)
    return 0


def cmd_tilt(cfg: RunConfig, args) -> int:
    if not isinstance(cfg.model, SwitchingModel):
        raise ConfigError("generator tilting needs a switching model")
    f = cfg.tilt_f
    if args.f:
        f = tuple(float(v) for v in args.f.split(","))
    if f is None:
        f = tuple(1.0 for _ in range(cfg.model.n_regimes))
    q_star = measure.tilt_qmatrix(cfg.model.q, np.asarray(f))
    tilted_model = dataclasses.replace(cfg.model, q=q_star)
    tilted_cfg = dataclasses.replace(cfg, model=tilted_model, tilt_f=tuple(f))
    text = dump_config(tilted_cfg)
    print(text, end="")
    if args.out or cfg.out:
        with open(args.out or cfg.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    if args.verify:
        seed = _require_seed(cfg)
        _set_workers(cfg.workers)
        report = measure.verify_tilt_law(cfg.model.q, np.asarray(f), T=cfg.model.horizon,
                                         n_paths=cfg.paths, seed=seed)
        print(report)
        return 0 if report.ok else 2
    return 0


def cmd_simulate(cfg: RunConfig, args) -> int:
    if not isinstance(cfg.model, SwitchingModel):
        raise ConfigError("path simulation needs a switching model")
    seed = _require_seed(cfg)
    _set_workers(cfg.workers)
    n = min(cfg.paths, cfg.max_paths_dump)
    chains = simkit.sample_chain(cfg.model.q, cfg.model.regimes.initial, cfg.model.horizon, n, seed)
    batch = simkit.simulate_switching_sde(
        cfg.model, chains, dt_policy=_dt_policy(cfg), seed=seed,
        ladder_depth=cfg.depth, store_every=cfg.store_every,
    )
    csv = batch.to_csv()
    out = args.out or cfg.out
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(csv)
        print(f"{n} paths x {len(batch.grid)} grid points written to {out}")
    else:
        print(csv, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arbcheck",
        description="No-arbitrage and bubble classification for one-asset "
        "diffusion and regime-switching market models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("classify", cmd_classify),
        ("defect", cmd_defect),
        ("tilt", cmd_tilt),
        ("simulate", cmd_simulate),
        ("validate", cmd_validate),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="model/run configuration file")
        p.add_argument("--out", default=None, help="output path (JSON report or CSV dump)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--paths", type=int, default=None)
        p.add_argument("--depth", type=int, default=None)
        p.add_argument("--dt", type=float, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--deterministic", action="store_true")
        if name == "defect":
            p.add_argument("--target", choices=("zp", "z"), default=None)
        if name == "tilt":
            p.add_argument("--verify", action="store_true")
            p.add_argument("--f", default=None, help="comma-separated tilt weights")
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.paths is not None:
            overrides["paths"] = args.paths
        if args.depth is not None:
            overrides["depth"] = args.depth
        if args.dt is not None:
            overrides["dt"] = args.dt
        if args.workers is not None:
            overrides["workers"] = args.workers
        if args.deterministic:
            overrides["deterministic"] = True
        if overrides:
            cfg = dataclasses.replace(cfg, **overrides)
        return args.func(cfg, args)
    except (ConfigError, ExprSyntaxError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (ValidationError, DomainError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except cls.InternalContradictionError as err:
        print(f"internal contradiction: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
