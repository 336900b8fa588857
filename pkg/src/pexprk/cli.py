"""Command-line interface.

    pexprk run          convergence study on the reaction-diffusion benchmark
    pexprk check-order  stiff order-condition residuals for a catalog method
    pexprk dump-tableau coefficient expressions in stable text form

Exit codes: 0 on success, 2 for configuration errors, 3 for numerical
failures (reference gate violation or a study with no surviving rows).
"""

import argparse
import json
import sys

from .harness import (
    ConfigError,
    NumericalFailure,
    RunConfig,
    emit_csv,
    run_convergence_study,
)
from .tableaux import check_order_conditions, dump_tableau, tableau, transformed

_UNSET = object()


def _parse_pair(text: str, what: str, cast):
    parts = text.split(":")
    if len(parts) != 2:
        raise ConfigError(f"expected '{what}' as two values separated by ':', got {text!r}")
    try:
        return cast(parts[0]), cast(parts[1])
    except ValueError as exc:
        raise ConfigError(f"bad {what} {text!r}: {exc}") from exc


def _parse_steps(text: str):
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad step list {text!r}: {exc}") from exc


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pexprk", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a convergence study and emit CSV")
    run.add_argument("--config", help="JSON file mirroring the flags; flags override it")
    run.add_argument("--problem", default=_UNSET)
    run.add_argument("--grid", type=int, default=_UNSET)
    run.add_argument("--partition", default=_UNSET,
                     choices=["none", "species", "space", "physics", "imex"])
    run.add_argument("--order", type=int, default=_UNSET, choices=[2, 3, 4])
    run.add_argument("--form", default=_UNSET, choices=["orig", "tran", "part"])
    run.add_argument("--jacobian", default=_UNSET, choices=["full", "block"])
    run.add_argument("--tspan", default=_UNSET, help="t0:tf")
    run.add_argument("--steps-pow2", default=_UNSET, help="j0:j1 for h = (tf-t0) * 2^-j")
    run.add_argument("--steps", default=_UNSET, help="explicit comma-separated step counts")
    run.add_argument("--krylov-tol", type=float, default=_UNSET)
    run.add_argument("--krylov-mmax", type=int, default=_UNSET)
    run.add_argument("--out", default=_UNSET, help="CSV output path")
    run.add_argument("--paper-scale", action="store_const", const=True, default=_UNSET)
    run.add_argument("--seed", type=int, default=_UNSET)

    check = sub.add_parser("check-order", help="stiff order-condition residuals")
    check.add_argument("--order", type=int, required=True, choices=[2, 3, 4])
    check.add_argument("--size", type=int, default=6)
    check.add_argument("--seed", type=int, default=0)
    check.add_argument("--up-to", type=int, default=None, choices=[1, 2, 3, 4])

    dump = sub.add_parser("dump-tableau", help="print a method's coefficients")
    dump.add_argument("--order", type=int, required=True, choices=[2, 3, 4])
    dump.add_argument("--transformed", action="store_true")

    return parser


def _config_from_args(args) -> RunConfig:
    values = {}
    if args.config:
        try:
            with open(args.config) as handle:
                raw = json.load(handle)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {args.config!r}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        values.update({key.replace("-", "_"): value for key, value in raw.items()})

    flag_names = [
        "problem", "grid", "partition", "order", "form", "jacobian", "tspan",
        "steps_pow2", "steps", "krylov_tol", "krylov_mmax", "out", "paper_scale", "seed",
    ]
    for name in flag_names:
        value = getattr(args, name)
        if value is not _UNSET:
            values[name] = value

    cfg = RunConfig()
    for key, value in values.items():
        if key == "tspan":
            cfg.t0, cfg.tf = _parse_pair(str(value), "tspan", float)
        elif key == "steps_pow2":
            cfg.steps_pow2 = _parse_pair(str(value), "steps-pow2", int)
        elif key == "steps":
            cfg.steps = _parse_steps(value) if isinstance(value, str) else tuple(value)
        elif key in ("t0", "tf"):
            setattr(cfg, key, float(value))
        elif hasattr(cfg, key):
            setattr(cfg, key, value)
        else:
            raise ConfigError(f"unknown configuration key {key!r}")
    cfg.validate()
    return cfg


def _cmd_run(args) -> int:
    cfg = _config_from_args(args)
    print(f"# {cfg.label()} on {cfg.problem}, grid {cfg.grid}, partition {cfg.partition}")
    result = run_convergence_study(cfg)
    print(f"# reference gap {result.reference.gap:.3e} over {result.reference.n_steps} steps")
    print(f"{'h':>12} {'error_l2':>14} {'order':>7} {'matvecs':>9} {'krylov':>9} {'ms':>9}")
    for row in result.rows:
        order = f"{row.observed_order:7.3f}" if row.observed_order is not None else "      -"
        if row.failed:
            print(f"{row.h:12.6f} {'failed':>14} {'-':>7}   ({row.message})")
        else:
            print(
                f"{row.h:12.6f} {row.error_l2:14.6e} {order} "
                f"{row.matvecs:9d} {row.krylov_dims:9d} {row.wall_ms:9.1f}"
            )
    if cfg.out:
        emit_csv(result.rows, result.metadata, cfg.out)
        print(f"# wrote {cfg.out}")
    return 0


def _cmd_check_order(args) -> int:
    t = tableau(args.order)
    up_to = args.up_to if args.up_to is not None else t.design_order
    residuals = check_order_conditions(t, up_to=up_to, n=args.size, seed=args.seed)
    print(f"# stiff order-condition residuals, order-{args.order} method, "
          f"size {args.size}, seed {args.seed}")
    for label, value in residuals.items():
        print(f"condition {label:>2}: {value:.6e}")
    return 0


def _cmd_dump(args) -> int:
    t = transformed(args.order) if args.transformed else tableau(args.order)
    sys.stdout.write(dump_tableau(t))
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "check-order":
            return _cmd_check_order(args)
        if args.command == "dump-tableau":
            return _cmd_dump(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
