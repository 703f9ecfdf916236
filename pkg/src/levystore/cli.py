"""Command-line entry point: ``levystore {simulate,run,verify,scenarios}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .storage_sim import SimulationError, simulate

log = logging.getLogger("levystore")


def _load(args) -> harness.RunConfig:
    if bool(args.config) == bool(args.scenario):
        raise harness.ConfigError("E_USAGE", "", "give exactly one of --config PATH or --scenario NAME")
    if args.scenario:
        reg = harness.registry()
        if args.scenario not in reg:
            raise harness.ConfigError("E_VALUE", "scenario", f"unknown built-in scenario {args.scenario!r}; try 'scenarios list'")
        cfg = harness.parse_config(reg[args.scenario][1])
    else:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise harness.ConfigError("E_USAGE", "", f"cannot read config: {exc}") from None
        cfg = harness.parse_config(text)
    sc = cfg.scenario
    if args.seed_override is not None:
        sc = replace(sc, seed=args.seed_override)
    if getattr(args, "replicas", None) is not None:
        if args.replicas < 1:
            raise harness.ConfigError("E_VALUE", "replicas", "must be ≥ 1")
        cfg = replace(cfg, replicas=args.replicas)
    if getattr(args, "horizon", None) is not None:
        if not args.horizon > 0:
            raise harness.ConfigError("E_VALUE", "scenario.horizon", "must be > 0")
        sc = replace(sc, horizon=args.horizon)
    cfg = replace(cfg, scenario=sc)
    if args.out:
        cfg = replace(cfg, output_dir=args.out)
    return cfg


def _cmd_simulate(args) -> int:
    cfg = _load(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(cfg.replicas if args.all_replicas else 1):
        path = simulate(replace(cfg.scenario, replica=i))
        path.to_csv(out / f"path_{i:03d}.csv")
        path.boundaries_to_csv(out / f"boundaries_{i:03d}.csv")
        print(f"replica {i}: {path.n_pieces} pieces, W(h) = {path.W_left[-1]:.6g}, L(h) = {path.L[-1]:.6g}")
    return 0


def _cmd_run(args) -> int:
    cfg = _load(args)
    result = harness.run(cfg, workers=args.workers, emit_paths=args.emit_paths)
    out = harness.write_outputs(result)
    for c in result.checks:
        where = "" if c.alpha is None else f" alpha={c.alpha:g}"
        print(f"{'PASS' if c.passed else 'FAIL'} {c.criterion}{where}: value={c.value:.6g} "
              f"target={c.target:.6g} tol={c.tolerance:.3g}")
    print(f"wrote {out}")
    return 0 if result.passed else 1


def _cmd_verify(args) -> int:
    code, messages = harness.verify(args.report)
    for m in messages:
        print(m)
    print({0: "all criteria pass", 1: "criteria fail", 2: "malformed report"}[code])
    return code


def _cmd_scenarios(args) -> int:
    reg = harness.registry()
    if args.action == "show":
        if args.name not in reg:
            print(f"unknown scenario {args.name!r}", file=sys.stderr)
            return 2
        print(json.dumps(reg[args.name][1], indent=2))
        return 0
    for name, (desc, _) in reg.items():
        print(f"{name}: {desc}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="levystore", description="Storage processes with server interruptions.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", metavar="PATH", help="JSON run configuration")
        sp.add_argument("--scenario", metavar="NAME", help="built-in scenario instead of --config")
        sp.add_argument("--out", metavar="DIR", help="output directory (overrides output_dir)")
        sp.add_argument("--seed-override", type=int, metavar="N")
        sp.add_argument("--replicas", type=int, metavar="R", help="override the replica count")
        sp.add_argument("--horizon", type=float, metavar="H", help="override the horizon")

    s = sub.add_parser("simulate", help="simulate paths and write path CSVs")
    common(s)
    s.add_argument("--all-replicas", action="store_true", help="write every replica, not just replica 0")
    s.set_defaults(func=_cmd_simulate)

    r = sub.add_parser("run", help="simulate, estimate and check every criterion")
    common(r)
    r.add_argument("--emit-paths", action="store_true", help="also write per-replica path CSVs")
    r.add_argument("--workers", type=int, default=1, help="worker processes for replicas")
    r.set_defaults(func=_cmd_run)

    v = sub.add_parser("verify", help="re-check a written report without simulating")
    v.add_argument("report", help="output directory or summary.json")
    v.set_defaults(func=_cmd_verify)

    sc = sub.add_parser("scenarios", help="built-in scenario registry")
    sc.add_argument("action", choices=["list", "show"])
    sc.add_argument("name", nargs="?")
    sc.set_defaults(func=_cmd_scenarios)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except harness.ConfigError as exc:
        print(f"error [{exc.code}] {exc}", file=sys.stderr)
        return 2
    except SimulationError as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
