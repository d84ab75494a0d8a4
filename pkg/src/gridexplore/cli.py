"""Command line entry point: ``gridexplore {train,eval,bench,render,config}``.

Exit codes: 0 ok, 1 usage / configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from gridexplore import config as config_io
from gridexplore.config import ConfigError, RunConfig
from gridexplore.maps import canonical_name, map_text

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("gridexplore")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(args) -> RunConfig:
    cfg = config_io.load(args.config) if args.config else RunConfig()
    changes = {}
    if getattr(args, "mode", None):
        changes["mode"] = args.mode
    if getattr(args, "seed", None) is not None:
        changes["seeds"] = (args.seed,)
    if getattr(args, "out", None):
        changes["output_dir"] = args.out
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        flat = config_io.to_flat(cfg)
        if k not in flat:
            raise ConfigError(f"unknown config key {k!r}")
        flat[k] = v
        cfg = config_io.from_flat(flat)
    return cfg.replace(**changes) if changes else cfg


def _check_map(map_id: str) -> str:
    try:
        map_text(map_id)
    except KeyError:
        raise UsageError(f"unknown map {map_id!r}") from None
    return map_id


def cmd_train(args) -> int:
    from gridexplore.ppo import train

    cfg = _load_config(args)
    root = Path(cfg.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    config_io.save(cfg, root / "config.txt")
    for seed in cfg.seeds:
        out = root / f"seed_{seed}" if len(cfg.seeds) > 1 else root
        result = train(cfg, seed=seed, out_dir=out)
        print(json.dumps(result))
    return EXIT_OK


def cmd_eval(args) -> int:
    from gridexplore.harness import evaluate_maps
    from gridexplore.neuralnet import load_checkpoint
    from gridexplore.policies import GreedyPolicy, SweepPolicy

    cfg = _load_config(args)
    maps = [_check_map(m) for m in args.maps]
    if args.policy == "sweep":
        policy = SweepPolicy()
    else:
        if not args.checkpoint:
            raise UsageError("eval needs --checkpoint unless --policy sweep")
        if not Path(args.checkpoint).is_file():
            raise UsageError(f"checkpoint not found: {args.checkpoint}")
        policy = GreedyPolicy(load_checkpoint(args.checkpoint))
    env_cfgs = {m: cfg.env_config(canonical_name(m) if not Path(m).is_file() else m) for m in maps}
    report = evaluate_maps(policy, env_cfgs, args.episodes, args.seeds)
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval_report.csv").write_text(report.to_csv())
    (out / "eval_summary.csv").write_text(report.summary_csv())
    for map_id, agg in report.aggregates().items():
        print(f"{map_id}: rho {agg['rho_mean']:.4f} ± {agg['rho_std']:.4f}, steps {agg['steps_mean']:.1f} ± {agg['steps_std']:.1f}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from gridexplore.harness import bench

    cfg = _load_config(args)
    _check_map(args.map)
    result = bench(cfg.env_config(canonical_name(args.map) if not Path(args.map).is_file() else args.map), args.steps, args.seed or 0)
    text = json.dumps(result, indent=2)
    print(text)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    return EXIT_OK


def cmd_render(args) -> int:
    from gridexplore.env import read_trace_csv
    from gridexplore.harness import read_pgm, render_trajectory
    from gridexplore.maps import load_builtin

    if not Path(args.trace).is_file():
        raise UsageError(f"trace not found: {args.trace}")
    trace = read_trace_csv(Path(args.trace).read_text())
    if args.belief:
        base = read_pgm(Path(args.belief).read_text())
    else:
        _check_map(args.map)
        base = load_builtin(args.map)
    Path(args.out).write_text(render_trajectory(base, trace, args.scale))
    return EXIT_OK


def cmd_config(args) -> int:
    cfg = _load_config(args)
    sys.stdout.write(config_io.dumps(cfg))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gridexplore", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_help="output directory"):
        sp.add_argument("--config", help="run config file (section.key = value)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--mode", choices=["ccrl", "cl", "flat"])
        sp.add_argument("--out", help=out_help)
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    sp = sub.add_parser("train", help="train with a curriculum")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on maps")
    common(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--maps", nargs="+", default=["test1", "test2", "test3"])
    sp.add_argument("--episodes", type=int, default=20)
    sp.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    sp.add_argument("--policy", choices=["greedy", "sweep"], default="greedy")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("bench", help="measure single-step simulator latency")
    common(sp, "write the JSON report here")
    sp.add_argument("--map", default="level1")
    sp.add_argument("--steps", type=int, default=100_000)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("render", help="draw a trajectory over a map or belief image")
    sp.add_argument("--trace", required=True, help="episode trace CSV")
    sp.add_argument("--map", default="level1")
    sp.add_argument("--belief", help="belief PGM to draw on instead of the ground truth")
    sp.add_argument("--scale", type=int, default=1)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("config", help="print the effective configuration")
    common(sp)
    sp.set_defaults(func=cmd_config)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, FileNotFoundError) as e:
        print(f"gridexplore: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001
        log.exception("runtime failure")
        print(f"gridexplore: runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
