"""Command line entry point: ``mmwpose run|validate|scene <config>``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .errors import ConfigError, MmwPoseError
from .harness import PARAM_DEFAULTS, load_config, run_experiment, scene_for, write_outputs


def _apply_overrides(cfg, args):
    if args.seed is not None:
        cfg.seed = args.seed
    if args.trials is not None:
        cfg.trials = args.trials
    if args.threads is not None:
        cfg.threads = args.threads
    if args.out is not None and args.command == "run":
        cfg.output = args.out
    return cfg.validate()


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmwpose", description="Monte Carlo pose/SLAM experiments.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("run", "run the experiment and write CSV results"),
        ("validate", "check a config file and print the resolved settings"),
        ("scene", "write the ground-truth scene of the first trial as JSON"),
    ):
        s = sub.add_parser(name, help=help_)
        s.add_argument("config", type=Path)
        s.add_argument("--seed", type=int)
        s.add_argument("--trials", type=int)
        s.add_argument("--out", type=str)
        s.add_argument("--threads", type=int)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        if args.command == "validate":
            print(json.dumps({
                "problem": cfg.problem,
                "sweep": {"param": cfg.sweep_param, "values": cfg.sweep_values},
                "trials": cfg.trials,
                "seed": cfg.seed,
                "sync": cfg.synchronized,
                "los": cfg.los,
                "threads": cfg.threads,
                "output": cfg.output,
                "params": {k: cfg.param(k) for k in sorted(PARAM_DEFAULTS[cfg.problem])},
            }, indent=2))
            return 0
        if args.command == "scene":
            doc = json.dumps(scene_for(cfg), indent=2)
            if args.out:
                Path(args.out).parent.mkdir(parents=True, exist_ok=True)
                Path(args.out).write_text(doc + "\n", encoding="utf-8")
            else:
                print(doc)
            return 0
        if not cfg.output:
            raise ConfigError("no output path; set 'output' or pass --out", field="output")
        start = time.perf_counter()
        result = run_experiment(cfg)
        paths = write_outputs(result, cfg.output)
        for row in result.rmse_table():
            print(f"{row['solver']} {cfg.sweep_param}={row['sweep_value']:g}: "
                  f"RMSE pos {row['rmse_pos_m']:.4g} m, rot {row['rmse_rot_rad']:.4g} rad "
                  f"({row['diverged']}/{row['trials']} diverged)")
        print(f"wrote {', '.join(map(str, paths))} in {time.perf_counter() - start:.1f} s")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MmwPoseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
