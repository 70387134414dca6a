"""Command-line driver.

    popsynth --config run.yaml run
    popsynth --config run.yaml sample --seed 3 --n 1000
    popsynth inspect out/model.json --dot model.dot
    popsynth scenario toy scenarios/toy
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import traceback
from pathlib import Path

from .bayesnet import ModelFormatError, read_model
from .pipeline import STAGES, ConfigError, Pipeline, StageDependencyError, load_config

ENV_CONFIG = "POPSYNTH_CONFIG"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_DEPENDENCY = 3


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS lets the flags go before or after the subcommand
    S = argparse.SUPPRESS
    common.add_argument("--config", default=S, help=f"pipeline config (default: ${ENV_CONFIG})")
    common.add_argument("--seed", type=int, default=S, help="override the sampling seed")
    common.add_argument("--n", type=int, default=S, help="override the population size")
    common.add_argument("--out", default=S, help="override the output directory")
    verb = common.add_mutually_exclusive_group()
    verb.add_argument("--quiet", action="store_true", default=S)
    verb.add_argument("--verbose", action="store_true", default=S)

    p = argparse.ArgumentParser(prog="popsynth", parents=[common],
                                description="Bayesian-network population synthesis")
    sub = p.add_subparsers(dest="command", required=True)
    for name in STAGES:
        sub.add_parser(name, parents=[common], help=f"run the {name} stage")
    run = sub.add_parser("run", parents=[common], help="run stages in order")
    run.add_argument("--stage", choices=("all",) + STAGES, default="all")
    ins = sub.add_parser("inspect", parents=[common], help="summarize a model file")
    ins.add_argument("model")
    ins.add_argument("--dot", default=None, help="write a Graphviz description here")
    sc = sub.add_parser("scenario", parents=[common], help="write a bundled synthetic scenario")
    sc.add_argument("name", choices=("toy", "barcelona"))
    sc.add_argument("dest")
    return p


def _error(kind: str, exc: BaseException, code: int) -> int:
    where = None
    tb = traceback.extract_tb(exc.__traceback__)
    if tb:
        f = tb[-1]
        where = f"{Path(f.filename).name}:{f.lineno} in {f.name}"
    doc = {"error": kind, "type": type(exc).__name__, "message": str(exc), "location": where}
    print(json.dumps(doc), file=sys.stderr)
    return code


def _pipeline(args) -> Pipeline:
    path = args.config or os.environ.get(ENV_CONFIG)
    if not path:
        raise ConfigError(f"no config given (use --config or set {ENV_CONFIG})")
    cfg = load_config(path).with_overrides(args.seed, args.n, args.out)
    return Pipeline(cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for k in ("config", "seed", "n", "out"):
        setattr(args, k, getattr(args, k, None))
    for k in ("quiet", "verbose"):
        setattr(args, k, getattr(args, k, False))
    level = logging.WARNING if args.quiet else logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "inspect":
            from .summary import inspect_model, to_dot
            net = read_model(args.model)
            print(inspect_model(net).text(), end="")
            if args.dot:
                Path(args.dot).write_text(to_dot(net), encoding="utf-8")
            return EXIT_OK
        if args.command == "scenario":
            from .scenario import write_scenario
            cfg = write_scenario(args.name, args.dest)
            if not args.quiet:
                print(cfg)
            return EXIT_OK
        pipe = _pipeline(args)
        stage = args.stage if args.command == "run" else args.command
        result = pipe.run(stage)
        if not args.quiet:
            print(json.dumps(result, sort_keys=True))
        return EXIT_OK
    except StageDependencyError as exc:
        return _error("stage_dependency", exc, EXIT_DEPENDENCY)
    except ConfigError as exc:
        return _error("config", exc, EXIT_CONFIG)
    except ModelFormatError as exc:
        return _error("model_format", exc, EXIT_ERROR)
    except (ValueError, RuntimeError, OSError, KeyError) as exc:
        return _error("runtime", exc, EXIT_ERROR)


if __name__ == "__main__":
    sys.exit(main())
