"""Command-line interface.

Usage::

    gustpp generate   --config run.json --out run/
    gustpp train      --config run.json --methods emos,qrf --jobs 4
    gustpp predict    --config run.json
    gustpp evaluate   --config run.json
    gustpp compare    --config run.json
    gustpp importance --config run.json
    gustpp all        --config run.json

Flags override the corresponding entries of the JSON configuration.
Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numerical failure.
"""

import argparse
import logging
import sys

from . import pipeline
from .exceptions import ConfigError, DataError, DomainError, ModelKeyError, OptimizationError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

_COMMANDS = ("generate", "train", "predict", "evaluate", "compare", "importance", "all")


def build_parser():
    p = argparse.ArgumentParser(prog="gustpp", description="Postprocessing of ensemble gust forecasts.")
    p.add_argument("command", choices=_COMMANDS)
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--methods", help=f"comma-separated subset of: {','.join(pipeline.METHODS)}")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--jobs", type=int, help="parallel worker processes")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def make_config(args):
    cfg = pipeline.RunConfig.from_json(args.config).__dict__.copy() if args.config else {}
    for key in ("methods", "seed", "out", "jobs"):
        val = getattr(args, key)
        if val is not None:
            cfg[key] = val
    if "scenario" not in cfg and "data" not in cfg and not args.config:
        cfg["scenario"] = {"preset": "nonlinear"}
    return pipeline.RunConfig(**cfg)


def run(command, cfg):
    if command == "generate":
        pipeline.cmd_generate(cfg)
    elif command == "train":
        pipeline.cmd_train(cfg)
    elif command == "predict":
        pipeline.cmd_predict(cfg)
    elif command == "evaluate":
        pipeline.cmd_evaluate(cfg)
    elif command == "compare":
        pipeline.cmd_compare(cfg)
    elif command == "importance":
        pipeline.cmd_importance(cfg)
    else:
        if cfg.data is None:
            pipeline.cmd_generate(cfg)
        split = pipeline.split_cases(cfg, pipeline.load_cases(cfg))
        models = pipeline.cmd_train(cfg, split)
        pipeline.cmd_predict(cfg, split, models)
        pipeline.cmd_evaluate(cfg, split, models)
        if len(cfg.methods) > 1:
            pipeline.cmd_compare(cfg)
        pipeline.cmd_importance(cfg, split, models)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = make_config(args)
        run(args.command, cfg)
    except ConfigError as exc:
        print(f"gustpp: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ModelKeyError, OSError) as exc:
        print(f"gustpp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DomainError, OptimizationError, FloatingPointError) as exc:
        print(f"gustpp: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
