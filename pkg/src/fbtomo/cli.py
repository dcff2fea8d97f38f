"""Command-line driver.

Verbs:

    simulate     render the phantom and write raw/preprocessed sinograms
    reconstruct  simulate (or load) data and run the configured methods
    compare      reconstruct plus the metrics table (full pipeline)
    report       print the metrics table of a finished run directory
    cache-model  build the forward operator and write it to a cache file

Exit codes: 0 success, 1 validation or format error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import apply_overrides, validate_config
from .errors import BuildError, DomainError, FbtomoError, FormatError, \
    ParameterError, ShapeError
from .pipeline import ALL_STAGES, STAGE_RECONSTRUCT, STAGE_SIMULATE, \
    load_report, make_geometry, obtain_model, run

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2


def _add_config_arguments(parser):
    parser.add_argument("--config", required=True,
                        help="path to the JSON pipeline config")
    parser.add_argument("--set", dest="overrides", action="append",
                        default=[], metavar="KEY.PATH=VALUE",
                        help="override a config entry, e.g. "
                             "--set solver.max_iters=40")
    parser.add_argument("--out", default=None,
                        help="output directory (overrides output.directory)")


def _load(args):
    raw = json.loads(Path(args.config).read_text())
    raw = apply_overrides(raw, args.overrides)
    return validate_config(raw)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fbtomo",
        description="Frequency-band model-based tomographic reconstruction")
    sub = parser.add_subparsers(dest="verb", required=True)

    for verb, help_text in (
            ("simulate", "generate phantom data only"),
            ("reconstruct", "run the configured reconstruction methods"),
            ("compare", "reconstruct and evaluate all metrics")):
        p = sub.add_parser(verb, help=help_text)
        _add_config_arguments(p)

    p = sub.add_parser("report", help="print the metrics of a finished run")
    p.add_argument("directory", help="artifact directory of a previous run")

    p = sub.add_parser("cache-model", help="build and store the operator")
    p.add_argument("--config", required=True)
    p.add_argument("--set", dest="overrides", action="append", default=[])
    p.add_argument("--out", required=True, help="model cache file to write")

    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except (ParameterError, FormatError, ShapeError, DomainError,
            BuildError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FbtomoError, ArithmeticError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def _dispatch(args) -> int:
    if args.verb == "report":
        info = load_report(args.directory)
        print(info["metrics_text"] or "(no metrics were computed)")
        print(f"code version: {info['manifest']['code_version']}")
        return EXIT_OK

    if args.verb == "cache-model":
        cfg = _load(args)
        cfg.model_cache = args.out
        grid, array, timing = make_geometry(cfg)
        model = obtain_model(cfg, grid, array, timing)
        print(f"model cached: {model.shape[0]} x {model.shape[1]}, "
              f"{model.nnz} nonzeros -> {args.out}")
        return EXIT_OK

    cfg = _load(args)
    stages = {"simulate": (STAGE_SIMULATE,),
              "reconstruct": (STAGE_SIMULATE, STAGE_RECONSTRUCT),
              "compare": ALL_STAGES}[args.verb]
    out = run(cfg, output_dir=args.out, stages=stages)
    print(f"artifacts written to {out}")
    if args.verb == "compare":
        print(load_report(out)["metrics_text"])
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
