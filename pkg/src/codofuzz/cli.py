"""Command-line front end.

Subcommands:

* ``fuzz``             - run the coverage-guided loop and save a suite
* ``evaluate``         - compute quality metrics for a stored suite
* ``rotate-correlate`` - run the rotation/coverage correlation harness

Run configuration comes from a TOML file with a ``[fuzz]`` table
(engine parameters plus ``seed_per_class``) and an optional
``[transforms]`` table (parameter ranges); every key falls back to the
engine default. Exit codes: 0 on a budget-complete run, 3 when a
transport failure aborted the run (a resumable snapshot is still
written), 1 on any other engine error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .dataio import build_seed_set, load_dataset, load_suite, parse_dataset_arg, save_suite
from .errors import CodofuzzError
from .evaluation import emit_report, rotation_correlation, write_rotation_rows
from .fuzzer import FuzzAborted, FuzzConfig, rng_streams, run_fuzz
from .oracle import connect_oracle

log = logging.getLogger("codofuzz")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ABORTED = 3


def load_config(path: str | None) -> tuple[FuzzConfig, int]:
    """Read (FuzzConfig, seed_per_class) from a TOML file; defaults when
    no file is given."""
    if path is None:
        return FuzzConfig(), 100
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    fuzz_doc = dict(doc.get("fuzz", {}))
    per_class = int(fuzz_doc.pop("seed_per_class", 100))
    if "transforms" in doc:
        fuzz_doc["ranges"] = doc["transforms"]
    return FuzzConfig.from_dict(fuzz_doc), per_class


def cmd_fuzz(args) -> int:
    config, per_class = load_config(args.config)
    with connect_oracle(args.oracle) as oracle:
        source = parse_dataset_arg(args.seeds)
        pool = build_seed_set(
            load_dataset(source),
            oracle,
            per_class,
            rng_streams(config.rng_seed)["seed_selection"],
        )
        log.info("seed pool: %d verified inputs", len(pool))
        try:
            suite, report = run_fuzz(config, pool, oracle)
        except FuzzAborted as err:
            log.error("run aborted: %s", err)
            save_suite(err.suite, args.out, err.report)
            log.info("resumable snapshot written to %s", args.out)
            return EXIT_ABORTED
    save_suite(suite, args.out, report)
    log.info(
        "done: %d iterations, %d accepted, cdc=%.4f kcdc=%.4f -> %s",
        report.iterations, report.accepted, report.final_cdc, report.final_kcdc, args.out,
    )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    suite = load_suite(args.suite)
    metrics = emit_report(suite, args.out)
    print(json.dumps({k: m.to_dict() for k, m in metrics.items()}, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_rotate_correlate(args) -> int:
    degrees = [float(v) for v in args.degrees.split(",")]
    with connect_oracle(args.oracle) as oracle:
        data = list(load_dataset(parse_dataset_arg(args.data)))
        if args.limit:
            data = data[: args.limit]
        rows = rotation_correlation(
            data, oracle, degrees, n_bins=args.bins, cap=args.cap, rng_seed=args.rng_seed
        )
    write_rotation_rows(rows, args.out)
    for row in rows:
        print(
            f"u={row.max_degrees:5.1f}  accuracy={row.accuracy:.4f}  "
            f"selected={row.n_selected}  selected_errors={row.n_selected_errors}  "
            f"cdc={row.cdc_achieved:.4f}"
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="codofuzz",
        description="Black-box coverage-guided fuzzing for probabilistic classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fuzz", help="run the coverage-guided fuzzing loop")
    p.add_argument("--config", help="TOML run configuration", default=None)
    p.add_argument("--seeds", required=True,
                   help="dataset: png dir, idx:<images>,<labels>, or blobs spec json")
    p.add_argument("--oracle", required=True,
                   help="builtin:<model.json>, tcp:<host>:<port>, or cmd:<command>")
    p.add_argument("--out", required=True, help="suite output directory")
    p.set_defaults(func=cmd_fuzz)

    p = sub.add_parser("evaluate", help="compute metrics for a stored suite")
    p.add_argument("--suite", required=True, help="suite directory")
    p.add_argument("--out", required=True, help="report output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("rotate-correlate", help="rotation vs coverage correlation harness")
    p.add_argument("--data", required=True, help="labeled dataset (as for --seeds)")
    p.add_argument("--oracle", required=True, help="oracle descriptor")
    p.add_argument("--degrees", default="0,5,10,15", help="comma-separated max angles")
    p.add_argument("--bins", type=int, default=10, help="confidence bins per class")
    p.add_argument("--cap", type=int, default=20, help="max inputs per cell")
    p.add_argument("--rng-seed", type=int, default=0)
    p.add_argument("--limit", type=int, default=0, help="use at most this many images")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_rotate_correlate)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FuzzAborted:
        return EXIT_ABORTED
    except CodofuzzError as err:
        log.error("%s", err)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
