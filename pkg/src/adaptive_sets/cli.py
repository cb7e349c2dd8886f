"""Command-line experiment runner.

Exit status: 0 on success, 2 on a configuration error, 3 when more than 10% of
repetitions fail.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .harness import (
    BLACK_BOXES,
    METHODS,
    ConfigError,
    CSVFormatError,
    ExperimentConfig,
    coerce_value,
    emit_data,
    emit_report,
    read_config_file,
    run_experiment,
)

log = logging.getLogger("adaptive_sets")

EXIT_CONFIG = 2
EXIT_FAILURES = 3


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="adaptive-sets",
        description="Repeated conformal classification experiments with coverage reports.",
    )
    ap.add_argument("--config", help="key=value file; command-line flags override it")
    src = ap.add_argument_group("data")
    src.add_argument("--data", help="CSV dataset with header x0,...,x{p-1},y")
    src.add_argument("--synthetic", action="store_const", const="true",
                     help="draw multinomial data with inhomogeneous features (default)")
    src.add_argument("--n-train", dest="n_train")
    src.add_argument("--n-test", dest="n_test")
    src.add_argument("--emit-data", dest="emit_data", metavar="PATH",
                     help="also write repetition 0's data rows as CSV")
    m = ap.add_argument_group("method")
    m.add_argument("--method", choices=METHODS)
    m.add_argument("--black-box", dest="black_box", choices=BLACK_BOXES)
    m.add_argument("--alpha")
    m.add_argument("--folds", help="fold count for cv+")
    run = ap.add_argument_group("run")
    run.add_argument("--reps")
    run.add_argument("--seed")
    run.add_argument("--jobs")
    run.add_argument("--output", help="report path (stdout when omitted)")
    run.add_argument("--format", choices=("csv", "json"))
    run.add_argument("--timing", action="store_const", const="true",
                     help="record wall-clock seconds (reports stop being byte-reproducible)")
    run.add_argument("--wsc-delta", dest="wsc_delta")
    run.add_argument("--wsc-directions", dest="wsc_directions")
    run.add_argument("--l2")
    run.add_argument("--max-iter", dest="max_iter")
    run.add_argument("--tol")
    run.add_argument("--knn-k", dest="knn_k")
    run.add_argument("-v", "--verbose", action="store_true")
    return ap


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    values = read_config_file(args.config) if args.config else {}
    for key, raw in vars(args).items():
        if key in ("config", "verbose") or raw is None:
            continue
        values[key] = coerce_value(key, raw)
    return ExperimentConfig(**values)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        config = resolve_config(args)
        if config.emit_data:
            emit_data(config, config.emit_data)
        result = run_experiment(config)
    except (ConfigError, CSVFormatError, FileNotFoundError) as exc:
        print(f"adaptive-sets: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    text = emit_report(result, config.output, config.format)
    if config.output is None:
        sys.stdout.write(text)
    for r in result.repetitions:
        if r.error:
            log.warning("repetition %d failed: %s", r.rep, r.error)
    if result.n_failed > 0.1 * config.reps:
        print(f"adaptive-sets: {result.n_failed} of {config.reps} repetitions failed",
              file=sys.stderr)
        return EXIT_FAILURES
    log.info("summary: %s", result.summary())
    return 0


if __name__ == "__main__":
    sys.exit(main())
