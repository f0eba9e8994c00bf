"""Command line entry point: ``hjbvi VERB --config PATH [--out DIR] [--threads N] [--override KEY=VALUE]``.

Exit codes: 0 ok, 2 configuration error, 3 numerical failure, 4 acceptance failure.
"""

import argparse
import logging
import os
import sys

from . import acceptance, pipeline
from .config import ConfigError, load_config
from .dataset import DatasetFormatError
from .diffusion import BlowUpError, NonFiniteDriftError, set_num_threads
from .rewards import RewardBoundError
from .solver import SolverError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_ACCEPTANCE = 0, 2, 3, 4

log = logging.getLogger("hjbvi")


def cmd_generate(cfg, out):
    path = pipeline.run_generate(cfg, out)
    print(path)
    return EXIT_OK


def cmd_fit(cfg, out, dataset=None):
    dataset = dataset or os.path.join(out, pipeline.DATASET_FILE)
    if not os.path.exists(dataset):
        raise ConfigError(f"dataset file {dataset} not found; run 'generate' first or pass --dataset")
    path, report = pipeline.run_fit(cfg, dataset, out)
    print(f"{path} ({report.iterations_run} iterations, converged={report.converged})")
    return EXIT_OK


def cmd_oracle(cfg, out):
    path, table = pipeline.run_oracle(cfg, out)
    for row in table["rows"]:
        print(f"t={row['t']:g} x={row['x']} f*={row['f']:.6g} +- {row['stderr']:.2g} grad={row['grad']}")
    print(path)
    return EXIT_OK


def cmd_evaluate(cfg, out, model=None, dataset=None):
    model = model or os.path.join(out, pipeline.MODEL_FILE)
    if not os.path.exists(model):
        raise ConfigError(f"model file {model} not found; run 'fit' first or pass --model")
    if dataset is None:
        candidate = os.path.join(out, pipeline.DATASET_FILE)
        dataset = candidate if os.path.exists(candidate) else None
    path, report = pipeline.run_evaluate(cfg, model, out, dataset)
    print(f"J_hat={report['J_hat']:.6g} +- {report['stderr']:.2g}")
    print(path)
    return EXIT_OK


def cmd_mirror_descent(cfg, out, steps=None):
    for path in pipeline.run_mirror_descent(cfg, out, steps):
        print(path)
    return EXIT_OK


def cmd_suite(cfg, out):
    """Run the acceptance battery and write the pipeline artifacts; 0 iff every criterion passes."""
    os.makedirs(out, exist_ok=True)
    dataset = pipeline.run_generate(cfg, out)
    model, _ = pipeline.run_fit(cfg, dataset, out)
    pipeline.run_evaluate(cfg, model, out, dataset)
    results = acceptance.run_battery(cfg, echo=print)
    acceptance.write_suite_report(results, os.path.join(out, "suite_report.json"),
                                  pipeline.provenance(cfg, {"dataset": dataset, "model": model}))
    return EXIT_OK if all(r.passed for r in results) else EXIT_ACCEPTANCE


def build_parser():
    parser = argparse.ArgumentParser(prog="hjbvi", description="Variational-inequality value fitting for "
                                     "KL-regularized diffusion control.")
    parser.add_argument("verb", choices=["generate", "fit", "oracle", "evaluate", "mirror-descent", "suite"])
    parser.add_argument("--config", help="experiment JSON (default: the bundled OU suite config)")
    parser.add_argument("--out", help="output directory (default: outputs.directory from the config)")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for path simulation")
    parser.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted config override, value parsed as JSON when possible; repeatable")
    parser.add_argument("--dataset", help="dataset file for fit/evaluate")
    parser.add_argument("--model", help="model file for evaluate")
    parser.add_argument("--steps", type=int, help="mirror-descent rounds (overrides the config)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        set_num_threads(args.threads)
        cfg = load_config(args.config or acceptance.bundled_config_path(), args.override)
        out = args.out or cfg.outputs.directory
        verb = args.verb
        if verb == "generate":
            return cmd_generate(cfg, out)
        if verb == "fit":
            return cmd_fit(cfg, out, args.dataset)
        if verb == "oracle":
            return cmd_oracle(cfg, out)
        if verb == "evaluate":
            return cmd_evaluate(cfg, out, args.model, args.dataset)
        if verb == "mirror-descent":
            return cmd_mirror_descent(cfg, out, args.steps)
        return cmd_suite(cfg, out)
    except (ConfigError, DatasetFormatError, RewardBoundError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BlowUpError, NonFiniteDriftError, SolverError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
