"""Command-line interface.

Three subcommands: ``run`` executes a scenario-grid configuration, ``weights``
prints the closed-form weight matrix for given cell counts, and ``figure``
runs one of the bundled grid configurations.  Exit codes: 0 on success, 2 for
configuration problems, 3 for runtime failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources
from pathlib import Path

from .inference import ncc_weights
from .montecarlo import ConfigError, grid_from_config, run_grid, write_csv, write_json, write_provenance

SEED_ENV_VAR = "NCC_SIM_SEED"
FIGURE_IDS = ("3", "4", "5", "6")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class _CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ncc-sim",
        description="Platform-trial simulation with non-concurrent controls",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a scenario-grid configuration")
    run_p.add_argument("--config", required=True, help="path to a grid configuration JSON")
    _add_run_options(run_p)

    weights_p = sub.add_parser("weights", help="print the weight matrix for given cell counts")
    weights_p.add_argument("n01", type=int, help="control count, period 1")
    weights_p.add_argument("n02", type=int, help="control count, period 2")
    weights_p.add_argument("n11", type=int, help="arm-1 count, period 1")
    weights_p.add_argument("n12", type=int, help="arm-1 count, period 2")

    figure_p = sub.add_parser("figure", help="run a bundled figure-reproduction grid")
    figure_p.add_argument("figure_id", metavar="ID", help="figure number (3, 4, 5, or 6)")
    _add_run_options(figure_p)

    return parser


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--reps", type=int, default=None, help="override the replicate count")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--out", default=None, help="output table path")
    p.add_argument("--workers", type=int, default=1, help="parallel worker count")
    p.add_argument("--format", choices=("csv", "json"), default="csv", help="output format")


def _resolve_seed(doc: dict, override) -> None:
    """Fold the seed into the config: flag, then config value, then env var."""
    if override is not None:
        doc["master_seed"] = int(override)
        return
    if "master_seed" in doc:
        return
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            doc["master_seed"] = int(env)
        except ValueError:
            raise _CliError(EXIT_CONFIG, f"{SEED_ENV_VAR} must be an integer, got {env!r}") from None
        return
    raise _CliError(
        EXIT_CONFIG,
        f"no master seed: pass --seed, set master_seed in the config, or set {SEED_ENV_VAR}",
    )


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise _CliError(EXIT_CONFIG, f"config not found: {path}") from None
    except json.JSONDecodeError as err:
        raise _CliError(EXIT_CONFIG, f"config {path} is not valid JSON: {err}") from None


def _execute(doc: dict, args, default_out: str) -> int:
    if args.reps is not None:
        doc["replicates"] = args.reps
    _resolve_seed(doc, args.seed)
    if args.workers < 1:
        raise _CliError(EXIT_CONFIG, f"--workers must be >= 1, got {args.workers}")
    try:
        grid = grid_from_config(doc)
    except ConfigError as err:
        raise _CliError(EXIT_CONFIG, str(err)) from None

    try:
        summaries = run_grid(grid, workers=args.workers)
    except Exception as err:
        raise _CliError(EXIT_RUNTIME, f"simulation failed: {err}") from None

    out = Path(args.out) if args.out else Path(default_out).with_suffix(f".{args.format}")
    try:
        if args.format == "json":
            write_json(summaries, out)
        else:
            write_csv(summaries, out)
        sidecar = out.with_suffix(".provenance.json")
        write_provenance(doc, out.name, sidecar)
    except OSError as err:
        raise _CliError(EXIT_RUNTIME, f"cannot write output: {err}") from None
    print(f"wrote {out} ({len(summaries)} rows) and {sidecar}")
    return EXIT_OK


def _cmd_run(args) -> int:
    doc = _load_config(args.config)
    default_out = Path(args.config).stem + ".csv"
    return _execute(doc, args, default_out)


def _cmd_weights(args) -> int:
    counts = (args.n01, args.n02, args.n11, args.n12)
    try:
        wm = ncc_weights(*counts)
    except ValueError as err:
        raise _CliError(EXIT_CONFIG, str(err)) from None
    print(f"rho = {wm.rho:.4f}")
    header = f"{'':10s}{'period 1':>10s}{'period 2':>10s}"
    print(header)
    labels = ("control", "arm 1", "arm 2")
    for label, row in zip(labels, wm.weights):
        print(f"{label:10s}{row[0]:>10.4f}{row[1]:>10.4f}")
    return EXIT_OK


def _cmd_figure(args) -> int:
    fid = str(args.figure_id)
    if fid not in FIGURE_IDS:
        raise _CliError(EXIT_CONFIG, f"unknown figure {fid!r}; available: {', '.join(FIGURE_IDS)}")
    ref = resources.files("ncc_sim.configs") / f"figure{fid}.json"
    doc = json.loads(ref.read_text())
    return _execute(doc, args, f"figure{fid}.csv")


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {"run": _cmd_run, "weights": _cmd_weights, "figure": _cmd_figure}
    try:
        return handlers[args.command](args)
    except _CliError as err:
        print(f"ncc-sim: {err}", file=sys.stderr)
        return err.code


if __name__ == "__main__":
    sys.exit(main())
