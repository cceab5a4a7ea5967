"""Command-line interface.

Subcommands: ``simulate`` (write a benchmark dataset), ``run`` (execute a
multi-run benchmark), ``select-beta`` (grid search for the robustness
parameter), ``gp-smooth`` (smooth an external sensor CSV), ``influence``
(weight-influence profiles). Exit codes: 0 success, 1 configuration error,
2 runtime/numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from . import rng as rngmod
from .config import load_config
from .errors import ConfigurationError, DegenerateWeightsError, NumericalError
from .experiments import (
    build_context,
    gp_smooth,
    influence_table,
    run_beta_selection,
    run_experiment,
    shared_states,
)
from .io import ingest_csv, write_csv, write_dataset_csv
from .simulators import draw_observations


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="betafilter", description="Robust generalised-Bayes particle filtering benchmarks."
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="YAML experiment configuration")
        p.add_argument("--seed", type=int, default=None, help="override base_seed")
        p.add_argument("--output-dir", default=None, help="override output_dir")

    p_sim = sub.add_parser("simulate", help="simulate one dataset and write it as CSV")
    common(p_sim)
    p_sim.add_argument("--run", type=int, default=0, help="run index for the observation draw")
    p_sim.add_argument("--output", default=None, help="dataset file (default <output_dir>/dataset.csv)")

    p_run = sub.add_parser("run", help="run the configured multi-run benchmark")
    common(p_run)
    p_run.add_argument("--workers", type=int, default=None, help="override worker count")

    p_sel = sub.add_parser("select-beta", help="predictive grid search for beta")
    common(p_sel)

    p_gp = sub.add_parser("gp-smooth", help="smooth a sensor CSV with the GP pipelines")
    common(p_gp)
    p_gp.add_argument("--data", required=True, help="input CSV file")
    p_gp.add_argument("--time-column", default="t")
    p_gp.add_argument("--value-column", default="v")
    p_gp.add_argument("--truth-column", default=None)

    p_inf = sub.add_parser("influence", help="write weight-influence profiles")
    common(p_inf)
    p_inf.add_argument("--output", default=None, help="profile file (default <output_dir>/influence.csv)")
    return parser


def _load(args):
    overrides = {}
    if args.seed is not None:
        overrides["base_seed"] = args.seed
    config = load_config(args.config, overrides)
    if getattr(args, "workers", None) is not None:
        config = type(config)(**{**config.__dict__, "workers": args.workers})
    if args.output_dir is not None:
        config = type(config)(**{**config.__dict__, "output_dir": args.output_dir})
    return config


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    try:
        config = _load(args)
        if args.command == "simulate":
            ctx = build_context(config)
            states = shared_states(ctx)
            seed = rngmod.derive_seed(config.data_seed, rngmod.NS_DATA, args.run)
            dataset = draw_observations(states, ctx.model.likelihood, ctx.contamination, seed)
            target = args.output or str(Path(config.output_dir) / "dataset.csv")
            write_dataset_csv(target, dataset.states, dataset.observations, dataset.flags)
            print(target)
        elif args.command == "run":
            result = run_experiment(config)
            print(result.output_dir / "metrics.csv")
        elif args.command == "select-beta":
            result = run_beta_selection(config)
            print(result.selected_beta)
        elif args.command == "gp-smooth":
            series = ingest_csv(args.data, args.time_column, args.value_column, args.truth_column)
            gp_smooth(config, series)
            print(Path(config.output_dir) / "smoothed.csv")
        elif args.command == "influence":
            rows = influence_table(config)
            target = args.output or str(Path(config.output_dir) / "influence.csv")
            write_csv(target, ("rule", "residual", "influence"), rows)
            print(target)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except (DegenerateWeightsError, NumericalError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
