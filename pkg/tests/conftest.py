"""Shared fixtures: the desk-scale benchmark runs used by the acceptance suite.

Each benchmark executes the shipped YAML configuration once per session; the
acceptance criteria then assert on the collected metric rows.
"""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np
import pytest

from betafilter.config import load_config
from betafilter.experiments import run_experiment

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


class BenchmarkResult:
    def __init__(self, result, elapsed: float):
        self.result = result
        self.rows = result.rows
        self.elapsed = elapsed

    def per_run(self, filter_name: str, key: str, dim="mean") -> np.ndarray:
        """Metric values across runs for one filter at one dim row."""
        vals = [
            row[key]
            for row in self.rows
            if row["filter"] == filter_name and row["dim"] == dim and row[key] is not None
        ]
        return np.asarray(vals, dtype=float)


def _run(name: str, tmp_path_factory) -> BenchmarkResult:
    config = load_config(CONFIG_DIR / f"{name}.yaml")
    out = tmp_path_factory.mktemp(f"bench_{name}")
    start = time.perf_counter()
    result = run_experiment(config, output_dir=out)
    return BenchmarkResult(result, time.perf_counter() - start)


@pytest.fixture(scope="session")
def wiener_benchmark(tmp_path_factory) -> BenchmarkResult:
    return _run("wiener", tmp_path_factory)


@pytest.fixture(scope="session")
def tan_benchmark(tmp_path_factory) -> BenchmarkResult:
    return _run("tan", tmp_path_factory)


@pytest.fixture(scope="session")
def asymmetric_benchmark(tmp_path_factory) -> BenchmarkResult:
    return _run("asymmetric", tmp_path_factory)


@pytest.fixture(scope="session")
def gp_benchmark(tmp_path_factory) -> BenchmarkResult:
    return _run("gp", tmp_path_factory)
