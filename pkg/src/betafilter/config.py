"""Experiment configuration: a versioned YAML schema with strict validation.

Unknown keys are rejected everywhere; a silent typo in a benchmark
configuration would corrupt comparisons. See README for the full schema.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigurationError
from .selection import DEFAULT_GRID

SCHEMA_VERSION = 1

EXPERIMENTS = ("wiener_velocity", "asymmetric_wiener", "tan", "gp_regression")
FILTER_KINDS = ("kalman", "bpf", "apf")

_TOP_KEYS = {
    "schema",
    "experiment",
    "output_dir",
    "runs",
    "base_seed",
    "data_seed",
    "workers",
    "particles",
    "resampling",
    "ess_threshold",
    "predictive_mode",
    "predictive_samples",
    "write_ess_traces",
    "simulator",
    "filters",
    "smoothing",
    "beta_selection",
    "influence",
}
_SIMULATOR_KEYS = {
    "dt",
    "steps",
    "x0",
    "obs_scale",
    "asymmetric",
    "q_diag",
    "obs_variance",
    "lengthscale",
    "signal_variance",
    "contamination",
}
_CONTAMINATION_KEYS = {"kind", "prob", "scale", "dof"}
_FILTER_KEYS = {"name", "kind", "beta", "likelihood", "stabiliser_fraction"}
_LIKELIHOOD_KEYS = {"kind", "dof", "scale", "sigma_left", "sigma_right"}
_SMOOTHING_KEYS = {"trajectories"}
_SELECTION_KEYS = {"grid", "runs", "tuning_steps", "predictive_samples", "weighting"}
_INFLUENCE_KEYS = {"betas", "student_t_dof", "inflated_scale", "max_residual", "points"}


def _require_keys(mapping: dict, allowed: set, context: str) -> None:
    if not isinstance(mapping, dict):
        raise ConfigurationError(f"{context}: expected a mapping, got {type(mapping).__name__}")
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigurationError(f"{context}: unknown keys {sorted(unknown)}")


@dataclass(frozen=True)
class ContaminationConfig:
    kind: str
    prob: float
    scale: float
    dof: float = 1.0


@dataclass(frozen=True)
class FilterConfig:
    name: str
    kind: str
    beta: float | None = None
    likelihood: object = "model"  # "model" | "oracle" | dict spec
    stabiliser_fraction: float = 0.05

    @property
    def rule(self) -> str:
        return "standard" if self.beta is None else "beta"


@dataclass(frozen=True)
class SelectionSettings:
    grid: tuple = DEFAULT_GRID
    runs: int = 5
    tuning_steps: int | None = None
    predictive_samples: int = 1
    weighting: str = "inverse_median"


@dataclass(frozen=True)
class InfluenceSettings:
    betas: tuple = (0.05, 0.1, 0.2, 0.5)
    student_t_dof: float = 1.0
    inflated_scale: float = 3.0
    max_residual: float = 10.0
    points: int = 201


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    output_dir: str = "results"
    runs: int = 20
    base_seed: int = 0
    data_seed: int = 0
    workers: int | None = None
    particles: int = 1000
    resampling: str = "multinomial"
    ess_threshold: float | None = None
    predictive_mode: str = "mean"
    predictive_samples: int = 1
    write_ess_traces: bool = True
    simulator: dict = field(default_factory=dict)
    filters: tuple = ()
    smoothing_trajectories: int = 1000
    selection: SelectionSettings = field(default_factory=SelectionSettings)
    influence: InfluenceSettings = field(default_factory=InfluenceSettings)


def _parse_contamination(raw) -> ContaminationConfig | None:
    if raw is None:
        return None
    _require_keys(raw, _CONTAMINATION_KEYS, "simulator.contamination")
    kind = raw.get("kind")
    if kind not in ("additive_gaussian", "additive_student_t", "multiplicative_exponential"):
        raise ConfigurationError(f"unknown contamination kind {kind!r}")
    if "prob" not in raw or "scale" not in raw:
        raise ConfigurationError("contamination needs 'prob' and 'scale'")
    prob, scale = float(raw["prob"]), float(raw["scale"])
    if not 0.0 <= prob <= 1.0:
        raise ConfigurationError(f"contamination prob must lie in [0, 1], got {prob}")
    return ContaminationConfig(kind, prob, scale, float(raw.get("dof", 1.0)))


def _parse_filters(raw, experiment: str) -> tuple:
    if not raw:
        raise ConfigurationError("config needs a non-empty 'filters' list")
    out = []
    names = set()
    for i, item in enumerate(raw):
        context = f"filters[{i}]"
        _require_keys(item, _FILTER_KEYS, context)
        kind = item.get("kind")
        if kind not in FILTER_KINDS:
            raise ConfigurationError(f"{context}: unknown filter kind {kind!r}")
        beta = item.get("beta")
        if beta is not None:
            beta = float(beta)
            if not 0.0 < beta < 1.0:
                raise ConfigurationError(f"{context}: beta must lie in (0, 1), got {beta}")
            if kind == "kalman":
                raise ConfigurationError(f"{context}: the Kalman filter has no beta rule")
        likelihood = item.get("likelihood", "model")
        if isinstance(likelihood, dict):
            _require_keys(likelihood, _LIKELIHOOD_KEYS, f"{context}.likelihood")
            if likelihood.get("kind") not in ("student_t", "gaussian", "asymmetric"):
                raise ConfigurationError(
                    f"{context}.likelihood: unknown kind {likelihood.get('kind')!r}"
                )
        elif likelihood not in ("model", "oracle"):
            raise ConfigurationError(f"{context}: unknown likelihood {likelihood!r}")
        default_name = kind if beta is None else f"beta-{kind}-{beta:g}"
        name = str(item.get("name", default_name))
        if name in names:
            raise ConfigurationError(f"{context}: duplicate filter name {name!r}")
        names.add(name)
        out.append(
            FilterConfig(
                name=name,
                kind=kind,
                beta=beta,
                likelihood=likelihood,
                stabiliser_fraction=float(item.get("stabiliser_fraction", 0.05)),
            )
        )
        if kind == "kalman" and experiment in ("tan", "asymmetric_wiener"):
            raise ConfigurationError(f"{context}: exact filtering is unavailable for {experiment}")
    return tuple(out)


def parse_config(raw: dict, *, context: str = "config") -> ExperimentConfig:
    _require_keys(raw, _TOP_KEYS, context)
    if raw.get("schema") != SCHEMA_VERSION:
        raise ConfigurationError(
            f"{context}: schema version must be {SCHEMA_VERSION}, got {raw.get('schema')!r}"
        )
    experiment = raw.get("experiment")
    if experiment not in EXPERIMENTS:
        raise ConfigurationError(f"{context}: unknown experiment {experiment!r}")

    simulator = dict(raw.get("simulator") or {})
    _require_keys(simulator, _SIMULATOR_KEYS, "simulator")
    simulator["contamination"] = _parse_contamination(simulator.get("contamination"))

    smoothing = raw.get("smoothing") or {}
    _require_keys(smoothing, _SMOOTHING_KEYS, "smoothing")

    selection_raw = raw.get("beta_selection") or {}
    _require_keys(selection_raw, _SELECTION_KEYS, "beta_selection")
    selection = SelectionSettings(
        grid=tuple(float(b) for b in selection_raw.get("grid", DEFAULT_GRID)),
        runs=int(selection_raw.get("runs", 5)),
        tuning_steps=(
            int(selection_raw["tuning_steps"])
            if selection_raw.get("tuning_steps") is not None
            else None
        ),
        predictive_samples=int(selection_raw.get("predictive_samples", 1)),
        weighting=str(selection_raw.get("weighting", "inverse_median")),
    )

    influence_raw = raw.get("influence") or {}
    _require_keys(influence_raw, _INFLUENCE_KEYS, "influence")
    influence = InfluenceSettings(
        betas=tuple(float(b) for b in influence_raw.get("betas", (0.05, 0.1, 0.2, 0.5))),
        student_t_dof=float(influence_raw.get("student_t_dof", 1.0)),
        inflated_scale=float(influence_raw.get("inflated_scale", 3.0)),
        max_residual=float(influence_raw.get("max_residual", 10.0)),
        points=int(influence_raw.get("points", 201)),
    )

    runs = int(raw.get("runs", 20))
    if runs < 1:
        raise ConfigurationError("runs must be >= 1")
    workers = raw.get("workers")
    config = ExperimentConfig(
        experiment=experiment,
        output_dir=str(raw.get("output_dir", "results")),
        runs=runs,
        base_seed=int(raw.get("base_seed", 0)),
        data_seed=int(raw.get("data_seed", 0)),
        workers=int(workers) if workers is not None else None,
        particles=int(raw.get("particles", 1000)),
        resampling=str(raw.get("resampling", "multinomial")),
        ess_threshold=(
            float(raw["ess_threshold"]) if raw.get("ess_threshold") is not None else None
        ),
        predictive_mode=str(raw.get("predictive_mode", "mean")),
        predictive_samples=int(raw.get("predictive_samples", 1)),
        write_ess_traces=bool(raw.get("write_ess_traces", True)),
        simulator=simulator,
        filters=_parse_filters(raw.get("filters"), experiment),
        smoothing_trajectories=int(smoothing.get("trajectories", 1000)),
        selection=selection,
        influence=influence,
    )
    return config


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Parse and validate a YAML experiment configuration file."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: invalid YAML ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    if overrides:
        raw = {**raw, **overrides}
    return parse_config(raw, context=str(path))
