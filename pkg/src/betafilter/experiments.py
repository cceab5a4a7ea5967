"""Benchmark orchestration: multi-run, multi-filter experiments.

Protocol per run: the latent state trajectory is fixed across runs (drawn
once from the data seed), each run redraws observation noise and
contamination, and every filter within a run consumes the identical
observation sequence. Filter randomness derives from ``base_seed`` while all
data randomness derives from ``data_seed``, so exact deterministic baselines
(Kalman rows) do not change when only the filter seed changes.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .config import ExperimentConfig, FilterConfig
from .errors import ConfigurationError, DegenerateWeightsError, NumericalError
from .filters import FilterOutput, FilterSpec, run_apf, run_bpf
from .io import write_csv, write_metrics_csv, write_summary_json
from .kalman import kalman_filter_model, rts_smoother
from .metrics import (
    RunMetrics,
    compute_filter_metrics,
    compute_gaussian_metrics,
    empirical_coverage,
    nmse,
)
from .models import (
    AsymmetricGaussian,
    Gaussian,
    GeneralisedLikelihood,
    LikelihoodFamily,
    NonlinearGaussian,
    StateSpaceModel,
    StudentT,
    _psd_factor,
)
from .selection import BetaSelectionConfig, SelectionResult, select_beta
from .simulators import (
    AdditiveGaussianContamination,
    AdditiveStudentTContamination,
    Dataset,
    GPRegressionConfig,
    MultiplicativeExponentialContamination,
    TANConfig,
    WienerVelocityConfig,
    draw_observations,
    oracle_mixture,
    simulate_states,
    tan_observation_map,
)
from .smoothing import ffbs

log = logging.getLogger(__name__)


def _contamination_spec(cfg):
    if cfg is None:
        return None
    if cfg.kind == "additive_gaussian":
        return AdditiveGaussianContamination(cfg.prob, cfg.scale)
    if cfg.kind == "additive_student_t":
        return AdditiveStudentTContamination(cfg.prob, cfg.dof, cfg.scale)
    return MultiplicativeExponentialContamination(cfg.prob, cfg.scale)


@dataclass
class ExperimentContext:
    """Typed simulator plus the nominal model shared by all filters."""

    config: ExperimentConfig
    sim: object
    model: StateSpaceModel  # prior + transition + nominal (clean) likelihood
    location: object  # observation matrix or map for alternative likelihoods
    obs_dim: int
    contamination: object
    default_obs_scale: float
    base_cov: np.ndarray | None  # nominal Gaussian covariance when one exists
    smoothing: bool


def build_context(config: ExperimentConfig) -> ExperimentContext:
    sim = dict(config.simulator)
    contamination = _contamination_spec(sim.get("contamination"))
    name = config.experiment
    if name in ("wiener_velocity", "asymmetric_wiener"):
        asymmetric = sim.get("asymmetric")
        if name == "asymmetric_wiener":
            asymmetric = tuple(asymmetric) if asymmetric is not None else (1.0, 10.0)
        cfg = WienerVelocityConfig(
            dt=float(sim.get("dt", 0.1)),
            steps=int(sim.get("steps", 1000)),
            x0=tuple(sim.get("x0", (140.0, 140.0, 50.0, 0.0))),
            obs_scale=float(sim.get("obs_scale", 1.0)),
            asymmetric=asymmetric,
            contamination=contamination,
        )
        _, _, H = cfg.matrices()
        nominal = cfg.observation_family()
        base_cov = None if cfg.asymmetric is not None else cfg.obs_scale**2 * np.eye(2)
        return ExperimentContext(
            config, cfg, cfg.model(), H, 2, contamination, cfg.obs_scale, base_cov, False
        )
    if name == "tan":
        cfg = TANConfig(
            dt=float(sim.get("dt", 0.1)),
            steps=int(sim.get("steps", 2000)),
            x0=tuple(sim.get("x0", TANConfig.x0)),
            q_diag=tuple(sim.get("q_diag", TANConfig.q_diag)),
            obs_variance=float(sim.get("obs_variance", 400.0)),
            contamination=contamination,
        )
        h = tan_observation_map(cfg.hub, cfg.dem)
        return ExperimentContext(
            config,
            cfg,
            cfg.model(),
            h,
            2,
            contamination,
            math.sqrt(cfg.obs_variance),
            cfg.obs_variance * np.eye(2),
            False,
        )
    if name == "gp_regression":
        cfg = GPRegressionConfig(
            lengthscale=float(sim.get("lengthscale", 0.03)),
            signal_variance=float(sim.get("signal_variance", 32.0)),
            dt=float(sim.get("dt", 0.005)),
            steps=int(sim.get("steps", 200)),
            obs_variance=float(sim.get("obs_variance", 1.0)),
            contamination=contamination,
        )
        model = cfg.model()
        return ExperimentContext(
            config,
            cfg,
            model,
            model.likelihood.H,
            1,
            contamination,
            math.sqrt(cfg.obs_variance),
            cfg.obs_variance * np.eye(1),
            True,
        )
    raise ConfigurationError(f"unknown experiment {name!r}")


def shared_states(ctx: ExperimentContext) -> np.ndarray:
    """The latent trajectory, fixed across runs; a pure function of the data seed."""
    rng = rngmod.stream(ctx.config.data_seed, 0)
    if ctx.config.experiment == "gp_regression":
        x0 = ctx.model.prior.sample(rng, 1)[0]
    else:
        x0 = np.asarray(ctx.sim.x0, dtype=float)
    A, Q = ctx.model.transition.A, ctx.model.transition.Q
    return simulate_states(A, Q, x0, ctx.sim.steps, rng)


def build_likelihood(ctx: ExperimentContext, fcfg: FilterConfig) -> LikelihoodFamily:
    spec = fcfg.likelihood
    if spec == "model":
        return ctx.model.likelihood
    if spec == "oracle":
        if ctx.base_cov is None:
            raise ConfigurationError("oracle likelihood needs a Gaussian nominal model")
        return oracle_mixture(ctx.base_cov, ctx.contamination, ctx.location)
    kind = spec["kind"]
    if kind == "student_t":
        scale = float(spec.get("scale", ctx.default_obs_scale))
        return StudentT(ctx.location, scale, float(spec.get("dof", 1.0)), obs_dim=ctx.obs_dim)
    if kind == "gaussian":
        scale = float(spec.get("scale", ctx.default_obs_scale))
        cov = scale**2 * np.eye(ctx.obs_dim)
        if callable(ctx.location):
            return NonlinearGaussian(ctx.location, cov, obs_dim=ctx.obs_dim)
        return Gaussian(ctx.location, cov)
    if kind == "asymmetric":
        return AsymmetricGaussian(
            ctx.location,
            float(spec["sigma_left"]),
            float(spec["sigma_right"]),
            obs_dim=ctx.obs_dim,
        )
    raise ConfigurationError(f"unknown likelihood spec {spec!r}")


def _filter_spec(ctx: ExperimentContext, fcfg: FilterConfig) -> FilterSpec:
    cfg = ctx.config
    return FilterSpec(
        num_particles=cfg.particles,
        resampling=cfg.resampling,
        ess_threshold=cfg.ess_threshold,
        apf_stabiliser_fraction=fcfg.stabiliser_fraction,
        predictive_samples=cfg.predictive_samples,
        predictive_mode=cfg.predictive_mode,
        store_history=ctx.smoothing,
    )


def _kalman_predictive(ctx, result, data_seed) -> np.ndarray:
    """Predictive observations for the exact filter.

    ``mean`` mode is the deterministic one-step-ahead forecast H A m_{t-1};
    ``replicate`` draws from the filtered posterior predictive with its
    randomness taken from the data stream, keeping Kalman rows independent
    of the filter seed.
    """
    cfg = ctx.config
    H = ctx.model.likelihood.H
    m = cfg.predictive_samples
    if cfg.predictive_mode == "mean":
        means = np.stack([H @ b.mean for b in result.predicted])
        return np.repeat(means[:, None, :], m, axis=1)
    means = np.stack([H @ b.mean for b in result.filtered])
    rng = rngmod.stream(data_seed, 2)
    residuals = ctx.model.likelihood.sample_residual(rng, m * means.shape[0]).reshape(
        means.shape[0], m, -1
    )
    centres = np.empty_like(residuals)
    for t, belief in enumerate(result.filtered):
        factor = _psd_factor(H @ belief.cov @ H.T)
        centres[t] = means[t] + rng.standard_normal((m, H.shape[0])) @ factor.T
    return centres + residuals


def _run_kalman(ctx, fcfg, dataset, run_idx) -> tuple[RunMetrics, None]:
    data_seed = rngmod.derive_seed(ctx.config.data_seed, rngmod.NS_DATA, run_idx)
    result = kalman_filter_model(ctx.model, dataset.observations)
    predictive = _kalman_predictive(ctx, result, data_seed)
    if ctx.smoothing:
        beliefs = rts_smoother(result, ctx.model.transition.A)
    else:
        beliefs = result.filtered
    means = np.stack([b.mean for b in beliefs])
    variances = np.stack([np.diag(b.cov) for b in beliefs])
    metrics = compute_gaussian_metrics(
        means, variances, dataset.states, dataset.observations, predictive
    )
    return metrics, None


def _run_particle(ctx, fcfg, dataset, run_idx) -> tuple[RunMetrics, FilterOutput]:
    filter_seed = rngmod.derive_seed(ctx.config.base_seed, rngmod.NS_FILTER, run_idx)
    likelihood = build_likelihood(ctx, fcfg)
    gl = (
        GeneralisedLikelihood.standard(likelihood)
        if fcfg.beta is None
        else GeneralisedLikelihood.with_beta(likelihood, fcfg.beta)
    )
    model = StateSpaceModel(ctx.model.prior, ctx.model.transition, likelihood)
    spec = _filter_spec(ctx, fcfg)
    runner = run_apf if fcfg.kind == "apf" else run_bpf
    output = runner(model, gl, spec, dataset.observations, filter_seed)
    if ctx.smoothing:
        trajectories = ffbs(
            output,
            ctx.model.transition,
            ctx.config.smoothing_trajectories,
            rngmod.derive_seed(filter_seed, rngmod.SMOOTHER),
        )
        forward = compute_filter_metrics(output, dataset.states, dataset.observations)
        smoothed_states = trajectories.states  # (M, T, d)
        per_step = [smoothed_states[:, t, :] for t in range(smoothed_states.shape[1])]
        metrics = RunMetrics(
            nmse_per_dim=nmse(dataset.states, trajectories.mean()),
            coverage_per_dim=empirical_coverage(dataset.states, per_step),
            medae_per_obs_dim=forward.medae_per_obs_dim,
            ess_min=forward.ess_min,
            ess_mean=forward.ess_mean,
        )
    else:
        metrics = compute_filter_metrics(output, dataset.states, dataset.observations)
    return metrics, output


def _metric_rows(ctx, fcfg, run_idx, data_seed, metrics: RunMetrics | None) -> list[dict]:
    base = {
        "experiment": ctx.config.experiment,
        "filter": fcfg.name,
        "rule": fcfg.rule,
        "beta": fcfg.beta,
        "run_id": run_idx,
        "seed": data_seed,
    }
    if metrics is None:  # degenerate run: keep the row, leave the scores empty
        return [dict(base, dim="mean", nmse=None, coverage=None, medae=None, min_ess=None, mean_ess=None)]
    rows = []
    d_x = metrics.nmse_per_dim.shape[0]
    d_y = metrics.medae_per_obs_dim.shape[0]
    for j in range(max(d_x, d_y)):
        rows.append(
            dict(
                base,
                dim=j,
                nmse=metrics.nmse_per_dim[j] if j < d_x else None,
                coverage=metrics.coverage_per_dim[j] if j < d_x else None,
                medae=metrics.medae_per_obs_dim[j] if j < d_y else None,
                min_ess=metrics.ess_min,
                mean_ess=metrics.ess_mean,
            )
        )
    rows.append(
        dict(
            base,
            dim="mean",
            nmse=metrics.nmse_mean,
            coverage=metrics.coverage_mean,
            medae=metrics.medae_mean,
            min_ess=metrics.ess_min,
            mean_ess=metrics.ess_mean,
        )
    )
    return rows


def run_single(config: ExperimentConfig, run_idx: int) -> tuple[list[dict], dict]:
    """All filters on one run; returns metric rows and per-filter ESS traces."""
    ctx = build_context(config)
    states = shared_states(ctx)
    data_seed = rngmod.derive_seed(config.data_seed, rngmod.NS_DATA, run_idx)
    dataset = draw_observations(states, ctx.model.likelihood, ctx.contamination, data_seed)
    rows: list[dict] = []
    ess_traces: dict[str, np.ndarray] = {}
    for fcfg in config.filters:
        try:
            if fcfg.kind == "kalman":
                metrics, output = _run_kalman(ctx, fcfg, dataset, run_idx)
            else:
                metrics, output = _run_particle(ctx, fcfg, dataset, run_idx)
        except (DegenerateWeightsError, NumericalError) as exc:
            log.warning("run %d, filter %s failed: %s", run_idx, fcfg.name, exc)
            rows.extend(_metric_rows(ctx, fcfg, run_idx, data_seed, None))
            continue
        rows.extend(_metric_rows(ctx, fcfg, run_idx, data_seed, metrics))
        if output is not None:
            ess_traces[fcfg.name] = output.ess
    return rows, ess_traces


def _star(args):
    return run_single(*args)


@dataclass
class ExperimentResult:
    rows: list[dict]
    summary: dict
    output_dir: Path


def _summarise(config: ExperimentConfig, rows: list[dict]) -> dict:
    summary: dict = {"experiment": config.experiment, "runs": config.runs, "filters": {}}
    for fcfg in config.filters:
        agg = [r for r in rows if r["filter"] == fcfg.name and r["dim"] == "mean"]
        entry: dict = {"failed_runs": sum(1 for r in agg if r["nmse"] is None)}
        for key in ("nmse", "coverage", "medae", "min_ess", "mean_ess"):
            values = np.array(
                [r[key] for r in agg if r[key] is not None and not np.isnan(r[key])], dtype=float
            )
            if values.size:
                q25, q50, q75 = np.percentile(values, (25.0, 50.0, 75.0))
                entry[key] = {"median": float(q50), "iqr": float(q75 - q25)}
        summary["filters"][fcfg.name] = entry
    return summary


def run_experiment(config: ExperimentConfig, output_dir=None) -> ExperimentResult:
    """Execute every run of the configured benchmark and write the artifacts.

    Runs are dispatched to a process pool sized by ``config.workers``; all
    outputs are functions of (config, seeds) only, so the worker count does
    not affect a single byte of them.
    """
    out = Path(output_dir if output_dir is not None else config.output_dir)
    jobs = [(config, r) for r in range(config.runs)]
    if config.workers is None or config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_star, jobs))
    else:
        results = [run_single(*job) for job in jobs]

    rows: list[dict] = []
    ess_rows: list[tuple] = []
    for run_idx, (run_rows, traces) in enumerate(results):
        rows.extend(run_rows)
        for name, trace in traces.items():
            ess_rows.extend((name, run_idx, t + 1, trace[t]) for t in range(trace.shape[0]))

    summary = _summarise(config, rows)
    write_metrics_csv(out / "metrics.csv", rows)
    write_summary_json(out / "summary.json", summary)
    if config.write_ess_traces:
        write_csv(out / "ess_traces.csv", ("filter", "run_id", "t", "ess"), ess_rows)
    return ExperimentResult(rows, summary, out)


# -- beta selection ------------------------------------------------------------------


def tuning_datasets(config: ExperimentConfig) -> list[Dataset]:
    """Fresh short realisations of the configured simulator for beta tuning."""
    ctx = build_context(config)
    steps = config.selection.tuning_steps
    if steps is None:
        steps = max(ctx.sim.steps // 10, 2)
    sim = ctx.sim
    out = []
    A, Q = ctx.model.transition.A, ctx.model.transition.Q
    for r in range(config.selection.runs):
        seed = rngmod.derive_seed(config.data_seed, rngmod.NS_TUNING, r)
        rng = rngmod.stream(seed, 0)
        if config.experiment == "gp_regression":
            x0 = ctx.model.prior.sample(rng, 1)[0]
        else:
            x0 = np.asarray(sim.x0, dtype=float)
        states = simulate_states(A, Q, x0, steps, rng)
        out.append(draw_observations(states, ctx.model.likelihood, ctx.contamination, seed))
    return out


def run_beta_selection(config: ExperimentConfig, output_dir=None) -> SelectionResult:
    ctx = build_context(config)
    datasets = tuning_datasets(config)
    sel = config.selection
    selection_config = BetaSelectionConfig(
        grid=sel.grid,
        predictive_samples=sel.predictive_samples,
        dimension_weighting=sel.weighting,
    )
    spec = FilterSpec(
        num_particles=config.particles,
        resampling=config.resampling,
        ess_threshold=config.ess_threshold,
        predictive_mode=config.predictive_mode,
    )
    kind = "apf" if all(f.kind == "apf" for f in config.filters if f.kind != "kalman") else "bpf"
    result = select_beta(
        ctx.model,
        spec,
        [d.observations for d in datasets],
        selection_config,
        seed=config.base_seed,
        kind=kind,
    )
    out = Path(output_dir if output_dir is not None else config.output_dir)
    write_csv(out / "beta_scores.csv", ("beta", "run_id", "score"), result.score_rows())
    write_summary_json(
        out / "beta_selection.json",
        {
            "selected_beta": result.selected_beta,
            "mode_count": result.mode_count,
            "grid": list(result.grid),
            "per_run_choice": [float(b) for b in result.per_run_choice],
        },
    )
    return result


# -- Gaussian-process smoothing of an external sensor series ---------------------------


def gp_smooth(config: ExperimentConfig, series, output_dir=None) -> dict:
    """Smooth a sensor series with the Matern-5/2 state-space pipelines.

    Runs the exact smoother plus every configured particle filter followed
    by trajectory sampling, writes per-step posterior summaries, and scores
    them against the optional reference column.
    """
    from .io import uniform_step
    from .simulators import build_matern52

    if config.experiment != "gp_regression":
        raise ConfigurationError("gp-smooth needs a gp_regression configuration")
    sim = config.simulator
    dt = uniform_step(series.timestamps)
    state_space = build_matern52(
        float(sim.get("lengthscale", 0.03)), float(sim.get("signal_variance", 32.0)), dt
    )
    obs_variance = float(sim.get("obs_variance", 1.0))
    model = state_space.model(obs_variance)
    ys = np.where(series.mask, series.values, np.nan)[:, None]
    out = Path(output_dir if output_dir is not None else config.output_dir)

    smoothed_rows: list[tuple] = []
    scores: dict = {}

    def record(name: str, mean: np.ndarray, lower: np.ndarray, upper: np.ndarray):
        smoothed_rows.extend(
            (series.timestamps[t], name, mean[t], lower[t], upper[t])
            for t in range(len(series))
        )
        if series.truth is not None:
            scores[name] = {
                "nmse": float(nmse(series.truth[:, None], mean[:, None])[0]),
                "coverage": float(
                    np.mean((series.truth >= lower) & (series.truth <= upper))
                ),
            }

    from .metrics import Z_90

    result = kalman_filter_model(model, ys)
    smoothed = rts_smoother(result, model.transition.A)
    mean = np.array([b.mean[0] for b in smoothed])
    sd = np.sqrt(np.array([b.cov[0, 0] for b in smoothed]))
    record("kalman-rts", mean, mean - Z_90 * sd, mean + Z_90 * sd)

    for fcfg in config.filters:
        if fcfg.kind == "kalman":
            continue  # the exact pipeline always runs
        ctx_spec = FilterSpec(
            num_particles=config.particles,
            resampling=config.resampling,
            ess_threshold=config.ess_threshold,
            apf_stabiliser_fraction=fcfg.stabiliser_fraction,
            predictive_samples=config.predictive_samples,
            predictive_mode=config.predictive_mode,
            store_history=True,
        )
        gl = (
            GeneralisedLikelihood.standard(model.likelihood)
            if fcfg.beta is None
            else GeneralisedLikelihood.with_beta(model.likelihood, fcfg.beta)
        )
        runner = run_apf if fcfg.kind == "apf" else run_bpf
        seed = rngmod.derive_seed(config.base_seed, rngmod.NS_FILTER, 0)
        output = runner(model, gl, ctx_spec, ys, seed)
        trajectories = ffbs(
            output,
            model.transition,
            config.smoothing_trajectories,
            rngmod.derive_seed(seed, rngmod.SMOOTHER),
        )
        signal = trajectories.states[:, :, 0]  # (M, T)
        qs = np.quantile(signal, (0.05, 0.95), axis=0)
        record(f"{fcfg.name}-ffbs", signal.mean(axis=0), qs[0], qs[1])

    write_csv(out / "smoothed.csv", ("t", "filter", "mean", "lower", "upper"), smoothed_rows)
    if scores:
        write_summary_json(out / "gp_metrics.json", scores)
    return scores


# -- influence profiles ------------------------------------------------------------


def influence_table(config: ExperimentConfig) -> list[tuple]:
    """Influence of an observation on the log weight, per weighting rule."""
    from .metrics import influence_profile

    settings = config.influence
    H = np.array([[1.0]])
    ds = np.linspace(0.0, settings.max_residual, settings.points)
    rules = [
        ("gaussian", GeneralisedLikelihood.standard(Gaussian(H, [[1.0]]))),
        (
            f"gaussian-inflated-{settings.inflated_scale:g}",
            GeneralisedLikelihood.standard(Gaussian(H, [[settings.inflated_scale**2]])),
        ),
        (
            f"student-t-{settings.student_t_dof:g}",
            GeneralisedLikelihood.standard(
                StudentT(H, 1.0, settings.student_t_dof)
            ),
        ),
    ]
    rules += [
        (f"beta-{beta:g}", GeneralisedLikelihood.with_beta(Gaussian(H, [[1.0]]), beta))
        for beta in settings.betas
    ]
    rows = []
    for name, gl in rules:
        values = influence_profile(gl, ds, scale=1.0)
        rows.extend((name, d, v) for d, v in zip(ds, values))
    return rows
