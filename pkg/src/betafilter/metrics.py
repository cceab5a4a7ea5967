"""Evaluation metrics: NMSE, empirical coverage, predictive MedAE, influence.

Per-dimension definitions, with aggregates taken as the plain mean across
dimensions. NMSE normalises the summed squared estimation error by the summed
squared truth; coverage counts the steps where the truth falls inside the
central 90% band of the particle cloud (5% and 95% weighted quantiles).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .filters import FilterOutput
from .models import GeneralisedLikelihood

#: standard normal 95% quantile, for Gaussian coverage bands
Z_90 = 1.6448536269514722


def nmse(true_states: np.ndarray, estimates: np.ndarray) -> np.ndarray:
    """Per-dimension sum_t (x - xhat)^2 / sum_t x^2; NaN where the truth is identically zero."""
    true_states = np.atleast_2d(np.asarray(true_states, dtype=float))
    estimates = np.atleast_2d(np.asarray(estimates, dtype=float))
    if true_states.shape != estimates.shape:
        raise ConfigurationError(
            f"shape mismatch: truth {true_states.shape} vs estimates {estimates.shape}"
        )
    num = ((true_states - estimates) ** 2).sum(axis=0)
    den = (true_states**2).sum(axis=0)
    out = np.full(true_states.shape[1], np.nan)
    good = den > 0
    out[good] = num[good] / den[good]
    return out


def weighted_quantiles(values: np.ndarray, weights: np.ndarray | None, qs) -> np.ndarray:
    """Step-function quantiles of weighted samples.

    ``values`` has shape (N,) or (N, d); returns shape (len(qs), d). The
    quantile is the smallest sample whose cumulative weight reaches q.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    n, d = values.shape
    qs = np.atleast_1d(np.asarray(qs, dtype=float))
    order = np.argsort(values, axis=0)
    sorted_vals = np.take_along_axis(values, order, axis=0)
    if weights is None:
        cum = (np.arange(1, n + 1) / n)[:, None] * np.ones((1, d))
    else:
        weights = np.asarray(weights, dtype=float)
        cum = np.cumsum(weights[order], axis=0)
        cum /= cum[-1]
    out = np.empty((qs.shape[0], d))
    for j in range(d):
        idx = np.searchsorted(cum[:, j], qs, side="left")
        out[:, j] = sorted_vals[np.minimum(idx, n - 1), j]
    return out


def empirical_coverage(
    true_states: np.ndarray,
    particles,
    weights=None,
    lower: float = 0.05,
    upper: float = 0.95,
) -> np.ndarray:
    """Fraction of steps where each true coordinate lies in the particle quantile band.

    ``particles`` is a sequence of (N, d_x) arrays, one per step; ``weights``
    an optional matching sequence of normalised weights.
    """
    true_states = np.atleast_2d(np.asarray(true_states, dtype=float))
    num_steps, d = true_states.shape
    if len(particles) != num_steps:
        raise ConfigurationError("particle history length does not match the truth")
    hits = np.zeros(d)
    for t in range(num_steps):
        w = None if weights is None else weights[t]
        bands = weighted_quantiles(particles[t], w, (lower, upper))
        hits += (true_states[t] >= bands[0]) & (true_states[t] <= bands[1])
    return hits / num_steps


def coverage_from_intervals(true_states, lows, highs) -> np.ndarray:
    """Coverage given explicit per-step interval bounds (e.g. Gaussian bands)."""
    true_states = np.atleast_2d(np.asarray(true_states, dtype=float))
    lows = np.atleast_2d(np.asarray(lows, dtype=float))
    highs = np.atleast_2d(np.asarray(highs, dtype=float))
    return ((true_states >= lows) & (true_states <= highs)).mean(axis=0)


def predictive_medae(ys, predictive_samples, reduce_draws: str = "single") -> np.ndarray:
    """Median over steps of the absolute error of the predictive draw, per dimension.

    With several stored draws per step, ``single`` (default) scores the first
    draw and ``mean`` averages the absolute errors over draws first.
    """
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    samples = np.asarray(predictive_samples, dtype=float)
    if samples.ndim != 3 or samples.shape[0] != ys.shape[0] or samples.shape[1] < 1:
        raise ConfigurationError("predictive samples must have shape (T, M, d_y) with M >= 1")
    errors = np.abs(samples - ys[:, None, :])
    if reduce_draws == "single":
        per_step = errors[:, 0, :]
    elif reduce_draws == "mean":
        per_step = errors.mean(axis=1)
    else:
        raise ConfigurationError(f"unknown draw reduction {reduce_draws!r}")
    return np.median(per_step, axis=0)


def influence_profile(
    gl: GeneralisedLikelihood,
    standardised_residuals,
    scale: float = 1.0,
    step: float = 1e-5,
) -> np.ndarray:
    """|d/dy log potential| at y = x + d * scale, by central finite differences.

    The observation's pull on the log weight as a function of how many scale
    units it sits from the assumed location. The family must be univariate
    with an identity-like location map.
    """
    if gl.base.obs_dim != 1:
        raise ConfigurationError("influence profile is defined for 1-D likelihoods")
    ds = np.atleast_1d(np.asarray(standardised_residuals, dtype=float))
    x = np.zeros(1)
    h = step * scale
    out = np.empty(ds.shape[0])
    for i, d in enumerate(ds):
        y = d * scale
        hi = gl.log_potential(x, np.array([y + h]))
        lo = gl.log_potential(x, np.array([y - h]))
        out[i] = abs(hi - lo) / (2.0 * h)
    return out


@dataclass
class RunMetrics:
    """All evaluation quantities of one filter on one run."""

    nmse_per_dim: np.ndarray
    coverage_per_dim: np.ndarray
    medae_per_obs_dim: np.ndarray
    ess_min: float
    ess_mean: float

    @property
    def nmse_mean(self) -> float:
        return float(np.nanmean(self.nmse_per_dim))

    @property
    def coverage_mean(self) -> float:
        return float(np.mean(self.coverage_per_dim))

    @property
    def medae_mean(self) -> float:
        return float(np.mean(self.medae_per_obs_dim))


def compute_filter_metrics(
    output: FilterOutput, true_states: np.ndarray, ys: np.ndarray, medae_reduce: str = "single"
) -> RunMetrics:
    """Score a particle filter run against the known truth."""
    particles = [e.states for e in output.ensembles]
    weights = [e.weights for e in output.ensembles]
    return RunMetrics(
        nmse_per_dim=nmse(true_states, output.filtering_means),
        coverage_per_dim=empirical_coverage(true_states, particles, weights),
        medae_per_obs_dim=predictive_medae(ys, output.predictive_samples, medae_reduce),
        ess_min=float(output.ess.min()),
        ess_mean=float(output.ess.mean()),
    )


def compute_gaussian_metrics(
    means: np.ndarray,
    variances: np.ndarray,
    true_states: np.ndarray,
    ys: np.ndarray,
    predictive_samples: np.ndarray,
    medae_reduce: str = "single",
) -> RunMetrics:
    """Score an exact Gaussian filter (or smoother) using its 90% bands."""
    sd = np.sqrt(np.asarray(variances, dtype=float))
    cover = coverage_from_intervals(true_states, means - Z_90 * sd, means + Z_90 * sd)
    return RunMetrics(
        nmse_per_dim=nmse(true_states, means),
        coverage_per_dim=cover,
        medae_per_obs_dim=predictive_medae(ys, predictive_samples, medae_reduce),
        ess_min=float("nan"),
        ess_mean=float("nan"),
    )
