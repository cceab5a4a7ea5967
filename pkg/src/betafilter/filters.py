"""Particle filters with generalised (beta-divergence) weighting.

Implements a generic sequential importance resampling driver, its bootstrap
specialisation (propose from the transition, weight by the potential) and an
auxiliary variant whose first-stage selection is guided by a stabilised
approximation of the predictive potential. All weight arithmetic is carried
in log space and normalised with a max shift.

Randomness is drawn from named substreams of the run seed, one per
(time step, purpose); see :mod:`betafilter.rng`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import rng as rngmod
from .errors import ConfigurationError, DegenerateWeightsError
from .models import GeneralisedLikelihood, StateSpaceModel

RESAMPLING_SCHEMES = ("multinomial", "systematic")
PREDICTIVE_MODES = ("mean", "replicate")


def normalise_log_weights(log_weights: np.ndarray) -> tuple[np.ndarray, float]:
    """Normalise log weights with a max shift.

    Returns the normalised weights and ``log_mean = max + log sum exp(. - max)
    - log N``, the log of the mean unnormalised weight.

    Raises:
        DegenerateWeightsError: if every entry is -inf (or any is NaN).
    """
    log_weights = np.asarray(log_weights, dtype=float)
    if np.isnan(log_weights).any():
        raise DegenerateWeightsError(-1, "NaN log weight encountered")
    m = log_weights.max()
    if m == -np.inf:
        raise DegenerateWeightsError(-1)
    shifted = np.exp(log_weights - m)
    total = shifted.sum()
    return shifted / total, float(m + np.log(total) - np.log(log_weights.shape[0]))


def effective_sample_size(weights: np.ndarray) -> float:
    """Kong-Liu effective sample size 1 / sum(w^2) of normalised weights."""
    weights = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(weights**2))


def resample(weights: np.ndarray, n: int, scheme: str, rng: np.random.Generator) -> np.ndarray:
    """Draw ancestor indices; both schemes give offspring counts with mean n*w_i."""
    weights = np.asarray(weights, dtype=float)
    cum = np.cumsum(weights)
    if scheme == "multinomial":
        u = rng.random(n)
    elif scheme == "systematic":
        u = (np.arange(n) + rng.random()) / n
    else:
        raise ConfigurationError(f"unknown resampling scheme {scheme!r}")
    return np.minimum(np.searchsorted(cum, u), weights.shape[0] - 1)


@dataclass(frozen=True)
class FilterSpec:
    """Static configuration of one particle-filter run."""

    num_particles: int = 1000
    resampling: str = "multinomial"
    ess_threshold: float | None = None  # None: resample every step (the default algorithms)
    apf_stabiliser_fraction: float = 0.05
    predictive_samples: int = 1
    predictive_mode: str = "mean"  # one-step-ahead forecast of the observation location
    store_history: bool = False  # keep pre-resampling ensembles (needed by FFBS)

    def __post_init__(self):
        if self.num_particles < 2:
            raise ConfigurationError("need at least 2 particles")
        if self.resampling not in RESAMPLING_SCHEMES:
            raise ConfigurationError(f"unknown resampling scheme {self.resampling!r}")
        if self.ess_threshold is not None and not 0.0 < self.ess_threshold <= 1.0:
            raise ConfigurationError("ess_threshold must lie in (0, 1]")
        if self.apf_stabiliser_fraction < 0.0:
            raise ConfigurationError("apf_stabiliser_fraction must be >= 0")
        if self.predictive_samples < 0:
            raise ConfigurationError("predictive_samples must be >= 0")
        if self.predictive_mode not in PREDICTIVE_MODES:
            raise ConfigurationError(f"unknown predictive mode {self.predictive_mode!r}")


@dataclass
class ParticleEnsemble:
    """N weighted states at one time step plus the selection ancestry."""

    states: np.ndarray  # (N, d_x)
    log_weights: np.ndarray  # (N,) unnormalised
    weights: np.ndarray  # (N,) normalised
    ancestors: np.ndarray  # (N,) indices into the aligned previous arrays
    time_index: int

    def __post_init__(self):
        total = self.weights.sum()
        if abs(total - 1.0) > 1e-9 or (self.weights < 0).any():
            raise ConfigurationError(f"ensemble weights not normalised (sum {total!r})")

    @property
    def num_particles(self) -> int:
        return self.states.shape[0]

    def mean(self) -> np.ndarray:
        return self.weights @ self.states

    def variance(self) -> np.ndarray:
        mu = self.mean()
        return self.weights @ (self.states - mu) ** 2


@dataclass
class FilterOutput:
    """Per-step products of one filter run (for t = 1..T)."""

    ensembles: list[ParticleEnsemble]  # post-resampling (or weighted where no resample ran)
    ess: np.ndarray  # (T,)
    filtering_means: np.ndarray  # (T, d_x)
    filtering_variances: np.ndarray  # (T, d_x)
    log_increments: np.ndarray  # (T,) log mean unnormalised weight per step
    predictive_samples: np.ndarray | None  # (T, M, d_y)
    history: list[ParticleEnsemble] | None = None  # pre-resampling, if stored

    @property
    def num_steps(self) -> int:
        return len(self.ensembles)


class TransitionProposal:
    """Proposal equal to the model transition; reduces the generic filter to the bootstrap one."""

    def __init__(self, transition):
        self.transition = transition

    def sample(self, rng: np.random.Generator, prev_states: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.transition.sample(rng, prev_states)

    def log_density(self, states: np.ndarray, prev_states: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.transition.log_density(states, prev_states)


def _observation_mask(ys: np.ndarray, observed_mask) -> np.ndarray:
    if observed_mask is None:
        return ~np.isnan(ys).any(axis=1)
    observed_mask = np.asarray(observed_mask, dtype=bool)
    if observed_mask.shape[0] != ys.shape[0]:
        raise ConfigurationError("observation mask length does not match the observation sequence")
    return observed_mask


def _as_observations(ys) -> np.ndarray:
    ys = np.asarray(ys, dtype=float)
    if ys.ndim == 1:
        ys = ys[:, None]
    if ys.ndim != 2 or ys.shape[0] < 1:
        raise ConfigurationError("observations must form a (T, d_y) array with T >= 1")
    return ys


def _predictive_mean(gl: GeneralisedLikelihood, proposed: np.ndarray, weights: np.ndarray, m: int) -> np.ndarray:
    """One-step-ahead point forecast: the weighted mean observation location
    of the freshly propagated (not yet reweighted) cloud."""
    loc = weights @ gl.base.location(proposed)
    return np.broadcast_to(loc, (m, loc.shape[0])).copy()


def _predictive_replicate(
    gl: GeneralisedLikelihood,
    states: np.ndarray,
    weights: np.ndarray,
    m: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """The literal posterior-predictive mixture draw: pick a particle by its
    weight, then draw an observation from the likelihood at that particle."""
    family = gl.base
    residuals = family.sample_residual(rng, m)
    cum = np.cumsum(weights)
    idx = np.minimum(np.searchsorted(cum, rng.random(m)), weights.shape[0] - 1)
    return family.location(states)[idx] + residuals


def run_generic_pf(
    model: StateSpaceModel,
    gl: GeneralisedLikelihood,
    proposal,
    spec: FilterSpec,
    ys,
    seed: int,
    observed_mask: Sequence[bool] | None = None,
) -> FilterOutput:
    """Sequential importance resampling with an arbitrary proposal.

    Per step: propose, weight by ``log_potential + log f - log q``, normalise,
    and resample (always, or when the ESS fraction drops below the
    threshold). ``proposal=None`` selects the bootstrap path where the
    density ratio vanishes identically.

    Steps whose observation is masked (or NaN) skip the weighting and
    resampling and only propagate.
    """
    ys = _as_observations(ys)
    mask = _observation_mask(ys, observed_mask)
    n = spec.num_particles
    num_steps = ys.shape[0]

    states = model.prior.sample(rngmod.stream(seed, rngmod.INIT, 0), n)
    log_weights = np.full(n, -np.log(n))

    ensembles: list[ParticleEnsemble] = []
    history: list[ParticleEnsemble] | None = [] if spec.store_history else None
    ess = np.empty(num_steps)
    means = np.empty((num_steps, model.state_dim))
    variances = np.empty((num_steps, model.state_dim))
    increments = np.zeros(num_steps)
    predictive = (
        np.empty((num_steps, spec.predictive_samples, model.obs_dim))
        if spec.predictive_samples > 0
        else None
    )

    for t in range(1, num_steps + 1):
        y = ys[t - 1]
        rng_prop = rngmod.stream(seed, rngmod.PROPOSAL, t)
        if proposal is None:
            proposed = model.transition.sample(rng_prop, states)
            log_ratio = 0.0
        else:
            proposed = proposal.sample(rng_prop, states, y)
            log_ratio = model.transition.log_density(proposed, states) - proposal.log_density(
                proposed, states, y
            )

        if predictive is not None and spec.predictive_mode == "mean":
            predictive[t - 1] = _predictive_mean(
                gl, proposed, np.exp(log_weights), spec.predictive_samples
            )

        if mask[t - 1]:
            delta = gl.log_potential(proposed, y) + log_ratio
        else:
            delta = np.zeros(n) + log_ratio
        raw = log_weights + delta
        try:
            new_weights, log_mean = normalise_log_weights(raw)
        except DegenerateWeightsError as exc:
            raise DegenerateWeightsError(t) from exc
        # log sum_i W_{t-1,i} exp(delta_i); the carried log_weights are normalised
        increments[t - 1] = log_mean + np.log(n)
        ess[t - 1] = effective_sample_size(new_weights)

        if spec.store_history:
            history.append(
                ParticleEnsemble(proposed, raw.copy(), new_weights.copy(), np.arange(n), t)
            )
        if predictive is not None and spec.predictive_mode == "replicate":
            predictive[t - 1] = _predictive_replicate(
                gl,
                proposed,
                new_weights,
                spec.predictive_samples,
                rngmod.stream(seed, rngmod.PREDICTIVE, t),
            )

        do_resample = mask[t - 1] and (
            spec.ess_threshold is None or ess[t - 1] < spec.ess_threshold * n
        )
        if do_resample:
            ancestors = resample(
                new_weights, n, spec.resampling, rngmod.stream(seed, rngmod.RESAMPLE, t)
            )
            states = proposed[ancestors]
            current = np.full(n, 1.0 / n)
            log_weights = np.full(n, -np.log(n))
        else:
            ancestors = np.arange(n)
            states = proposed
            current = new_weights
            log_weights = np.log(np.maximum(new_weights, 1e-320))

        ensemble = ParticleEnsemble(states, log_weights.copy(), current.copy(), ancestors, t)
        ensembles.append(ensemble)
        means[t - 1] = ensemble.mean()
        variances[t - 1] = ensemble.variance()

    return FilterOutput(ensembles, ess, means, variances, increments, predictive, history)


def run_bpf(
    model: StateSpaceModel,
    gl: GeneralisedLikelihood,
    spec: FilterSpec,
    ys,
    seed: int,
    observed_mask: Sequence[bool] | None = None,
) -> FilterOutput:
    """Bootstrap particle filter: propose from the transition, weight by the potential.

    With the standard rule this is the classical bootstrap filter; with the
    beta rule it is its robustified counterpart.
    """
    return run_generic_pf(model, gl, None, spec, ys, seed, observed_mask)


def run_apf(
    model: StateSpaceModel,
    gl: GeneralisedLikelihood,
    spec: FilterSpec,
    ys,
    seed: int,
    observed_mask: Sequence[bool] | None = None,
) -> FilterOutput:
    """Auxiliary particle filter with a stabilised predictive potential.

    First stage: select particle k with probability proportional to
    ``w_{t-1} * (pot(mean(x_{t-1})) + c_t)`` where ``c_t`` is
    ``apf_stabiliser_fraction`` times the potential supremum. Second stage:
    propose from the transition and weight by ``pot(x_t) / (pot(mean) + c_t)``.
    Weights are carried to the next step's first stage; there is no terminal
    resample, so per-step ensembles stay weighted.
    """
    ys = _as_observations(ys)
    mask = _observation_mask(ys, observed_mask)
    n = spec.num_particles
    num_steps = ys.shape[0]
    transition = model.transition
    if not hasattr(transition, "mean"):
        raise ConfigurationError("the auxiliary filter needs a transition with a mean map")

    states = model.prior.sample(rngmod.stream(seed, rngmod.INIT, 0), n)
    weights = np.full(n, 1.0 / n)
    log_weights = np.full(n, -np.log(n))
    log_c = (
        np.log(spec.apf_stabiliser_fraction) + gl.log_potential_max()
        if spec.apf_stabiliser_fraction > 0.0
        else -np.inf
    )

    ensembles: list[ParticleEnsemble] = []
    history: list[ParticleEnsemble] | None = [] if spec.store_history else None
    ess = np.empty(num_steps)
    means = np.empty((num_steps, model.state_dim))
    variances = np.empty((num_steps, model.state_dim))
    increments = np.zeros(num_steps)
    predictive = (
        np.empty((num_steps, spec.predictive_samples, model.obs_dim))
        if spec.predictive_samples > 0
        else None
    )

    for t in range(1, num_steps + 1):
        y = ys[t - 1]
        rng_aux = rngmod.stream(seed, rngmod.AUXILIARY, t)
        if mask[t - 1]:
            log_gtilde = np.logaddexp(gl.log_potential(transition.mean(states), y), log_c)
            first_stage_raw = log_weights + log_gtilde
        else:
            log_gtilde = np.zeros(n)
            first_stage_raw = log_weights.copy()
        try:
            first_stage, first_log_mean = normalise_log_weights(first_stage_raw)
        except DegenerateWeightsError as exc:
            raise DegenerateWeightsError(t) from exc
        selected = resample(first_stage, n, spec.resampling, rng_aux)

        proposed = transition.sample(rngmod.stream(seed, rngmod.PROPOSAL, t), states[selected])
        if predictive is not None and spec.predictive_mode == "mean":
            # post-selection cloud, uniform interim weights: the auxiliary
            # filter's natural one-step-ahead forecast
            predictive[t - 1] = _predictive_mean(
                gl, proposed, np.full(n, 1.0 / n), spec.predictive_samples
            )
        if mask[t - 1]:
            raw = gl.log_potential(proposed, y) - log_gtilde[selected]
        else:
            raw = np.zeros(n)
        try:
            new_weights, log_mean = normalise_log_weights(raw)
        except DegenerateWeightsError as exc:
            raise DegenerateWeightsError(t) from exc

        increments[t - 1] = log_mean + first_log_mean + np.log(n)
        ess[t - 1] = effective_sample_size(new_weights)

        states = proposed
        weights = new_weights
        log_weights = np.log(np.maximum(new_weights, 1e-320))
        ensemble = ParticleEnsemble(states, raw.copy(), weights.copy(), selected, t)
        ensembles.append(ensemble)
        if spec.store_history:
            history.append(ensemble)
        if predictive is not None and spec.predictive_mode == "replicate":
            predictive[t - 1] = _predictive_replicate(
                gl, states, weights, spec.predictive_samples, rngmod.stream(seed, rngmod.PREDICTIVE, t)
            )
        means[t - 1] = ensemble.mean()
        variances[t - 1] = ensemble.variance()

    return FilterOutput(ensembles, ess, means, variances, increments, predictive, history)
