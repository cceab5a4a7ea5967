"""Forward-filtering backward-sampling on stored particle ensembles.

Draws joint trajectories from the generalised smoothing distribution: the
terminal state comes from the final weighted ensemble and earlier states are
selected backwards with probability proportional to
``w_t(i) * f(x_{t+1} | x_t(i))``. Only the transition density enters the
backward kernel; the weighting rule of the forward pass is already encoded in
the stored weights.

Cost is one transition-density batch of size N x M per step, i.e. O(N M T)
density evaluations overall.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .errors import ConfigurationError, DegenerateBackwardKernelError
from .filters import FilterOutput

# trajectories processed per block to bound the (N x block) density matrices
_BLOCK = 256


@dataclass
class SmoothedTrajectories:
    """M sampled state trajectories over t = 1..T."""

    states: np.ndarray  # (M, T, d_x)
    num_forward_particles: int
    seed: int

    @property
    def num_trajectories(self) -> int:
        return self.states.shape[0]

    def mean(self) -> np.ndarray:
        return self.states.mean(axis=0)

    def quantiles(self, qs) -> np.ndarray:
        return np.quantile(self.states, qs, axis=0)


def ffbs(
    filter_output: FilterOutput,
    transition,
    num_trajectories: int = 1000,
    seed: int = 0,
) -> SmoothedTrajectories:
    """Sample smoothed trajectories from a forward filter run.

    The forward run must have been made with ``store_history=True`` so that
    the pre-resampling weighted ensembles are available at every step.
    """
    history = filter_output.history
    if history is None:
        raise ConfigurationError("ffbs needs a filter run with store_history=True")
    if num_trajectories < 1:
        raise ConfigurationError("need at least one trajectory")

    num_steps = len(history)
    d_x = history[0].states.shape[1]
    out = np.empty((num_trajectories, num_steps, d_x))

    rng = rngmod.stream(seed, rngmod.SMOOTHER, num_steps)
    final = history[-1]
    idx = _categorical_rows(np.log(np.maximum(final.weights, 1e-320))[None, :], rng, num_trajectories)
    out[:, -1] = final.states[idx]

    for t in range(num_steps - 2, -1, -1):
        ensemble = history[t]
        log_w = np.log(np.maximum(ensemble.weights, 1e-320))
        rng = rngmod.stream(seed, rngmod.SMOOTHER, t)
        chosen = np.empty(num_trajectories, dtype=np.int64)
        for start in range(0, num_trajectories, _BLOCK):
            block = slice(start, min(start + _BLOCK, num_trajectories))
            logits = transition.log_density_matrix(out[block, t + 1], ensemble.states) + log_w
            bad = ~np.isfinite(logits.max(axis=1))
            if bad.any():
                raise DegenerateBackwardKernelError(t + 1)
            chosen[block] = _categorical_rows(logits, rng, block.stop - block.start)
        out[:, t] = ensemble.states[chosen]

    return SmoothedTrajectories(out, final.num_particles, seed)


def _categorical_rows(logits: np.ndarray, rng: np.random.Generator, m: int) -> np.ndarray:
    """One categorical draw per row of unnormalised logits (Gumbel-max)."""
    if logits.shape[0] == 1 and m > 1:
        logits = np.broadcast_to(logits, (m, logits.shape[1]))
    gumbel = rng.gumbel(size=logits.shape)
    return np.argmax(logits + gumbel, axis=1)
