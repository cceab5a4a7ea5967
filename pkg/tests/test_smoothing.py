"""Trajectory sampling from stored filter ensembles."""

import math

import numpy as np
import pytest
from scipy import stats

from betafilter import (
    ConfigurationError,
    DegenerateBackwardKernelError,
    FilterSpec,
    Gaussian,
    GaussianDensity,
    GeneralisedLikelihood,
    LinearGaussianTransition,
    ParticleEnsemble,
    StateSpaceModel,
    ffbs,
    kalman_filter,
    rts_smoother,
    run_bpf,
)
from betafilter.filters import FilterOutput


def scalar_model(a=0.9, q=0.5):
    return StateSpaceModel(
        GaussianDensity([0.0], [[1.0]]),
        LinearGaussianTransition([[a]], [[q]]),
        Gaussian([[1.0]], [[1.0]]),
    )


def manual_output(ensembles):
    steps = len(ensembles)
    d = ensembles[0].states.shape[1]
    return FilterOutput(
        ensembles=ensembles,
        ess=np.full(steps, float(ensembles[0].num_particles)),
        filtering_means=np.zeros((steps, d)),
        filtering_variances=np.zeros((steps, d)),
        log_increments=np.zeros(steps),
        predictive_samples=None,
        history=ensembles,
    )


def make_ensemble(states, weights, t):
    states = np.asarray(states, dtype=float)[:, None]
    weights = np.asarray(weights, dtype=float)
    return ParticleEnsemble(states, np.log(weights), weights, np.arange(len(weights)), t)


class TestFfbs:
    def test_requires_history(self):
        model = scalar_model()
        out = run_bpf(
            model,
            GeneralisedLikelihood.standard(model.likelihood),
            FilterSpec(num_particles=32, store_history=False),
            np.array([[0.1]]),
            seed=0,
        )
        with pytest.raises(ConfigurationError):
            ffbs(out, model.transition, 10, seed=0)

    def test_single_step_samples_final_ensemble(self):
        # T=1 reduces to categorical sampling of the filtering ensemble
        weights = np.array([0.5, 0.25, 0.15, 0.07, 0.03])
        output = manual_output([make_ensemble([0.0, 1.0, 2.0, 3.0, 4.0], weights, 1)])
        trans = LinearGaussianTransition([[1.0]], [[1.0]])
        tr = ffbs(output, trans, 40_000, seed=1)
        counts = np.bincount(tr.states[:, 0, 0].astype(int), minlength=5)
        assert stats.chisquare(counts, 40_000 * weights).pvalue > 1e-4

    def test_deterministic_transition_selects_compatible_ancestor(self):
        trans = LinearGaussianTransition([[1.0]], [[1e-12]])
        e0 = make_ensemble([0.0, 10.0], [0.5, 0.5], 1)
        e1 = make_ensemble([0.000001, 10.000001], [0.5, 0.5], 2)
        tr = ffbs(manual_output([e0, e1]), trans, 500, seed=2)
        ends = tr.states[:, 1, 0]
        starts = tr.states[:, 0, 0]
        assert np.all(np.abs(ends - starts) < 1.0)

    def test_marginal_at_final_time_matches_filter(self):
        # distributional check on a small discrete support
        weights = np.array([0.4, 0.3, 0.2, 0.1])
        e0 = make_ensemble([0.0, 1.0, 2.0, 3.0], [0.25, 0.25, 0.25, 0.25], 1)
        e1 = make_ensemble([0.0, 1.0, 2.0, 3.0], weights, 2)
        trans = LinearGaussianTransition([[1.0]], [[100.0]])  # flat backward kernel
        tr = ffbs(manual_output([e0, e1]), trans, 60_000, seed=3)
        counts = np.bincount(tr.states[:, 1, 0].astype(int), minlength=4)
        assert stats.chisquare(counts, 60_000 * weights).pvalue > 1e-4

    def test_matches_rts_on_lgssm(self):
        model = scalar_model()
        rng = np.random.default_rng(5)
        x = np.zeros((1, 1))
        ys = []
        for _ in range(25):
            x = model.transition.sample(rng, x)
            ys.append(model.likelihood.sample(rng, x)[0])
        ys = np.array(ys)
        result = kalman_filter([[0.9]], [[0.5]], [[1.0]], [[1.0]], model.prior, ys)
        smoothed = rts_smoother(result, [[0.9]])
        rts_means = np.array([b.mean[0] for b in smoothed])
        reps = []
        for s in range(5):
            out = run_bpf(
                model,
                GeneralisedLikelihood.standard(model.likelihood),
                FilterSpec(num_particles=4000, store_history=True, predictive_samples=0),
                ys,
                seed=s,
            )
            reps.append(ffbs(out, model.transition, 800, seed=s).mean()[:, 0])
        reps = np.stack(reps)
        se = reps.std(axis=0, ddof=1) / math.sqrt(5)
        assert np.all(np.abs(reps.mean(axis=0) - rts_means) <= 4.0 * np.maximum(se, 1e-6))

    def test_cost_is_linear_in_horizon(self):
        calls = {"pairs": 0}

        class CountingTransition(LinearGaussianTransition):
            def log_density_matrix(self, next_states, prev_states):
                calls["pairs"] += next_states.shape[0] * prev_states.shape[0]
                return super().log_density_matrix(next_states, prev_states)

        model = scalar_model()
        rng = np.random.default_rng(6)
        steps, n, m = 12, 50, 30
        ys = rng.normal(size=(steps, 1))
        out = run_bpf(
            model,
            GeneralisedLikelihood.standard(model.likelihood),
            FilterSpec(num_particles=n, store_history=True, predictive_samples=0),
            ys,
            seed=7,
        )
        counting = CountingTransition([[0.9]], [[0.5]])
        ffbs(out, counting, m, seed=8)
        assert calls["pairs"] == (steps - 1) * n * m

    def test_degenerate_backward_kernel(self):
        class BrokenTransition(LinearGaussianTransition):
            def log_density_matrix(self, next_states, prev_states):
                return np.full((next_states.shape[0], prev_states.shape[0]), -np.inf)

        e0 = make_ensemble([0.0, 1.0], [0.5, 0.5], 1)
        e1 = make_ensemble([0.0, 1.0], [0.5, 0.5], 2)
        with pytest.raises(DegenerateBackwardKernelError):
            ffbs(manual_output([e0, e1]), BrokenTransition([[1.0]], [[1.0]]), 50, seed=9)

    def test_trajectories_stay_on_ensemble_support(self):
        model = scalar_model()
        rng = np.random.default_rng(10)
        ys = rng.normal(size=(6, 1))
        out = run_bpf(
            model,
            GeneralisedLikelihood.standard(model.likelihood),
            FilterSpec(num_particles=40, store_history=True, predictive_samples=0),
            ys,
            seed=11,
        )
        tr = ffbs(out, model.transition, 200, seed=12)
        for t, ensemble in enumerate(out.history):
            assert np.isin(tr.states[:, t, 0], ensemble.states[:, 0]).all()
