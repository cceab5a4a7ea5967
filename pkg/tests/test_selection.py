"""Predictive beta selection: loss conventions, grid search, robustness."""

import numpy as np
import pytest

from betafilter import (
    BetaSelectionConfig,
    ConfigurationError,
    DegenerateWeightsError,
    FilterSpec,
    Gaussian,
    GaussianDensity,
    LinearGaussianTransition,
    StateSpaceModel,
    predictive_loss,
    select_beta,
)
from betafilter import selection as selection_mod
from betafilter.simulators import (
    AdditiveGaussianContamination,
    WienerVelocityConfig,
    draw_observations,
    simulate_states,
)


def scalar_model():
    return StateSpaceModel(
        GaussianDensity([0.0], [[1.0]]),
        LinearGaussianTransition([[0.9]], [[0.5]]),
        Gaussian([[1.0]], [[1.0]]),
    )


class TestPredictiveLoss:
    def test_perfect_predictions(self):
        ys = np.random.default_rng(0).normal(size=(6, 2))
        samples = np.repeat(ys[:, None, :], 4, axis=1)
        assert np.allclose(predictive_loss(samples, ys), 0.0)

    def test_constant_offset(self):
        ys = np.zeros((5, 1))
        samples = np.full((5, 3, 1), 2.5)
        assert np.allclose(predictive_loss(samples, ys), 2.5)

    def test_inverse_median_combination_hand_example(self):
        # 2-D, three steps; combined loss = (L1/m1 + L2/m2) / (1/m1 + 1/m2)
        ys = np.zeros((3, 2))
        samples = np.zeros((3, 1, 2))
        samples[:, 0, 0] = [1.0, 2.0, 3.0]  # dim medians: m1 = 2
        samples[:, 0, 1] = [10.0, 20.0, 30.0]  # m2 = 20
        losses = predictive_loss(samples, ys)
        m1, m2 = 2.0, 20.0
        expected = (np.array([1.0, 2.0, 3.0]) / m1 + np.array([10.0, 20.0, 30.0]) / m2) / (
            1 / m1 + 1 / m2
        )
        assert np.allclose(losses, expected)

    def test_joint_rescaling_leaves_relative_scores(self):
        rng = np.random.default_rng(1)
        ys = rng.normal(size=(20, 2))
        samples = ys[:, None, :] + rng.normal(scale=0.5, size=(20, 3, 2))
        base = predictive_loss(samples, ys)
        scaled = predictive_loss(5.0 * samples, 5.0 * ys)
        assert np.allclose(scaled, 5.0 * base)

    def test_median_breakdown_bounded(self):
        rng = np.random.default_rng(2)
        losses = rng.uniform(1.0, 2.0, size=101)
        corrupted = losses.copy()
        corrupted[:49] = 1e12
        assert losses.min() <= np.median(corrupted) <= losses.max()

    def test_weighting_none(self):
        ys = np.zeros((2, 2))
        samples = np.zeros((2, 1, 2))
        samples[:, 0, 0] = 2.0
        samples[:, 0, 1] = 4.0
        assert np.allclose(predictive_loss(samples, ys, "none"), 3.0)


class TestSelectBeta:
    def test_single_element_grid(self):
        model = scalar_model()
        ys = simulate_states([[0.9]], [[0.5]], [0.0], 20, np.random.default_rng(0))
        result = select_beta(
            model,
            FilterSpec(num_particles=64),
            [ys],
            BetaSelectionConfig(grid=(0.1,)),
            seed=0,
        )
        assert result.selected_beta == 0.1
        assert result.scores.shape == (1, 1)

    def test_scores_deterministic(self):
        model = scalar_model()
        rng = np.random.default_rng(3)
        ys = rng.normal(size=(25, 1))
        config = BetaSelectionConfig(grid=(0.05, 0.2))
        a = select_beta(model, FilterSpec(num_particles=128), [ys, ys + 0.1], config, seed=7)
        b = select_beta(model, FilterSpec(num_particles=128), [ys, ys + 0.1], config, seed=7)
        assert np.array_equal(a.scores, b.scores)
        assert a.selected_beta == b.selected_beta

    def test_wiener_tuning_selects_robust_beta(self):
        # contaminated tracking data: the selected beta lands in the
        # well-performing band [0.01, 0.2]
        cfg = WienerVelocityConfig(
            steps=100, contamination=AdditiveGaussianContamination(0.1, 100.0)
        )
        A, Q, _ = cfg.matrices()
        model = cfg.model()
        datasets = []
        for r in range(5):
            states = simulate_states(A, Q, cfg.x0, 100, np.random.default_rng(100 + r))
            datasets.append(
                draw_observations(states, cfg.observation_family(), cfg.contamination, 200 + r).observations
            )
        result = select_beta(
            model,
            FilterSpec(num_particles=1000),
            datasets,
            BetaSelectionConfig(),
            seed=5,
        )
        assert 0.01 <= result.selected_beta <= 0.2
        assert np.isfinite(result.scores).all()
        # the mean score over tuning runs bottoms out in the same band
        mean_scores = result.scores.mean(axis=0)
        assert 0.01 <= result.grid[int(np.argmin(mean_scores))] <= 0.2

    def test_degenerate_beta_scored_infinite(self, monkeypatch):
        model = scalar_model()
        ys = np.random.default_rng(4).normal(size=(15, 1))
        real_run_bpf = selection_mod.run_bpf

        def failing_run_bpf(model, gl, spec, data, seed, observed_mask=None):
            if gl.beta is not None and gl.beta > 0.5:
                raise DegenerateWeightsError(3)
            return real_run_bpf(model, gl, spec, data, seed, observed_mask)

        monkeypatch.setattr(selection_mod, "run_bpf", failing_run_bpf)
        result = select_beta(
            model,
            FilterSpec(num_particles=64),
            [ys],
            BetaSelectionConfig(grid=(0.1, 0.9)),
            seed=1,
        )
        assert result.selected_beta == 0.1
        assert result.scores[0, 1] == np.inf

    def test_mode_over_runs_with_tie_toward_smaller(self, monkeypatch):
        # canned predictive errors: run of length 10 prefers beta 0.3, run of
        # length 11 prefers beta 0.1; with one vote each the mode tie breaks
        # toward the smaller beta
        model = scalar_model()
        canned = {(10, 0.1): 1.0, (10, 0.3): 0.5, (11, 0.1): 0.5, (11, 0.3): 1.0}

        class FakeOutput:
            def __init__(self, samples):
                self.predictive_samples = samples

        def fake_run_bpf(model, gl, spec, data, seed, observed_mask=None):
            value = canned[(data.shape[0], gl.beta)]
            return FakeOutput(np.full((data.shape[0], 1, 1), value))

        monkeypatch.setattr(selection_mod, "run_bpf", fake_run_bpf)
        datasets = [np.zeros((10, 1)), np.zeros((11, 1))]
        result = select_beta(
            model,
            FilterSpec(num_particles=8),
            datasets,
            BetaSelectionConfig(grid=(0.1, 0.3)),
            seed=2,
        )
        assert np.allclose(result.scores, [[1.0, 0.5], [0.5, 1.0]])
        assert result.selected_beta == 0.1
        assert result.mode_count == 1

    def test_score_rows_layout(self):
        model = scalar_model()
        ys = np.random.default_rng(5).normal(size=(10, 1))
        result = select_beta(
            model,
            FilterSpec(num_particles=32),
            [ys],
            BetaSelectionConfig(grid=(0.05, 0.1)),
            seed=3,
        )
        rows = list(result.score_rows())
        assert [(b, r) for b, r, _ in rows] == [(0.05, 0), (0.1, 0)]

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            BetaSelectionConfig(grid=())
        with pytest.raises(ConfigurationError):
            BetaSelectionConfig(grid=(1.2,))
        with pytest.raises(ConfigurationError):
            BetaSelectionConfig(predictive_samples=0)
        with pytest.raises(ConfigurationError):
            select_beta(
                scalar_model(),
                FilterSpec(),
                [],
                BetaSelectionConfig(),
                seed=0,
            )
        with pytest.raises(ConfigurationError):
            select_beta(
                scalar_model(),
                FilterSpec(),
                [np.zeros((3, 1))],
                BetaSelectionConfig(),
                seed=0,
                kind="ekf",
            )
