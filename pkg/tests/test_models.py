"""Likelihood families, beta losses and potentials against independent oracles."""

import math

import numpy as np
import pytest
from scipy import integrate

from betafilter import (
    AsymmetricGaussian,
    ConfigurationError,
    Gaussian,
    GaussianDensity,
    GaussianMixture,
    GeneralisedLikelihood,
    LinearGaussianTransition,
    NotClosedFormError,
    NumericalError,
    StateSpaceModel,
    StudentT,
)
from betafilter.models import beta_loss, log_density, log_potential, power_integral

H1 = np.eye(1)


def quad_power_integral(density, beta, lo, hi, points=(0.0,)):
    """Independent adaptive-quadrature oracle for int density(r)^(1+beta) dr."""
    val, err = integrate.quad(
        lambda r: density(r) ** (1.0 + beta),
        lo,
        hi,
        limit=1000,
        epsabs=0.0,
        epsrel=1e-12,
        points=list(points),
    )
    assert err < 1e-9 * abs(val)
    return val


class TestLogDensity:
    def test_standard_normal_at_mode(self):
        fam = Gaussian(H1, H1)
        assert log_density(fam, np.zeros(1), np.zeros(1)) == pytest.approx(
            -0.5 * math.log(2 * math.pi), abs=1e-12
        )

    def test_cauchy_at_mode(self):
        fam = StudentT(H1, 1.0, dof=1.0)
        assert log_density(fam, np.zeros(1), np.zeros(1)) == pytest.approx(
            math.log(1.0 / math.pi), abs=1e-12
        )

    def test_dimension_mismatch(self):
        fam = Gaussian(np.eye(2, 4), np.eye(2))
        with pytest.raises(ConfigurationError):
            fam.log_density(np.zeros(4), np.zeros(3))

    def test_asymmetric_density_normalised(self):
        fam = AsymmetricGaussian(H1, 1.0, 10.0)

        def density(r):
            return math.exp(fam.log_density(np.zeros(1), np.array([r])))

        total, _ = integrate.quad(density, -50.0, 500.0, limit=500)
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_asymmetric_two_piece_shape(self):
        fam = AsymmetricGaussian(H1, 1.0, 10.0)
        log_c = math.log(2.0 / (math.sqrt(2 * math.pi) * 11.0))
        x = np.zeros(1)
        assert fam.log_density(x, np.array([-2.0])) == pytest.approx(log_c - 2.0, abs=1e-12)
        assert fam.log_density(x, np.array([2.0])) == pytest.approx(log_c - 0.02, abs=1e-12)

    def test_batch_matches_scalar(self):
        fam = Gaussian(np.array([[1.0, 0.0]]), H1)
        states = np.array([[0.0, 1.0], [2.0, -1.0], [0.5, 0.0]])
        y = np.array([0.7])
        batch = fam.log_density(states, y)
        singles = [fam.log_density(s, y) for s in states]
        assert np.allclose(batch, singles, atol=1e-14)

    def test_finite_for_extreme_inputs(self):
        fam = Gaussian(H1, H1)
        val = fam.log_density(np.array([1e6]), np.zeros(1))
        assert np.isfinite(val)


class TestPowerIntegral:
    def test_gaussian_1d_beta_one(self):
        fam = Gaussian(H1, H1)
        expected = 1.0 / (2.0 * math.sqrt(math.pi))
        assert power_integral(fam, None, 1.0) == pytest.approx(expected, rel=1e-12)

    def test_gaussian_beta_to_zero_limit(self):
        fam = Gaussian(H1, H1)
        assert power_integral(fam, None, 1e-10) == pytest.approx(1.0, abs=1e-8)

    def test_gaussian_2d(self):
        fam = Gaussian(np.eye(2), np.eye(2))
        expected = (2 * math.pi) ** -0.5 / 1.5
        assert power_integral(fam, None, 0.5) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("beta", [0.05, 0.1, 0.5, 1.0])
    @pytest.mark.parametrize("sigma2", [1.0, 2.5])
    def test_gaussian_matches_quadrature(self, beta, sigma2):
        fam = Gaussian(H1, [[sigma2]])
        dens = lambda r: math.exp(fam.log_density(np.zeros(1), np.array([r])))
        oracle = quad_power_integral(dens, beta, -60 * sigma2, 60 * sigma2)
        assert fam.power_integral(beta) == pytest.approx(oracle, rel=1e-8)

    @pytest.mark.parametrize("beta", [0.05, 0.1, 0.5, 1.0])
    def test_asymmetric_matches_quadrature(self, beta):
        fam = AsymmetricGaussian(H1, 1.0, 10.0)
        dens = lambda r: math.exp(fam.log_density(np.zeros(1), np.array([r])))
        oracle = quad_power_integral(dens, beta, -60.0, 600.0)
        assert fam.power_integral(beta) == pytest.approx(oracle, rel=1e-8)

    @pytest.mark.parametrize("beta", [0.05, 0.1, 0.5, 1.0])
    def test_mixture_matches_quadrature(self, beta):
        fam = GaussianMixture(H1, [(0.6, 0.0, [[2.0]]), (0.4, 3.0, [[2.0]])])
        dens = lambda r: math.exp(fam.log_density(np.zeros(1), np.array([r])))
        oracle = quad_power_integral(dens, beta, -80.0, 90.0, points=(0.0, 3.0))
        assert fam.power_integral(beta) == pytest.approx(oracle, rel=1e-8)

    def test_concentric_mixture_collapses_to_gaussian(self):
        fam = GaussianMixture(np.eye(2), [(0.5, np.zeros(2), np.eye(2)), (0.5, np.zeros(2), np.eye(2))])
        expected = Gaussian(np.eye(2), np.eye(2)).power_integral(0.3)
        assert fam.power_integral(0.3) == pytest.approx(expected, rel=1e-10)

    def test_student_t_not_closed_form(self):
        with pytest.raises(NotClosedFormError):
            StudentT(H1, 1.0, dof=3.0).power_integral(0.1)

    def test_mixture_unshared_covariance_not_closed_form(self):
        fam = GaussianMixture(H1, [(0.5, 0.0, [[1.0]]), (0.5, 0.0, [[4.0]])])
        with pytest.raises(NotClosedFormError):
            fam.power_integral(0.1)

    def test_nonpositive_beta_rejected(self):
        with pytest.raises(ConfigurationError):
            Gaussian(H1, H1).power_integral(0.0)


class TestBetaLoss:
    def test_at_mode_closed_form(self):
        gl = GeneralisedLikelihood.with_beta(Gaussian(H1, H1), 0.5)
        expected = (1 / 1.5) * (2 * math.pi) ** -0.25 * 1.5**-0.5 - 2.0 * (2 * math.pi) ** -0.25
        assert beta_loss(gl, np.zeros(1), np.zeros(1)) == pytest.approx(expected, rel=1e-12)

    def test_monotone_in_distance_from_mode(self):
        for fam in (
            Gaussian(H1, H1),
            AsymmetricGaussian(H1, 1.0, 10.0),
            GaussianMixture(H1, [(0.7, 0.0, [[1.0]]), (0.3, 1.0, [[1.0]])]),
        ):
            gl = GeneralisedLikelihood.with_beta(fam, 0.2)
            x = np.zeros(1)
            losses = [float(beta_loss(gl, x, np.array([y]))) for y in (0.1, 0.6, 1.4, 3.0, 8.0)]
            assert np.all(np.diff(losses) > 0)

    def test_five_sigma_tail_term(self):
        # the likelihood term of the loss at a 5-sigma residual, beta = 0.2
        gl = GeneralisedLikelihood.with_beta(Gaussian(H1, H1), 0.2)
        logg = float(gl.base.log_density(np.zeros(1), np.array([5.0])))
        tail_term = -math.exp(0.2 * logg) / 0.2
        assert tail_term == pytest.approx(-5.0 * math.exp(0.2 * (-0.9189385332 - 12.5)), rel=1e-6)
        full = gl.base.power_integral(0.2) / 1.2 + tail_term
        assert beta_loss(gl, np.zeros(1), np.array([5.0])) == pytest.approx(full, rel=1e-12)

    def test_requires_beta_rule(self):
        gl = GeneralisedLikelihood.standard(Gaussian(H1, H1))
        with pytest.raises(ConfigurationError):
            gl.beta_loss(np.zeros(1), np.zeros(1))


class TestLogPotential:
    def test_standard_rule_is_log_density(self):
        fam = Gaussian(H1, H1)
        gl = GeneralisedLikelihood.standard(fam)
        states = np.array([[0.0], [1.0], [-2.0]])
        y = np.array([0.3])
        assert np.array_equal(log_potential(gl, states, y), fam.log_density(states, y))

    def test_beta_to_zero_difference_form(self):
        # relative log potentials converge to the standard ones as beta -> 0;
        # the difference form removes the additive constants
        fam = Gaussian(H1, H1)
        std = GeneralisedLikelihood.standard(fam)
        x = np.zeros(1)
        ys = np.linspace(-3.0, 3.0, 41)
        sups = []
        for beta in (1e-4, 1e-6, 1e-8):
            gl = GeneralisedLikelihood.with_beta(fam, beta)
            ref = np.array([log_potential(gl, x, np.array([y])) for y in ys])
            ref_std = np.array([log_potential(std, x, np.array([y])) for y in ys])
            sups.append(np.abs((ref - ref[20]) - (ref_std - ref_std[20])).max())
        assert sups[1] <= 1e-4
        assert sups[0] > sups[1] > sups[2]  # vanishing in beta

    def test_tail_flattening_preserves_ordering(self):
        gl = GeneralisedLikelihood.with_beta(Gaussian(H1, H1), 0.1)
        std = GeneralisedLikelihood.standard(Gaussian(H1, H1))
        x = np.zeros(1)
        at = lambda g, y: float(log_potential(g, x, np.array([y])))
        # far observations keep a bounded potential instead of a collapsing one
        assert at(gl, 300.0) > at(std, 300.0) + 1000.0
        assert at(gl, 300.0) < at(gl, 3.0) < at(gl, 0.0)

    def test_bounded_above_for_bounded_density(self):
        gl = GeneralisedLikelihood.with_beta(Gaussian(H1, H1), 0.3)
        assert float(log_potential(gl, np.zeros(1), np.array([1e8]))) >= 0.0
        assert gl.log_potential_max() >= float(log_potential(gl, np.zeros(1), np.array([2.0])))

    def test_potential_decreasing_in_loss(self):
        rng = np.random.default_rng(11)
        gl = GeneralisedLikelihood.with_beta(AsymmetricGaussian(H1, 2.0, 1.0), 0.15)
        x = np.zeros(1)
        ys = rng.normal(scale=4.0, size=60)
        losses = np.array([float(beta_loss(gl, x, np.array([y]))) for y in ys])
        pots = np.array([float(log_potential(gl, x, np.array([y]))) for y in ys])
        order = np.argsort(losses)
        assert np.all(np.diff(pots[order]) < 0)

    def test_include_constant_shifts_by_power_integral_term(self):
        fam = Gaussian(H1, [[2.0]])
        drop = GeneralisedLikelihood.with_beta(fam, 0.3)
        keep = GeneralisedLikelihood.with_beta(fam, 0.3, include_constant=True)
        y = np.array([1.2])
        shift = fam.power_integral(0.3) / 1.3
        assert float(log_potential(drop, np.zeros(1), y)) - float(
            log_potential(keep, np.zeros(1), y)
        ) == pytest.approx(shift, rel=1e-12)


class TestStructuralTypes:
    def test_mixture_weights_must_sum_to_one(self):
        with pytest.raises(ConfigurationError):
            GaussianMixture(H1, [(0.5, 0.0, [[1.0]]), (0.4, 1.0, [[1.0]])])

    def test_covariance_psd_check(self):
        with pytest.raises(ConfigurationError):
            Gaussian(H1, [[-0.5]])

    def test_covariance_symmetrised(self):
        cov = np.array([[1.0, 0.2 + 1e-12], [0.2, 1.0]])
        fam = Gaussian(np.eye(2), cov)
        assert np.array_equal(fam.cov, fam.cov.T)

    def test_transition_dimension_check(self):
        prior = GaussianDensity(np.zeros(3), np.eye(3))
        with pytest.raises(ConfigurationError):
            StateSpaceModel(prior, LinearGaussianTransition(np.eye(2), np.eye(2)), Gaussian(np.eye(3), np.eye(3)))

    def test_observation_matrix_dimension_check(self):
        prior = GaussianDensity(np.zeros(3), np.eye(3))
        with pytest.raises(ConfigurationError):
            StateSpaceModel(prior, LinearGaussianTransition(np.eye(3), np.eye(3)), Gaussian(np.eye(2), np.eye(2)))

    def test_model_arrays_immutable(self):
        fam = Gaussian(np.eye(2), np.eye(2))
        with pytest.raises(ValueError):
            fam.cov[0, 0] = 2.0
        trans = LinearGaussianTransition(np.eye(2), np.eye(2))
        with pytest.raises(ValueError):
            trans.A[0, 0] = 5.0

    def test_singular_transition_density_raises(self):
        trans = LinearGaussianTransition(np.eye(2), np.zeros((2, 2)))
        with pytest.raises(NumericalError):
            trans.log_density(np.zeros((1, 2)), np.zeros((1, 2)))

    def test_student_t_sampling_moments(self):
        rng = np.random.default_rng(3)
        fam = StudentT(H1, 2.0, dof=5.0)
        draws = fam.sample_residual(rng, 200_000)[:, 0]
        # var of t_5 is 5/3, scaled by 4
        assert np.var(draws) == pytest.approx(4 * 5 / 3, rel=0.05)

    def test_asymmetric_sampling_side_mass(self):
        rng = np.random.default_rng(4)
        fam = AsymmetricGaussian(H1, 1.0, 10.0)
        draws = fam.sample_residual(rng, 200_000)[:, 0]
        assert np.mean(draws >= 0) == pytest.approx(10.0 / 11.0, abs=0.005)
