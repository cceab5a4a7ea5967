"""Benchmark data generators.

Three synthetic systems are provided:

- the Wiener velocity tracking model (positions observed in Gaussian or
  two-piece noise, optionally contaminated),
- a terrain-aided navigation (TAN) problem whose observation map reads a
  synthetic digital elevation map,
- the Matern-5/2 Gaussian-process state-space model used for robust GP
  regression.

All generators are pure functions of (config, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from . import rng as rngmod
from .errors import ConfigurationError
from .models import (
    EPS_PSD,
    AsymmetricGaussian,
    Gaussian,
    GaussianDensity,
    GaussianMixture,
    LikelihoodFamily,
    LinearGaussianTransition,
    NonlinearGaussian,
    StateSpaceModel,
    StudentT,
    symmetrise,
)

# -- contamination -------------------------------------------------------------


@dataclass(frozen=True)
class AdditiveGaussianContamination:
    """With probability ``prob`` per observation, add N(0, scale^2) noise per component."""

    prob: float
    scale: float


@dataclass(frozen=True)
class AdditiveStudentTContamination:
    """With probability ``prob`` per observation, add scaled Student-t noise per component."""

    prob: float
    dof: float
    scale: float


@dataclass(frozen=True)
class MultiplicativeExponentialContamination:
    """With probability ``prob``, rescale the observation noise by xi ~ Exp(scale)."""

    prob: float
    scale: float


ContaminationSpec = (
    AdditiveGaussianContamination
    | AdditiveStudentTContamination
    | MultiplicativeExponentialContamination
)


def _check_prob(p: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise ConfigurationError(f"contamination probability must lie in [0, 1], got {p}")


def contaminate(
    clean_obs: np.ndarray,
    spec: ContaminationSpec | None,
    rng: np.random.Generator,
    mean_obs: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Apply the contamination process; returns (observations, hit flags).

    The multiplicative variant rescales the observation *noise* and therefore
    needs the noise-free observation means ``mean_obs``.
    """
    clean_obs = np.atleast_2d(np.asarray(clean_obs, dtype=float))
    num_steps = clean_obs.shape[0]
    if spec is None:
        return clean_obs.copy(), np.zeros(num_steps, dtype=bool)
    _check_prob(spec.prob)
    flags = rng.random(num_steps) < spec.prob
    obs = clean_obs.copy()
    hit = np.flatnonzero(flags)
    if hit.size == 0:
        return obs, flags
    if isinstance(spec, AdditiveGaussianContamination):
        obs[hit] += spec.scale * rng.standard_normal((hit.size, obs.shape[1]))
    elif isinstance(spec, AdditiveStudentTContamination):
        obs[hit] += spec.scale * rng.standard_t(spec.dof, size=(hit.size, obs.shape[1]))
    elif isinstance(spec, MultiplicativeExponentialContamination):
        if mean_obs is None:
            raise ConfigurationError("multiplicative contamination needs the noise-free means")
        xi = rng.exponential(spec.scale, size=hit.size)
        obs[hit] = mean_obs[hit] + xi[:, None] * (clean_obs[hit] - mean_obs[hit])
    else:
        raise ConfigurationError(f"unknown contamination spec {type(spec).__name__}")
    return obs, flags


def oracle_mixture(base_cov: np.ndarray, spec: ContaminationSpec, H) -> GaussianMixture:
    """The true observation mixture under additive Gaussian contamination."""
    if not isinstance(spec, AdditiveGaussianContamination):
        raise ConfigurationError("oracle likelihood is defined for additive Gaussian contamination")
    base_cov = np.atleast_2d(np.asarray(base_cov, dtype=float))
    d = base_cov.shape[0]
    wide = base_cov + spec.scale**2 * np.eye(d)
    zero = np.zeros(d)
    return GaussianMixture(H, [(1.0 - spec.prob, zero, base_cov), (spec.prob, zero, wide)])


# -- linear-Gaussian rollout -----------------------------------------------------


def simulate_states(A, Q, x0, steps: int, rng: np.random.Generator) -> np.ndarray:
    """Roll out ``x_t = A x_{t-1} + noise`` for t = 1..steps from the fixed x0."""
    transition = LinearGaussianTransition(A, Q)
    x = np.atleast_1d(np.asarray(x0, dtype=float))
    if steps < 1:
        raise ConfigurationError("steps must be >= 1")
    out = np.empty((steps, x.shape[0]))
    current = x[None, :]
    for t in range(steps):
        current = transition.sample(rng, current)
        out[t] = current[0]
    return out


def observe(states: np.ndarray, likelihood: LikelihoodFamily, rng: np.random.Generator) -> np.ndarray:
    """Draw one observation per state row from the likelihood."""
    return likelihood.sample(rng, np.atleast_2d(states))


def simulate_lgssm(
    A, Q, x0, likelihood: LikelihoodFamily, steps: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """States plus uncontaminated observations for a linear-Gaussian rollout."""
    states = simulate_states(A, Q, x0, steps, rng)
    return states, observe(states, likelihood, rng)


# -- Wiener velocity -------------------------------------------------------------


def wiener_velocity_matrices(dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Discretised 2-D Wiener velocity dynamics (positions observed)."""
    if dt <= 0:
        raise ConfigurationError("dt must be positive")
    eye2 = np.eye(2)
    zero2 = np.zeros((2, 2))
    A = np.block([[eye2, dt * eye2], [zero2, eye2]])
    Q = np.block(
        [
            [dt**3 / 3.0 * eye2, dt**2 / 2.0 * eye2],
            [dt**2 / 2.0 * eye2, dt * eye2],
        ]
    )
    H = np.block([[eye2, zero2]])
    return A, Q, H


@dataclass(frozen=True)
class WienerVelocityConfig:
    """Tracking benchmark: near-constant-velocity target, noisy position fixes."""

    dt: float = 0.1
    steps: int = 1000
    x0: tuple = (140.0, 140.0, 50.0, 0.0)
    obs_scale: float = 1.0
    asymmetric: tuple | None = None  # (sigma_left, sigma_right) two-piece noise
    contamination: ContaminationSpec | None = None

    def matrices(self):
        return wiener_velocity_matrices(self.dt)

    def observation_family(self) -> LikelihoodFamily:
        _, _, H = self.matrices()
        if self.asymmetric is not None:
            left, right = self.asymmetric
            return AsymmetricGaussian(H, left, right)
        return Gaussian(H, self.obs_scale**2 * np.eye(2))

    def model(self, likelihood: LikelihoodFamily | None = None) -> StateSpaceModel:
        A, Q, _ = self.matrices()
        prior = GaussianDensity(np.asarray(self.x0, dtype=float), Q)
        return StateSpaceModel(prior, LinearGaussianTransition(A, Q), likelihood or self.observation_family())


# -- terrain-aided navigation ------------------------------------------------------


@dataclass(frozen=True)
class DEMParams:
    """Synthetic digital elevation map: a peaks surface plus a sinusoid field."""

    alpha: tuple = (300.0, 80.0, 60.0, 40.0, 20.0, 10.0)
    omega: tuple = (5.0, 10.0, 20.0, 30.0, 80.0, 150.0)
    psi: tuple = (4.0, 10.0, 20.0, 40.0, 90.0, 150.0)
    q: float = 3.0 / 2.96e4


def peaks_surface(c, d):
    """The classic peaks test surface scaled by 200."""
    c = np.asarray(c, dtype=float)
    d = np.asarray(d, dtype=float)
    term1 = 3.0 * (1.0 - c) ** 2 * np.exp(-(c**2) - (d + 1.0) ** 2)
    term2 = -10.0 * (c / 5.0 - c**3 - d**5) * np.exp(-(c**2) - d**2)
    term3 = -(1.0 / 3.0) * np.exp(-((c + 1.0) ** 2) - d**2)
    return 200.0 * (term1 + term2 + term3)


def dem_elevation(a, b, params: DEMParams = DEMParams()):
    """Terrain height at map coordinates (a, b)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    qa, qb = params.q * a, params.q * b
    out = peaks_surface(qa, qb)
    for alpha_i, omega_i, psi_i in zip(params.alpha, params.omega, params.psi):
        out = out + alpha_i * np.sin(omega_i * qa) * np.cos(psi_i * qb)
    return out


def tan_observation_map(hub, params: DEMParams = DEMParams()):
    """Observation map: height above terrain and planar distance from the hub."""
    hub = np.asarray(hub, dtype=float)

    def h(states: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(states)
        elevation = states[:, 2] - dem_elevation(states[:, 0], states[:, 1], params)
        distance = np.hypot(states[:, 0] - hub[0], states[:, 1] - hub[1])
        return np.stack([elevation, distance], axis=1)

    return h


def tan_observe(x, hub, rng: np.random.Generator, sigma2: float, params: DEMParams = DEMParams()):
    """One noisy TAN observation of state ``x``."""
    h = tan_observation_map(hub, params)
    return h(x)[0] + math.sqrt(sigma2) * rng.standard_normal(2)


@dataclass(frozen=True)
class TANConfig:
    """Aircraft navigation benchmark over the synthetic terrain."""

    dt: float = 0.1
    steps: int = 2000
    x0: tuple = (-7.5e3, 5.0e3, 1.1e3, 88.15, -60.53, 0.0)
    q_diag: tuple = (4.0, 4.0, 36.0, 0.0841, 0.207936, 5.29)
    obs_variance: float = 400.0
    dem: DEMParams = field(default_factory=DEMParams)
    contamination: ContaminationSpec | None = None

    @property
    def hub(self) -> np.ndarray:
        return np.asarray(self.x0[:2], dtype=float)

    def matrices(self):
        A = np.eye(6)
        A[0, 3] = A[1, 4] = A[2, 5] = self.dt
        return A, np.diag(self.q_diag)

    def observation_family(self) -> LikelihoodFamily:
        h = tan_observation_map(self.hub, self.dem)
        return NonlinearGaussian(h, self.obs_variance * np.eye(2))

    def student_t_family(self, dof: float = 1.0, scale: float | None = None) -> LikelihoodFamily:
        h = tan_observation_map(self.hub, self.dem)
        return StudentT(h, scale if scale is not None else math.sqrt(self.obs_variance), dof, obs_dim=2)

    def model(self, likelihood: LikelihoodFamily | None = None) -> StateSpaceModel:
        A, Q = self.matrices()
        prior = GaussianDensity(np.asarray(self.x0, dtype=float), Q)
        return StateSpaceModel(prior, LinearGaussianTransition(A, Q), likelihood or self.observation_family())


# -- Matern-5/2 Gaussian-process state space ------------------------------------------


@dataclass(frozen=True)
class Matern52StateSpace:
    """Discretised state-space form of a Matern-5/2 Gaussian process."""

    lengthscale: float
    signal_variance: float
    dt: float
    lam: float
    F: np.ndarray
    P_inf: np.ndarray
    A: np.ndarray
    Q: np.ndarray
    H: np.ndarray

    def model(self, obs_variance: float = 1.0) -> StateSpaceModel:
        prior = GaussianDensity(np.zeros(3), self.P_inf)
        return StateSpaceModel(
            prior,
            LinearGaussianTransition(self.A, self.Q),
            Gaussian(self.H, [[obs_variance]]),
        )

    def kernel(self, tau):
        """The Matern-5/2 covariance function k(tau)."""
        r = np.sqrt(5.0) * np.abs(np.asarray(tau, dtype=float)) / self.lengthscale
        return self.signal_variance * (1.0 + r + r**2 / 3.0) * np.exp(-r)


def build_matern52(lengthscale: float, signal_variance: float, dt: float) -> Matern52StateSpace:
    """Construct the (A, Q) pair by matrix exponential and the stationarity identity.

    The stationary covariance ``P_inf`` solves the continuous Lyapunov
    equation for the companion drift matrix; ``Q = P_inf - A P_inf A^T`` then
    makes the discrete chain stationary by construction.
    """
    if lengthscale <= 0 or signal_variance <= 0 or dt <= 0:
        raise ConfigurationError("lengthscale, signal variance and dt must be positive")
    lam = math.sqrt(5.0) / lengthscale
    kappa = signal_variance * lam**2 / 3.0
    F = np.array(
        [
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [-(lam**3), -3.0 * lam**2, -3.0 * lam],
        ]
    )
    P_inf = np.array(
        [
            [signal_variance, 0.0, -kappa],
            [0.0, kappa, 0.0],
            [-kappa, 0.0, signal_variance * lam**4],
        ]
    )
    A = expm(dt * F)
    Q = symmetrise(P_inf - A @ P_inf @ A.T)
    eigvals = np.linalg.eigvalsh(Q)
    if eigvals.min() < -EPS_PSD * max(1.0, eigvals.max()):
        raise ConfigurationError(
            f"Matern process noise not positive semi-definite (min eigenvalue {eigvals.min():.3e})"
        )
    H = np.array([[1.0, 0.0, 0.0]])
    return Matern52StateSpace(lengthscale, signal_variance, dt, lam, F, P_inf, A, Q, H)


@dataclass(frozen=True)
class GPRegressionConfig:
    """Synthetic robust-GP-regression benchmark on a Matern-5/2 draw."""

    lengthscale: float = 0.03
    signal_variance: float = 32.0
    dt: float = 0.005
    steps: int = 200
    obs_variance: float = 1.0
    contamination: ContaminationSpec | None = None

    def state_space(self) -> Matern52StateSpace:
        return build_matern52(self.lengthscale, self.signal_variance, self.dt)

    def model(self) -> StateSpaceModel:
        return self.state_space().model(self.obs_variance)


# -- per-run dataset assembly -------------------------------------------------------


@dataclass
class Dataset:
    """One simulated run: latent states, observations and contamination flags."""

    states: np.ndarray  # (T, d_x)
    observations: np.ndarray  # (T, d_y)
    flags: np.ndarray  # (T,) bool
    clean_observations: np.ndarray  # (T, d_y), noisy but uncontaminated


def draw_observations(
    states: np.ndarray,
    likelihood: LikelihoodFamily,
    contamination: ContaminationSpec | None,
    seed: int,
) -> Dataset:
    """Observation noise and contamination for a fixed state trajectory."""
    rng = rngmod.stream(seed, 1)
    clean = observe(states, likelihood, rng)
    mean_obs = likelihood.location(np.atleast_2d(states))
    obs, flags = contaminate(clean, contamination, rng, mean_obs=mean_obs)
    return Dataset(np.atleast_2d(states), obs, flags, clean)
