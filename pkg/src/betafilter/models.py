"""State-space models, likelihood families and generalised (beta) losses.

A state-space model is the triple (initial density, Markov transition,
likelihood). Likelihood families are location families: they map a state to
the location of a fixed-shape observation density, so residuals ``y - loc(x)``
carry all the dependence on the state. A :class:`GeneralisedLikelihood` pairs
a family with a weighting rule: the standard log-likelihood, or the
beta-divergence loss

    loss_beta(x, y) = (1/(beta+1)) * int g(y'|x)^(beta+1) dy'
                      - (1/beta) * g(y|x)^beta,

whose negative exponential is used as a potential in place of the likelihood.
The integral term is constant in ``x`` for location families and is dropped by
default when weights are self-normalised; pass ``include_constant=True`` to
force its evaluation.
"""

from __future__ import annotations

import abc
import math
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.special import gammaln, logsumexp

from .errors import ConfigurationError, NotClosedFormError, NumericalError

# tolerance for positive-semidefiniteness checks on covariances
EPS_PSD = 1e-10

LOG_2PI = math.log(2.0 * math.pi)

LocationMap = Callable[[np.ndarray], np.ndarray]


def symmetrise(mat: np.ndarray) -> np.ndarray:
    """Return (M + M^T)/2; matrix products drift off symmetric."""
    return 0.5 * (mat + mat.T)


def _as_covariance(cov, dim: int | None = None, *, name: str = "covariance") -> np.ndarray:
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape[0] != cov.shape[1]:
        raise ConfigurationError(f"{name} must be square, got shape {cov.shape}")
    if dim is not None and cov.shape[0] != dim:
        raise ConfigurationError(f"{name} has dimension {cov.shape[0]}, expected {dim}")
    cov = symmetrise(cov)
    eigvals = np.linalg.eigvalsh(cov)
    # tolerance scales with the spectrum so large, well-conditioned systems pass
    if eigvals.min() < -EPS_PSD * max(1.0, abs(eigvals).max()):
        raise ConfigurationError(f"{name} is not positive semi-definite (min eigenvalue {eigvals.min():.3e})")
    cov.setflags(write=False)
    return cov


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    """A factor ``L`` with ``L @ L.T == cov``; tolerates semi-definite inputs."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(cov)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def _chol_or_raise(cov: np.ndarray, name: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"{name} is singular; density undefined") from exc


class _GaussianNoise:
    """Zero-mean Gaussian residual distribution with fixed covariance.

    Sampling tolerates semi-definite covariances; density evaluation needs a
    positive-definite one and raises otherwise (on first use).
    """

    def __init__(self, cov, dim: int | None = None, *, name: str = "observation covariance"):
        self.cov = _as_covariance(cov, dim, name=name)
        self.dim = self.cov.shape[0]
        self._name = name
        self._sample_factor = _psd_factor(self.cov)
        self._chol = None
        self._inv_chol = None
        self._log_norm = None
        diag = np.diag(np.diag(self.cov))
        self._is_diagonal = np.array_equal(self.cov, diag) and np.all(np.diag(self.cov) > 0)
        self._inv_std = 1.0 / np.sqrt(np.diag(self.cov)) if self._is_diagonal else None

    def _density_setup(self):
        if self._chol is None:
            self._chol = _chol_or_raise(self.cov, self._name)
            self._inv_chol = np.linalg.inv(self._chol)
            self._log_norm = -0.5 * self.dim * LOG_2PI - np.log(np.diag(self._chol)).sum()
        return self._log_norm

    def logpdf(self, residuals: np.ndarray) -> np.ndarray:
        log_norm = self._density_setup()
        if self._is_diagonal:
            z = residuals * self._inv_std
        else:
            z = residuals @ self._inv_chol.T
        return log_norm - 0.5 * np.einsum("...i,...i->...", z, z)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.standard_normal((n, self.dim)) @ self._sample_factor.T

    def power_integral(self, beta: float) -> float:
        # int N(r; 0, Sigma)^(beta+1) dr = ((2 pi)^d |Sigma|)^(-beta/2) (beta+1)^(-d/2)
        self._density_setup()
        log_det = 2.0 * np.log(np.diag(self._chol)).sum()
        return math.exp(-0.5 * beta * (self.dim * LOG_2PI + log_det) - 0.5 * self.dim * math.log(beta + 1.0))

    @property
    def max_logpdf(self) -> float:
        return self._density_setup()


def _make_location(location, state_dim_hint: int | None = None):
    """Normalise a location spec (matrix or callable) into a batch callable."""
    if callable(location):
        return location, None
    H = np.asarray(location, dtype=float)
    if H.ndim != 2:
        raise ConfigurationError(f"observation matrix must be 2-D, got shape {H.shape}")
    H = H.copy()
    H.setflags(write=False)
    return (lambda states: states @ H.T), H


class LikelihoodFamily(abc.ABC):
    """A location-family observation density ``g(y | x)``.

    Subclasses define the location map, the residual density, residual
    sampling, and (where closed form) the density power integral used by the
    beta loss.
    """

    obs_dim: int

    @abc.abstractmethod
    def location(self, states: np.ndarray) -> np.ndarray:
        """Map states (N, d_x) to observation locations (N, d_y)."""

    @abc.abstractmethod
    def _residual_log_density(self, residuals: np.ndarray) -> np.ndarray:
        """Log density of residuals, shape (N, d_y) -> (N,)."""

    @abc.abstractmethod
    def _sample_residual(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw n residual vectors."""

    @abc.abstractmethod
    def max_log_density(self) -> float:
        """sup_y log g(y | x); attained at zero residual for the symmetric families."""

    def log_density(self, states: np.ndarray, y: np.ndarray) -> np.ndarray:
        """log g(y | x) for one observation against a batch of states."""
        states, squeeze = _atleast_batch(states)
        y = np.asarray(y, dtype=float).reshape(-1)
        loc = self.location(states)
        if y.shape[0] != loc.shape[1]:
            raise ConfigurationError(
                f"observation has dimension {y.shape[0]}, likelihood expects {loc.shape[1]}"
            )
        out = self._residual_log_density(y[None, :] - loc)
        return float(out[0]) if squeeze else out

    def sample(self, rng: np.random.Generator, states: np.ndarray) -> np.ndarray:
        """Draw one observation per state."""
        states, squeeze = _atleast_batch(states)
        out = self.location(states) + self._sample_residual(rng, states.shape[0])
        return out[0] if squeeze else out

    def sample_residual(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self._sample_residual(rng, n)

    def power_integral(self, beta: float, x: np.ndarray | None = None) -> float:
        """int g(y' | x)^(beta+1) dy'; constant in x for location families."""
        raise NotClosedFormError(
            f"{type(self).__name__} has no closed-form density power integral"
        )


def _atleast_batch(states) -> tuple[np.ndarray, bool]:
    states = np.asarray(states, dtype=float)
    if states.ndim == 1:
        return states[None, :], True
    return states, False


class Gaussian(LikelihoodFamily):
    """Linear-Gaussian observations ``y = H x + e``, ``e ~ N(0, cov)``."""

    def __init__(self, H, cov):
        self._loc_fn, self.H = _make_location(H)
        if self.H is None:
            raise ConfigurationError("Gaussian requires an observation matrix; use NonlinearGaussian for maps")
        self.noise = _GaussianNoise(cov, self.H.shape[0])
        self.obs_dim = self.H.shape[0]
        self.state_dim = self.H.shape[1]

    def location(self, states):
        return self._loc_fn(states)

    def _residual_log_density(self, residuals):
        return self.noise.logpdf(residuals)

    def _sample_residual(self, rng, n):
        return self.noise.sample(rng, n)

    def max_log_density(self):
        return self.noise.max_logpdf

    def power_integral(self, beta, x=None):
        _check_beta(beta)
        return self.noise.power_integral(beta)

    @property
    def cov(self):
        return self.noise.cov


class NonlinearGaussian(LikelihoodFamily):
    """Observations ``y = h(x) + e`` with Gaussian noise and arbitrary ``h``."""

    def __init__(self, fn: LocationMap, cov, obs_dim: int | None = None):
        if not callable(fn):
            raise ConfigurationError("NonlinearGaussian requires a callable observation map")
        self._loc_fn = fn
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        self.noise = _GaussianNoise(cov, obs_dim)
        self.obs_dim = self.noise.dim

    def location(self, states):
        return np.atleast_2d(self._loc_fn(states))

    def _residual_log_density(self, residuals):
        return self.noise.logpdf(residuals)

    def _sample_residual(self, rng, n):
        return self.noise.sample(rng, n)

    def max_log_density(self):
        return self.noise.max_logpdf

    def power_integral(self, beta, x=None):
        _check_beta(beta)
        return self.noise.power_integral(beta)


class StudentT(LikelihoodFamily):
    """Independent per-dimension Student-t residuals around a location map."""

    def __init__(self, location, scale, dof: float, obs_dim: int | None = None):
        self._loc_fn, H = _make_location(location)
        if H is not None:
            obs_dim = H.shape[0]
        if obs_dim is None:
            raise ConfigurationError("StudentT with a callable location needs obs_dim")
        if dof <= 0:
            raise ConfigurationError("degrees of freedom must be positive")
        self.obs_dim = obs_dim
        self.dof = float(dof)
        self.scale = np.broadcast_to(np.asarray(scale, dtype=float), (obs_dim,)).copy()
        if np.any(self.scale <= 0):
            raise ConfigurationError("StudentT scale must be positive")
        self._log_norm = float(
            obs_dim * (gammaln((self.dof + 1) / 2) - gammaln(self.dof / 2) - 0.5 * math.log(self.dof * math.pi))
            - np.log(self.scale).sum()
        )

    def location(self, states):
        return np.atleast_2d(self._loc_fn(states))

    def _residual_log_density(self, residuals):
        z2 = (residuals / self.scale) ** 2
        return self._log_norm - 0.5 * (self.dof + 1.0) * np.log1p(z2 / self.dof).sum(axis=-1)

    def _sample_residual(self, rng, n):
        return rng.standard_t(self.dof, size=(n, self.obs_dim)) * self.scale

    def max_log_density(self):
        return self._log_norm


class AsymmetricGaussian(LikelihoodFamily):
    """Two-piece Gaussian residuals: left tail scale differs from the right.

    The density is continuous at zero and integrates to one:

        p(r) = c * exp(-r^2 / (2 sigma_left^2))   for r < 0,
        p(r) = c * exp(-r^2 / (2 sigma_right^2))  for r >= 0,

    with ``c = 2 / (sqrt(2 pi) (sigma_left + sigma_right))``, applied
    independently per observation dimension.
    """

    def __init__(self, location, sigma_left: float, sigma_right: float, obs_dim: int | None = None):
        self._loc_fn, H = _make_location(location)
        if H is not None:
            obs_dim = H.shape[0]
        if obs_dim is None:
            raise ConfigurationError("AsymmetricGaussian with a callable location needs obs_dim")
        if sigma_left <= 0 or sigma_right <= 0:
            raise ConfigurationError("two-piece scales must be positive")
        self.obs_dim = obs_dim
        self.sigma_left = float(sigma_left)
        self.sigma_right = float(sigma_right)
        self._log_c = math.log(2.0) - 0.5 * LOG_2PI - math.log(self.sigma_left + self.sigma_right)

    def location(self, states):
        return np.atleast_2d(self._loc_fn(states))

    def _residual_log_density(self, residuals):
        sigma = np.where(residuals < 0.0, self.sigma_left, self.sigma_right)
        return self.obs_dim * self._log_c - 0.5 * ((residuals / sigma) ** 2).sum(axis=-1)

    def _sample_residual(self, rng, n):
        p_right = self.sigma_right / (self.sigma_left + self.sigma_right)
        right = rng.random((n, self.obs_dim)) < p_right
        mags = np.abs(rng.standard_normal((n, self.obs_dim)))
        return np.where(right, mags * self.sigma_right, -mags * self.sigma_left)

    def max_log_density(self):
        return self.obs_dim * self._log_c

    def power_integral(self, beta, x=None):
        # per dimension: c^(b+1) * sqrt(2 pi / (b+1)) * (sl + sr) / 2
        _check_beta(beta)
        per_dim = math.exp((beta + 1.0) * self._log_c) * math.sqrt(2.0 * math.pi / (beta + 1.0)) * (
            self.sigma_left + self.sigma_right
        ) / 2.0
        return per_dim ** self.obs_dim


class GaussianMixture(LikelihoodFamily):
    """Mixture of Gaussians around a common location map.

    ``components`` is a sequence of (weight, mean_offset, covariance); the
    density of the residual ``r = y - loc(x)`` is ``sum_k w_k N(r; m_k, S_k)``.
    """

    def __init__(self, location, components: Sequence[tuple], obs_dim: int | None = None):
        self._loc_fn, H = _make_location(location)
        if H is not None:
            obs_dim = H.shape[0]
        if not components:
            raise ConfigurationError("mixture needs at least one component")
        weights, offsets, covs = [], [], []
        for w, m, c in components:
            weights.append(float(w))
            offsets.append(np.atleast_1d(np.asarray(m, dtype=float)))
            covs.append(np.atleast_2d(np.asarray(c, dtype=float)))
        if obs_dim is None:
            obs_dim = offsets[0].shape[0]
        self.obs_dim = obs_dim
        self.weights = np.asarray(weights)
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ConfigurationError("mixture weights must be non-negative and sum to 1 within 1e-12")
        self.offsets = np.stack([np.broadcast_to(m, (obs_dim,)) for m in offsets])
        self.noises = [_GaussianNoise(c, obs_dim, name="mixture component covariance") for c in covs]

    def location(self, states):
        return np.atleast_2d(self._loc_fn(states))

    def _residual_log_density(self, residuals):
        parts = [
            math.log(w) + noise.logpdf(residuals - m)
            for w, m, noise in zip(self.weights, self.offsets, self.noises)
            if w > 0.0
        ]
        return logsumexp(np.stack(parts, axis=0), axis=0)

    def _sample_residual(self, rng, n):
        ks = rng.choice(len(self.weights), size=n, p=self.weights)
        out = np.empty((n, self.obs_dim))
        for k, noise in enumerate(self.noises):
            mask = ks == k
            if mask.any():
                out[mask] = self.offsets[k] + noise.sample(rng, int(mask.sum()))
        return out

    def max_log_density(self):
        # evaluated on the component means; exact for well-separated or
        # concentric mixtures, a lower bound otherwise
        vals = [self._residual_log_density(m[None, :])[0] for m in self.offsets]
        return float(max(vals))

    def power_integral(self, beta, x=None):
        """Closed-ish form for shared-covariance mixtures.

        After whitening with the common covariance factor the component
        offsets span a subspace of dimension r <= K-1; the integral
        factorises into a pure Gaussian part and an r-dimensional numerical
        integral. Supported for r <= 2.
        """
        _check_beta(beta)
        base = self.noises[0]
        for noise in self.noises[1:]:
            if not np.allclose(noise.cov, base.cov, rtol=0.0, atol=1e-12):
                raise NotClosedFormError("mixture power integral needs a shared component covariance")
        d = self.obs_dim
        base._density_setup()
        log_det_half = np.log(np.diag(base._chol)).sum()
        deltas = self.offsets @ base._inv_chol.T
        deltas = deltas - deltas[0]
        # orthonormal basis of the offset span
        u_mat, svals, _ = np.linalg.svd(deltas.T, full_matrices=True)
        rank = int((svals > 1e-12).sum())
        if rank > 2:
            raise NotClosedFormError("mixture power integral supported for offset span of dimension <= 2")
        coords = deltas @ u_mat[:, :rank]
        gauss_part = math.exp(-0.5 * beta * (d - rank) * LOG_2PI - 0.5 * (d - rank) * math.log(beta + 1.0))

        weights = self.weights

        if rank == 0:
            reduced = 1.0
        elif rank == 1:
            c = coords[:, 0]

            def dens1(u):
                return np.exp(
                    logsumexp(np.log(weights) - 0.5 * (u - c) ** 2 - 0.5 * LOG_2PI)
                ) ** (beta + 1.0)

            lo, hi = c.min() - 40.0, c.max() + 40.0
            reduced, _ = integrate.quad(dens1, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=400)
        else:
            cs = coords

            def dens2(v, u):
                z = np.stack([np.full_like(cs[:, 0], u), np.full_like(cs[:, 1], v)], axis=1) - cs
                return np.exp(logsumexp(np.log(weights) - 0.5 * (z**2).sum(axis=1) - LOG_2PI)) ** (beta + 1.0)

            lo0, hi0 = cs[:, 0].min() - 40.0, cs[:, 0].max() + 40.0
            lo1, hi1 = cs[:, 1].min() - 40.0, cs[:, 1].max() + 40.0
            reduced, _ = integrate.dblquad(dens2, lo0, hi0, lo1, hi1, epsabs=1e-11, epsrel=1e-10)
        return math.exp(-beta * log_det_half) * gauss_part * reduced


def _check_beta(beta: float) -> None:
    if not beta > 0.0:
        raise ConfigurationError(f"beta must be positive, got {beta}")


class GeneralisedLikelihood:
    """A likelihood family paired with a weighting rule.

    ``beta is None`` selects the standard rule (log-likelihood weights);
    otherwise weights come from the beta-divergence loss. For location
    families the loss's power-integral term does not depend on the state and
    is dropped unless ``include_constant`` is set, since self-normalised
    weights are unaffected.
    """

    def __init__(self, base: LikelihoodFamily, beta: float | None = None, include_constant: bool = False):
        if beta is not None:
            _check_beta(beta)
        self.base = base
        self.beta = beta
        self.include_constant = include_constant
        self._constant = None
        if beta is not None and include_constant:
            self._constant = base.power_integral(beta) / (beta + 1.0)

    @classmethod
    def standard(cls, base: LikelihoodFamily) -> "GeneralisedLikelihood":
        return cls(base)

    @classmethod
    def with_beta(cls, base: LikelihoodFamily, beta: float, include_constant: bool = False) -> "GeneralisedLikelihood":
        return cls(base, beta=beta, include_constant=include_constant)

    @property
    def is_standard(self) -> bool:
        return self.beta is None

    def log_potential(self, states: np.ndarray, y: np.ndarray):
        """Log weight contribution of observation ``y`` at the given states.

        Standard rule: log g(y|x). Beta rule: g(y|x)^beta / beta minus the
        (optional) constant term; bounded above whenever g is bounded.
        """
        logg = self.base.log_density(states, y)
        if self.beta is None:
            return logg
        pot = np.exp(self.beta * np.asarray(logg)) / self.beta
        if self._constant is not None:
            pot = pot - self._constant
        return float(pot) if np.ndim(logg) == 0 else pot

    def log_potential_max(self) -> float:
        """sup over states of the log potential; used by the auxiliary stabiliser."""
        max_logg = self.base.max_log_density()
        if self.beta is None:
            return max_logg
        pot = math.exp(self.beta * max_logg) / self.beta
        if self._constant is not None:
            pot -= self._constant
        return pot

    def beta_loss(self, states: np.ndarray, y: np.ndarray):
        """The beta-divergence loss; always evaluates the power-integral term."""
        if self.beta is None:
            raise ConfigurationError("beta_loss requires the beta rule")
        const = self.base.power_integral(self.beta) / (self.beta + 1.0)
        logg = self.base.log_density(states, y)
        return const - np.exp(self.beta * np.asarray(logg)) / self.beta


# -- module-level forms of the basic operations -------------------------------

def log_density(family: LikelihoodFamily, x: np.ndarray, y: np.ndarray):
    return family.log_density(x, y)


def power_integral(family: LikelihoodFamily, x: np.ndarray | None, beta: float) -> float:
    return family.power_integral(beta, x)


def beta_loss(gl: GeneralisedLikelihood, x: np.ndarray, y: np.ndarray):
    return gl.beta_loss(x, y)


def log_potential(gl: GeneralisedLikelihood, x: np.ndarray, y: np.ndarray):
    return gl.log_potential(x, y)


# -- state-space model ---------------------------------------------------------

class GaussianDensity:
    """A Gaussian over the state, used for priors and beliefs."""

    def __init__(self, mean, cov):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float)).copy()
        self.cov = _as_covariance(cov, self.mean.shape[0], name="prior covariance")
        self.mean.setflags(write=False)
        self._factor = _psd_factor(self.cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.mean + rng.standard_normal((n, self.dim)) @ self._factor.T


class LinearGaussianTransition:
    """Markov kernel ``x_t = A x_{t-1} + v``, ``v ~ N(0, Q)``."""

    def __init__(self, A, Q):
        self.A = np.atleast_2d(np.asarray(A, dtype=float)).copy()
        if self.A.shape[0] != self.A.shape[1]:
            raise ConfigurationError(f"transition matrix must be square, got {self.A.shape}")
        self.Q = _as_covariance(Q, self.A.shape[0], name="transition covariance")
        self.A.setflags(write=False)
        self._factor = _psd_factor(self.Q)
        self._chol = None  # density factor, computed on demand (requires PD Q)
        self._log_norm = None

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    def mean(self, states: np.ndarray) -> np.ndarray:
        return states @ self.A.T

    def sample(self, rng: np.random.Generator, states: np.ndarray) -> np.ndarray:
        return self.mean(states) + rng.standard_normal(states.shape) @ self._factor.T

    def _density_setup(self):
        if self._chol is None:
            chol = _chol_or_raise(self.Q, "transition covariance")
            self._chol = np.linalg.inv(chol)
            self._log_norm = -0.5 * self.state_dim * LOG_2PI - np.log(np.diag(chol)).sum()
        return self._chol, self._log_norm

    def log_density(self, next_states: np.ndarray, prev_states: np.ndarray) -> np.ndarray:
        inv_chol, log_norm = self._density_setup()
        z = (np.atleast_2d(next_states) - self.mean(np.atleast_2d(prev_states))) @ inv_chol.T
        return log_norm - 0.5 * np.einsum("...i,...i->...", z, z)

    def log_density_matrix(self, next_states: np.ndarray, prev_states: np.ndarray) -> np.ndarray:
        """Pairwise log f(next_m | prev_n) with shape (M, N)."""
        inv_chol, log_norm = self._density_setup()
        z = (next_states[:, None, :] - self.mean(prev_states)[None, :, :]) @ inv_chol.T
        return log_norm - 0.5 * np.einsum("mni,mni->mn", z, z)


class StateSpaceModel:
    """The (prior, transition, likelihood) triple defining a hidden Markov model."""

    def __init__(self, prior: GaussianDensity, transition, likelihood: LikelihoodFamily):
        self.prior = prior
        self.transition = transition
        self.likelihood = likelihood
        self.state_dim = prior.dim
        self.obs_dim = likelihood.obs_dim
        if getattr(transition, "state_dim", self.state_dim) != self.state_dim:
            raise ConfigurationError(
                f"transition dimension {transition.state_dim} does not match prior dimension {self.state_dim}"
            )
        H = getattr(likelihood, "H", None)
        if H is not None and H.shape[1] != self.state_dim:
            raise ConfigurationError(
                f"observation matrix maps {H.shape[1]}-dim states, model is {self.state_dim}-dim"
            )
