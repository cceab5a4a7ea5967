"""Exact filtering and smoothing for linear-Gaussian state-space models.

Time-invariant systems only; covariance updates use the Joseph form and every
covariance is re-symmetrised, keeping asymmetry at rounding level. Innovation
systems are solved by Cholesky factorisation; a factorisation failure raises
rather than silently regularising.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .errors import ConfigurationError, NumericalError
from .models import LOG_2PI, GaussianDensity, StateSpaceModel, symmetrise


@dataclass
class GaussianBelief:
    """Mean and covariance of a Gaussian state estimate."""

    mean: np.ndarray
    cov: np.ndarray


@dataclass
class KalmanResult:
    filtered: list[GaussianBelief]  # t = 1..T
    predicted: list[GaussianBelief]  # t = 1..T, beliefs before each update
    log_likelihoods: np.ndarray  # (T,) per-step Gaussian log-likelihood


def kalman_filter(
    A, Q, H, R, prior: GaussianDensity | GaussianBelief, ys, observed_mask=None
) -> KalmanResult:
    """Standard predict/update recursion.

    ``prior`` is the belief over the initial (pre-data) state; steps whose
    observation is masked or NaN perform the prediction only.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    ys = np.asarray(ys, dtype=float)
    if ys.ndim == 1:
        ys = ys[:, None]
    d_x, d_y = A.shape[0], H.shape[0]
    if H.shape[1] != d_x or Q.shape != (d_x, d_x) or R.shape != (d_y, d_y):
        raise ConfigurationError("inconsistent system matrix dimensions")
    if ys.shape[1] != d_y:
        raise ConfigurationError(f"observations have dimension {ys.shape[1]}, expected {d_y}")
    if observed_mask is None:
        mask = ~np.isnan(ys).any(axis=1)
    else:
        mask = np.asarray(observed_mask, dtype=bool)

    mean = np.asarray(prior.mean, dtype=float)
    cov = np.asarray(prior.cov, dtype=float)
    eye = np.eye(d_x)

    filtered: list[GaussianBelief] = []
    predicted: list[GaussianBelief] = []
    lls = np.zeros(ys.shape[0])
    for t, y in enumerate(ys, start=1):
        mean_pred = A @ mean
        cov_pred = symmetrise(A @ cov @ A.T + Q)
        predicted.append(GaussianBelief(mean_pred, cov_pred))
        if not mask[t - 1]:
            mean, cov = mean_pred, cov_pred
            filtered.append(GaussianBelief(mean, cov))
            continue
        innovation = y - H @ mean_pred
        s_mat = symmetrise(H @ cov_pred @ H.T + R)
        try:
            chol = np.linalg.cholesky(s_mat)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("singular innovation covariance", t) from exc
        gain = cov_pred @ H.T @ sla.cho_solve((chol, True), np.eye(d_y))
        mean = mean_pred + gain @ innovation
        joseph = eye - gain @ H
        cov = symmetrise(joseph @ cov_pred @ joseph.T + gain @ R @ gain.T)
        z = sla.solve_triangular(chol, innovation, lower=True)
        lls[t - 1] = -0.5 * (d_y * LOG_2PI + z @ z) - np.log(np.diag(chol)).sum()
        filtered.append(GaussianBelief(mean, cov))
    return KalmanResult(filtered, predicted, lls)


def kalman_filter_model(model: StateSpaceModel, ys, observed_mask=None) -> KalmanResult:
    """Run the filter for a model with a linear-Gaussian likelihood."""
    lik = model.likelihood
    H = getattr(lik, "H", None)
    if H is None:
        raise ConfigurationError("exact filtering needs a linear-Gaussian likelihood")
    return kalman_filter(
        model.transition.A, model.transition.Q, H, lik.cov, model.prior, ys, observed_mask
    )


def rts_smoother(result: KalmanResult, A) -> list[GaussianBelief]:
    """Backward recursion over the filter output; smoothed = filtered at T."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    filtered, predicted = result.filtered, result.predicted
    smoothed = [None] * len(filtered)
    smoothed[-1] = GaussianBelief(filtered[-1].mean.copy(), filtered[-1].cov.copy())
    for t in range(len(filtered) - 2, -1, -1):
        pred_next = predicted[t + 1]
        try:
            gain = np.linalg.solve(pred_next.cov, A @ filtered[t].cov).T
        except np.linalg.LinAlgError as exc:
            raise NumericalError("singular predicted covariance in smoother", t + 1) from exc
        mean = filtered[t].mean + gain @ (smoothed[t + 1].mean - pred_next.mean)
        cov = symmetrise(
            filtered[t].cov + gain @ (smoothed[t + 1].cov - pred_next.cov) @ gain.T
        )
        smoothed[t] = GaussianBelief(mean, cov)
    return smoothed
