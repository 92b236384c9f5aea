"""Kalman filtering, RTS smoothing and FFBS trajectory sampling.

The recursions follow the affine model ``X_{k+1} = M_k X_k + b_k + w_k``,
``Y_k = A_k X_k + Y0_k + v_k`` with ``w_k ~ N(0, Q_k)`` and
``v_k ~ N(0, R_k)``. Covariances are re-symmetrised after every step and
the update uses the Joseph form.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NotPositiveDefiniteError, ValidationError
from .gaussian import LOG_2PI, psd_factor, symmetrize


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray
    k: int


@dataclass(frozen=True)
class FilterOutput:
    predicted: list
    filtered: list
    log_likelihood: float


def _check_inputs(transitions, obs_models, Y):
    K = len(obs_models)
    if len(transitions) != K - 1:
        raise ValidationError(f"need {K - 1} transitions for {K} frequencies, got {len(transitions)}")
    if len(Y) != K:
        raise ValidationError(f"need {K} observation vectors, got {len(Y)}")


def kalman_filter(m1, P1, transitions, obs_models, Y):
    """Forward filter returning predicted/filtered beliefs and ``log p(Y)``.

    Args:
        m1, P1: prior mean and covariance of the first state.
        transitions: ``K - 1`` objects with ``M``, ``b``, ``Q``.
        obs_models: ``K`` objects with ``A``, ``Y0``, ``R``.
        Y: ``K`` observation vectors.

    Raises:
        NotPositiveDefiniteError: an innovation covariance is not positive definite.
    """
    _check_inputs(transitions, obs_models, Y)
    n = np.asarray(m1).size
    eye = np.eye(n)
    mean = np.asarray(m1, dtype=float)
    cov = symmetrize(np.asarray(P1, dtype=float))
    predicted, filtered = [], []
    loglik = 0.0
    for k, obs in enumerate(obs_models):
        if k > 0:
            tr = transitions[k - 1]
            mean = tr.M @ mean + tr.b
            cov = symmetrize(tr.M @ cov @ tr.M.T + tr.Q)
        predicted.append(GaussianBelief(mean, cov, k))

        A = obs.A
        innov = np.asarray(Y[k], dtype=float) - A @ mean - obs.Y0
        CAt = cov @ A.T
        S = symmetrize(A @ CAt + obs.R)
        try:
            cf = scipy.linalg.cho_factor(S, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError(f"innovation covariance at frequency {k} is not positive definite") from exc
        white = scipy.linalg.solve_triangular(cf[0], innov, lower=True, check_finite=False)
        logdet = 2.0 * np.sum(np.log(np.diagonal(cf[0])))
        loglik += -0.5 * (innov.size * LOG_2PI + logdet + white @ white)

        gain = scipy.linalg.cho_solve(cf, CAt.T, check_finite=False).T
        mean = mean + gain @ innov
        IKA = eye - gain @ A
        cov = symmetrize(IKA @ cov @ IKA.T + gain @ obs.R @ gain.T)
        filtered.append(GaussianBelief(mean, cov, k))
    if not np.isfinite(loglik):
        raise NotPositiveDefiniteError("log-likelihood is not finite")
    return FilterOutput(predicted=predicted, filtered=filtered, log_likelihood=float(loglik))


def _smoother_gain(filt, pred_next, M):
    """``Sigma_f M^T Sigma_p^{-1}`` for one backward step."""
    try:
        cf = scipy.linalg.cho_factor(pred_next.cov, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(
            f"predicted covariance at frequency {pred_next.k} is singular"
        ) from exc
    return scipy.linalg.cho_solve(cf, M @ filt.cov, check_finite=False).T


def rts_smoother(out, transitions):
    """Rauch-Tung-Striebel backward pass giving the marginals of ``X_k | Y``."""
    K = len(out.filtered)
    smoothed = [None] * K
    smoothed[-1] = out.filtered[-1]
    for k in range(K - 2, -1, -1):
        filt, pred = out.filtered[k], out.predicted[k + 1]
        G = _smoother_gain(filt, pred, transitions[k].M)
        nxt = smoothed[k + 1]
        mean = filt.mean + G @ (nxt.mean - pred.mean)
        cov = symmetrize(filt.cov + G @ (nxt.cov - pred.cov) @ G.T)
        smoothed[k] = GaussianBelief(mean, cov, k)
    return smoothed


def backward_sample(out, transitions, rng, n=None):
    """Forward-filter backward-sample draws of the whole trajectory.

    Returns shape ``(K, dim)``, or ``(n, K, dim)`` when ``n`` is given.
    """
    K = len(out.filtered)
    size = 1 if n is None else n
    dim = out.filtered[0].mean.size
    traj = np.empty((size, K, dim))
    last = out.filtered[-1]
    traj[:, -1] = last.mean + rng.standard_normal((size, dim)) @ psd_factor(last.cov).T
    for k in range(K - 2, -1, -1):
        filt, pred = out.filtered[k], out.predicted[k + 1]
        G = _smoother_gain(filt, pred, transitions[k].M)
        cov = symmetrize(filt.cov - G @ transitions[k].M @ filt.cov)
        mean = filt.mean + (traj[:, k + 1] - pred.mean) @ G.T
        traj[:, k] = mean + rng.standard_normal((size, dim)) @ psd_factor(cov).T
    return traj[0] if n is None else traj
