"""Gaussian linear algebra: SPD square roots, sampling, densities.

Also holds the dense joint-Gaussian construction of a whole scenario, which
materialises every covariance block explicitly and serves as the brute-force
reference for the recursive filters.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DimensionCapError, NotPositiveDefiniteError, ValidationError

LOG_2PI = np.log(2.0 * np.pi)

#: eigenvalues below this fraction of the largest are treated as non-positive
EIG_FLOOR = 1e-12

DENSE_CAP = 2000


def symmetrize(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def check_symmetric(P, tol=1e-12, name="matrix"):
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {P.shape}")
    scale = max(np.max(np.abs(P)), np.finfo(float).tiny)
    if np.max(np.abs(P - P.T)) > tol * scale:
        raise ValidationError(f"{name} is not symmetric")
    return P


def check_spd(P, name="matrix"):
    """Validate symmetry and positive definiteness; returns the symmetrised array."""
    P = symmetrize(check_symmetric(P, name=name))
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"{name} is not positive definite") from exc
    return P


def spd_sqrt(P):
    """Unique symmetric positive-definite square root ``H`` with ``H @ H.T == P``.

    Computed from the symmetric eigendecomposition, so ``H`` is symmetric
    (a Cholesky factor would be triangular).

    Raises:
        ValidationError: ``P`` is not square or not symmetric.
        NotPositiveDefiniteError: an eigenvalue is at or below
            ``EIG_FLOOR * max(eigenvalue)``.
    """
    P = symmetrize(check_symmetric(P, name="covariance"))
    lam, U = np.linalg.eigh(P)
    top = lam[-1] if lam.size else 0.0
    if top <= 0.0 or lam[0] <= EIG_FLOOR * top:
        raise NotPositiveDefiniteError(
            f"covariance is not positive definite (eigenvalues {lam[0]:.3e} .. {top:.3e})"
        )
    H = (U * np.sqrt(lam)) @ U.T
    return symmetrize(H)


def psd_factor(P, tol=1e-9):
    """Return ``L`` with ``L @ L.T == P`` for a positive semi-definite ``P``.

    Cholesky when it succeeds, otherwise an eigendecomposition with tiny
    negative eigenvalues (down to ``-tol * trace``) clipped to zero.
    """
    P = symmetrize(np.asarray(P, dtype=float))
    try:
        return np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        pass
    lam, U = np.linalg.eigh(P)
    floor = -tol * max(np.trace(P), np.finfo(float).tiny)
    if lam[0] < floor:
        raise NotPositiveDefiniteError(f"matrix is not positive semi-definite (min eigenvalue {lam[0]:.3e})")
    return U * np.sqrt(np.clip(lam, 0.0, None))


@dataclass(frozen=True)
class GaussianDist:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValidationError(f"mean {mean.shape} and covariance {cov.shape} disagree")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self):
        return self.mean.size


def sample_mvn(dist, n, rng):
    """Draw ``n`` i.i.d. samples, returned as an ``(n, dim)`` array."""
    if n < 1:
        raise ValidationError("sample count must be at least 1")
    L = psd_factor(dist.cov)
    z = rng.standard_normal((n, dist.dim))
    return dist.mean + z @ L.T


def log_mvn_density(x, dist):
    """Log density of ``N(dist.mean, dist.cov)`` at ``x`` (one point or a stack of rows)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != dist.dim:
        raise ValidationError(f"point has dimension {x.shape[-1]}, distribution has {dist.dim}")
    try:
        L = np.linalg.cholesky(symmetrize(dist.cov))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("covariance is singular or not positive definite") from exc
    resid = (x - dist.mean).reshape(-1, dist.dim).T
    w = scipy.linalg.solve_triangular(L, resid, lower=True, check_finite=False)
    logdet = 2.0 * np.sum(np.log(np.diagonal(L)))
    out = -0.5 * (dist.dim * LOG_2PI + logdet + np.sum(w * w, axis=0))
    return out[0] if x.ndim == 1 else out


def condition(dist, n_keep, observed):
    """Law of the first ``n_keep`` coordinates given the remaining ones equal ``observed``."""
    m, C = dist.mean, dist.cov
    Cxx, Cxy, Cyy = C[:n_keep, :n_keep], C[:n_keep, n_keep:], C[n_keep:, n_keep:]
    cf = scipy.linalg.cho_factor(Cyy, lower=True)
    gain = scipy.linalg.cho_solve(cf, Cxy.T).T
    mean = m[:n_keep] + gain @ (np.asarray(observed, dtype=float) - m[n_keep:])
    cov = symmetrize(Cxx - gain @ Cxy.T)
    return GaussianDist(mean, cov)


def _dense_state_blocks(scenario, rho):
    d = scenario.expand_rho(rho)
    K = len(scenario.priors)
    n = d.size
    cov = np.empty((K * n, K * n))
    powers = [np.ones(n)]
    for _ in range(1, K):
        powers.append(powers[-1] * d)
    for i in range(K):
        Hi = scenario.priors[i].sqrt
        for j in range(K):
            Hj = scenario.priors[j].sqrt
            cov[i * n:(i + 1) * n, j * n:(j + 1) * n] = (Hi * powers[abs(i - j)]) @ Hj.T
    mean = np.concatenate([p.mean for p in scenario.priors])
    return mean, symmetrize(cov)


def _check_cap(scenario, cap):
    n = scenario.state_dim
    m = scenario.obs_dim
    K = len(scenario.priors)
    if n * K + m * K > cap:
        raise DimensionCapError(f"dense construction needs {(n + m) * K} > cap {cap} dimensions")


def dense_joint_xy_distribution(scenario, rho, cap=DENSE_CAP):
    """Exact joint law of the stacked vector ``(X_1..X_K, Y_1..Y_K)``."""
    _check_cap(scenario, cap)
    mx, Cxx = _dense_state_blocks(scenario, rho)
    A = scipy.linalg.block_diag(*[o.A for o in scenario.obs_models])
    R = scipy.linalg.block_diag(*[o.R for o in scenario.obs_models])
    y0 = np.concatenate([o.Y0 for o in scenario.obs_models])
    my = A @ mx + y0
    Cxy = Cxx @ A.T
    Cyy = A @ Cxy + R
    mean = np.concatenate([mx, my])
    cov = np.block([[Cxx, Cxy], [Cxy.T, Cyy]])
    return GaussianDist(mean, symmetrize(cov))


def dense_joint_y_distribution(scenario, rho, cap=DENSE_CAP):
    """Exact Gaussian law of the concatenated observations ``(Y_1..Y_K)`` given ``rho``.

    Block ``(i, j)`` of the covariance is
    ``A_i H_i D^|i-j| H_j A_j^T + [i == j] R_i``.
    """
    _check_cap(scenario, cap)
    joint = dense_joint_xy_distribution(scenario, rho, cap)
    nx = scenario.state_dim * len(scenario.priors)
    return GaussianDist(joint.mean[nx:], joint.cov[nx:, nx:])
