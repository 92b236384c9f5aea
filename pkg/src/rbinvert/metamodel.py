"""Linear Gaussian observation model: fitting, error analysis, synthetic solver.

Observation vectors at one frequency have length ``4M`` and are ordered
``[Re c_TM (M), Im c_TM (M), Re c_TE (M), Im c_TE (M)]`` over the angles.
"""

import csv
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import RankDeficientError, ValidationError
from .gaussian import check_spd, psd_factor, symmetrize
from .prior import PROPERTIES

OBS_PARTS = (("re", "TM"), ("im", "TM"), ("re", "TE"), ("im", "TE"))


@dataclass(frozen=True)
class LinearObservationModel:
    """``Y | X ~ N(A X + Y0, R)`` at one frequency."""

    A: np.ndarray
    Y0: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        Y0 = np.asarray(self.Y0, dtype=float)
        if A.shape[0] % 4 or Y0.shape != (A.shape[0],):
            raise ValidationError(f"inconsistent observation model shapes A{A.shape}, Y0{Y0.shape}")
        R = check_spd(self.R, name="observation covariance")
        if R.shape[0] != A.shape[0]:
            raise ValidationError("observation covariance does not match A")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Y0", Y0)
        object.__setattr__(self, "R", R)

    @property
    def obs_dim(self):
        return self.A.shape[0]

    @property
    def state_dim(self):
        return self.A.shape[1]


@dataclass(frozen=True)
class TrainingSet:
    """``N_E`` (state, observation) pairs at one frequency, as row-stacked arrays."""

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        if X.shape[0] != Y.shape[0]:
            raise ValidationError("state and observation rows disagree")
        if Y.shape[1] % 4 or X.shape[1] % 4:
            raise ValidationError("state and observation lengths must be multiples of 4")
        if X.shape[0] <= X.shape[1] + 1:
            raise ValidationError(
                f"need more than {X.shape[1] + 1} training pairs for regression, got {X.shape[0]}"
            )
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def size(self):
        return self.X.shape[0]

    @property
    def n_params(self):
        return self.X.shape[1] + 1


@dataclass(frozen=True)
class MetamodelFit:
    A: np.ndarray
    Y0: np.ndarray
    residuals: np.ndarray
    dof: int

    def observation_model(self, noise_cov, residual_cov=None):
        """Observation model whose noise budget adds measurement and linearity errors."""
        R = np.asarray(noise_cov, dtype=float)
        if residual_cov is not None:
            R = R + residual_cov
        return LinearObservationModel(self.A, self.Y0, symmetrize(R))


@dataclass(frozen=True)
class ResidualCovariance:
    cov: np.ndarray
    diagonal_only: bool
    positive_definite: bool


@dataclass(frozen=True)
class BootstrapSpread:
    sd_A: np.ndarray
    sd_Y0: np.ndarray
    lo_A: np.ndarray
    hi_A: np.ndarray
    lo_Y0: np.ndarray
    hi_Y0: np.ndarray
    n_used: int
    n_skipped: int


def _design(X):
    return np.hstack([np.ones((X.shape[0], 1)), X])


def _column_names(n_state):
    return ["intercept"] + [f"x{i}" for i in range(n_state)]


def _deficient_columns(design):
    _, r, piv = scipy.linalg.qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diagonal(r))
    tol = diag[0] * max(design.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int(np.sum(diag > tol))
    return rank, sorted(piv[rank:])


def _ols(design, Y):
    coef, _, rank, _ = np.linalg.lstsq(design, Y, rcond=None)
    return coef, rank


def fit_linear_metamodel(data):
    """Ordinary least squares with intercept, one regression per observation component.

    Raises:
        RankDeficientError: the design ``[1, X]`` lacks full column rank; the
            error's ``columns`` names the dependent columns.
    """
    design = _design(data.X)
    rank, bad = _deficient_columns(design)
    if rank < design.shape[1]:
        names = _column_names(data.X.shape[1])
        cols = [names[i] for i in bad]
        raise RankDeficientError(
            f"design matrix has rank {rank} < {design.shape[1]}; deficient columns: {', '.join(cols)}",
            cols,
        )
    coef, _ = _ols(design, data.Y)
    residuals = data.Y - design @ coef
    return MetamodelFit(A=coef[1:].T.copy(), Y0=coef[0].copy(), residuals=residuals,
                        dof=data.size - data.n_params)


def residual_covariance(residuals, n_params):
    """Residual covariance with ``N_E - n_params`` degrees of freedom.

    Falls back to the diagonal of per-component variances when there are
    fewer degrees of freedom than observation components.
    """
    residuals = np.atleast_2d(np.asarray(residuals, dtype=float))
    dof = residuals.shape[0] - n_params
    if dof < 1:
        raise ValidationError("no residual degrees of freedom")
    diagonal_only = dof < residuals.shape[1]
    if diagonal_only:
        cov = np.diag(np.sum(residuals ** 2, axis=0) / dof)
    else:
        cov = symmetrize(residuals.T @ residuals / dof)
    try:
        np.linalg.cholesky(cov)
        pd = True
    except np.linalg.LinAlgError:
        pd = False
    return ResidualCovariance(cov=cov, diagonal_only=diagonal_only, positive_definite=pd)


def bootstrap_linearity_error(data, B, rng, max_skip_fraction=0.1):
    """Pairs bootstrap of the OLS coefficients.

    Refits on ``B`` resamples of the training pairs and reports per-entry
    standard deviations and 2.5/97.5 percentiles of ``A`` and ``Y0``.
    Resamples with a rank-deficient design are skipped.
    """
    if B < 100:
        raise ValidationError("bootstrap needs at least 100 replicates")
    design = _design(data.X)
    n, p = design.shape
    coefs = []
    skipped = 0
    for _ in range(B):
        idx = rng.integers(0, n, n)
        coef, rank = _ols(design[idx], data.Y[idx])
        if rank < p:
            skipped += 1
            continue
        coefs.append(coef)
    if skipped > max_skip_fraction * B:
        raise RankDeficientError(f"{skipped} of {B} bootstrap resamples were rank deficient")
    coefs = np.stack(coefs)
    sd = coefs.std(axis=0, ddof=1)
    lo, hi = np.percentile(coefs, [2.5, 97.5], axis=0)
    return BootstrapSpread(
        sd_A=sd[1:].T, sd_Y0=sd[0], lo_A=lo[1:].T, hi_A=hi[1:].T, lo_Y0=lo[0], hi_Y0=hi[0],
        n_used=len(coefs), n_skipped=skipped,
    )


class SyntheticSolver:
    """Deterministic stand-in for the full-wave solver.

    Produces ``Y = A* X + Y0* + gamma * q(X)`` where ``A*`` and ``Y0*`` vary
    smoothly with angle and frequency and ``q`` is one fixed quadratic form per
    observation component, centred on ``center``. All coefficients derive
    from ``seed``.
    """

    def __init__(self, state_dim, n_angles, n_freqs, seed, center=None):
        self.state_dim = state_dim
        self.n_angles = n_angles
        self.n_freqs = n_freqs
        self.seed = seed
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        M = n_angles
        theta = np.linspace(0.0, np.pi, M) if M > 1 else np.zeros(1)
        basis = np.cos(np.outer(theta, np.arange(M)))
        decay = 1.0 / np.sqrt(1.0 + np.arange(M))
        scale = 1.0 / np.sqrt(state_dim)
        self._base = []
        self._drift = []
        for _ in range(4):
            w0 = rng.standard_normal((M, state_dim)) * decay[:, None] * scale
            w1 = rng.standard_normal((M, state_dim)) * decay[:, None] * scale * 0.3
            self._base.append(basis @ w0)
            self._drift.append(basis @ w1)
        self._phase = rng.uniform(0.0, 2.0 * np.pi, size=4)
        amp = rng.uniform(0.5, 1.5, size=4)
        self._offset = [a * np.cos(theta + ph) for a, ph in zip(amp, self._phase)]
        u = rng.standard_normal((4 * M, state_dim))
        self._quad = u / np.linalg.norm(u, axis=1, keepdims=True)
        self.center = np.zeros(state_dim) if center is None else np.asarray(center, dtype=float)

    def _freq(self, k):
        return k / (self.n_freqs - 1) if self.n_freqs > 1 else 0.0

    def linear_part(self, k):
        """``(A*, Y0*)`` at frequency ``k``."""
        f = self._freq(k)
        A = np.vstack([b + np.sin(np.pi * f + ph) * dr
                       for b, dr, ph in zip(self._base, self._drift, self._phase)])
        Y0 = np.concatenate([o * (1.0 + 0.2 * f) for o in self._offset])
        return A, Y0

    def __call__(self, X, k, gamma=0.0):
        return synth_solver_oracle(X, k, self, gamma)


def synth_solver_oracle(X, k, solver, gamma=0.0):
    """Noiseless synthetic observations for state(s) ``X`` at frequency ``k``."""
    if gamma < 0:
        raise ValidationError("nonlinearity must be non-negative")
    X = np.asarray(X, dtype=float)
    A, Y0 = solver.linear_part(k)
    Y = X @ A.T + Y0
    if gamma:
        proj = (X - solver.center) @ solver._quad.T
        Y = Y + gamma * proj ** 2
    return Y


def observe(model, X, rng, n=None):
    """Noisy observation(s) ``A X + Y0 + w`` with ``w ~ N(0, R)``."""
    L = psd_factor(model.R)
    X = np.asarray(X, dtype=float)
    mean = X @ model.A.T + model.Y0
    shape = mean.shape if n is None else (n,) + mean.shape
    w = rng.standard_normal(shape) @ L.T
    return mean + w


def state_column_names(layout):
    names = []
    for prop in PROPERTIES:
        for area, block in enumerate(layout.block_of_area):
            names.append(f"{prop}.{block}.{area}")
    return names


def obs_column_names(n_angles):
    return [f"{part}.{pol}.{m}" for part, pol in OBS_PARTS for m in range(n_angles)]


def write_training_set(path, data, layout, header_lines=()):
    n_angles = data.Y.shape[1] // 4
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(state_column_names(layout) + obs_column_names(n_angles))
        for x, y in zip(data.X, data.Y):
            writer.writerow([repr(float(v)) for v in np.concatenate([x, y])])


def read_training_set(path, layout):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    header, body = rows[0], rows[1:]
    n_state = layout.state_dim
    if header[:n_state] != state_column_names(layout):
        raise ValidationError(f"{path}: state columns do not match the layout")
    n_obs = len(header) - n_state
    if n_obs % 4 or header[n_state:] != obs_column_names(n_obs // 4):
        raise ValidationError(f"{path}: malformed observation columns")
    values = np.array(body, dtype=float).reshape(-1, len(header))
    return TrainingSet(values[:, :n_state], values[:, n_state:])
