"""Block-structured per-frequency priors and the inter-frequency AR process.

State layout at one frequency is property-major: the four properties
``eps_re, eps_im, mu_re, mu_im`` each occupy ``N`` consecutive slots, and
within a property the areas are ordered block after block.

Frequencies are 0-based in this module: ``priors[k]`` is frequency ``k``.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import NotPositiveDefiniteError, ValidationError
from .gaussian import spd_sqrt, symmetrize

PROPERTIES = ("eps_re", "eps_im", "mu_re", "mu_im")


@dataclass(frozen=True)
class BlockLayout:
    areas_per_block: tuple

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.areas_per_block)
        if not sizes:
            raise ValidationError("layout needs at least one block")
        if any(s < 1 for s in sizes):
            raise ValidationError("every block needs at least one area")
        object.__setattr__(self, "areas_per_block", sizes)

    @property
    def n_blocks(self):
        return len(self.areas_per_block)

    @property
    def n_areas(self):
        return sum(self.areas_per_block)

    @property
    def state_dim(self):
        return 4 * self.n_areas

    @property
    def block_of_area(self):
        return np.repeat(np.arange(self.n_blocks), self.areas_per_block)

    def index(self, prop, area):
        """Position of ``(property, area)`` in the state vector."""
        p = PROPERTIES.index(prop) if isinstance(prop, str) else int(prop)
        if not 0 <= p < 4 or not 0 <= area < self.n_areas:
            raise IndexError(f"no state component for property {prop!r}, area {area}")
        return p * self.n_areas + area

    def groups(self):
        """Index arrays of the ``4 * n_blocks`` (property, block) groups, property-major."""
        starts = np.concatenate([[0], np.cumsum(self.areas_per_block)[:-1]])
        out = []
        for p in range(4):
            for start, size in zip(starts, self.areas_per_block):
                out.append(p * self.n_areas + start + np.arange(size))
        return out


@dataclass(frozen=True)
class PriorSpec:
    """Reference values per (block, property) plus the uncertainty model.

    ``reference`` has shape ``(n_blocks, 4)``. Per-component standard
    deviation is ``sigma_abs + sigma_rel * |mean|``.
    """

    reference: np.ndarray
    sigma_abs: float
    sigma_rel: float
    spatial_correlation: float = 0.95

    def __post_init__(self):
        ref = np.atleast_2d(np.asarray(self.reference, dtype=float))
        if ref.shape[1] != 4:
            raise ValidationError("reference values need 4 properties per block")
        object.__setattr__(self, "reference", ref)
        if self.sigma_abs < 0 or self.sigma_rel < 0:
            raise ValidationError("uncertainties must be non-negative")
        if self.sigma_abs + self.sigma_rel <= 0:
            raise ValidationError("sigma_abs + sigma_rel must be positive")
        if not 0.0 <= self.spatial_correlation <= 1.0:
            raise ValidationError("spatial correlation out of [0,1]")


@dataclass(frozen=True)
class MarginalPrior:
    mean: np.ndarray
    cov: np.ndarray
    sqrt: np.ndarray


@dataclass(frozen=True)
class CorrelationParam:
    """Frequency-correlation hyperparameter.

    case 1: one scalar; case 2: one value per block (shared by the four
    properties); case 3: one value per (property, block), property-major.
    """

    case: int
    values: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __post_init__(self):
        if self.case not in (1, 2, 3):
            raise ValidationError(f"correlation case must be 1, 2 or 3, got {self.case}")
        vals = np.atleast_1d(np.asarray(self.values, dtype=float))
        if vals.ndim != 1:
            raise ValidationError("correlation values must be a vector")
        if np.any(~np.isfinite(vals)) or np.any(vals < 0) or np.any(vals > 1):
            raise ValidationError("correlation values must lie in [0,1]")
        if self.case == 1 and vals.size != 1:
            raise ValidationError("case 1 takes a single correlation value")
        object.__setattr__(self, "values", vals)

    @property
    def dim(self):
        return self.values.size


def rho_dim(case, layout):
    return {1: 1, 2: layout.n_blocks, 3: 4 * layout.n_blocks}[case]


@dataclass(frozen=True)
class TransitionModel:
    """Affine Gaussian transition ``X_{k+1} = M X_k + b + w, w ~ N(0, Q)``."""

    M: np.ndarray
    b: np.ndarray
    Q: np.ndarray


def build_spatial_covariance(layout, spec):
    """Gaussian prior at one frequency from reference values and spatial correlation.

    Within each (property, block) group the covariance is
    ``sigma_i * sigma_j * rho_S ** |i - j|`` with ``|i - j|`` the area-index
    distance; different groups are uncorrelated.
    """
    if spec.reference.shape[0] != layout.n_blocks:
        raise ValidationError(
            f"reference has {spec.reference.shape[0]} blocks, layout has {layout.n_blocks}"
        )
    blocks = layout.block_of_area
    mean = np.concatenate([spec.reference[blocks, p] for p in range(4)])
    sigma = spec.sigma_abs + spec.sigma_rel * np.abs(mean)
    if np.any(sigma <= 0):
        raise NotPositiveDefiniteError("zero prior standard deviation for some component")
    n = layout.state_dim
    cov = np.zeros((n, n))
    sqrt = np.zeros((n, n))
    for idx in layout.groups():
        lag = np.abs(np.subtract.outer(np.arange(idx.size), np.arange(idx.size)))
        block = np.outer(sigma[idx], sigma[idx]) * spec.spatial_correlation ** lag
        sub = np.ix_(idx, idx)
        cov[sub] = block
        sqrt[sub] = spd_sqrt(block)
    return MarginalPrior(mean=mean, cov=cov, sqrt=sqrt)


def expand_rho(rho, layout):
    """Diagonal of ``D_rho`` (length ``4N``) for the given layout."""
    want = rho_dim(rho.case, layout)
    if rho.dim != want:
        raise ValidationError(f"case {rho.case} needs {want} correlation values, got {rho.dim}")
    if rho.case == 1:
        return np.full(layout.state_dim, rho.values[0])
    per_area = layout.block_of_area
    if rho.case == 2:
        return np.tile(rho.values[per_area], 4)
    nb = layout.n_blocks
    return np.concatenate([rho.values[p * nb + per_area] for p in range(4)])


def propagator(priors, k):
    """``H_{k+1} H_k^{-1}``, the correlation-free part of the transition matrix."""
    cf = scipy.linalg.cho_factor(priors[k].sqrt, lower=True)
    # H_{k+1} H_k^{-1} = (H_k^{-1} H_{k+1})^T as both roots are symmetric
    return scipy.linalg.cho_solve(cf, priors[k + 1].sqrt).T


def transition_model(rho, priors, k, layout, prop=None):
    """Transition from frequency ``k`` to ``k + 1`` implied by the AR process.

    ``M = D H_{k+1} H_k^{-1}``, ``b = m_{k+1} - M m_k``,
    ``Q = S P_{k+1} S`` with ``S = sqrt(I - D^2)``. ``prop`` may carry a
    precomputed :func:`propagator` for this ``k``.
    """
    if not 0 <= k < len(priors) - 1:
        raise ValidationError(f"transition index {k} out of range for {len(priors)} frequencies")
    d = expand_rho(rho, layout)
    if prop is None:
        try:
            prop = propagator(priors, k)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError(f"prior square root at frequency {k} is singular") from exc
    M = d[:, None] * prop
    s = np.sqrt(np.clip(1.0 - d * d, 0.0, None))
    Q = symmetrize(s[:, None] * priors[k + 1].cov * s[None, :])
    b = priors[k + 1].mean - M @ priors[k].mean
    return TransitionModel(M=M, b=b, Q=Q)


def sample_prior_trajectory(rho, priors, layout, rng, n=None):
    """Draw state trajectories from the AR process.

    Returns shape ``(K, 4N)``, or ``(n, K, 4N)`` when ``n`` is given.
    """
    d = expand_rho(rho, layout)
    s = np.sqrt(np.clip(1.0 - d * d, 0.0, None))
    size = 1 if n is None else n
    K = len(priors)
    out = np.empty((size, K, layout.state_dim))
    v = rng.standard_normal((size, layout.state_dim))
    out[:, 0] = priors[0].mean + v @ priors[0].sqrt.T
    for k in range(K - 1):
        v = rng.standard_normal((size, layout.state_dim))
        prop = propagator(priors, k)
        dev = (out[:, k] - priors[k].mean) @ prop.T
        out[:, k + 1] = priors[k + 1].mean + d * dev + (v @ priors[k + 1].sqrt.T) * s
    return out[0] if n is None else out
