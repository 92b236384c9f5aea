"""Builders for small random scenarios used across the test modules."""

import numpy as np

from rbinvert.gaussian import psd_factor
from rbinvert.metamodel import LinearObservationModel
from rbinvert.prior import (
    BlockLayout,
    CorrelationParam,
    PriorSpec,
    build_spatial_covariance,
    rho_dim,
    sample_prior_trajectory,
)
from rbinvert.scenario import Scenario


def random_spd(rng, n, scale=1.0, jitter=0.1):
    B = rng.standard_normal((n, n))
    return scale * (B @ B.T / n + jitter * np.eye(n))


def random_priors(rng, layout, K):
    ref0 = rng.uniform(0.5, 5.0, size=(layout.n_blocks, 4))
    ref1 = ref0 * rng.uniform(0.7, 1.3, size=ref0.shape)
    sig_abs = rng.uniform(0.05, 0.3)
    sig_rel = rng.uniform(0.0, 0.2)
    corr = rng.uniform(0.0, 0.95)
    priors = []
    for k in range(K):
        t = k / (K - 1) if K > 1 else 0.0
        spec = PriorSpec((1 - t) * ref0 + t * ref1, sig_abs, sig_rel, corr)
        priors.append(build_spatial_covariance(layout, spec))
    return priors


def random_rho(rng, case, layout, low=0.05, high=0.95):
    return CorrelationParam(case, rng.uniform(low, high, size=rho_dim(case, layout)))


def random_scenario(rng, areas_per_block=(2,), K=3, M=2, case=1, noise=0.3):
    """Random priors, dense observation maps and data drawn from the model."""
    layout = BlockLayout(tuple(areas_per_block))
    priors = random_priors(rng, layout, K)
    n, m = layout.state_dim, 4 * M
    models = [
        LinearObservationModel(rng.standard_normal((m, n)) / np.sqrt(n), rng.standard_normal(m),
                               random_spd(rng, m, noise ** 2))
        for _ in range(K)
    ]
    rho = random_rho(rng, case, layout)
    x = sample_prior_trajectory(rho, priors, layout, rng)
    Y = np.stack([o.A @ xk + o.Y0 + psd_factor(o.R) @ rng.standard_normal(m) for o, xk in zip(models, x)])
    return Scenario(layout, priors, models, Y, case), rho, x


def rel_err(a, b):
    return abs(a - b) / max(abs(b), 1e-300)
