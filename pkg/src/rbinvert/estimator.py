"""Posterior summaries that mix exact conditional moments over the rho cloud."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import LikelihoodError
from .gaussian import symmetrize
from .kalman import backward_sample, kalman_filter
from .prior import PROPERTIES


@dataclass(frozen=True)
class PosteriorSummary:
    """Per-frequency mean ``(K, 4N)`` and covariance ``(K, 4N, 4N)`` of the state."""

    means: np.ndarray
    covs: np.ndarray
    layout: object

    @property
    def stds(self):
        return np.sqrt(np.clip(np.diagonal(self.covs, axis1=1, axis2=2), 0.0, None))


@dataclass(frozen=True)
class RhoHistogram:
    edges: np.ndarray
    counts: np.ndarray
    heights: np.ndarray


def _distinct(rhos, weights):
    """Distinct rows (by exact bit pattern) in order of first appearance, with summed weights."""
    keys, order, total = {}, [], []
    for r, w in zip(rhos, weights):
        key = r.tobytes()
        if key not in keys:
            keys[key] = len(order)
            order.append(r)
            total.append(0.0)
        total[keys[key]] += w
    return order, np.array(total), keys


def _map(fn, items, threads):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _smoothed(scenario, rho):
    try:
        _, smoothed, _ = scenario.smooth(rho)
    except np.linalg.LinAlgError as exc:
        raise LikelihoodError(f"smoother failed at rho={np.asarray(rho).tolist()}", rho) from exc
    return np.stack([b.mean for b in smoothed]), np.stack([b.cov for b in smoothed])


def rb_moments(cloud, scenario, threads=1):
    """Mixture mean and covariance of every ``X_k`` over the weighted cloud.

    ``E[X_k|Y] = sum_i w_i mu_k^i`` and
    ``Cov[X_k|Y] = sum_i w_i Sigma_k^i + sum_i w_i (mu_k^i - mean)(mu_k^i - mean)^T``,
    with one smoother run per distinct ``rho``.
    """
    rhos, w, _ = _distinct(cloud.rhos, cloud.weights)
    w = w / w.sum()
    results = _map(lambda r: _smoothed(scenario, r), rhos, threads)
    mus = np.stack([r[0] for r in results])
    sigmas = np.stack([r[1] for r in results])
    mean = np.einsum("i,ikn->kn", w, mus)
    dev = mus - mean
    cov = np.einsum("i,iknm->knm", w, sigmas) + np.einsum("i,ikn,ikm->knm", w, dev, dev)
    return PosteriorSummary(means=mean, covs=symmetrize(cov), layout=scenario.layout)


def prior_summary(scenario):
    """Summary of the prior marginals, i.e. the no-data reduction."""
    return PosteriorSummary(
        means=np.stack([p.mean for p in scenario.priors]),
        covs=np.stack([p.cov for p in scenario.priors]),
        layout=scenario.layout,
    )


def posterior_samples(cloud, scenario, n, rng):
    """``n`` joint trajectories ``(n, K, 4N)``: pick a particle by weight, then FFBS given its rho."""
    rhos, _, keys = _distinct(cloud.rhos, cloud.weights)
    picks = rng.choice(cloud.size, size=n, p=cloud.weights / cloud.weights.sum())
    group = np.array([keys[cloud.rhos[i].tobytes()] for i in picks], dtype=int)
    out = np.empty((n, scenario.n_freqs, scenario.state_dim))
    for g, rho in enumerate(rhos):
        where = np.flatnonzero(group == g)
        if where.size == 0:
            continue
        trans = scenario.transitions(rho)
        filt = kalman_filter(scenario.priors[0].mean, scenario.priors[0].cov, trans,
                             scenario.obs_models, scenario.observations)
        out[where] = backward_sample(filt, trans, rng, n=where.size)
    return out


def frequency_profiles(summary, area, prop):
    """Rows ``(k, mean, std)`` for one (area, property) component across frequencies."""
    idx = summary.layout.index(prop, area)
    K = summary.means.shape[0]
    return np.column_stack([np.arange(K), summary.means[:, idx], summary.stds[:, idx]])


def rho_histograms(cloud, bins=10):
    """Weighted histogram on [0, 1] of every rho component; counts sum to ``N_p``."""
    if bins < 2:
        raise ValueError("need at least 2 bins")
    edges = np.linspace(0.0, 1.0, bins + 1)
    w = cloud.weights / cloud.weights.sum()
    out = []
    for j in range(cloud.rhos.shape[1]):
        pos = np.minimum(np.floor(cloud.rhos[:, j] * bins).astype(int), bins - 1)
        mass = np.bincount(pos, weights=w, minlength=bins)
        out.append(RhoHistogram(edges=edges, counts=mass * cloud.size, heights=mass * bins))
    return out


def rmse(estimate, truth):
    return float(np.sqrt(np.mean((np.asarray(estimate) - np.asarray(truth)) ** 2)))


def profile_table(summary):
    """All profiles as rows ``(k, area, property, mean, std)``."""
    rows = []
    stds = summary.stds
    for p, prop in enumerate(PROPERTIES):
        for area in range(summary.layout.n_areas):
            idx = summary.layout.index(p, area)
            for k in range(summary.means.shape[0]):
                rows.append((k, area, prop, summary.means[k, idx], stds[k, idx]))
    return rows
