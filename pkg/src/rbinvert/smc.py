"""Tempered SMC sampler over the correlation hyperparameter.

Targets ``eta_n(rho) ∝ p(Y | rho) ** alpha_n * p(rho)`` with ``alpha``
rising adaptively from 0 to 1. Each generation picks the next temperature
by ESS bisection, reweights, resamples systematically, and moves every
particle with random-walk Metropolis-Hastings on the logit scale.

The likelihood comes from a *target* object exposing ``rho_dim`` and
``log_likelihood(rhos, threads=1)`` returning one value per row (``nan``
marks a failed evaluation). All random draws happen in the calling thread,
so results are independent of ``threads``.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import betaln, expit, logit, logsumexp

from .errors import DegenerateCloudError, GenerationCapError, LikelihoodError, ValidationError
from .scenario import RHO_CLAMP


@dataclass(frozen=True)
class RhoPrior:
    """Independent Beta(a, b) components on [0, 1]; a = b = 1 is uniform."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if a.shape != b.shape or a.ndim != 1:
            raise ValidationError("prior shape parameters must be matching vectors")
        if np.any(a <= 0) or np.any(b <= 0):
            raise ValidationError("Beta shape parameters must be positive")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @classmethod
    def uniform(cls, dim):
        return cls(np.ones(dim), np.ones(dim))

    @classmethod
    def beta(cls, dim, a, b):
        return cls(np.full(dim, float(a)), np.full(dim, float(b)))

    @property
    def dim(self):
        return self.a.size

    @property
    def mean(self):
        return self.a / (self.a + self.b)

    def sample(self, rng, n):
        return rng.beta(self.a, self.b, size=(n, self.dim))

    def log_pdf(self, rhos):
        rhos = np.atleast_2d(rhos)
        dens = (self.a - 1.0) * np.log(rhos) + (self.b - 1.0) * np.log1p(-rhos) - betaln(self.a, self.b)
        return np.sum(dens, axis=1)


@dataclass(frozen=True)
class SmcConfig:
    n_particles: int = 100
    ess_fraction: float = 0.5
    mh_steps: int = 5
    step_scale: float = 0.5
    max_generations: int = 200
    target_acceptance: float = 0.3
    threads: int = 1

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValidationError("need at least 2 particles")
        if not 0.0 < self.ess_fraction < 1.0:
            raise ValidationError("ESS fraction must lie in (0, 1)")
        if self.mh_steps < 1 or self.max_generations < 1 or self.threads < 1:
            raise ValidationError("mh_steps, max_generations and threads must be positive")
        if self.step_scale < 0:
            raise ValidationError("step scale must be non-negative")


@dataclass(frozen=True)
class ParticleCloud:
    rhos: np.ndarray
    log_lik: np.ndarray
    weights: np.ndarray
    alpha: float = 0.0
    generation: int = 0
    step_scale: float = 0.5

    @property
    def size(self):
        return self.rhos.shape[0]


@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    alpha: float
    ess: float
    acceptance: float
    n_evals: int
    wall_time: float
    final: bool = False


@dataclass
class SmcResult:
    cloud: ParticleCloud
    history: list = field(default_factory=list)
    n_evals: int = 0

    @property
    def alphas(self):
        return [h.alpha for h in self.history if not h.final]


def _clamp(rhos):
    return np.clip(rhos, *RHO_CLAMP)


def _evaluate(target, rhos, threads):
    return np.asarray(target.log_likelihood(rhos, threads=threads), dtype=float)


def init_cloud(target, prior, config, rng):
    """Draw ``n_particles`` from the prior and attach their log-likelihoods."""
    if prior.dim != target.rho_dim:
        raise ValidationError(f"prior has dimension {prior.dim}, target expects {target.rho_dim}")
    rhos = _clamp(prior.sample(rng, config.n_particles))
    ll = _evaluate(target, rhos, config.threads)
    bad = np.flatnonzero(~np.isfinite(ll))
    if bad.size:
        raise LikelihoodError(f"likelihood evaluation failed at rho={rhos[bad[0]].tolist()}", rhos[bad[0]])
    n = config.n_particles
    return ParticleCloud(rhos=rhos, log_lik=ll, weights=np.full(n, 1.0 / n), alpha=0.0,
                         generation=0, step_scale=config.step_scale)


def ess(weights):
    w = np.asarray(weights, dtype=float)
    return 1.0 / np.sum(w * w)


def _incremental_ess(log_lik, delta, log_w=None):
    lw = delta * log_lik if log_w is None else log_w + delta * log_lik
    w = np.exp(lw - logsumexp(lw))
    return ess(w)


def next_temperature(cloud, config, iterations=30):
    """Largest ``alpha' in (alpha, 1]`` keeping the incremental-weight ESS at ``tau * N``."""
    alpha = cloud.alpha
    if alpha >= 1.0:
        raise ValidationError("cloud is already at temperature 1")
    target = config.ess_fraction * cloud.size
    lw = np.log(cloud.weights)
    if _incremental_ess(cloud.log_lik, 1.0 - alpha, lw) >= target:
        return 1.0
    lo, hi = 0.0, 1.0 - alpha
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if _incremental_ess(cloud.log_lik, mid, lw) >= target:
            lo = mid
        else:
            hi = mid
    if lo <= 0.0:
        lo = hi
    return min(1.0, alpha + lo)


def reweight(cloud, alpha_new):
    """Multiply weights by ``exp((alpha_new - alpha) * log_lik)`` and renormalise."""
    if alpha_new < cloud.alpha:
        raise ValidationError("temperature cannot decrease")
    with np.errstate(divide="ignore"):
        lw = np.log(cloud.weights) + (alpha_new - cloud.alpha) * cloud.log_lik
    top = logsumexp(lw)
    if not np.isfinite(top):
        raise DegenerateCloudError("all particle weights vanished")
    w = np.exp(lw - top)
    w /= w.sum()
    return replace(cloud, weights=w, alpha=float(alpha_new))


def systematic_indices(weights, u):
    n = weights.size
    positions = (u + np.arange(n)) / n
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.minimum(np.searchsorted(cum, positions, side="right"), n - 1)


def resample_systematic(cloud, rng):
    """Systematic resampling with one uniform draw; weights reset to uniform."""
    idx = systematic_indices(cloud.weights, rng.uniform())
    n = cloud.size
    return replace(cloud, rhos=cloud.rhos[idx], log_lik=cloud.log_lik[idx],
                   weights=np.full(n, 1.0 / n))


def log_acceptance_ratio(rho, rho_prop, log_lik, log_lik_prop, alpha, prior):
    """Log MH ratio for a symmetric random walk on ``logit(rho)``.

    The ``rho * (1 - rho)`` terms are the Jacobian of the logistic map, so
    the chain targets ``exp(alpha * log_lik) * prior`` on ``[0, 1]^d``.
    """
    rho = np.atleast_2d(rho)
    rho_prop = np.atleast_2d(rho_prop)
    jac = np.sum(np.log(rho_prop) + np.log1p(-rho_prop) - np.log(rho) - np.log1p(-rho), axis=1)
    return alpha * (log_lik_prop - log_lik) + prior.log_pdf(rho_prop) - prior.log_pdf(rho) + jac


def _proposal_scale(cloud):
    z = logit(cloud.rhos)
    spread = z.std(axis=0) if cloud.size > 1 else np.ones(z.shape[1])
    return cloud.step_scale * np.maximum(spread, 1e-3)


def mh_mutate(target, prior, cloud, alpha, config, rng, adapt=True):
    """Run ``mh_steps`` Metropolis-Hastings moves on every particle.

    Returns ``(cloud, acceptance_rate, n_evals)``. The proposal scale is
    fixed during the call; with ``adapt`` the cloud's step scale is then
    nudged towards the target acceptance rate.
    """
    scale = _proposal_scale(cloud)
    rhos, ll = cloud.rhos.copy(), cloud.log_lik.copy()
    n, d = rhos.shape
    accepted = failed = 0
    for _ in range(config.mh_steps):
        z = logit(rhos)
        prop = _clamp(expit(z + scale * rng.standard_normal((n, d))))
        ll_prop = _evaluate(target, prop, config.threads)
        log_u = np.log(rng.uniform(size=n))
        bad = ~np.isfinite(ll_prop)
        failed += int(bad.sum())
        ratio = np.where(bad, -np.inf,
                         log_acceptance_ratio(rhos, prop, ll, np.where(bad, 0.0, ll_prop), alpha, prior))
        take = log_u < ratio
        rhos[take] = prop[take]
        ll[take] = ll_prop[take]
        accepted += int(take.sum())
    total = config.mh_steps * n
    if failed > 0.5 * total:
        raise LikelihoodError(f"{failed} of {total} proposals failed likelihood evaluation")
    rate = accepted / total
    step = cloud.step_scale
    if adapt:
        factor = np.clip(np.exp(2.0 * (rate - config.target_acceptance)), 0.5, 2.0)
        step = float(np.clip(step * factor, 1e-3, 10.0))
    return replace(cloud, rhos=rhos, log_lik=ll, step_scale=step), rate, total


def run_smc(target, prior, config, rng, on_generation=None):
    """Temper from the prior (alpha = 0) to the posterior (alpha = 1).

    Each generation: choose alpha by ESS bisection, reweight, resample,
    mutate. One more mutation round at alpha = 1 follows with step
    adaptation frozen. ``on_generation`` receives each
    :class:`GenerationRecord` as it is produced.

    Raises:
        GenerationCapError: alpha did not reach 1 within ``max_generations``.
    """
    start = time.perf_counter()
    cloud = init_cloud(target, prior, config, rng)
    result = SmcResult(cloud=cloud, n_evals=cloud.size)

    def record(rec):
        result.history.append(rec)
        if on_generation is not None:
            on_generation(rec)

    while cloud.alpha < 1.0:
        if cloud.generation >= config.max_generations:
            raise GenerationCapError(
                f"alpha={cloud.alpha:.6g} after {cloud.generation} generations", result.history
            )
        alpha = next_temperature(cloud, config)
        cloud = reweight(cloud, alpha)
        cur_ess = ess(cloud.weights)
        cloud = resample_systematic(cloud, rng)
        cloud, rate, n_ev = mh_mutate(target, prior, cloud, alpha, config, rng)
        cloud = replace(cloud, generation=cloud.generation + 1)
        result.n_evals += n_ev
        record(GenerationRecord(cloud.generation, alpha, cur_ess, rate, result.n_evals,
                                time.perf_counter() - start))

    cloud, rate, n_ev = mh_mutate(target, prior, cloud, 1.0, config, rng, adapt=False)
    result.n_evals += n_ev
    record(GenerationRecord(cloud.generation + 1, 1.0, ess(cloud.weights), rate, result.n_evals,
                            time.perf_counter() - start, final=True))
    result.cloud = cloud
    return result
