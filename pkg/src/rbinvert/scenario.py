"""A complete inversion problem and its batched likelihood engine.

:class:`Scenario` bundles the layout, per-frequency priors, observation
models and measured data. Given a correlation parameter it hands out the
transition models for the Kalman recursions, and it evaluates
``log p(Y | rho)`` for many ``rho`` at once.

The batched evaluation works in whitened coordinates
``Z_k = H_k^{-1} (X_k - m_k)``. Because ``D_rho`` commutes with every
``H_k``, each coordinate of ``Z`` is an independent stationary AR(1) chain
across frequencies, so its precision matrix is block tridiagonal with
diagonal blocks. Adding the observation information keeps that shape,
and the likelihood follows from one block Cholesky sweep (determinant lemma
plus Woodbury). Everything depending on the data alone is precomputed once.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack

from .errors import ValidationError
from .gaussian import LOG_2PI
from .kalman import kalman_filter, rts_smoother
from .prior import CorrelationParam, expand_rho, propagator, rho_dim, transition_model

#: correlation values are clamped into this interval before evaluation
RHO_CLAMP = (1e-9, 1.0 - 1e-9)

#: particles per work item; fixed so results do not depend on the thread count
CHUNK = 16


@dataclass
class Scenario:
    layout: object
    priors: list
    obs_models: list
    observations: np.ndarray
    rho_case: int = 1
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        K = len(self.priors)
        if K < 1 or len(self.obs_models) != K:
            raise ValidationError("need one prior and one observation model per frequency")
        self.observations = np.atleast_2d(np.asarray(self.observations, dtype=float))
        if self.observations.shape != (K, self.obs_dim):
            raise ValidationError(
                f"observations have shape {self.observations.shape}, expected {(K, self.obs_dim)}"
            )
        for o in self.obs_models:
            if o.A.shape != (self.obs_dim, self.state_dim):
                raise ValidationError("observation matrices disagree in shape")

    @property
    def n_freqs(self):
        return len(self.priors)

    @property
    def state_dim(self):
        return self.layout.state_dim

    @property
    def obs_dim(self):
        return self.obs_models[0].A.shape[0]

    @property
    def rho_dim(self):
        return rho_dim(self.rho_case, self.layout)

    def with_observations(self, observations):
        return Scenario(self.layout, self.priors, self.obs_models, observations, self.rho_case)

    def as_rho(self, rho):
        if isinstance(rho, CorrelationParam):
            return rho
        return CorrelationParam(self.rho_case, np.atleast_1d(np.asarray(rho, dtype=float)))

    def expand_rho(self, rho):
        return expand_rho(self.as_rho(rho), self.layout)

    def _propagators(self):
        if "prop" not in self._cache:
            self._cache["prop"] = [propagator(self.priors, k) for k in range(self.n_freqs - 1)]
        return self._cache["prop"]

    def transitions(self, rho):
        rho = self.as_rho(rho)
        props = self._propagators()
        return [transition_model(rho, self.priors, k, self.layout, prop=props[k])
                for k in range(self.n_freqs - 1)]

    def filter(self, rho):
        rho = self.as_rho(rho)
        return kalman_filter(self.priors[0].mean, self.priors[0].cov, self.transitions(rho),
                             self.obs_models, self.observations)

    def smooth(self, rho):
        """``(filter output, smoothed beliefs, transitions)`` for one ``rho``."""
        trans = self.transitions(rho)
        out = kalman_filter(self.priors[0].mean, self.priors[0].cov, trans,
                            self.obs_models, self.observations)
        return out, rts_smoother(out, trans), trans

    # batched likelihood engine

    def _whitened(self):
        if "white" in self._cache:
            return self._cache["white"]
        J, u, const = [], [], 0.0
        for prior, obs, y in zip(self.priors, self.obs_models, self.observations):
            L = np.linalg.cholesky(obs.R)
            W = lapack.dtrtrs(L, obs.A @ prior.sqrt, lower=1)[0]
            e = lapack.dtrtrs(L, y - obs.A @ prior.mean - obs.Y0, lower=1)[0]
            J.append(W.T @ W)
            u.append(W.T @ e)
            const += -0.5 * (y.size * LOG_2PI + 2.0 * np.sum(np.log(np.diagonal(L))) + e @ e)
        white = (np.stack(J), np.stack(u), const)
        self._cache["white"] = white
        return white

    def _loglik_one(self, d):
        J, u, const = self._whitened()
        K = self.n_freqs
        n = d.size
        d2 = d * d
        one_minus = 1.0 - d2
        q = 1.0 / one_minus
        off = -d * q
        off2 = np.outer(off, off)
        lam_mid = q * (1.0 + d2)
        out = const - 0.5 * (K - 1) * np.sum(np.log(one_minus))

        F = J[0].copy()
        F.flat[::n + 1] += q if K > 1 else 1.0
        g = u[0]
        for k in range(K):
            # lower triangles only: dpotrf/dpotri never touch the upper part
            c, info = lapack.dpotrf(F, lower=1, clean=0, overwrite_a=1)
            if info != 0:
                return np.nan
            out -= np.sum(np.log(np.diagonal(c)))
            h = lapack.dpotrs(c, g, lower=1)[0]
            out += 0.5 * (g @ h)
            if k == K - 1:
                break
            inv = lapack.dpotri(c, lower=1, overwrite_c=1)[0]
            inv *= off2
            F = np.subtract(J[k + 1], inv, out=inv)
            F.flat[::n + 1] += q if k + 1 == K - 1 else lam_mid
            g = u[k + 1] - off * h
        return out

    def _loglik_chunk(self, diag):
        return np.array([self._loglik_one(d) for d in diag])

    def log_likelihood(self, rhos, threads=1):
        """``log p(Y | rho)`` for each row of ``rhos`` (shape ``(P, rho_dim)``).

        Values are clamped into ``RHO_CLAMP``. A failed factorisation yields
        ``nan`` for that row. Rows are split into fixed-size chunks, so the
        result does not depend on ``threads``.
        """
        rhos = np.atleast_2d(np.asarray(rhos, dtype=float))
        if rhos.shape[1] != self.rho_dim:
            raise ValidationError(f"expected {self.rho_dim} correlation values per row, got {rhos.shape[1]}")
        rhos = np.clip(rhos, *RHO_CLAMP)
        diag = np.stack([self.expand_rho(r) for r in rhos])
        self._whitened()
        chunks = [diag[i:i + CHUNK] for i in range(0, len(diag), CHUNK)]
        if threads > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(self._loglik_chunk, chunks))
        else:
            parts = [self._loglik_chunk(c) for c in chunks]
        return np.concatenate(parts)
