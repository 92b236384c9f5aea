from types import SimpleNamespace

import numpy as np
import pytest

from rbinvert.errors import NotPositiveDefiniteError, ValidationError
from rbinvert.gaussian import condition, dense_joint_xy_distribution, dense_joint_y_distribution, log_mvn_density
from rbinvert.kalman import backward_sample, kalman_filter, rts_smoother

from helpers import random_scenario, rel_err


@pytest.mark.parametrize("case", [1, 2, 3])
@pytest.mark.parametrize("blocks", [(2,), (1, 1)])
def test_filter_likelihood_matches_dense(case, blocks):
    rng = np.random.default_rng(10 * case + len(blocks))
    sc, rho, _ = random_scenario(rng, blocks, K=3, M=2, case=case)
    ll = sc.filter(rho).log_likelihood
    dense = log_mvn_density(sc.observations.ravel(), dense_joint_y_distribution(sc, rho))
    assert rel_err(ll, dense) <= 1e-8


def test_smoother_matches_dense_conditional():
    rng = np.random.default_rng(3)
    sc, rho, _ = random_scenario(rng, (1, 1), K=4, M=2, case=3)
    _, smoothed, _ = sc.smooth(rho)
    joint = dense_joint_xy_distribution(sc, rho)
    n, K = sc.state_dim, sc.n_freqs
    post = condition(joint, n * K, sc.observations.ravel())
    for k, b in enumerate(smoothed):
        sl = slice(k * n, (k + 1) * n)
        assert np.max(np.abs(b.mean - post.mean[sl])) <= 1e-8
        assert np.linalg.norm(b.cov - post.cov[sl, sl]) <= 1e-8 * np.linalg.norm(post.cov[sl, sl])


def test_single_frequency_reduces_to_static_update():
    rng = np.random.default_rng(4)
    sc, rho, _ = random_scenario(rng, (1,), K=1, M=1)
    out = sc.filter(rho)
    o, p = sc.obs_models[0], sc.priors[0]
    S = o.A @ p.cov @ o.A.T + o.R
    G = p.cov @ o.A.T @ np.linalg.inv(S)
    assert np.allclose(out.filtered[0].mean, p.mean + G @ (sc.observations[0] - o.A @ p.mean - o.Y0))
    assert len(rts_smoother(out, [])) == 1


def test_backward_sample_moments_match_smoother():
    rng = np.random.default_rng(5)
    sc, rho, _ = random_scenario(rng, (1,), K=3, M=1, case=1)
    out, smoothed, trans = sc.smooth(rho)
    draws = backward_sample(out, trans, rng, n=40_000)
    assert draws.shape == (40_000, 3, 4)
    for k, b in enumerate(smoothed):
        se = np.sqrt(np.diag(b.cov) / draws.shape[0])
        assert np.all(np.abs(draws[:, k].mean(0) - b.mean) < 4 * se)
        assert np.allclose(np.cov(draws[:, k].T), b.cov, atol=0.05 * np.max(np.abs(b.cov)))
    # joint structure: lag-one cross covariance against the dense posterior
    joint = dense_joint_xy_distribution(sc, rho)
    post = condition(joint, 12, sc.observations.ravel())
    emp = np.cov(draws.reshape(draws.shape[0], -1).T)
    assert np.allclose(emp[:4, 4:8], post.cov[:4, 4:8], atol=0.05 * np.max(np.abs(post.cov)))


def test_filter_rejects_bad_inputs():
    # the filter only needs objects exposing A, Y0 and R
    obs = SimpleNamespace(A=np.eye(1), Y0=np.zeros(1), R=np.eye(1))
    with pytest.raises(ValidationError):
        kalman_filter(np.zeros(1), np.eye(1), [], [obs, obs], np.zeros((2, 1)))
    bad = SimpleNamespace(A=np.eye(1), Y0=np.zeros(1), R=-4 * np.eye(1))
    with pytest.raises(NotPositiveDefiniteError):
        kalman_filter(np.zeros(1), np.eye(1), [], [bad], np.zeros((1, 1)))
