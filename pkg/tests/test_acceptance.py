"""Acceptance criteria, each run at its stated tolerance and time budget.

Every test records one PASS/FAIL line, repeated in the terminal summary.
The full-scale criteria (6 and 7) share one set of synthetic runs.
"""

import shutil
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import yaml
from scipy import stats
from scipy.special import logit

from rbinvert.cli import main
from rbinvert.config import parse_scenario
from rbinvert.gaussian import condition, dense_joint_xy_distribution, dense_joint_y_distribution, log_mvn_density
from rbinvert.metamodel import TrainingSet, bootstrap_linearity_error, fit_linear_metamodel
from rbinvert.pipeline import invert, make_synthetic_case
from rbinvert.prior import BlockLayout, sample_prior_trajectory, transition_model
from rbinvert.smc import ParticleCloud, RhoPrior, SmcConfig, log_acceptance_ratio, mh_mutate, run_smc
from rbinvert.estimator import rb_moments, rho_histograms

from acceptance_log import report
from helpers import random_priors, random_rho, random_scenario, rel_err

pytestmark = pytest.mark.slow

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _oracle_scenarios():
    rng = np.random.default_rng(2024)
    out = []
    for i in range(50):
        blocks = (2,) if i % 2 == 0 else (1, 1)
        case = 1 + i % 3
        sc, rho, _ = random_scenario(rng, blocks, K=3, M=2, case=case)
        out.append((sc, rho))
    return out


def test_c1_kalman_vs_dense():
    start = time.perf_counter()
    worst = 0.0
    for sc, rho in _oracle_scenarios():
        dense = log_mvn_density(sc.observations.ravel(), dense_joint_y_distribution(sc, rho))
        worst = max(worst, rel_err(sc.filter(rho).log_likelihood, dense),
                    rel_err(sc.log_likelihood(rho.values[None])[0], dense))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-8 and elapsed < 10
    report(1, "Kalman vs dense log-likelihood", ok,
           f"max rel discrepancy {worst:.2e} (tol 1e-8), {elapsed:.1f}s (< 10s)")
    assert ok


def test_c2_smoother_vs_dense_conditional():
    start = time.perf_counter()
    worst_mean = worst_cov = 0.0
    for sc, rho in _oracle_scenarios():
        _, smoothed, _ = sc.smooth(rho)
        n, K = sc.state_dim, sc.n_freqs
        post = condition(dense_joint_xy_distribution(sc, rho), n * K, sc.observations.ravel())
        for k, b in enumerate(smoothed):
            sl = slice(k * n, (k + 1) * n)
            worst_mean = max(worst_mean, np.max(np.abs(b.mean - post.mean[sl])))
            ref = post.cov[sl, sl]
            worst_cov = max(worst_cov, np.linalg.norm(b.cov - ref) / np.linalg.norm(ref))
    elapsed = time.perf_counter() - start
    ok = worst_mean <= 1e-8 and worst_cov <= 1e-8 and elapsed < 10
    report(2, "smoother vs dense conditional", ok,
           f"max mean err {worst_mean:.2e}, max cov rel err {worst_cov:.2e} (tol 1e-8), {elapsed:.1f}s")
    assert ok


def test_c3_ar_marginal_preservation():
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    n_traj = 200_000
    worst_identity = 0.0
    worst_z = 0.0
    for i in range(10):
        layout = BlockLayout((1, 1) if i % 2 else (2,))
        K = 3
        priors = random_priors(rng, layout, K)
        rho = random_rho(rng, 1 + i % 3, layout, 0.0, 1.0)
        for k in range(K - 1):
            t = transition_model(rho, priors, k, layout)
            P = t.M @ priors[k].cov @ t.M.T + t.Q
            ref = priors[k + 1].cov
            worst_identity = max(worst_identity, np.linalg.norm(P - ref) / np.linalg.norm(ref))
        x = sample_prior_trajectory(rho, priors, layout, rng, n=n_traj)
        for k in range(K):
            # one random direction per (prior, frequency): mean and variance of u^T X_k
            u = rng.standard_normal(layout.state_dim)
            u /= np.linalg.norm(u)
            proj = x[:, k] @ u
            mu, var = u @ priors[k].mean, u @ priors[k].cov @ u
            z_mean = (proj.mean() - mu) / np.sqrt(var / n_traj)
            dev = proj - proj.mean()
            se_var = np.sqrt(np.var(dev ** 2) / n_traj)
            z_var = (np.var(proj, ddof=1) - var) / se_var
            worst_z = max(worst_z, abs(z_mean), abs(z_var))
    elapsed = time.perf_counter() - start
    ok = worst_identity <= 1e-8 and worst_z <= 3 and elapsed < 60
    report(3, "AR marginal preservation", ok,
           f"identity rel err {worst_identity:.2e} (tol 1e-8), max |z| {worst_z:.2f} (tol 3 SE), "
           f"{elapsed:.1f}s (< 60s)")
    assert ok


def _quadrature(sc, grid):
    ll = sc.log_likelihood(grid[:, None])
    w = np.exp(ll - ll.max())
    w[[0, -1]] *= 0.5  # trapezoid rule on the uniform grid, flat prior
    w /= w.sum()
    means = np.stack([np.stack([b.mean for b in sc.smooth([r])[1]]) for r in grid])
    return w, w @ grid, np.einsum("g,gkn->kn", w, means)


def test_c4_smc_vs_quadrature():
    start = time.perf_counter()
    sc, _, _ = random_scenario(np.random.default_rng(11), (1,), K=6, M=2, case=1, noise=0.3)
    grid = np.linspace(0.0, 1.0, 2001)
    w, rho_quad, x_quad = _quadrature(sc, grid)
    edges = np.linspace(0, 1, 11)
    bin_of = np.minimum(np.floor(grid * 10).astype(int), 9)
    quad_mass = np.bincount(bin_of, weights=w, minlength=10)

    cfg = SmcConfig(n_particles=1000)
    rho_est, x_est, tv = [], [], []
    for seed in range(20):
        res = run_smc(sc, RhoPrior.uniform(1), cfg, np.random.default_rng(1000 + seed))
        c = res.cloud
        rho_est.append(c.weights @ c.rhos[:, 0])
        x_est.append(rb_moments(c, sc).means)
        hist = rho_histograms(c, bins=10)[0]
        assert np.array_equal(hist.edges, edges)
        tv.append(0.5 * np.sum(np.abs(hist.counts / c.size - quad_mass)))
    rho_est, x_est = np.array(rho_est), np.array(x_est)
    se_rho = rho_est.std(ddof=1) / np.sqrt(20)
    z_rho = abs(rho_est.mean() - rho_quad) / se_rho
    se_x = x_est.std(axis=0, ddof=1) / np.sqrt(20)
    z_x = np.max(np.abs(x_est.mean(0) - x_quad) / se_x)
    elapsed = time.perf_counter() - start
    ok = z_rho <= 3 and z_x <= 3 and np.mean(tv) <= 0.1 and elapsed < 300
    report(4, "SMC vs 2001-point quadrature", ok,
           f"rho mean {rho_est.mean():.4f} vs {rho_quad:.4f} ({z_rho:.2f} SE), max X_k |z| {z_x:.2f} "
           f"(tol 3 SE), mean TV {np.mean(tv):.3f} (tol 0.1), {elapsed:.0f}s (< 300s)")
    assert ok


class _ArbitraryTarget:
    rho_dim = 1

    def log_likelihood(self, rhos, threads=1):
        return -50.0 * (np.asarray(rhos)[:, 0] - 0.2) ** 2


def test_c5_mh_kernel_invariance():
    prior = RhoPrior.beta(1, 2.0, 3.0)
    rng = np.random.default_rng(5)
    n = 100_000
    rhos = prior.sample(rng, n)
    target = _ArbitraryTarget()
    cloud = ParticleCloud(rhos=rhos, log_lik=target.log_likelihood(rhos), weights=np.full(n, 1.0 / n),
                          step_scale=1.0)
    cfg = SmcConfig(n_particles=n, mh_steps=5, step_scale=1.0)
    moved, rate, _ = mh_mutate(target, prior, cloud, 0.0, cfg, rng, adapt=False)
    edges = stats.beta(2.0, 3.0).ppf(np.linspace(0, 1, 21))
    counts = np.histogram(moved.rhos[:, 0], bins=edges)[0]
    p_value = stats.chisquare(counts).pvalue

    ll = lambda r: -40 * (r - 0.3) ** 2
    s, alpha = 0.7, 0.6
    grid = np.linspace(0.01, 0.99, 60)
    worst = 0.0
    for a in grid:
        for b in grid:
            if a == b:
                continue

            def flux(x, y):
                q = np.exp(-0.5 * ((logit(y) - logit(x)) / s) ** 2) / (s * y * (1 - y))
                r = log_acceptance_ratio([[x]], [[y]], ll(x), ll(y), alpha, prior)[0]
                return np.exp(alpha * ll(x) + prior.log_pdf([[x]])[0]) * q * min(1.0, np.exp(r))

            f, g = flux(a, b), flux(b, a)
            worst = max(worst, abs(f - g) / max(f, g))
    ok = p_value > 0.001 and worst <= 1e-10
    report(5, "MH kernel invariance", ok,
           f"chi-square p={p_value:.3f} (> 0.001, acceptance {rate:.2f}), "
           f"detailed balance rel err {worst:.2e} (tol 1e-10)")
    assert ok


@pytest.fixture(scope="module")
def full_scale_runs():
    """Ten paired full-scale runs: smooth truth (rho* = 0.95) and irregular truth."""
    cfg = parse_scenario(CONFIGS / "full_scale.yaml")
    runs = {"smooth": [], "irregular": []}
    times = {"smooth": 0.0, "irregular": 0.0}
    for seed in range(1, 11):
        for mode in runs:
            c = replace(cfg, truth=replace(cfg.truth, mode=mode), seed=seed)
            start = time.perf_counter()
            case = make_synthetic_case(c)
            res = invert(c, case.scenario(c.rho.case), truth=case.x_true)
            times[mode] += time.perf_counter() - start
            runs[mode].append(res)
    return cfg, runs, times


def test_c6_full_scale_replication(full_scale_runs):
    cfg, runs, times = full_scale_runs
    assert cfg.n_areas == 19 and cfg.n_blocks == 5 and cfg.n_freqs == 30 and cfg.rho.case == 2
    ratios = np.array([r.posterior_rmse / r.prior_rmse for r in runs["smooth"]])
    passed = int(np.sum(ratios <= 0.5))
    ok = passed >= 9 and times["smooth"] < 900
    report(6, "full-scale replication", ok,
           f"{passed}/10 seeds with posterior RMSE <= 0.5 x prior RMSE "
           f"(ratios {np.round(ratios, 3).tolist()}), {times['smooth']:.0f}s (< 900s)")
    assert ok


def test_c7_irregular_truth_lowers_rho(full_scale_runs):
    _, runs, _ = full_scale_runs
    smooth = np.array([np.median(r.rho_mean) for r in runs["smooth"]])
    irregular = np.array([np.median(r.rho_mean) for r in runs["irregular"]])
    wins = int(np.sum(irregular < smooth))
    ok = wins >= 9
    report(7, "irregular truth lowers rho", ok,
           f"{wins}/10 pairs; median rho smooth {np.round(smooth, 3).tolist()}, "
           f"irregular {np.round(irregular, 3).tolist()}")
    assert ok


def test_c8_metamodel_fit():
    rng = np.random.default_rng(8)
    n, m, n_pairs = 8, 8, 200
    A = rng.standard_normal((m, n))
    Y0 = rng.standard_normal(m)
    X = rng.standard_normal((n_pairs, n))
    fit = fit_linear_metamodel(TrainingSet(X, X @ A.T + Y0))
    err = max(np.max(np.abs(fit.A - A)), np.max(np.abs(fit.Y0 - Y0)))

    noisy = TrainingSet(X, X @ A.T + Y0 + 0.2 * rng.standard_normal((n_pairs, m)))
    nfit = fit_linear_metamodel(noisy)
    design = np.hstack([np.ones((n_pairs, 1)), X])
    sigma2 = np.sum(nfit.residuals ** 2, 0) / nfit.dof
    se = np.sqrt(np.outer(sigma2, np.diag(np.linalg.inv(design.T @ design))))
    spread = bootstrap_linearity_error(noisy, 500, rng)
    ratio = np.concatenate([(spread.sd_A / se[:, 1:]).ravel(), spread.sd_Y0 / se[:, 0]])
    ok = err <= 1e-10 and np.all((ratio >= 0.5) & (ratio <= 2.0))
    report(8, "metamodel fit", ok,
           f"noiseless max err {err:.2e} (tol 1e-10), bootstrap/analytic SE ratio in "
           f"[{ratio.min():.2f}, {ratio.max():.2f}] (tol factor 2)")
    assert ok


def _outputs(out):
    # timing.csv holds wall-clock times, the only output not meant to repeat
    return {p.name: p.read_bytes() for p in sorted(out.iterdir())
            if p.is_file() and p.name != "timing.csv"}


def test_c9_determinism(tmp_path):
    raw = yaml.safe_load((CONFIGS / "small.yaml").read_text())
    raw["output"] = "data"
    cfg_path = tmp_path / "small.yaml"
    cfg_path.write_text(yaml.safe_dump(raw))
    assert main(["generate", "--config", str(cfg_path), "--seed", "17"]) == 0
    results = {}
    for threads in (1, 8):
        for rep in range(2):
            out = tmp_path / f"run_{threads}_{rep}"
            shutil.copytree(tmp_path / "data", out)
            code = main(["invert", "--config", str(cfg_path), "--seed", "17", "--out", str(out),
                         "--threads", str(threads)])
            assert code == 0
            results[(threads, rep)] = _outputs(out)
    same_1 = results[(1, 0)] == results[(1, 1)]
    same_8 = results[(8, 0)] == results[(8, 1)]
    across = results[(1, 0)] == results[(8, 0)]
    ok = same_1 and same_8
    report(9, "determinism", ok,
           f"byte-identical at 1 thread: {same_1}, at 8 threads: {same_8}, "
           f"1 vs 8 threads: {across} ({len(results[(1, 0)])} files compared)")
    assert ok
