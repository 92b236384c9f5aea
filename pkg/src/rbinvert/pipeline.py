"""End-to-end operations behind the CLI: synthetic cases, fitting, inversion.

All randomness derives from one master seed through named substreams
(``truth``, ``training``, ``noise``, ``smc``, ``estimation``).
"""

import csv
import zlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import dump_scenario
from .errors import ValidationError
from .estimator import (
    prior_summary,
    profile_table,
    rb_moments,
    rho_histograms,
    rmse,
)
from .gaussian import dense_joint_y_distribution, log_mvn_density, psd_factor
from .metamodel import (
    LinearObservationModel,
    SyntheticSolver,
    TrainingSet,
    bootstrap_linearity_error,
    fit_linear_metamodel,
    obs_column_names,
    read_training_set,
    residual_covariance,
    state_column_names,
    write_training_set,
)
from .prior import (
    BlockLayout,
    CorrelationParam,
    PriorSpec,
    build_spatial_covariance,
    rho_dim,
    sample_prior_trajectory,
)
from .scenario import Scenario
from .smc import RhoPrior, run_smc

STREAMS = ("truth", "training", "noise", "smc", "estimation")


def substream(seed, name):
    """Independent generator for one named stage of a run."""
    if name not in STREAMS:
        raise ValueError(f"unknown stream {name!r}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(zlib.crc32(name.encode()),))
    return np.random.default_rng(ss)


def build_priors(cfg):
    layout = BlockLayout(cfg.layout.areas_per_block)
    first = np.asarray(cfg.prior.reference, dtype=float)
    last = first if cfg.prior.reference_last is None else np.asarray(cfg.prior.reference_last, dtype=float)
    priors = []
    for k in range(cfg.n_freqs):
        t = k / (cfg.n_freqs - 1) if cfg.n_freqs > 1 else 0.0
        spec = PriorSpec((1.0 - t) * first + t * last, cfg.prior.sigma_abs, cfg.prior.sigma_rel,
                         cfg.prior.spatial_correlation)
        priors.append(build_spatial_covariance(layout, spec))
    return layout, priors


def build_rho_prior(cfg, layout):
    dim = rho_dim(cfg.rho.case, layout)
    if cfg.rho.prior == "uniform":
        return RhoPrior.uniform(dim)
    return RhoPrior.beta(dim, cfg.rho.a, cfg.rho.b)


def build_solver(cfg, priors):
    center = np.mean([p.mean for p in priors], axis=0)
    return SyntheticSolver(priors[0].mean.size, cfg.n_angles, cfg.n_freqs, cfg.metamodel.seed, center=center)


def noise_cov(cfg):
    return cfg.noise.std ** 2 * np.eye(4 * cfg.n_angles)


@dataclass
class SyntheticCase:
    layout: object
    priors: list
    rho_true: np.ndarray
    x_true: np.ndarray
    training: list
    A: list
    Y0: list
    R: list
    measurements: np.ndarray

    def scenario(self, case):
        models = [LinearObservationModel(a, y0, r) for a, y0, r in zip(self.A, self.Y0, self.R)]
        return Scenario(self.layout, self.priors, models, self.measurements, case)


def fit_models(cfg, training):
    """Fitted ``(A, Y0, R)`` per frequency with ``R`` = noise + residual covariance."""
    A, Y0, R = [], [], []
    for data in training:
        fit = fit_linear_metamodel(data)
        cov = noise_cov(cfg)
        if cfg.metamodel.include_residual:
            cov = cov + residual_covariance(fit.residuals, data.n_params).cov
        A.append(fit.A)
        Y0.append(fit.Y0)
        R.append(0.5 * (cov + cov.T))
    return A, Y0, R


def make_synthetic_case(cfg, seed=None):
    """Draw truth, training data and measurements in memory."""
    seed = cfg.seed if seed is None else seed
    layout, priors = build_priors(cfg)
    rho_prior = build_rho_prior(cfg, layout)
    truth_rng = substream(seed, "truth")
    if cfg.truth.rho is None:
        rho_true = rho_prior.sample(truth_rng, 1)[0]
    else:
        rho_true = np.atleast_1d(np.asarray(cfg.truth.rho, dtype=float))
    if cfg.truth.mode == "smooth":
        x_true = sample_prior_trajectory(CorrelationParam(cfg.rho.case, rho_true), priors, layout, truth_rng)
    else:
        x_true = np.stack([
            p.mean + truth_rng.standard_normal(p.mean.size) @ p.sqrt.T for p in priors
        ])

    solver = build_solver(cfg, priors)
    train_rng = substream(seed, "training")
    training = []
    for k, p in enumerate(priors):
        X = p.mean + train_rng.standard_normal((cfg.metamodel.training_size, p.mean.size)) @ p.sqrt.T
        training.append(TrainingSet(X, solver(X, k, cfg.metamodel.gamma)))
    A, Y0, R = fit_models(cfg, training)

    noise_rng = substream(seed, "noise")
    meas = np.stack([
        a @ x + y0 + noise_rng.standard_normal(y0.size) @ psd_factor(r).T
        for a, y0, r, x in zip(A, Y0, R, x_true)
    ])
    return SyntheticCase(layout, priors, rho_true, x_true, training, A, Y0, R, meas)


@dataclass
class InversionResult:
    smc: object
    summary: object
    histograms: list
    prior_rmse: float = None
    posterior_rmse: float = None

    @property
    def rho_mean(self):
        c = self.smc.cloud
        return c.weights @ c.rhos


def invert(cfg, scenario, seed=None, threads=1, truth=None, on_generation=None):
    """Run the sampler and the Rao-Blackwellised summaries in memory."""
    seed = cfg.seed if seed is None else seed
    smc_cfg = replace(cfg.smc, threads=threads)
    prior = build_rho_prior(cfg, scenario.layout)
    result = run_smc(scenario, prior, smc_cfg, substream(seed, "smc"), on_generation=on_generation)
    summary = rb_moments(result.cloud, scenario, threads=threads)
    hist = rho_histograms(result.cloud, bins=10)
    out = InversionResult(result, summary, hist)
    if truth is not None:
        out.prior_rmse = rmse(prior_summary(scenario).means, truth)
        out.posterior_rmse = rmse(summary.means, truth)
    return out


# file formats


def header_line(cfg, seed):
    return f"rbinvert {__version__} scenario={cfg.digest()} seed={seed}"


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path, header, columns, rows):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {header}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def read_table(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing input file: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(line for line in fh if not line.startswith("#")))
    return rows[0], rows[1:]


def write_model(path, header, A, Y0, R):
    rows = []
    for k, (a, y0, r) in enumerate(zip(A, Y0, R)):
        for (i, j), v in np.ndenumerate(a):
            rows.append((k, "A", i, j, v))
        for i, v in enumerate(y0):
            rows.append((k, "Y0", i, 0, v))
        for (i, j), v in np.ndenumerate(r):
            rows.append((k, "R", i, j, v))
    write_table(path, header, ["k", "kind", "row", "col", "value"], rows)


def read_model(path, n_freqs, obs_dim, state_dim):
    _, rows = read_table(path)
    A = np.full((n_freqs, obs_dim, state_dim), np.nan)
    Y0 = np.full((n_freqs, obs_dim), np.nan)
    R = np.full((n_freqs, obs_dim, obs_dim), np.nan)
    try:
        for k, kind, i, j, v in rows:
            k, i, j, v = int(k), int(i), int(j), float(v)
            if kind == "A":
                A[k, i, j] = v
            elif kind == "Y0":
                Y0[k, i] = v
            elif kind == "R":
                R[k, i, j] = v
            else:
                raise ValidationError(f"{path}: unknown matrix kind {kind!r}")
    except (ValueError, IndexError) as exc:
        raise ValidationError(f"{path}: malformed model file ({exc})") from exc
    if np.isnan(A).any() or np.isnan(Y0).any() or np.isnan(R).any():
        raise ValidationError(f"{path}: model file is incomplete for the configured dimensions")
    return list(A), list(Y0), list(R)


def write_frames(path, header, names, values):
    write_table(path, header, ["k"] + names, [[k] + list(v) for k, v in enumerate(values)])


def read_frames(path, names, n_freqs):
    columns, rows = read_table(path)
    if columns != ["k"] + names:
        raise ValidationError(f"{path}: columns do not match the configured layout")
    values = np.array([[float(v) for v in r[1:]] for r in rows])
    if values.shape != (n_freqs, len(names)):
        raise ValidationError(f"{path}: expected {n_freqs} rows")
    return values


def _paths(cfg, out):
    out = Path(out)
    return {
        "measurements": Path(cfg.inputs.measurements) if cfg.inputs.measurements else out / "measurements.csv",
        "model": Path(cfg.inputs.model) if cfg.inputs.model else out / "model.csv",
        "truth": Path(cfg.inputs.truth) if cfg.inputs.truth else out / "truth_state.csv",
    }


def _training_path(pattern, k):
    return Path(pattern.format(k=k)) if "{k" in pattern else Path(pattern)


def echo_config(cfg, out):
    Path(out, "config.yaml").write_text(dump_scenario(cfg))


def generate_synthetic_case(cfg, out, seed=None):
    """Write truth, training sets, measurements and the fitted model to ``out``."""
    seed = cfg.seed if seed is None else seed
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    case = make_synthetic_case(cfg, seed)
    head = header_line(cfg, seed)
    echo_config(cfg, out)
    names = state_column_names(case.layout)
    write_frames(out / "truth_state.csv", head, names, case.x_true)
    if cfg.truth.mode == "smooth":
        write_table(out / "truth_rho.csv", head, ["component", "value"], enumerate(case.rho_true))
    for k, data in enumerate(case.training):
        write_training_set(out / f"training_{k:03d}.csv", data, case.layout, header_lines=[head])
    write_frames(out / "measurements.csv", head, obs_column_names(cfg.n_angles), case.measurements)
    write_model(out / "model.csv", head, case.A, case.Y0, case.R)
    return case


def fit_from_training(cfg, out, seed=None):
    """Fit the metamodel from training files and write ``model.csv`` (plus bootstrap spreads)."""
    seed = cfg.seed if seed is None else seed
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    layout, _ = build_priors(cfg)
    if cfg.metamodel.training_file is None:
        raise ValidationError("metamodel.training_file: required for fitting")
    training = []
    for k in range(cfg.n_freqs):
        path = _training_path(cfg.metamodel.training_file, k)
        if not path.is_file():
            raise FileNotFoundError(f"missing training file: {path}")
        training.append(read_training_set(path, layout))
    A, Y0, R = fit_models(cfg, training)
    head = header_line(cfg, seed)
    echo_config(cfg, out)
    write_model(out / "model.csv", head, A, Y0, R)
    rows = []
    rng = substream(seed, "training")
    for k, data in enumerate(training):
        fit = fit_linear_metamodel(data)
        res = residual_covariance(fit.residuals, data.n_params)
        row = [k, data.size, float(np.sqrt(np.mean(fit.residuals ** 2))), int(res.diagonal_only)]
        if cfg.metamodel.bootstrap:
            spread = bootstrap_linearity_error(data, cfg.metamodel.bootstrap, rng)
            row += [float(np.mean(spread.sd_A)), float(np.max(spread.sd_A)), spread.n_skipped]
        rows.append(row)
    cols = ["k", "n_pairs", "residual_rms", "diagonal_only"]
    if cfg.metamodel.bootstrap:
        cols += ["boot_sd_mean", "boot_sd_max", "boot_skipped"]
    write_table(out / "linearity.csv", head, cols, rows)
    return A, Y0, R


def load_scenario(cfg, out):
    """Scenario from the configured (or default) measurement and model files."""
    layout, priors = build_priors(cfg)
    paths = _paths(cfg, out)
    if cfg.metamodel.source == "matrices" and not cfg.inputs.model:
        paths["model"] = Path(cfg.metamodel.matrices_file)
    obs_names = obs_column_names(cfg.n_angles)
    meas = read_frames(paths["measurements"], obs_names, cfg.n_freqs)
    A, Y0, R = read_model(paths["model"], cfg.n_freqs, 4 * cfg.n_angles, layout.state_dim)
    models = [LinearObservationModel(a, y0, r) for a, y0, r in zip(A, Y0, R)]
    scenario = Scenario(layout, priors, models, meas, cfg.rho.case)
    truth = None
    if paths["truth"].is_file():
        truth = read_frames(paths["truth"], state_column_names(layout), cfg.n_freqs)
    return scenario, truth


def run_inversion(cfg, out, seed=None, threads=1):
    """Full inversion from files; writes particles, profiles, histograms, diagnostics, summary."""
    seed = cfg.seed if seed is None else seed
    out = Path(out)
    scenario, truth = load_scenario(cfg, out)
    out.mkdir(parents=True, exist_ok=True)
    head = header_line(cfg, seed)
    echo_config(cfg, out)

    timing = []
    res = invert(cfg, scenario, seed, threads, truth, on_generation=timing.append)
    cloud = res.smc.cloud
    d = cloud.rhos.shape[1]
    write_table(out / "particles.csv", head, [f"rho_{j}" for j in range(d)] + ["weight", "log_lik"],
                [list(r) + [w, ll] for r, w, ll in zip(cloud.rhos, cloud.weights, cloud.log_lik)])
    write_table(out / "profiles.csv", head, ["k", "area", "property", "mean", "std"],
                profile_table(res.summary))
    hist_rows = []
    for j, h in enumerate(res.histograms):
        for b in range(h.counts.size):
            hist_rows.append((j, h.edges[b], h.edges[b + 1], h.counts[b], h.heights[b]))
    write_table(out / "histograms.csv", head, ["component", "bin_lo", "bin_hi", "count", "height"], hist_rows)
    write_table(out / "diagnostics.csv", head,
                ["generation", "alpha", "ess", "acceptance", "kalman_evals", "final"],
                [(r.generation, r.alpha, r.ess, r.acceptance, r.n_evals, int(r.final))
                 for r in res.smc.history])
    # wall time is the one nondeterministic output, kept apart from the rest
    write_table(out / "timing.csv", head, ["generation", "wall_time"],
                [(r.generation, r.wall_time) for r in timing])
    summary = [("generations", len(res.smc.alphas)), ("kalman_evals", res.smc.n_evals)]
    summary += [(f"rho_mean_{j}", v) for j, v in enumerate(res.rho_mean)]
    if truth is not None:
        summary += [("prior_rmse", res.prior_rmse), ("posterior_rmse", res.posterior_rmse)]
    write_table(out / "summary.csv", head, ["key", "value"], summary)
    return res


def oracle_report(cfg, out, rho, seed=None):
    """Dense reference log-likelihood next to the Kalman and batched values."""
    seed = cfg.seed if seed is None else seed
    scenario, _ = load_scenario(cfg, out)
    rho = CorrelationParam(cfg.rho.case, np.atleast_1d(np.asarray(rho, dtype=float)))
    dense = dense_joint_y_distribution(scenario, rho)
    ll_dense = float(log_mvn_density(scenario.observations.ravel(), dense))
    ll_kalman = scenario.filter(rho).log_likelihood
    ll_batch = float(scenario.log_likelihood(rho.values[None, :])[0])
    rows = [("dense", ll_dense), ("kalman", ll_kalman), ("batched", ll_batch)]
    Path(out).mkdir(parents=True, exist_ok=True)
    write_table(Path(out) / "oracle.csv", header_line(cfg, seed), ["method", "log_likelihood"], rows)
    return dict(rows)

