"""Acceptance suite: the criteria the package must meet before release.

Each test records a single verdict line (printed in the terminal summary)
and then asserts it.  Criteria 6 and 7 need the original and replication
trial CSVs, which are not redistributable; they are skipped with a notice
unless RTMIX_ORIGINAL_DATA / RTMIX_REPLICATION_DATA point at the files.

Criteria 3-5 are seeded statistical tests at full study scale (37
participants x 15 items, K=10 cross-validation, 10 seeds each); together
they run for roughly 40 minutes.  Use --ignore=tests/test_acceptance.py
for quick iteration.
"""

import math
import os

import mpmath
import numpy as np
import pytest
from conftest import record_criterion

from rtmix import (
    Condition,
    DesignSpec,
    LinearTruth,
    SamplerConfig,
    Trial,
    compare,
    gen_linear,
    gen_mixture,
    load_csv,
    log_mean_exp,
    make_folds,
    recovery_check,
    run_kfold,
    sample,
)
from rtmix.cli import main
from rtmix.models import MixtureParams, PosteriorDensity, mixture_pointwise_loglik
from rtmix.sampler import ess, sample_density
from rtmix.simulate import DEFAULT_LINEAR_TRUTH, DEFAULT_MIXTURE_TRUTH

mpmath.mp.dps = 60

GRAD_TOL = 1e-5          # max relative error, analytic vs central differences
STABILITY_TOL = 1e-12    # relative error vs 60-digit arithmetic
MCSE_SIGMAS = 4          # sampler-oracle error budget, in Monte Carlo SEs

MIXTURE_POP = ("beta", "delta", "p_sr", "p_or",
               "sigma_e", "sigma_ep", "sigma_u", "sigma_w")

# reference posterior means and K-fold elpd totals (with SEs) for the two
# benchmark datasets; probabilities are held to 0.03, everything else 0.05
ORIGINAL_LINEAR = {"beta0": 6.06, "beta1": -0.07, "sigma_e": 0.52,
                   "sigma_u": 0.25, "sigma_w": 0.20}
ORIGINAL_MIXTURE = {"beta": 5.85, "delta": 0.93, "p_sr": 0.25, "p_or": 0.21,
                    "sigma_e": 0.22, "sigma_ep": 0.64, "sigma_u": 0.24,
                    "sigma_w": 0.09}
ORIGINAL_ELPD = {"linear": (-3761.0, 38.0), "mixture": (-3614.0, 35.0)}
REPLICATION_LINEAR = {"beta0": 6.00, "beta1": -0.09, "sigma_e": 0.44,
                      "sigma_u": 0.25, "sigma_w": 0.16}
REPLICATION_MIXTURE = {"beta": 5.86, "delta": 0.75, "p_sr": 0.23, "p_or": 0.16,
                       "sigma_e": 0.21, "sigma_ep": 0.69, "sigma_u": 0.22,
                       "sigma_w": 0.07}
REPLICATION_ELPD = {"linear": (-3959.0, 53.0), "mixture": (-3801.0, 38.0)}


def criterion(number, name, ok, detail):
    record_criterion(number, name, "PASS" if ok else "FAIL", detail)
    assert ok, f"criterion {number} ({name}): {detail}"


def criterion_skip(number, name, reason):
    record_criterion(number, name, "SKIP", reason)
    pytest.skip(reason)


def test_criterion_1_gradient_matches_finite_differences():
    ds = gen_linear(LinearTruth(6.0, -0.1, 0.4, 0.2, 0.1), DesignSpec(5, 2, seed=11))
    assert len(ds) == 10
    rng = np.random.default_rng(77)
    h = 1e-5
    worst = 0.0
    for model in ("linear", "mixture"):
        dens = PosteriorDensity(model, ds)
        for _ in range(100):
            z = rng.normal(0.0, 0.5, dens.dim)
            _, grad = dens.logp_grad(z)
            fd = np.empty(dens.dim)
            for d in range(dens.dim):
                zp = z.copy(); zp[d] += h
                zm = z.copy(); zm[d] -= h
                fd[d] = (dens.logp_grad(zp)[0] - dens.logp_grad(zm)[0]) / (2 * h)
            rel = np.abs(grad - fd) / np.maximum(1.0, np.abs(grad))
            worst = max(worst, float(rel.max()))
    criterion(1, "gradient correctness", worst < GRAD_TOL,
              f"max relative error {worst:.1e} over 100 points x 2 models, "
              f"tolerance {GRAD_TOL:.0e}")


def test_criterion_2_sampler_recovers_conjugate_posterior():
    # normal likelihood with known scale, normal prior: posterior closed form
    tau0, sigma = 2.0, 1.0
    y = np.array([1.2, -0.4, 0.9, 2.1, 0.3])
    precision = 1 / tau0 ** 2 + len(y) / sigma ** 2
    mu_n = (y.sum() / sigma ** 2) / precision
    tau_n = precision ** -0.5

    def value_grad(theta):
        t = theta[0]
        val = -0.5 * (t / tau0) ** 2 - 0.5 * ((y - t) ** 2).sum() / sigma ** 2
        return val, np.array([-t / tau0 ** 2 + (y - t).sum() / sigma ** 2])

    config = SamplerConfig(n_chains=4, n_warmup=500, n_samples=1000, seed=314)
    draws, _, _ = sample_density(value_grad, dim=1, config=config)
    chains = draws[:, :, 0]
    flat = chains.reshape(-1)
    assert flat.size == 4000
    n_eff = ess(chains)
    mean_err = abs(flat.mean() - mu_n)
    sd_err = abs(flat.std(ddof=1) - tau_n)
    mcse_mean = tau_n / math.sqrt(n_eff)
    mcse_sd = tau_n / math.sqrt(2 * n_eff)
    ok = (mean_err < MCSE_SIGMAS * mcse_mean) and (sd_err < MCSE_SIGMAS * mcse_sd)
    criterion(2, "sampler oracle", ok,
              f"mean err {mean_err:.4f} (budget {MCSE_SIGMAS * mcse_mean:.4f}), "
              f"sd err {sd_err:.4f} (budget {MCSE_SIGMAS * mcse_sd:.4f}), "
              f"ess {n_eff:.0f}")


@pytest.fixture(scope="module")
def mixture_datasets():
    # study-scale data simulated from the mixture process; shared by the
    # recovery and model-selection criteria
    return [gen_mixture(DEFAULT_MIXTURE_TRUTH, DesignSpec(37, 15, seed=100 + s))
            for s in range(10)]


def test_criterion_3_mixture_parameter_recovery(mixture_datasets):
    covered = {name: 0 for name in MIXTURE_POP}
    for s, ds in enumerate(mixture_datasets):
        config = SamplerConfig(n_chains=3, n_warmup=500, n_samples=500, seed=200 + s)
        draws = sample("mixture", ds, config)
        report = recovery_check(DEFAULT_MIXTURE_TRUTH, draws)
        for name in MIXTURE_POP:
            covered[name] += report.parameters[name].covered
    worst = min(covered, key=covered.get)
    ok = all(v >= 8 for v in covered.values())
    criterion(3, "parameter recovery", ok,
              f"95% CI coverage over 10 seeds, minimum {covered[worst]}/10 "
              f"({worst}); need >= 8/10 for all 8 population parameters")


def test_criterion_4_crossval_prefers_mixture_on_mixture_data(mixture_datasets):
    wins = 0
    ratios = []
    for s, ds in enumerate(mixture_datasets):
        plan = make_folds(ds, 10, seed=300 + s)
        config = SamplerConfig(n_chains=2, n_warmup=300, n_samples=300, seed=400 + s)
        result = compare(run_kfold("mixture", ds, plan, config),
                         run_kfold("linear", ds, plan, config))
        ratios.append(result.diff / result.se_diff)
        wins += result.diff > 2 * result.se_diff
    ok = wins >= 9
    criterion(4, "model selection, mixture truth", ok,
              f"diff > 2*se in {wins}/10 seeds (need >= 9); "
              f"diff/se range [{min(ratios):.1f}, {max(ratios):.1f}]")


def test_criterion_5_crossval_ties_on_linear_data():
    ties = 0
    ratios = []
    for s in range(10):
        ds = gen_linear(DEFAULT_LINEAR_TRUTH, DesignSpec(37, 15, seed=500 + s))
        plan = make_folds(ds, 10, seed=600 + s)
        config = SamplerConfig(n_chains=2, n_warmup=300, n_samples=300, seed=700 + s)
        result = compare(run_kfold("mixture", ds, plan, config),
                         run_kfold("linear", ds, plan, config))
        ratios.append(result.diff / result.se_diff)
        ties += abs(result.diff) <= 4 * result.se_diff
    ok = ties >= 8
    criterion(5, "model selection, linear truth", ok,
              f"|diff| <= 4*se in {ties}/10 seeds (need >= 8); "
              f"diff/se range [{min(ratios):.1f}, {max(ratios):.1f}]")


def _benchmark_dataset_check(number, name, env_var, linear_targets,
                             mixture_targets, elpd_targets):
    path = os.environ.get(env_var)
    if not path:
        criterion_skip(number, name,
                       f"{env_var} not set; point it at the trial CSV to enable")
    ds = load_csv(path)

    fit_config = SamplerConfig(n_chains=4, n_warmup=1000, n_samples=1000, seed=1234)
    failures = []
    for model, targets in (("linear", linear_targets), ("mixture", mixture_targets)):
        draws = sample(model, ds, fit_config)
        for pname, want in targets.items():
            tol = 0.03 if pname.startswith("p_") else 0.05
            got = float(draws.column(pname).mean())
            if abs(got - want) > tol:
                failures.append(f"{model} {pname}: {got:.3f} vs {want:.2f} (tol {tol})")

    plan = make_folds(ds, 10, seed=1234)
    cv_config = SamplerConfig(n_chains=2, n_warmup=300, n_samples=300, seed=1234)
    reports = {model: run_kfold(model, ds, plan, cv_config)
               for model in ("linear", "mixture")}
    for model, (want, want_se) in elpd_targets.items():
        got = reports[model].total
        if abs(got - want) > 2 * want_se:
            failures.append(f"{model} elpd {got:.0f} vs {want:.0f} +- {2 * want_se:.0f}")
    result = compare(reports["mixture"], reports["linear"])
    if not result.diff > 2 * result.se_diff:
        failures.append(f"diff {result.diff:.0f} not > 2*se {2 * result.se_diff:.0f}")

    detail = ("posterior means and elpd totals match reference analysis; "
              f"diff {result.diff:.0f} (se {result.se_diff:.0f})")
    if failures:
        detail = "; ".join(failures)
    criterion(number, name, not failures, detail)


def test_criterion_6_original_study_data():
    _benchmark_dataset_check(6, "original data", "RTMIX_ORIGINAL_DATA",
                             ORIGINAL_LINEAR, ORIGINAL_MIXTURE, ORIGINAL_ELPD)


def test_criterion_7_replication_study_data():
    _benchmark_dataset_check(7, "replication data", "RTMIX_REPLICATION_DATA",
                             REPLICATION_LINEAR, REPLICATION_MIXTURE,
                             REPLICATION_ELPD)


def test_criterion_8_numerical_stability_at_extreme_magnitudes():
    def oracle_lme(values):
        s = mpmath.fsum(mpmath.e ** mpmath.mpf(v) for v in values)
        return float(mpmath.log(s / len(values)))

    rng = np.random.default_rng(8)
    cases = [np.array([-700.0, 0.0, 700.0]), np.array([700.0, 699.0, 698.0]),
             np.array([-700.0, -699.0]), np.array([-700.0, -700.0]),
             np.array([0.0])]
    cases += [rng.uniform(-700, 700, 64) for _ in range(20)]
    worst_lme = 0.0
    for case in cases:
        got, want = log_mean_exp(case), oracle_lme(case)
        err = abs(got - want) / abs(want) if want != 0 else abs(got - want)
        worst_lme = max(worst_lme, err)

    def oracle_lognormal(log_rt, mu, scale):
        z = (mpmath.mpf(log_rt) - mpmath.mpf(mu)) / mpmath.mpf(scale)
        return (-mpmath.mpf(log_rt) - mpmath.log(scale)
                - mpmath.log(2 * mpmath.pi) / 2 - z * z / 2)

    params = MixtureParams(beta=6.0, delta=0.8, p_sr=0.3, p_or=0.2,
                           sigma_e=0.5, sigma_ep=1.2, sigma_u=0.25,
                           sigma_w=0.1, u=np.array([0.15]), w=np.array([-0.2]))
    worst_mix = 0.0
    for i, log_rt in enumerate([-700.0, -300.0, -1.0, 0.5, 300.0, 700.0]):
        cond = (Condition.SUBJECT_RELATIVE if i % 2 == 0
                else Condition.OBJECT_RELATIVE)
        got = mixture_pointwise_loglik(params, Trial(1, 1, cond, math.exp(log_rt)))
        p = params.p_sr if cond is Condition.SUBJECT_RELATIVE else params.p_or
        mu = params.beta + params.u[0] + params.w[0]
        slow = mpmath.log(mpmath.mpf(p)) + oracle_lognormal(
            log_rt, mu + params.delta, params.sigma_ep)
        fast = mpmath.log(1 - mpmath.mpf(p)) + oracle_lognormal(
            log_rt, mu, params.sigma_e)
        top = max(slow, fast)
        want = float(top + mpmath.log(mpmath.e ** (slow - top)
                                      + mpmath.e ** (fast - top)))
        worst_mix = max(worst_mix, abs(got - want) / abs(want))

    ok = worst_lme < STABILITY_TOL and worst_mix < STABILITY_TOL
    criterion(8, "numerical stability", ok,
              f"log-mean-exp worst rel {worst_lme:.1e}, mixture likelihood "
              f"worst rel {worst_mix:.1e}, tolerance {STABILITY_TOL:.0e}")


def test_criterion_9_cli_reruns_are_byte_identical(tmp_path):
    sim = tmp_path / "sim"
    assert main(["simulate", "--model", "linear", "--participants", "4",
                 "--items", "3", "--seed", "7", "--out", str(sim)]) == 0
    data = str(sim / "simulated.csv")
    fast = ["--chains", "2", "--warmup", "150", "--samples", "100",
            "--max-leapfrog", "64", "--seed", "5"]

    mismatches = []
    # config.json embeds the output directory, so it is the one file that
    # legitimately differs between the two runs
    for args, files in (
        (["fit", "--data", data, "--model", "linear"],
         ("draws.csv", "summary.csv", "summary.txt", "diagnostics.json",
          "layout.json")),
        (["compare", "--data", data, "--k", "2"],
         ("comparison.json", "comparison.txt", "elpd_linear.json",
          "elpd_mixture.json", "folds.csv")),
    ):
        out_a = tmp_path / f"{args[0]}_a"
        out_b = tmp_path / f"{args[0]}_b"
        assert main([*args, "--out", str(out_a), *fast]) == 0
        assert main([*args, "--out", str(out_b), *fast]) == 0
        for fname in files:
            if (out_a / fname).read_bytes() != (out_b / fname).read_bytes():
                mismatches.append(f"{args[0]}/{fname}")

    criterion(9, "reproducibility", not mismatches,
              "all draw and report files byte-identical across reruns"
              if not mismatches else f"differing files: {', '.join(mismatches)}")
