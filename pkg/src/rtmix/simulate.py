"""Fake-data simulation, parameter recovery checks, and posterior
predictive checks.

Generators draw data from either model at known population values over a
balanced participant x item design, so the fitting pipeline can be
validated end to end: simulate -> fit -> check that credible intervals
cover the truth, and that model comparison picks the generator.

Each generator call spawns three child RNG streams from the design seed
(random effects, component indicators, trial noise).  Trial noise is one
standard-normal draw per trial scaled by the active component's sigma, so
degenerate settings line up exactly: gen_mixture with p_sr = p_or = 0
produces byte-identical data to gen_linear with beta1 = 0 at the same
seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .data import Condition, Dataset, Trial, sum_code
from .errors import AlignmentError
from .models import LINEAR_POPULATION, MIXTURE_POPULATION
from .sampler import PosteriorDraws

_PPC_STATS = ("median", "sd", "q90")


@dataclass(frozen=True)
class DesignSpec:
    """A balanced simulated design: full participant x item crossing.

    Conditions alternate Latin-square style (subject relative when
    participant + item is even), so each participant sees each item once
    and per-participant condition counts differ by at most one.  seed
    drives all randomness of a generator call.
    """

    n_participants: int
    n_items: int
    seed: int

    def __post_init__(self):
        if self.n_participants < 1 or self.n_items < 1:
            raise ValueError("design needs at least one participant and one item")

    def trial_frame(self) -> list[tuple[int, int, Condition]]:
        frame = []
        for i in range(1, self.n_participants + 1):
            for j in range(1, self.n_items + 1):
                cond = (Condition.SUBJECT_RELATIVE if (i + j) % 2 == 0
                        else Condition.OBJECT_RELATIVE)
                frame.append((i, j, cond))
        return frame


@dataclass(frozen=True)
class LinearTruth:
    """Population values for simulating from the linear model."""

    beta0: float
    beta1: float
    sigma_e: float
    sigma_u: float
    sigma_w: float

    def __post_init__(self):
        for name in ("sigma_e", "sigma_u", "sigma_w"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def as_dict(self) -> dict[str, float]:
        return {name: float(getattr(self, name)) for name in LINEAR_POPULATION}


@dataclass(frozen=True)
class MixtureTruth:
    """Population values for simulating from the mixture model.

    p_sr/p_or may be 0 or 1 to produce degenerate single-component data.
    """

    beta: float
    delta: float
    p_sr: float
    p_or: float
    sigma_e: float
    sigma_ep: float
    sigma_u: float
    sigma_w: float

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        for name in ("p_sr", "p_or"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("sigma_e", "sigma_ep", "sigma_u", "sigma_w"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def as_dict(self) -> dict[str, float]:
        return {name: float(getattr(self, name)) for name in MIXTURE_POPULATION}


# Default population values for the command-line simulator, at the scale of
# typical self-paced reading data (log-ms locations around 6).
DEFAULT_LINEAR_TRUTH = LinearTruth(
    beta0=6.06, beta1=-0.07, sigma_e=0.52, sigma_u=0.25, sigma_w=0.20)
DEFAULT_MIXTURE_TRUTH = MixtureTruth(
    beta=5.85, delta=0.93, p_sr=0.25, p_or=0.21,
    sigma_e=0.22, sigma_ep=0.64, sigma_u=0.24, sigma_w=0.09)


def _streams(design: DesignSpec):
    effects, components, noise = np.random.SeedSequence(design.seed).spawn(3)
    return (np.random.default_rng(effects),
            np.random.default_rng(components),
            np.random.default_rng(noise))


def _effects(rng, design: DesignSpec, sigma_u: float, sigma_w: float):
    u = sigma_u * rng.standard_normal(design.n_participants)
    w = sigma_w * rng.standard_normal(design.n_items)
    return u, w


def gen_linear(truth: LinearTruth, design: DesignSpec) -> Dataset:
    """Simulate a dataset from the linear model at the given truth."""
    eff_rng, _comp_rng, noise_rng = _streams(design)
    u, w = _effects(eff_rng, design, truth.sigma_u, truth.sigma_w)
    frame = design.trial_frame()
    z = noise_rng.standard_normal(len(frame))
    trials = []
    for t, (i, j, cond) in enumerate(frame):
        mu = truth.beta0 + truth.beta1 * sum_code(cond) + u[i - 1] + w[j - 1]
        trials.append(Trial(participant=i, item=j, condition=cond,
                            rt_ms=math.exp(mu + truth.sigma_e * z[t])))
    return Dataset.from_trials(trials)


def gen_mixture(truth: MixtureTruth, design: DesignSpec) -> Dataset:
    """Simulate a dataset from the two-component mixture at the given truth.

    Each trial is slow with its condition's probability; slow trials shift
    the location by delta and use sigma_ep instead of sigma_e.
    """
    eff_rng, comp_rng, noise_rng = _streams(design)
    u, w = _effects(eff_rng, design, truth.sigma_u, truth.sigma_w)
    frame = design.trial_frame()
    n = len(frame)
    p = np.array([truth.p_sr if cond is Condition.SUBJECT_RELATIVE else truth.p_or
                  for _, _, cond in frame])
    slow = comp_rng.random(n) < p
    z = noise_rng.standard_normal(n)
    trials = []
    for t, (i, j, cond) in enumerate(frame):
        base = truth.beta + u[i - 1] + w[j - 1]
        mu = base + (truth.delta if slow[t] else 0.0)
        sigma = truth.sigma_ep if slow[t] else truth.sigma_e
        trials.append(Trial(participant=i, item=j, condition=cond,
                            rt_ms=math.exp(mu + sigma * z[t])))
    return Dataset.from_trials(trials)


# ---------------------------------------------------------------------------
# parameter recovery

@dataclass(frozen=True)
class ParamRecovery:
    true: float
    mean: float
    lower: float
    upper: float
    covered: bool


@dataclass(frozen=True, eq=False)
class RecoveryReport:
    """Credible-interval coverage of known truths, per population parameter."""

    model: str
    level: float
    parameters: dict[str, ParamRecovery]
    coverage_rate: float


def recovery_check(true_values, draws: PosteriorDraws, level: float = 0.95) -> RecoveryReport:
    """Check central credible-interval coverage of known population values.

    true_values is a LinearTruth/MixtureTruth or a mapping whose keys must
    be exactly the population coordinate names of draws.model (mismatches
    raise AlignmentError).  Intervals are central quantile intervals at the
    given level (linear interpolation).
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    if isinstance(true_values, (LinearTruth, MixtureTruth)):
        true_values = true_values.as_dict()
    if not isinstance(true_values, Mapping):
        raise TypeError("true_values must be a truth object or a mapping")
    expected = LINEAR_POPULATION if draws.model == "linear" else MIXTURE_POPULATION
    if set(true_values) != set(expected):
        missing = sorted(set(expected) - set(true_values))
        extra = sorted(set(true_values) - set(expected))
        raise AlignmentError(
            f"true values do not align with {draws.model} population parameters"
            + (f"; missing {missing}" if missing else "")
            + (f"; unexpected {extra}" if extra else ""))
    alpha = (1.0 - level) / 2.0
    params: dict[str, ParamRecovery] = {}
    for name in expected:
        col = draws.column(name)
        lo, hi = np.quantile(col, [alpha, 1.0 - alpha])
        truth = float(true_values[name])
        params[name] = ParamRecovery(true=truth, mean=float(col.mean()),
                                     lower=float(lo), upper=float(hi),
                                     covered=bool(lo <= truth <= hi))
    rate = sum(p.covered for p in params.values()) / len(params)
    return RecoveryReport(model=draws.model, level=level,
                          parameters=params, coverage_rate=rate)


def recovery_to_dict(report: RecoveryReport) -> dict:
    return {
        "model": report.model,
        "level": report.level,
        "coverage_rate": report.coverage_rate,
        "parameters": {
            name: {"true": p.true, "mean": p.mean,
                   "lower": p.lower, "upper": p.upper, "covered": p.covered}
            for name, p in report.parameters.items()
        },
    }


# ---------------------------------------------------------------------------
# posterior predictive checks

@dataclass(frozen=True)
class PpcStat:
    observed: float
    p_lower: float            # fraction of replicate stats <= observed
    replicates: np.ndarray

    @property
    def extreme(self) -> bool:
        return self.p_lower < 0.025 or self.p_lower > 0.975


@dataclass(frozen=True, eq=False)
class PpcSummary:
    """Observed vs replicate per-condition statistics of log reading time."""

    model: str
    n_rep: int
    stats: dict[str, dict[str, PpcStat]]   # condition value -> stat name -> PpcStat


def _log_rt_stats(log_rt: np.ndarray) -> dict[str, float]:
    return {
        "median": float(np.median(log_rt)),
        "sd": float(np.std(log_rt, ddof=1)) if log_rt.size > 1 else 0.0,
        "q90": float(np.quantile(log_rt, 0.9)),
    }


def posterior_predictive(draws: PosteriorDraws, dataset: Dataset,
                         n_rep: int = 200, seed: int = 0) -> PpcSummary:
    """Simulate replicate datasets at the observed trials and compare stats.

    Replicates reuse each selected draw's own random effects and the
    dataset's trial layout, varying only the residual noise (and component
    membership for the mixture).  Draws are thinned evenly from the
    flattened posterior; fresh noise comes from the seed.  Statistics
    (median, sample SD, 0.9 quantile of log rt) are computed per condition,
    and each observed statistic is placed in its replicate distribution as
    p_lower = fraction of replicates <= observed.
    """
    if n_rep < 1:
        raise ValueError("n_rep must be at least 1")
    if len(dataset) == 0:
        raise ValueError("cannot run a predictive check on an empty dataset")
    flat = draws.flat()
    n_total = flat.shape[0]
    sel = np.unique(np.linspace(0, n_total - 1, min(n_rep, n_total)).round().astype(int))
    n_rep = len(sel)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(4,)))

    n_pop = 5 if draws.model == "linear" else 8
    n_p = sum(1 for nm in draws.names if nm.startswith("u["))
    pidx = np.array([t.participant - 1 for t in dataset.trials], dtype=np.intp)
    iidx = np.array([t.item - 1 for t in dataset.trials], dtype=np.intp)
    x = np.array([sum_code(t.condition) for t in dataset.trials])
    is_sr = np.array([t.condition is Condition.SUBJECT_RELATIVE for t in dataset.trials])
    obs_log = np.array([math.log(t.rt_ms) for t in dataset.trials])
    n = len(dataset)

    conditions = [c.value for c in (Condition.SUBJECT_RELATIVE, Condition.OBJECT_RELATIVE)
                  if np.any(is_sr == (c is Condition.SUBJECT_RELATIVE))]
    masks = {"SR": is_sr, "OR": ~is_sr}
    observed = {c: _log_rt_stats(obs_log[masks[c]]) for c in conditions}
    reps = {c: {s: np.empty(n_rep) for s in _PPC_STATS} for c in conditions}

    for r, row_idx in enumerate(sel):
        row = flat[row_idx]
        u = row[n_pop:n_pop + n_p]
        w = row[n_pop + n_p:]
        z = rng.standard_normal(n)
        if draws.model == "linear":
            b0, b1, s_e = row[0], row[1], row[2]
            log_rep = b0 + b1 * x + u[pidx] + w[iidx] + s_e * z
        else:
            beta, delta = row[0], row[1]
            p_sr, p_or = row[2], row[3]
            s_e, s_ep = row[4], row[5]
            p = np.where(is_sr, p_sr, p_or)
            slow = rng.random(n) < p
            base = beta + u[pidx] + w[iidx]
            log_rep = base + np.where(slow, delta, 0.0) + np.where(slow, s_ep, s_e) * z
        for c in conditions:
            st = _log_rt_stats(log_rep[masks[c]])
            for s in _PPC_STATS:
                reps[c][s][r] = st[s]

    stats: dict[str, dict[str, PpcStat]] = {}
    for c in conditions:
        stats[c] = {}
        for s in _PPC_STATS:
            rep = reps[c][s]
            obs = observed[c][s]
            stats[c][s] = PpcStat(observed=obs,
                                  p_lower=float(np.mean(rep <= obs)),
                                  replicates=rep)
    return PpcSummary(model=draws.model, n_rep=n_rep, stats=stats)


def ppc_to_dict(summary: PpcSummary) -> dict:
    return {
        "model": summary.model,
        "n_rep": summary.n_rep,
        "conditions": {
            cond: {
                stat: {"observed": s.observed, "p_lower": s.p_lower, "extreme": s.extreme}
                for stat, s in per_cond.items()
            }
            for cond, per_cond in summary.stats.items()
        },
    }


def save_ppc_replicates(summary: PpcSummary, path) -> None:
    """Plain CSV of replicate statistics: replicate, condition, stat, value."""
    with open(path, "w", newline="") as fh:
        fh.write("replicate,condition,stat,value\n")
        for cond, per_cond in summary.stats.items():
            for stat, s in per_cond.items():
                for r, v in enumerate(s.replicates):
                    fh.write(f"{r + 1},{cond},{stat},{repr(float(v))}\n")
