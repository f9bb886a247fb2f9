"""K-fold cross-validation of expected log predictive density (elpd).

For each fold, the model is refit on the training complement and every
held-out trial is scored by the log of its posterior-averaged likelihood
(a log-mean-exp over draws).  Totals, standard errors, and model
comparisons follow the usual normal approximation over pointwise elpd
values: se = sqrt(n * Var), with the sample variance (ddof=1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .data import Condition, Dataset, FoldPlan, Trial, sum_code
from .errors import AlignmentError, FoldError, InitializationError, NumericalError
from .sampler import PosteriorDraws, SamplerConfig, diagnose, sample

_RHAT_WARN = 1.05


def log_mean_exp(values) -> float:
    """log(mean(exp(values))), stable under max-shifting.

    Exact for constant vectors (the shifted mean is exactly 1).  Raises on
    an empty input.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("log_mean_exp of an empty vector")
    m = float(v.max())
    if not math.isfinite(m):
        # all -inf (log of zero mean), or a +inf/nan element dominates
        return m
    return m + math.log(float(np.mean(np.exp(v - m))))


@dataclass(frozen=True, eq=False)
class ElpdReport:
    """Pointwise and total elpd for one model under one fold plan."""

    model: str
    pointwise: np.ndarray
    total: float
    se: float
    warnings: tuple[str, ...]
    fold_signature: tuple | None = None

    @property
    def n(self) -> int:
        return len(self.pointwise)


@dataclass(frozen=True, eq=False)
class ElpdComparison:
    """Difference of two elpd reports over the same trials (a minus b)."""

    model_a: str
    model_b: str
    diff: float
    se_diff: float
    pointwise_diff: np.ndarray

    @property
    def winner(self) -> str:
        if self.diff > 0:
            return self.model_a
        if self.diff < 0:
            return self.model_b
        return "tie"


def _se_of_total(pointwise: np.ndarray) -> float:
    n = len(pointwise)
    if n < 2:
        return 0.0
    return float(math.sqrt(n * float(np.var(pointwise, ddof=1))))


def pointwise_elpd(trials: Sequence[Trial], draws: PosteriorDraws) -> np.ndarray:
    """Per-trial elpd: log-mean-exp over draws of each trial's log likelihood.

    The draws must come from a fit whose training data excluded these trials
    (not checkable here; run_kfold guarantees it).  Any non-finite per-draw
    log likelihood raises NumericalError naming the trial and draw.
    """
    flat = draws.flat()
    names = draws.names
    n_pop = 5 if draws.model == "linear" else 8
    n_p = sum(1 for nm in names if nm.startswith("u["))
    n_i = len(names) - n_pop - n_p

    out = np.empty(len(trials))
    # degenerate draws (zero scales, boundary weights) flow through as
    # inf/nan and are rejected by _finite_lme with trial and draw indices
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        if draws.model == "linear":
            b0, b1, s_e = flat[:, 0], flat[:, 1], flat[:, 2]
            log_se = np.log(s_e)
            for t_idx, trial in enumerate(trials):
                _check_ids(trial, n_p, n_i)
                u = flat[:, n_pop + trial.participant - 1]
                w = flat[:, n_pop + n_p + trial.item - 1]
                mu = b0 + b1 * sum_code(trial.condition) + u + w
                logy = math.log(trial.rt_ms)
                z = (logy - mu) / s_e
                ll = -logy - log_se - 0.9189385332046727 - 0.5 * z * z
                out[t_idx] = _finite_lme(ll, t_idx)
        else:
            beta, delta = flat[:, 0], flat[:, 1]
            p_sr, p_or = flat[:, 2], flat[:, 3]
            s_e, s_ep = flat[:, 4], flat[:, 5]
            log_se, log_sep = np.log(s_e), np.log(s_ep)
            lw_slow_sr, lw_ord_sr = np.log(p_sr), np.log1p(-p_sr)
            lw_slow_or, lw_ord_or = np.log(p_or), np.log1p(-p_or)
            for t_idx, trial in enumerate(trials):
                _check_ids(trial, n_p, n_i)
                u = flat[:, n_pop + trial.participant - 1]
                w = flat[:, n_pop + n_p + trial.item - 1]
                base = beta + u + w
                logy = math.log(trial.rt_ms)
                z_ord = (logy - base) / s_e
                z_slow = (logy - base - delta) / s_ep
                lp_ord = -logy - log_se - 0.9189385332046727 - 0.5 * z_ord * z_ord
                lp_slow = -logy - log_sep - 0.9189385332046727 - 0.5 * z_slow * z_slow
                if trial.condition is Condition.SUBJECT_RELATIVE:
                    ll = np.logaddexp(lw_slow_sr + lp_slow, lw_ord_sr + lp_ord)
                else:
                    ll = np.logaddexp(lw_slow_or + lp_slow, lw_ord_or + lp_ord)
                out[t_idx] = _finite_lme(ll, t_idx)
    return out


def _check_ids(trial: Trial, n_p: int, n_i: int) -> None:
    if not 1 <= trial.participant <= n_p:
        raise AlignmentError(
            f"trial participant {trial.participant} outside the fitted range 1..{n_p}")
    if not 1 <= trial.item <= n_i:
        raise AlignmentError(
            f"trial item {trial.item} outside the fitted range 1..{n_i}")


def _finite_lme(ll: np.ndarray, trial_index: int) -> float:
    bad = ~np.isfinite(ll)
    if bad.any():
        raise NumericalError("non-finite per-draw log likelihood",
                             trial=trial_index, draw=int(np.flatnonzero(bad)[0]))
    return log_mean_exp(ll)


def _fold_seed(master_seed: int, fold: int) -> int:
    """Deterministic per-fold sampler seed derived from (master seed, fold)."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(1, fold))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _signature(plan: FoldPlan) -> tuple:
    return (plan.k, hash(plan.assignment.tobytes()))


def run_kfold(model: str, dataset: Dataset, plan: FoldPlan,
              config: SamplerConfig, fold_order: Sequence[int] | None = None) -> ElpdReport:
    """Cross-validated elpd for one model under a fold plan.

    Each fold refits on the training complement with a sampler seed derived
    from (config.seed, fold), scores its held-out trials, and writes them
    into the pointwise vector by trial index, so the result is independent
    of fold execution order (fold_order exists to exercise that).  Folds
    whose fit cannot initialize raise FoldError carrying the fold index;
    any coordinate with split R-hat above 1.05 adds a warning.
    """
    n = len(dataset)
    if len(plan.assignment) != n:
        raise AlignmentError(
            f"fold plan covers {len(plan.assignment)} trials, dataset has {n}")
    order = list(fold_order) if fold_order is not None else list(range(1, plan.k + 1))
    if sorted(order) != list(range(1, plan.k + 1)):
        raise ValueError("fold_order must be a permutation of 1..k")

    pointwise = np.full(n, np.nan)
    warnings: list[str] = []
    for fold in order:
        held = plan.heldout_indices(fold)
        train = dataset.subset(plan.train_indices(fold))
        cfg = replace(config, seed=_fold_seed(config.seed, fold))
        try:
            draws = sample(model, train, cfg)
        except InitializationError as exc:
            raise FoldError(fold, str(exc)) from exc
        diag = diagnose(draws)
        flagged = {name: r for name, r in diag.rhat.items() if r > _RHAT_WARN}
        if flagged:
            worst = max(flagged, key=lambda nm: flagged[nm])
            warnings.append(
                f"fold {fold}: split R-hat {flagged[worst]:.3f} on {worst} "
                f"exceeds {_RHAT_WARN}")
        for msg in diag.warnings:
            warnings.append(f"fold {fold}: {msg}")
        held_trials = [dataset.trials[i] for i in held]
        pointwise[held] = pointwise_elpd(held_trials, draws)

    if np.isnan(pointwise).any():
        raise FoldError(0, "fold plan left some trials unscored")
    return ElpdReport(model=model, pointwise=pointwise,
                      total=float(np.sum(pointwise)), se=_se_of_total(pointwise),
                      warnings=tuple(warnings), fold_signature=_signature(plan))


def compare(a: ElpdReport, b: ElpdReport) -> ElpdComparison:
    """Pointwise elpd difference a minus b over the same trials.

    Reports must cover the same trials in the same order (same fold plan);
    mismatched lengths or fold signatures raise AlignmentError.
    """
    if a.n != b.n:
        raise AlignmentError(f"reports cover {a.n} and {b.n} trials")
    if (a.fold_signature is not None and b.fold_signature is not None
            and a.fold_signature != b.fold_signature):
        raise AlignmentError("reports come from different fold plans")
    d = a.pointwise - b.pointwise
    return ElpdComparison(model_a=a.model, model_b=b.model,
                          diff=float(np.sum(d)), se_diff=_se_of_total(d),
                          pointwise_diff=d)


# ---------------------------------------------------------------------------
# JSON-ready views

def report_to_dict(report: ElpdReport) -> dict:
    return {
        "model": report.model,
        "total": report.total,
        "se": report.se,
        "pointwise": [float(v) for v in report.pointwise],
        "warnings": list(report.warnings),
    }


def comparison_to_dict(cmp: ElpdComparison) -> dict:
    return {
        "diff": cmp.diff,
        "se_diff": cmp.se_diff,
        "winner": cmp.winner,
        "pointwise_diff": [float(v) for v in cmp.pointwise_diff],
    }
