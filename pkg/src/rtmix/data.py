"""Loading, validation, encoding, and fold partitioning of reading-time data.

A dataset is a flat list of trials: (participant, item, condition, reading
time in ms).  Participants and items are relabeled to contiguous 1..I and
1..J on load so that model code can index random-effect vectors directly.
Cross-validation folds are dealt stratified by participant x condition so
that every training set keeps data from every participant and every item.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataFormatError, InfeasibleSplitError, RowError


class Condition(Enum):
    """Relative-clause type of a trial."""

    SUBJECT_RELATIVE = "SR"
    OBJECT_RELATIVE = "OR"


# Accepted spellings in input files, lowercased.  Output always uses SR/OR.
_CONDITION_ALIASES = {
    "sr": Condition.SUBJECT_RELATIVE,
    "subj-ext": Condition.SUBJECT_RELATIVE,
    "or": Condition.OBJECT_RELATIVE,
    "obj-ext": Condition.OBJECT_RELATIVE,
}

_REQUIRED_COLUMNS = ("participant", "item", "condition", "rt")


def sum_code(condition: Condition) -> float:
    """Sum-coded condition contrast: subject relative -0.5, object relative +0.5."""
    return -0.5 if condition is Condition.SUBJECT_RELATIVE else 0.5


def parse_condition(label: str) -> Condition:
    """Map an input condition label (case-insensitive) to a Condition.

    Raises ValueError for labels other than SR, OR, subj-ext, obj-ext.
    """
    try:
        return _CONDITION_ALIASES[label.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown condition label {label!r}") from None


@dataclass(frozen=True)
class Trial:
    """One self-paced reading observation at the critical region."""

    participant: int
    item: int
    condition: Condition
    rt_ms: float

    def __post_init__(self):
        if not isinstance(self.condition, Condition):
            raise TypeError("condition must be a Condition")
        if not self.rt_ms > 0:
            raise ValueError(f"rt_ms must be positive, got {self.rt_ms}")


@dataclass(frozen=True, eq=False)
class Dataset:
    """An immutable trial list with contiguous participant and item ids.

    Invariants (checked by from_trials): participant ids are exactly 1..I,
    item ids exactly 1..J, and each (participant, item) pair occurs at most
    once.  Row order is preserved from the source.
    """

    trials: tuple[Trial, ...]
    n_participants: int
    n_items: int

    @classmethod
    def from_trials(cls, trials: Iterable[Trial]) -> "Dataset":
        trials = tuple(trials)
        pids = {t.participant for t in trials}
        iids = {t.item for t in trials}
        n_p, n_i = len(pids), len(iids)
        if trials:
            if pids != set(range(1, n_p + 1)):
                raise ValueError("participant ids must be contiguous 1..I; use relabel() first")
            if iids != set(range(1, n_i + 1)):
                raise ValueError("item ids must be contiguous 1..J; use relabel() first")
        seen = set()
        for t in trials:
            key = (t.participant, t.item)
            if key in seen:
                raise ValueError(f"duplicate (participant, item) pair {key}")
            seen.add(key)
        return cls(trials=trials, n_participants=n_p, n_items=n_i)

    def __len__(self) -> int:
        return len(self.trials)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        """Dataset restricted to the given trial indices (original ids kept).

        Intended for training sets from a FoldPlan, which guarantee that all
        participants and items remain present; the id-contiguity invariant is
        re-validated here.
        """
        return Dataset.from_trials(self.trials[i] for i in indices)

    def rt_log_mean(self) -> float:
        """Mean of log reading times; 0.0 for an empty dataset."""
        if not self.trials:
            return 0.0
        return float(np.mean([np.log(t.rt_ms) for t in self.trials]))


def relabel(raw_rows: Sequence[tuple[int, int, Condition, float]]) -> list[Trial]:
    """Relabel arbitrary integer participant/item labels to contiguous ids.

    Labels are mapped in ascending sorted order (deterministic), row order is
    preserved.
    """
    pmap = {p: k + 1 for k, p in enumerate(sorted({r[0] for r in raw_rows}))}
    imap = {i: k + 1 for k, i in enumerate(sorted({r[1] for r in raw_rows}))}
    return [
        Trial(participant=pmap[p], item=imap[i], condition=c, rt_ms=rt)
        for p, i, c, rt in raw_rows
    ]


def load_csv(path) -> Dataset:
    """Load a trial CSV with columns participant, item, condition, rt.

    participant and item must be integer labels (relabeled to 1..I / 1..J in
    sorted order), condition one of the accepted labels, rt a positive number
    of milliseconds.  Extra columns are ignored.  Errors carry the 1-based
    line number of the offending row.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataFormatError(f"{path}: empty file, expected a header row")
        missing = [c for c in _REQUIRED_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise DataFormatError(f"{path}: header is missing column(s) {', '.join(missing)}")
        raw: list[tuple[int, int, Condition, float]] = []
        for row in reader:
            line = reader.line_num
            values = {}
            for col in _REQUIRED_COLUMNS:
                v = row.get(col)
                if v is None or not v.strip():
                    raise RowError(line, f"missing value for {col!r}")
                values[col] = v.strip()
            try:
                p = int(values["participant"])
                i = int(values["item"])
            except ValueError:
                raise RowError(line, "participant and item must be integers") from None
            try:
                cond = parse_condition(values["condition"])
            except ValueError as exc:
                raise RowError(line, str(exc)) from None
            try:
                rt = float(values["rt"])
            except ValueError:
                raise RowError(line, f"rt must be numeric, got {values['rt']!r}") from None
            if not np.isfinite(rt) or rt <= 0:
                raise RowError(line, f"rt must be positive and finite, got {values['rt']!r}")
            raw.append((p, i, cond, rt))
    trials = relabel(raw)
    try:
        return Dataset.from_trials(trials)
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from None


def save_csv(dataset: Dataset, path) -> None:
    """Write a dataset in the load_csv format (SR/OR labels, round-trip floats)."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_REQUIRED_COLUMNS)
        for t in dataset.trials:
            writer.writerow([t.participant, t.item, t.condition.value, repr(float(t.rt_ms))])


@dataclass(frozen=True, eq=False)
class FoldPlan:
    """A K-fold partition of a dataset's trials.

    assignment[i] in 1..k is the fold that holds out trial i.  Plans are
    deterministic in (dataset, k, seed) and guarantee that every training
    set (all trials outside one fold) contains every participant and every
    item.
    """

    k: int
    assignment: np.ndarray
    seed: int

    def heldout_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)


def make_folds(dataset: Dataset, k: int, seed: int) -> FoldPlan:
    """Deal trials into k folds, stratified by participant x condition.

    Strata are visited in sorted (participant, condition) order; trials
    within a stratum are shuffled (seeded) and dealt to folds by one
    continuous round-robin counter with a seeded starting offset.  This
    keeps global fold sizes within 1 of each other, keeps each stratum's
    fold counts within 1 of each other, and spreads each participant's
    trials over min(n_trials, k) distinct folds.

    Raises InfeasibleSplitError when k < 2, k > n, or when some training
    set would lose a participant or item entirely (for example a
    participant contributing a single trial).
    """
    n = len(dataset)
    if k < 2:
        raise InfeasibleSplitError(f"k must be at least 2, got {k}")
    if k > n:
        raise InfeasibleSplitError(f"k={k} exceeds the number of trials ({n})")

    strata: dict[tuple[int, str], list[int]] = {}
    for idx, t in enumerate(dataset.trials):
        strata.setdefault((t.participant, t.condition.value), []).append(idx)

    rng = np.random.default_rng(seed)
    assignment = np.empty(n, dtype=np.int64)
    counter = int(rng.integers(k))
    for key in sorted(strata):
        order = np.array(strata[key], dtype=np.int64)
        rng.shuffle(order)
        for idx in order:
            assignment[idx] = counter % k + 1
            counter += 1

    plan = FoldPlan(k=k, assignment=assignment, seed=seed)
    _check_training_coverage(dataset, plan)
    return plan


def _check_training_coverage(dataset: Dataset, plan: FoldPlan) -> None:
    # Every fold's complement must retain all participants and all items.
    for fold in range(1, plan.k + 1):
        train = plan.train_indices(fold)
        pids = {dataset.trials[i].participant for i in train}
        iids = {dataset.trials[i].item for i in train}
        if len(pids) != dataset.n_participants:
            missing = sorted(set(range(1, dataset.n_participants + 1)) - pids)
            raise InfeasibleSplitError(
                f"training set for fold {fold} would lose participant(s) {missing}; "
                f"reduce k or provide more trials per participant"
            )
        if len(iids) != dataset.n_items:
            missing = sorted(set(range(1, dataset.n_items + 1)) - iids)
            raise InfeasibleSplitError(
                f"training set for fold {fold} would lose item(s) {missing}; "
                f"reduce k or provide more trials per item"
            )


def save_folds(plan: FoldPlan, path) -> None:
    """Export a fold plan as CSV with columns trial_index (0-based), fold (1-based)."""
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial_index", "fold"])
        for idx, fold in enumerate(plan.assignment):
            writer.writerow([idx, int(fold)])


def load_folds(path, seed: int = -1) -> FoldPlan:
    """Read a fold plan back from the save_folds CSV format.

    The originating seed is not stored in the file; pass it if known.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"trial_index", "fold"} <= set(reader.fieldnames):
            raise DataFormatError(f"{path}: expected columns trial_index, fold")
        pairs = []
        for row in reader:
            try:
                pairs.append((int(row["trial_index"]), int(row["fold"])))
            except (TypeError, ValueError):
                raise RowError(reader.line_num, "trial_index and fold must be integers") from None
    pairs.sort()
    if [i for i, _ in pairs] != list(range(len(pairs))):
        raise DataFormatError(f"{path}: trial indices must cover 0..n-1 exactly once")
    assignment = np.array([f for _, f in pairs], dtype=np.int64)
    if len(assignment) == 0:
        raise DataFormatError(f"{path}: empty fold plan")
    k = int(assignment.max())
    if assignment.min() < 1:
        raise DataFormatError(f"{path}: folds must be numbered from 1")
    return FoldPlan(k=k, assignment=assignment, seed=seed)
