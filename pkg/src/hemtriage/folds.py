"""Patient-grouped stratified fold assignment and out-of-fold prediction.

All scans sharing a patient id land in one fold, so no model ever predicts a
scan after seeing any scan of the same patient. Stratification is greedy:
patient groups are ordered by the global rarity of their rarest positive
label (then by how many of it they carry, then by size), and each group goes
to the fold that minimizes a summed squared imbalance over the six label
columns (five types plus any) and the fold size, ties broken by fold index.
The seed only shuffles groups whose sort keys tie exactly.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError, InfeasibleError, TrainingError
from .fileio import atomic_write_text
from .volume import DEFAULT_WINDOWS, HEMORRHAGE_TYPES

_FOLD_COLUMNS = ("scan_id", "patient_id", "fold")
_LABEL_COLUMNS = len(HEMORRHAGE_TYPES) + 1  # five types plus "any"


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    fold_of: dict[str, int]

    def __post_init__(self):
        if self.k < 2:
            raise ConfigError("fold count must be at least 2")
        for scan_id, fold in self.fold_of.items():
            if not 0 <= fold < self.k:
                raise ConfigError(f"scan {scan_id}: fold {fold} outside [0, {self.k})")

    def scans_in_fold(self, fold: int) -> list[str]:
        return [scan_id for scan_id, f in self.fold_of.items() if f == fold]


def assign_folds(rows, k: int, seed: int = 0) -> FoldAssignment:
    """Deterministic patient-grouped stratified assignment of manifest rows."""
    if k < 2:
        raise ConfigError(f"fold count must be at least 2, got {k}")
    rows = list(rows)
    groups: dict[str, list] = {}
    for row in rows:
        groups.setdefault(row.patient_id, []).append(row)
    if k > len(groups):
        raise InfeasibleError(f"cannot build {k} folds from {len(groups)} patient groups")

    patient_ids = sorted(groups)
    jitter = {pid: int(j) for pid, j in
              zip(patient_ids, np.random.default_rng(seed).permutation(len(patient_ids)))}

    counts = {}
    for pid in patient_ids:
        label_count = np.zeros(_LABEL_COLUMNS)
        for row in groups[pid]:
            vec = row.labels.vector()
            label_count[:5] += vec
            label_count[5] += vec.any()
        counts[pid] = label_count
    totals = sum(counts.values())

    def sort_key(pid):
        label_count = counts[pid]
        positive = np.nonzero(label_count[:5])[0]
        if len(positive) == 0:
            return (1, 0.0, 0.0, -len(groups[pid]), jitter[pid])
        rarest = min(positive, key=lambda t: (totals[t], t))
        return (0, totals[rarest], -label_count[rarest], -len(groups[pid]), jitter[pid])

    fold_counts = np.zeros((k, _LABEL_COLUMNS))
    fold_sizes = np.zeros(k)
    group_fold: dict[str, int] = {}
    label_weight = 1.0 / np.maximum(totals, 1.0)  # rare labels dominate the score
    size_weight = 1.0 / len(rows)
    ordered = sorted(patient_ids, key=sort_key)
    for pid in ordered:
        label_count = counts[pid]
        size = len(groups[pid])
        # Marginal increase of the weighted summed squared fold loads: labels
        # the group does not carry contribute nothing, so positives
        # round-robin over the emptiest folds and sizes stay level.
        scores = ((2.0 * fold_counts * label_count + label_count ** 2) * label_weight).sum(axis=1)
        scores += (2.0 * fold_sizes * size + size ** 2) * size_weight
        best = int(np.argmin(scores))  # first minimum: lowest fold index wins ties
        fold_counts[best] += label_count
        fold_sizes[best] += size
        group_fold[pid] = best

    _repair_balance(ordered, groups, counts, group_fold, fold_counts, fold_sizes, totals, k)

    fold_of = {row.scan_id: group_fold[pid] for pid in patient_ids for row in groups[pid]}
    return FoldAssignment(k=k, fold_of=fold_of)


def _repair_balance(ordered, groups, counts, group_fold, fold_counts, fold_sizes, totals, k,
                    max_moves: int = 200) -> None:
    """Move whole patient groups between folds while that strictly shrinks
    per-label deviations beyond the largest single group's contribution.

    The greedy alone can trade one label's balance for another's on
    multi-label groups; this deterministic best-improvement pass cleans up
    the (rare, small) overshoots.
    """
    ideal = totals / k
    group_max = np.zeros(_LABEL_COLUMNS)
    for pid in ordered:
        group_max = np.maximum(group_max, counts[pid])
    size_max = max(len(groups[pid]) for pid in ordered)
    ideal_size = fold_sizes.sum() / k

    def violation(fc, fs):
        over = np.maximum(0.0, np.abs(fc - ideal) - group_max).sum()
        return over + np.maximum(0.0, np.abs(fs - ideal_size) - size_max).sum()

    def apply(pid, target):
        source = group_fold[pid]
        fold_counts[source] -= counts[pid]
        fold_counts[target] += counts[pid]
        fold_sizes[source] -= len(groups[pid])
        fold_sizes[target] += len(groups[pid])
        group_fold[pid] = target

    for _ in range(max_moves):
        current = violation(fold_counts, fold_sizes)
        if current <= 1e-9:
            return
        best_move = None
        best_value = current
        for pid in ordered:
            source = group_fold[pid]
            for target in range(k):
                if target == source:
                    continue
                trial_counts = fold_counts.copy()
                trial_counts[source] -= counts[pid]
                trial_counts[target] += counts[pid]
                trial_sizes = fold_sizes.copy()
                trial_sizes[source] -= len(groups[pid])
                trial_sizes[target] += len(groups[pid])
                value = violation(trial_counts, trial_sizes)
                if value < best_value - 1e-12:
                    best_value = value
                    best_move = ((pid, target),)
        # Swapping two groups sidesteps the size bound that blocks plain moves.
        for i, pid_a in enumerate(ordered):
            fold_a = group_fold[pid_a]
            for pid_b in ordered[i + 1:]:
                fold_b = group_fold[pid_b]
                if fold_a == fold_b:
                    continue
                delta = counts[pid_b] - counts[pid_a]
                trial_counts = fold_counts.copy()
                trial_counts[fold_a] += delta
                trial_counts[fold_b] -= delta
                size_delta = len(groups[pid_b]) - len(groups[pid_a])
                trial_sizes = fold_sizes.copy()
                trial_sizes[fold_a] += size_delta
                trial_sizes[fold_b] -= size_delta
                value = violation(trial_counts, trial_sizes)
                if value < best_value - 1e-12:
                    best_value = value
                    best_move = ((pid_a, fold_b), (pid_b, fold_a))
        if best_move is None:
            return
        for pid, target in best_move:
            apply(pid, target)


def generate_oof(volumes, assignment: FoldAssignment, train_fn,
                 specs=DEFAULT_WINDOWS, seed: int = 0) -> dict[str, np.ndarray]:
    """Out-of-fold per-slice probabilities for every scan.

    For each fold, ``train_fn(train_volumes, fold_seed)`` fits a classifier on
    the other folds and predicts the held-out scans, so every prediction comes
    from a model that never saw that scan's fold.
    """
    from .slicemodel import predict_slices

    volumes = list(volumes)
    missing = [v.scan_id for v in volumes if v.scan_id not in assignment.fold_of]
    if missing:
        raise ConfigError(f"scans without a fold assignment: {missing[:5]}")
    out: dict[str, np.ndarray] = {}
    for fold in range(assignment.k):
        held_out = [v for v in volumes if assignment.fold_of[v.scan_id] == fold]
        if not held_out:
            continue
        train_volumes = [v for v in volumes if assignment.fold_of[v.scan_id] != fold]
        if not train_volumes:
            raise TrainingError(f"fold {fold} leaves no training volumes")
        classifier = train_fn(train_volumes, seed * 10007 + fold)
        for volume in held_out:
            out[volume.scan_id] = predict_slices(volume, [classifier], specs)
    return {v.scan_id: out[v.scan_id] for v in volumes}


def save_fold_csv(rows, assignment: FoldAssignment, path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_FOLD_COLUMNS)
    for row in rows:
        writer.writerow([row.scan_id, row.patient_id, assignment.fold_of[row.scan_id]])
    atomic_write_text(path, buf.getvalue())


def load_fold_csv(path) -> FoldAssignment:
    fold_of: dict[str, int] = {}
    patient_fold: dict[str, int] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(_FOLD_COLUMNS) - set(reader.fieldnames):
            raise FormatError(f"{path}: fold CSV must have columns {_FOLD_COLUMNS}")
        for record in reader:
            try:
                fold = int(record["fold"])
            except ValueError as exc:
                raise FormatError(f"{path}: {exc}") from exc
            if record["scan_id"] in fold_of:
                raise FormatError(f"{path}: scan {record['scan_id']} assigned twice")
            fold_of[record["scan_id"]] = fold
            seen = patient_fold.setdefault(record["patient_id"], fold)
            if seen != fold:
                raise FormatError(f"{path}: patient {record['patient_id']} split across folds")
    if not fold_of:
        raise FormatError(f"{path}: fold CSV has no rows")
    return FoldAssignment(k=max(fold_of.values()) + 1, fold_of=fold_of)
