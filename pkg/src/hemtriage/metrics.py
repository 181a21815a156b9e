"""Evaluation statistics: confusion matrices, derived rates, AUC, log loss,
binomial confidence intervals, cumulative positive-case curves, and box-plot
summaries.

Undefined statistics (zero denominators) are flagged as None, never silently
0 or 1; rare types with a handful of positives make those cases reachable.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import ArityError, DataError, UndefinedMetricError
from .fileio import atomic_write_text
from .volume import HEMORRHAGE_TYPES

REPORT_LABELS = HEMORRHAGE_TYPES + ("any",)
_REPORT_COLUMNS = ("Hemorrhage", "TP", "FN", "TN", "FP", "SEN", "SPEC", "PPV",
                   "NPV", "AUC", "Acc", "BAcc", "MCC", "F1")
_STAT_FIELDS = ("sen", "spec", "ppv", "npv", "acc", "bacc", "mcc", "f1")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fn: int
    tn: int
    fp: int

    def __post_init__(self):
        counts = (self.tp, self.fn, self.tn, self.fp)
        if any(c < 0 for c in counts):
            raise DataError(f"confusion counts must be non-negative, got {counts}")
        if sum(counts) < 1:
            raise DataError("confusion matrix must count at least one sample")

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.tn + self.fp


@dataclass(frozen=True)
class ClassifierStats:
    """Derived rates; None flags an undefined (zero-denominator) statistic."""

    sen: float | None
    spec: float | None
    ppv: float | None
    npv: float | None
    acc: float | None
    bacc: float | None
    mcc: float | None
    f1: float | None


def compute_confusion(decisions, truths) -> ConfusionMatrix:
    decisions = np.asarray(decisions, dtype=bool).ravel()
    truths = np.asarray(truths, dtype=bool).ravel()
    if len(decisions) != len(truths):
        raise ArityError(f"{len(decisions)} decisions vs {len(truths)} truths")
    if len(decisions) < 1:
        raise ArityError("need at least one decision/truth pair")
    return ConfusionMatrix(
        tp=int((decisions & truths).sum()),
        fn=int((~decisions & truths).sum()),
        tn=int((~decisions & ~truths).sum()),
        fp=int((decisions & ~truths).sum()),
    )


def _ratio(num: int, den: int) -> float | None:
    return num / den if den > 0 else None


def compute_metrics(cm: ConfusionMatrix) -> ClassifierStats:
    sen = _ratio(cm.tp, cm.tp + cm.fn)
    spec = _ratio(cm.tn, cm.tn + cm.fp)
    mcc_den = (cm.tp + cm.fp) * (cm.tp + cm.fn) * (cm.tn + cm.fp) * (cm.tn + cm.fn)
    return ClassifierStats(
        sen=sen,
        spec=spec,
        ppv=_ratio(cm.tp, cm.tp + cm.fp),
        npv=_ratio(cm.tn, cm.tn + cm.fn),
        acc=(cm.tp + cm.tn) / cm.total,
        bacc=(sen + spec) / 2.0 if sen is not None and spec is not None else None,
        mcc=(cm.tp * cm.tn - cm.fp * cm.fn) / math.sqrt(mcc_den) if mcc_den > 0 else None,
        f1=_ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn),
    )


def _split_scores(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=bool).ravel()
    if len(scores) != len(labels):
        raise ArityError(f"{len(scores)} scores vs {len(labels)} labels")
    if labels.all() or not labels.any():
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    return scores, labels


def compute_auc(scores, labels) -> float:
    """Mann-Whitney AUC: ties between a positive and a negative count half.

    Computed from midranks, which equals brute-force pair counting exactly.
    """
    scores, labels = _split_scores(scores, labels)
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    boundaries = np.flatnonzero(np.diff(sorted_scores)) + 1
    start = 0
    for stop in list(boundaries) + [len(scores)]:
        ranks[order[start:stop]] = (start + stop + 1) / 2.0  # midrank, 1-based
        start = stop
    num_pos = int(labels.sum())
    num_neg = len(labels) - num_pos
    pairs_won = ranks[labels].sum() - num_pos * (num_pos + 1) / 2.0
    return pairs_won / (num_pos * num_neg)


def roc_points(scores, labels) -> np.ndarray:
    """ROC polyline: one (FPR, TPR) vertex per distinct score, ends pinned
    at (0,0) and (1,1). A score is called positive when >= the threshold."""
    scores, labels = _split_scores(scores, labels)
    num_pos = int(labels.sum())
    num_neg = len(labels) - num_pos
    order = np.argsort(-scores, kind="mergesort")
    sorted_labels = labels[order]
    tp = np.cumsum(sorted_labels)
    fp = np.cumsum(~sorted_labels)
    last_of_threshold = np.flatnonzero(np.diff(scores[order])).tolist() + [len(scores) - 1]
    points = [(0.0, 0.0)]
    for index in last_of_threshold:
        points.append((fp[index] / num_neg, tp[index] / num_pos))
    return np.array(points)


def log_loss(probabilities, labels) -> float:
    probs = np.asarray(probabilities, dtype=np.float64).ravel()
    truth = np.asarray(labels, dtype=np.float64).ravel()
    if len(probs) != len(truth):
        raise ArityError(f"{len(probs)} probabilities vs {len(truth)} labels")
    if len(probs) < 1:
        raise ArityError("need at least one probability/label pair")
    probs = np.clip(probs, 1e-15, 1.0 - 1e-15)
    return float(-np.mean(truth * np.log(probs) + (1.0 - truth) * np.log(1.0 - probs)))


def binomial_ci(proportion: float, count: int, z: float = 1.96) -> float:
    """Normal-approximation half-width z * sqrt(p(1-p)/n) for a Bernoulli rate."""
    if not 0.0 <= proportion <= 1.0:
        raise DataError(f"proportion must lie in [0, 1], got {proportion}")
    if count < 1:
        raise DataError(f"sample count must be positive, got {count}")
    return z * math.sqrt(proportion * (1.0 - proportion) / count)


@dataclass(frozen=True, eq=False)
class CumulativeCurves:
    decision_curve: np.ndarray
    truth_curve: np.ndarray
    final_difference: int  # decisions minus truths at the end, i.e. fp - fn
    max_divergence: int
    disagreements: int     # fp + fn


def cumulative_curves(decisions, truths, order=None) -> CumulativeCurves:
    """Running positive counts of decisions and truths in review order.

    Curves above the truth line mean over-calling; below means missed cases.
    """
    decisions = np.asarray(decisions, dtype=bool).ravel()
    truths = np.asarray(truths, dtype=bool).ravel()
    if len(decisions) != len(truths):
        raise ArityError(f"{len(decisions)} decisions vs {len(truths)} truths")
    if order is not None:
        order = np.asarray(order)
        if sorted(order.tolist()) != list(range(len(decisions))):
            raise DataError("order must be a permutation of the sample indices")
        decisions = decisions[order]
        truths = truths[order]
    decision_curve = np.cumsum(decisions).astype(int)
    truth_curve = np.cumsum(truths).astype(int)
    difference = decision_curve - truth_curve
    return CumulativeCurves(
        decision_curve=decision_curve,
        truth_curve=truth_curve,
        final_difference=int(difference[-1]) if len(difference) else 0,
        max_divergence=int(np.abs(difference).max()) if len(difference) else 0,
        disagreements=int((decisions != truths).sum()),
    )


@dataclass(frozen=True, eq=False)
class BoxplotStats:
    median: float
    q1: float
    q3: float
    whisker_low: float
    whisker_high: float
    outliers: np.ndarray


def boxplot_stats(values) -> BoxplotStats:
    """Quartiles by linear interpolation of order statistics (position (k-1)q);
    whiskers reach the most extreme points within 1.5 IQR of the box."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if len(values) < 1:
        raise ArityError("boxplot group must be non-empty")
    q1, median, q3 = np.percentile(values, (25, 50, 75))
    iqr = q3 - q1
    low_fence = q1 - 1.5 * iqr
    high_fence = q3 + 1.5 * iqr
    inside = values[(values >= low_fence) & (values <= high_fence)]
    return BoxplotStats(
        median=float(median),
        q1=float(q1),
        q3=float(q3),
        whisker_low=float(inside.min()),
        whisker_high=float(inside.max()),
        outliers=np.sort(values[(values < low_fence) | (values > high_fence)]),
    )


def boxplot_stats_by_class(values, truths) -> dict[int, BoxplotStats]:
    values = np.asarray(values, dtype=np.float64).ravel()
    truths = np.asarray(truths, dtype=bool).ravel()
    if len(values) != len(truths):
        raise ArityError(f"{len(values)} values vs {len(truths)} truths")
    return {0: boxplot_stats(values[~truths]), 1: boxplot_stats(values[truths])}


@dataclass(frozen=True, eq=False)
class LabelReport:
    label: str
    cm: ConfusionMatrix
    stats: ClassifierStats
    auc: float | None
    ci_acc: float
    ci_bacc: float | None


@dataclass(frozen=True, eq=False)
class MetricsReport:
    rows: tuple[LabelReport, ...]

    def row(self, label: str) -> LabelReport:
        for row in self.rows:
            if row.label == label:
                return row
        raise KeyError(label)


def label_report(label: str, cm: ConfusionMatrix, scores=None, truths=None) -> LabelReport:
    stats = compute_metrics(cm)
    auc = None
    if scores is not None:
        try:
            auc = compute_auc(scores, truths)
        except UndefinedMetricError:
            auc = None
    return LabelReport(
        label=label,
        cm=cm,
        stats=stats,
        auc=auc,
        ci_acc=binomial_ci(stats.acc, cm.total),
        ci_bacc=binomial_ci(stats.bacc, cm.total) if stats.bacc is not None else None,
    )


def build_report(decisions, truths, scores=None) -> MetricsReport:
    """Six-row report (five types plus any) from per-scan decisions/labels.

    ``decisions`` and ``truths`` are (scans, 5) booleans; optional ``scores``
    are (scans, 5) probabilities for AUC. The any row ORs decisions and truths
    and scores with the per-type max.
    """
    decisions = np.asarray(decisions, dtype=bool)
    truths = np.asarray(truths, dtype=bool)
    if decisions.shape != truths.shape or decisions.ndim != 2 or decisions.shape[1] != 5:
        raise ArityError(f"decisions {decisions.shape} and truths {truths.shape} must be (scans, 5)")
    if scores is not None:
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape != decisions.shape:
            raise ArityError(f"scores shape {scores.shape} must match decisions")
    rows = []
    for t, label in enumerate(HEMORRHAGE_TYPES):
        rows.append(label_report(label, compute_confusion(decisions[:, t], truths[:, t]),
                                 scores[:, t] if scores is not None else None, truths[:, t]))
    rows.append(label_report("any", compute_confusion(decisions.any(axis=1), truths.any(axis=1)),
                             scores.max(axis=1) if scores is not None else None,
                             truths.any(axis=1)))
    return MetricsReport(rows=tuple(rows))


def _cell(value: float | None) -> str:
    return "NA" if value is None else f"{100.0 * value:.1f}"


def report_to_csv(report: MetricsReport) -> str:
    """Percent table mirroring the published column order; NA marks undefined."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_REPORT_COLUMNS)
    for row in report.rows:
        stats = row.stats
        writer.writerow([row.label.upper() if row.label != "any" else "Any",
                         row.cm.tp, row.cm.fn, row.cm.tn, row.cm.fp,
                         _cell(stats.sen), _cell(stats.spec), _cell(stats.ppv),
                         _cell(stats.npv), _cell(row.auc), _cell(stats.acc),
                         _cell(stats.bacc), _cell(stats.mcc), _cell(stats.f1)])
    return buf.getvalue()


def report_to_text(report: MetricsReport) -> str:
    lines = []
    for row in report.rows:
        lines.append(f"[{row.label}]")
        lines.append(f"tp={row.cm.tp} fn={row.cm.fn} tn={row.cm.tn} fp={row.cm.fp}")
        for field in _STAT_FIELDS:
            lines.append(f"{field}={_cell(getattr(row.stats, field))}")
        lines.append(f"auc={_cell(row.auc)}")
        lines.append(f"ci_acc=±{100.0 * row.ci_acc:.2f}")
        ci_bacc = "NA" if row.ci_bacc is None else f"±{100.0 * row.ci_bacc:.2f}"
        lines.append(f"ci_bacc={ci_bacc}")
        lines.append("")
    return "\n".join(lines)


def save_report(report: MetricsReport, csv_path, text_path) -> None:
    atomic_write_text(csv_path, report_to_csv(report))
    atomic_write_text(text_path, report_to_text(report))
