"""Per-type decision thresholds, slice-to-scan aggregation, and the
Gaussian-process threshold optimizer.

A slice is positive for a type when its probability meets or exceeds that
type's threshold; a scan is positive when any slice is, which is exactly
thresholding the per-type max over slices. The optimizer searches
[0.01, 1]^5 with a squared-exponential GP surrogate and expected improvement;
the default objective is the balanced accuracy of the scan-level any-type
decision. AUC itself is threshold-free, so it cannot serve as a threshold
search objective.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import ArityError, ConfigError, DataError, FormatError, UndefinedMetricError
from .fileio import atomic_write_text
from .volume import HEMORRHAGE_TYPES

_THRESHOLD_KEYS = tuple(f"t_{t}" for t in HEMORRHAGE_TYPES)

SEARCH_BOUNDS = (0.01, 1.0)
_GP_LENGTH_SCALE = 0.2
_GP_NOISE = 1e-6
_NUM_INITIAL_POINTS = 20
_REFINE_TAIL = 40  # final iterations rank only axis-line candidates
_REFINE_TOP = 2    # around the best points observed so far


@dataclass(frozen=True)
class ThresholdSet:
    t_edh: float
    t_sdh: float
    t_sah: float
    t_ivh: float
    t_iph: float

    def __post_init__(self):
        for name, value in zip(_THRESHOLD_KEYS, self.as_array()):
            if not 0.0 < value <= 1.0:
                raise ConfigError(f"{name} must lie in (0, 1], got {value}")

    def as_array(self) -> np.ndarray:
        return np.array([self.t_edh, self.t_sdh, self.t_sah, self.t_ivh, self.t_iph])

    @classmethod
    def from_array(cls, values) -> "ThresholdSet":
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (5,):
            raise ArityError(f"threshold array must have shape (5,), got {values.shape}")
        return cls(*(float(v) for v in values))


#: The published operating point; a documented example default, not a claim
#: that any given model reproduces it.
PUBLISHED_THRESHOLDS = ThresholdSet(0.47, 0.37, 0.45, 0.37, 0.20)


def binarize_slice(probs, thresholds: ThresholdSet):
    """Per-type flags (probability >= threshold) plus the any-type OR.

    Accepts one 5-vector or an (..., 5) stack; flags keep that shape and the
    any-flag drops the last axis.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape[-1] != 5:
        raise ArityError(f"probabilities must end in a 5-axis, got shape {probs.shape}")
    flags = probs >= thresholds.as_array()
    return flags, flags.any(axis=-1)


def aggregate_scan(rows) -> np.ndarray:
    """Scan-level probability vector: per-type max over slices."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != 5:
        raise DataError(f"probability rows must be (num_slices, 5), got {rows.shape}")
    if rows.shape[0] < 1:
        raise ArityError("a scan needs at least one probability row")
    return rows.max(axis=0)


def scan_matrix(probs_by_scan, scan_order=None) -> tuple[list[str], np.ndarray]:
    """Aggregate every scan; rows follow scan_order (default: sorted ids)."""
    if scan_order is None:
        scan_order = sorted(probs_by_scan)
    vectors = np.array([aggregate_scan(probs_by_scan[scan_id]) for scan_id in scan_order])
    return list(scan_order), vectors


def _balanced_accuracy(decisions: np.ndarray, truths: np.ndarray) -> float:
    positives = truths.sum()
    negatives = len(truths) - positives
    sensitivity = (decisions & truths).sum() / positives
    specificity = (~decisions & ~truths).sum() / negatives
    return float((sensitivity + specificity) / 2.0)


def _objective_any_bacc(thresholds: np.ndarray, vectors: np.ndarray, labels: np.ndarray) -> float:
    decisions = (vectors >= thresholds).any(axis=1)
    return _balanced_accuracy(decisions, labels.any(axis=1))


def _objective_mean_type_bacc(thresholds: np.ndarray, vectors: np.ndarray,
                              labels: np.ndarray) -> float:
    scores = []
    for t in range(5):
        truth = labels[:, t]
        if truth.all() or not truth.any():
            continue  # balanced accuracy undefined for this type
        scores.append(_balanced_accuracy(vectors[:, t] >= thresholds[t], truth))
    return float(np.mean(scores))


OBJECTIVES = {
    "any_bacc": _objective_any_bacc,
    "mean_type_bacc": _objective_mean_type_bacc,
}


def _check_objective_defined(objective: str, labels: np.ndarray) -> None:
    if objective == "any_bacc":
        any_truth = labels.any(axis=1)
        if any_truth.all() or not any_truth.any():
            raise UndefinedMetricError("any-type labels are one-class; objective undefined")
    else:
        usable = [t for t in range(5) if labels[:, t].any() and not labels[:, t].all()]
        if not usable:
            raise UndefinedMetricError("every type has one-class labels; objective undefined")


def evaluate_objective(objective: str, thresholds, vectors, labels) -> float:
    if objective not in OBJECTIVES:
        raise ConfigError(f"unknown objective {objective!r}; pick from {sorted(OBJECTIVES)}")
    thresholds = np.asarray(thresholds, dtype=np.float64).ravel()
    return OBJECTIVES[objective](thresholds, np.asarray(vectors), np.asarray(labels, dtype=bool))


def _norm_pdf(z):
    return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def _norm_cdf(z):
    return 0.5 * (1.0 + erf(z / math.sqrt(2.0)))


def _rbf_kernel(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    sq = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    return np.exp(-sq / (2.0 * _GP_LENGTH_SCALE ** 2))


def optimize_thresholds(scan_vectors, scan_labels, objective: str = "any_bacc",
                        budget: int = 150, seed: int = 0) -> tuple[ThresholdSet, float]:
    """Search thresholds with a GP surrogate and expected improvement.

    Twenty seeded quasi-random points start the design; each later step fits
    the GP on everything evaluated so far and evaluates the candidate with the
    highest expected improvement. Returns the best evaluated point and its
    objective value. Deterministic given the seed.
    """
    from scipy.stats import qmc

    vectors = np.asarray(scan_vectors, dtype=np.float64)
    labels = np.asarray(scan_labels, dtype=bool)
    if vectors.ndim != 2 or vectors.shape[1] != 5:
        raise DataError(f"scan vectors must be (scans, 5), got {vectors.shape}")
    if labels.shape != vectors.shape:
        raise ArityError(f"labels shape {labels.shape} must match vectors {vectors.shape}")
    if objective not in OBJECTIVES:
        raise ConfigError(f"unknown objective {objective!r}; pick from {sorted(OBJECTIVES)}")
    if budget < 1:
        raise ConfigError("budget must be positive")
    _check_objective_defined(objective, labels)
    score = OBJECTIVES[objective]

    lo, hi = SEARCH_BOUNDS
    sampler = qmc.Halton(d=5, scramble=True, seed=seed)
    rng = np.random.default_rng(seed)
    X = lo + sampler.random(min(_NUM_INITIAL_POINTS, budget)) * (hi - lo)
    y = np.array([score(x, vectors, labels) for x in X])

    # The objective only changes where a threshold crosses an observed scan
    # probability, so those per-axis values (and the plateau just above each)
    # are the candidate coordinates worth ranking under the acquisition.
    breakpoints = []
    for t in range(5):
        values = np.unique(vectors[:, t])
        above = np.append((values[:-1] + values[1:]) / 2.0, hi)
        breakpoints.append(np.unique(np.clip(np.concatenate([values, above]), lo, hi)))

    total_steps = budget - len(X)
    for step in range(total_steps):
        # Standardized targets keep the unit-variance kernel honest about
        # how much improvement is plausible.
        spread = max(float(y.std()), 1e-9)
        y_std = (y - y.mean()) / spread
        kernel = _rbf_kernel(X, X) + _GP_NOISE * np.eye(len(X))
        alpha = np.linalg.solve(kernel, y_std)

        # Early steps mix global quasi-random candidates with local moves;
        # the tail ranks only single-coordinate moves around the best points,
        # which walks plateau edges the way a threshold sweep would.
        refining = step >= total_steps - _REFINE_TAIL
        anchors = np.argsort(-y)[:_REFINE_TOP if refining else 4]
        pool = []
        if not refining:
            pool.append(lo + sampler.random(512) * (hi - lo))
        for anchor in anchors:
            for axis in range(5):
                line = np.repeat(X[anchor][None, :], len(breakpoints[axis]), axis=0)
                line[:, axis] = breakpoints[axis]
                pool.append(line)
        if not refining:
            pool.extend(np.clip(X[anchors[0]] + rng.normal(0.0, scale, size=(128, 5)), lo, hi)
                        for scale in (0.02, 0.06))
        candidates = np.vstack(pool)

        cross = _rbf_kernel(candidates, X)
        mu = cross @ alpha
        solved = np.linalg.solve(kernel, cross.T)
        var = np.maximum(1.0 - np.einsum("ij,ji->i", cross, solved), 1e-12)
        sigma = np.sqrt(var)
        z = (mu - y_std.max()) / sigma
        improvement = sigma * (z * _norm_cdf(z) + _norm_pdf(z))
        chosen = candidates[int(np.argmax(improvement))]
        X = np.vstack([X, chosen])
        y = np.append(y, score(chosen, vectors, labels))

    winner = int(np.argmax(y))
    return ThresholdSet.from_array(X[winner]), float(y[winner])


def save_thresholds(thresholds: ThresholdSet, path) -> None:
    payload = dict(zip(_THRESHOLD_KEYS, (float(v) for v in thresholds.as_array())))
    atomic_write_text(path, json.dumps(payload) + "\n")


def load_thresholds(path) -> ThresholdSet:
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from exc
    if not isinstance(payload, dict) or set(payload) != set(_THRESHOLD_KEYS):
        raise FormatError(f"{path}: threshold file must contain exactly the keys {_THRESHOLD_KEYS}")
    try:
        return ThresholdSet(*(float(payload[key]) for key in _THRESHOLD_KEYS))
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
