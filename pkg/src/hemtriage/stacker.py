"""Sliding-window meta-features and the gradient-boosted stacking ensemble.

Each slice's meta-feature row is the flattened window of probability vectors
from ``delta_s`` slices on each side (edge replication at scan boundaries, so
boundary slices are not biased toward "no hemorrhage"). The stacker refines
every slice's 5-vector with one boosted model per type per preset.
"""

from __future__ import annotations

import json

import numpy as np

from . import gbdt
from .errors import ArityError, ConfigError, DataError, FormatError
from .fileio import atomic_write_text

_STACKER_FORMAT = "hemtriage/stacker-model"


def window_length(delta_s: int) -> int:
    return 5 * (2 * delta_s + 1)


def build_windows(rows, delta_s: int) -> np.ndarray:
    """Meta-feature rows for one scan: row n is (p_{n-ds}, ..., p_n, ..., p_{n+ds}).

    Out-of-range neighbours clamp to the first/last slice; the center block of
    row n is always p_n itself.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != 5:
        raise DataError(f"probability rows must be (num_slices, 5), got {rows.shape}")
    if rows.shape[0] < 1:
        raise ArityError("a scan needs at least one probability row")
    if not np.isfinite(rows).all() or rows.min() < 0.0 or rows.max() > 1.0:
        raise DataError("probability rows must be finite and inside [0, 1]")
    if delta_s < 0:
        raise ConfigError(f"delta_s must be non-negative, got {delta_s}")
    num_slices = rows.shape[0]
    offsets = np.arange(-delta_s, delta_s + 1)
    neighbour = np.clip(np.arange(num_slices)[:, None] + offsets[None, :], 0, num_slices - 1)
    return rows[neighbour].reshape(num_slices, window_length(delta_s))


def stack_training_data(probs_by_scan, labels_by_scan, delta_s: int
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Window matrix plus per-slice labels over all scans (sorted by scan_id)."""
    features = []
    labels = []
    for scan_id in sorted(probs_by_scan):
        if scan_id not in labels_by_scan:
            raise ConfigError(f"no slice labels for scan {scan_id}")
        rows = np.asarray(probs_by_scan[scan_id], dtype=np.float64)
        matrix = np.asarray(labels_by_scan[scan_id], dtype=bool)
        if matrix.shape != rows.shape:
            raise ArityError(
                f"scan {scan_id}: {rows.shape[0]} probability rows vs {matrix.shape[0]} label rows")
        features.append(build_windows(rows, delta_s))
        labels.append(matrix)
    if not features:
        raise ArityError("no scans to stack")
    return np.concatenate(features), np.concatenate(labels)


def train_stacker(probs_by_scan, labels_by_scan, delta_s: int = 2,
                  configs=None) -> gbdt.GbdtEnsemble:
    """Train the refining ensemble on (out-of-fold) slice probabilities.

    Feeding in-fold predictions here leaks labels; the CLI wires this from the
    out-of-fold command's output.
    """
    if configs is None:
        configs = gbdt.default_presets()
    X, Y = stack_training_data(probs_by_scan, labels_by_scan, delta_s)
    return gbdt.train_ensemble(X, Y.astype(np.float64), configs)


def apply_stacker(ensemble: gbdt.GbdtEnsemble, rows, delta_s: int) -> np.ndarray:
    """Refined (num_slices, 5) probabilities for one scan."""
    expected = window_length(delta_s)
    if ensemble.num_features != expected:
        raise ConfigError(
            f"delta_s={delta_s} yields {expected} features but the ensemble was "
            f"trained on {ensemble.num_features}")
    return ensemble.predict(build_windows(rows, delta_s))


def apply_stacker_all(ensemble: gbdt.GbdtEnsemble, probs_by_scan, delta_s: int
                      ) -> dict[str, np.ndarray]:
    return {scan_id: apply_stacker(ensemble, probs_by_scan[scan_id], delta_s)
            for scan_id in probs_by_scan}


def save_stacker_model(ensemble: gbdt.GbdtEnsemble, delta_s: int, path) -> None:
    payload = {
        "format": _STACKER_FORMAT,
        "version": 1,
        "delta_s": delta_s,
        "ensemble": gbdt.ensemble_to_json(ensemble),
    }
    atomic_write_text(path, json.dumps(payload) + "\n")


def load_stacker_model(path) -> tuple[gbdt.GbdtEnsemble, int]:
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != _STACKER_FORMAT:
        raise FormatError(f"{path}: not a {_STACKER_FORMAT} record")
    if payload.get("version") != 1:
        raise FormatError(f"{path}: unsupported version {payload.get('version')!r}")
    try:
        delta_s = int(payload["delta_s"])
        ensemble = gbdt.ensemble_from_json(payload["ensemble"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed stacker model: {exc}") from exc
    if ensemble.num_features != window_length(delta_s):
        raise FormatError(f"{path}: stored delta_s disagrees with ensemble feature count")
    return ensemble, delta_s
