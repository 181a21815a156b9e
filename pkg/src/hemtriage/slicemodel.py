"""Per-slice classifiers and probability-vector plumbing.

The deep per-slice networks are replaced by a small interface: anything that
maps a 3-channel windowed image to a 5-vector of independent per-type
probabilities can drive weighing, stacking, and thresholding. A reference
classifier built on handcrafted windowed-intensity features ships in-repo.

Slice position enters the handcrafted features as the fraction n/N (1-based
slice index over slice count), so ``classify`` accepts it alongside the image
and defaults to mid-scan when unknown.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
from abc import ABC, abstractmethod

import numpy as np

from . import gbdt
from .errors import ArityError, DataError, FormatError, TrainingError
from .fileio import atomic_write_text
from .volume import DEFAULT_WINDOWS, HEMORRHAGE_TYPES, CtVolume, WindowSpec, stack_channels

HISTOGRAM_BINS = 16
BLOOD_BAND = (0.55, 0.95)
CHANNEL_FEATURES = HISTOGRAM_BINS + 6  # hist, mean, std, p5, p50, p95, band fraction
FEATURE_LENGTH = 3 * CHANNEL_FEATURES + 1  # plus slice position fraction

_PROB_COLUMNS = ("scan_id", "slice_index") + tuple(f"p_{t}" for t in HEMORRHAGE_TYPES)
_SLICE_MODEL_FORMAT = "hemtriage/slice-model"

_BASE_RATE_CLIP = 1e-6

#: Reference classifier training setup; small trees keep per-fold training cheap.
DEFAULT_REFERENCE_CONFIG = gbdt.GbdtConfig(
    rounds=60, learning_rate=0.1, max_leaves=8, max_depth=3,
    min_samples_leaf=5, growth="depthwise", l2_reg=1.0, seed=0)


def as_prob_vector(values) -> np.ndarray:
    vec = np.asarray(values, dtype=np.float64)
    if vec.shape != (5,):
        raise ArityError(f"probability vector must have shape (5,), got {vec.shape}")
    if not np.isfinite(vec).all():
        raise DataError("probability vector must be finite")
    if vec.min() < 0.0 or vec.max() > 1.0:
        raise DataError("probability components must lie in [0, 1]")
    return vec


def extract_features(image, position: float = 0.0) -> np.ndarray:
    """Handcrafted features of one 3-channel normalized slice.

    Per channel: a 16-bin intensity histogram over [0, 1] (raw counts, so the
    bins sum to the pixel count), mean, standard deviation, the 5th/50th/95th
    percentiles, and the fraction of pixels in the blood-like band
    [0.55, 0.95]; the slice position fraction is appended last.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise DataError(f"expected a (3, height, width) image, got shape {img.shape}")
    if not np.isfinite(img).all():
        raise DataError("image pixels must be finite")
    out = np.empty(FEATURE_LENGTH)
    cursor = 0
    for channel in range(3):
        pixels = img[channel].ravel()
        hist, _ = np.histogram(pixels, bins=HISTOGRAM_BINS, range=(0.0, 1.0))
        out[cursor:cursor + HISTOGRAM_BINS] = hist
        cursor += HISTOGRAM_BINS
        out[cursor] = pixels.mean()
        out[cursor + 1] = pixels.std()
        out[cursor + 2:cursor + 5] = np.percentile(pixels, (5, 50, 95))
        out[cursor + 5] = float(np.mean((pixels >= BLOOD_BAND[0]) & (pixels <= BLOOD_BAND[1])))
        cursor += 6
    out[cursor] = position
    return out


class SliceClassifier(ABC):
    """A deterministic map from a windowed slice image to a probability vector."""

    @property
    @abstractmethod
    def identity(self) -> str:
        """Stable identity/version string for the trained state."""

    @abstractmethod
    def classify(self, image, position: float = 0.5) -> np.ndarray:
        """Per-type probabilities for one (3, height, width) image."""

    def classify_batch(self, images, positions) -> np.ndarray:
        """Row-per-slice probabilities; override when batching is cheaper."""
        return np.array([self.classify(img, pos) for img, pos in zip(images, positions)])


class ReferenceSliceClassifier(SliceClassifier):
    """Gradient-boosted trees over handcrafted features, one model per type."""

    def __init__(self, models, identity: str):
        models = tuple(models)
        if len(models) != 5:
            raise ArityError(f"need one model per hemorrhage type, got {len(models)}")
        dims = {model.num_features for model in models}
        if dims != {FEATURE_LENGTH}:
            raise DataError(f"reference models must consume {FEATURE_LENGTH} features")
        self.models = models
        self._identity = identity

    @property
    def identity(self) -> str:
        return self._identity

    def classify(self, image, position: float = 0.5) -> np.ndarray:
        return self.classify_features(extract_features(image, position).reshape(1, -1))[0]

    def classify_batch(self, images, positions) -> np.ndarray:
        features = np.array([extract_features(img, pos) for img, pos in zip(images, positions)])
        return self.classify_features(features)

    def classify_features(self, features) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        out = np.empty((features.shape[0], 5))
        for t, model in enumerate(self.models):
            out[:, t] = gbdt.predict(model, features)
        return out


def train_reference_classifier(features, slice_labels, config=None, seed: int = 0
                               ) -> ReferenceSliceClassifier:
    """Fit one binary booster per type on handcrafted slice features.

    A type whose labels are all one class falls back to a base-score-only
    model, i.e. a constant clipped base-rate probability (gbdt warns).
    """
    X = np.asarray(features, dtype=np.float64)
    Y = np.asarray(slice_labels)
    if X.ndim != 2 or X.shape[0] == 0:
        raise TrainingError("empty or malformed training set")
    if Y.shape != (X.shape[0], 5):
        raise ArityError(f"slice labels must be ({X.shape[0]}, 5), got {Y.shape}")
    if config is None:
        config = DEFAULT_REFERENCE_CONFIG
    config = dataclasses.replace(config, seed=seed)
    models = [gbdt.train(X, Y[:, t].astype(np.float64), config) for t in range(5)]
    identity = f"reference-gbdt-v1(rounds={config.rounds},seed={seed})"
    return ReferenceSliceClassifier(models, identity)


def ensemble_average(vectors) -> np.ndarray:
    """Component-wise arithmetic mean of probability vectors."""
    vectors = list(vectors)
    if not vectors:
        raise ArityError("ensemble_average needs at least one vector")
    stacked = np.stack([as_prob_vector(v) for v in vectors])
    return stacked.mean(axis=0)


def slice_positions(num_slices: int) -> np.ndarray:
    """Position fraction n/N for 1-based slice index n."""
    return (np.arange(num_slices) + 1.0) / num_slices


def volume_images(volume: CtVolume, specs=DEFAULT_WINDOWS) -> np.ndarray:
    return np.stack([stack_channels(s, specs) for s in volume.slices])


def volume_features(volume: CtVolume, specs=DEFAULT_WINDOWS) -> np.ndarray:
    images = volume_images(volume, specs)
    positions = slice_positions(volume.num_slices)
    return np.array([extract_features(img, pos) for img, pos in zip(images, positions)])


def predict_slices(volume: CtVolume, classifiers, specs=DEFAULT_WINDOWS) -> np.ndarray:
    """Windowed per-slice predictions averaged over classifiers; (N, 5) rows
    in craniocaudal slice order."""
    classifiers = list(classifiers)
    if not classifiers:
        raise ArityError("predict_slices needs at least one classifier")
    images = volume_images(volume, specs)
    positions = slice_positions(volume.num_slices)
    total = np.zeros((volume.num_slices, 5))
    for classifier in classifiers:
        rows = np.asarray(classifier.classify_batch(images, positions), dtype=np.float64)
        if rows.shape != total.shape:
            raise ArityError(f"classifier {classifier.identity} returned shape {rows.shape}")
        total += rows
    return total / len(classifiers)


def save_slice_probs(probs_by_scan: dict[str, np.ndarray], path) -> None:
    """Slice-probability exchange CSV, the boundary for external deep models."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_PROB_COLUMNS)
    for scan_id in probs_by_scan:
        rows = np.asarray(probs_by_scan[scan_id], dtype=np.float64)
        for index in range(rows.shape[0]):
            writer.writerow([scan_id, index] + [repr(float(v)) for v in rows[index]])
    atomic_write_text(path, buf.getvalue())


def load_slice_probs(path) -> dict[str, np.ndarray]:
    per_scan: dict[str, dict[int, list[float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(_PROB_COLUMNS) - set(reader.fieldnames):
            raise FormatError(f"{path}: probability CSV must have columns {_PROB_COLUMNS}")
        for record in reader:
            try:
                index = int(record["slice_index"])
                values = [float(record[f"p_{t}"]) for t in HEMORRHAGE_TYPES]
            except ValueError as exc:
                raise FormatError(f"{path}: {exc}") from exc
            slot = per_scan.setdefault(record["scan_id"], {})
            if index in slot:
                raise FormatError(f"{path}: duplicate slice {index} for scan {record['scan_id']}")
            slot[index] = values
    result = {}
    for scan_id, slot in per_scan.items():
        if sorted(slot) != list(range(len(slot))):
            raise FormatError(f"{path}: slice indices for scan {scan_id} are not contiguous from 0")
        rows = np.array([slot[i] for i in range(len(slot))])
        if rows.min() < 0.0 or rows.max() > 1.0 or not np.isfinite(rows).all():
            raise FormatError(f"{path}: probabilities for scan {scan_id} outside [0, 1]")
        result[scan_id] = rows
    return result


def save_slice_model(classifier: ReferenceSliceClassifier, windows, path) -> None:
    payload = {
        "format": _SLICE_MODEL_FORMAT,
        "version": 1,
        "identity": classifier.identity,
        "windows": [[spec.center, spec.width] for spec in windows],
        "models": [gbdt.model_to_json(m) for m in classifier.models],
    }
    atomic_write_text(path, json.dumps(payload) + "\n")


def load_slice_model(path) -> tuple[ReferenceSliceClassifier, tuple[WindowSpec, ...]]:
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != _SLICE_MODEL_FORMAT:
        raise FormatError(f"{path}: not a {_SLICE_MODEL_FORMAT} record")
    if payload.get("version") != 1:
        raise FormatError(f"{path}: unsupported version {payload.get('version')!r}")
    try:
        windows = tuple(WindowSpec(float(c), float(w)) for c, w in payload["windows"])
        models = [gbdt.model_from_json(m) for m in payload["models"]]
        classifier = ReferenceSliceClassifier(models, str(payload["identity"]))
    except (KeyError, TypeError, ValueError, ArityError, DataError) as exc:
        raise FormatError(f"{path}: malformed slice model: {exc}") from exc
    if len(windows) != 3:
        raise FormatError(f"{path}: slice model must carry 3 windows")
    return classifier, windows


def reference_train_fn(specs=DEFAULT_WINDOWS, config=None):
    """A (volumes, seed) -> classifier procedure for out-of-fold generation.

    Volumes must carry per-slice label matrices.
    """
    def fit(volumes, seed: int) -> ReferenceSliceClassifier:
        features = []
        labels = []
        for volume in volumes:
            if volume.labels is None or volume.labels.slice_labels is None:
                raise TrainingError(f"{volume.scan_id}: training volumes need per-slice labels")
            features.append(volume_features(volume, specs))
            labels.append(volume.labels.slice_labels)
        if not features:
            raise TrainingError("no training volumes")
        return train_reference_classifier(np.concatenate(features),
                                          np.concatenate(labels), config, seed=seed)

    return fit
