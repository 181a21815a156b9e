"""Gradient-boosted decision trees: Newton boosting on logistic loss.

One engine, three growth strategies standing in for three boosting libraries:

* ``leafwise``  -- repeatedly split the open leaf with the best gain,
* ``depthwise`` -- split level by level down to a fixed depth,
* ``oblivious`` -- one shared (feature, threshold) per level.

Per round the booster fits a regression tree to the logistic gradients
g = p - y with hessians h = p(1 - p); a leaf is worth
-sum(g) / (sum(h) + l2_reg) scaled by the learning rate, and a split's gain
is the second-order formula
0.5 * [GL^2/(HL+l) + GR^2/(HR+l) - (GL+GR)^2/(HL+HR+l)].

Split search for leafwise/depthwise growth is exact: candidate thresholds are
midpoints between consecutive distinct sorted feature values. Oblivious trees
need one candidate grid shared by every leaf of a level, so their candidates
come from per-feature borders computed once per training run (these are all
the exact midpoints whenever a feature has at most 64 distinct values).

A split with zero gain is accepted on mixed-label nodes. Degenerate targets
like 4-point XOR are perfectly symmetric at the base score, so every root
candidate has exactly zero gain; refusing those splits would freeze training
at log loss ln 2 forever. Label-pure nodes are never split.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ArityError, ConfigError, DataError, FormatError, TrainingError
from .fileio import atomic_write_text

GROWTH_MODES = ("leafwise", "depthwise", "oblivious")

_PROB_CLIP = 1e-6
# Zero-gain splits on symmetric data come out of the gain formula as tiny
# negatives (the formula subtracts near-equal float sums), so acceptance uses
# a relative noise floor instead of an exact >= 0 comparison.
_GAIN_NOISE_RELATIVE = 1e-12
_OBLIVIOUS_MAX_BORDERS = 63
_MODEL_FORMAT = "hemtriage/gbdt-model"
_ENSEMBLE_FORMAT = "hemtriage/gbdt-ensemble"


@dataclass(frozen=True)
class GbdtConfig:
    rounds: int = 200
    learning_rate: float = 0.05
    max_leaves: int = 31
    max_depth: int | None = None
    min_samples_leaf: int = 1
    row_subsample: float = 1.0
    feature_subsample: float = 1.0
    l2_reg: float = 1.0
    growth: str = "leafwise"
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError("rounds must be a positive integer")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ConfigError("learning_rate must lie in (0, 1]")
        if self.max_leaves < 2:
            raise ConfigError("max_leaves must be at least 2")
        if self.max_depth is not None and self.max_depth < 1:
            raise ConfigError("max_depth must be positive when set")
        if self.min_samples_leaf < 1:
            raise ConfigError("min_samples_leaf must be a positive integer")
        if not 0.0 < self.row_subsample <= 1.0:
            raise ConfigError("row_subsample must lie in (0, 1]")
        if not 0.0 < self.feature_subsample <= 1.0:
            raise ConfigError("feature_subsample must lie in (0, 1]")
        if self.l2_reg < 0.0:
            raise ConfigError("l2_reg must be non-negative")
        if self.growth not in GROWTH_MODES:
            raise ConfigError(f"growth must be one of {GROWTH_MODES}, got {self.growth!r}")
        if self.growth in ("depthwise", "oblivious") and self.max_depth is None:
            raise ConfigError(f"{self.growth} growth requires max_depth")


def default_presets(seed: int = 0, rounds: int = 200) -> tuple[GbdtConfig, ...]:
    """The three structurally diverse presets averaged by ensembles."""
    return (
        GbdtConfig(rounds=rounds, learning_rate=0.05, max_leaves=31,
                   growth="leafwise", l2_reg=1.0, seed=seed),
        GbdtConfig(rounds=rounds, learning_rate=0.05, max_leaves=64, max_depth=6,
                   growth="oblivious", l2_reg=1.0, seed=seed),
        GbdtConfig(rounds=rounds, learning_rate=0.05, max_leaves=64, max_depth=6,
                   growth="depthwise", l2_reg=1.0, seed=seed),
    )


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat node arrays; feature == -1 marks a leaf, value is lr-scaled."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def num_nodes(self) -> int:
        return len(self.feature)


@dataclass(frozen=True, eq=False)
class GbdtModel:
    base_score: float  # log-odds
    trees: tuple[Tree, ...]
    num_features: int


@dataclass(frozen=True, eq=False)
class GbdtEnsemble:
    """One model per hemorrhage type per configuration; predictions average
    the per-configuration probabilities."""

    groups: tuple[tuple[GbdtModel, ...], ...]  # [config][type]

    def __post_init__(self):
        if not self.groups:
            raise ArityError("an ensemble needs at least one model group")
        widths = {len(group) for group in self.groups}
        if widths != {len(self.groups[0])}:
            raise ConfigError("all ensemble groups must cover the same types")
        dims = {model.num_features for group in self.groups for model in group}
        if len(dims) != 1:
            raise ConfigError("all ensemble members must share one feature dimensionality")

    @property
    def num_types(self) -> int:
        return len(self.groups[0])

    @property
    def num_features(self) -> int:
        return self.groups[0][0].num_features

    def predict(self, features) -> np.ndarray:
        """Mean probability across configurations, per type; shape (n, types)."""
        features = _as_matrix(features)
        out = np.zeros((features.shape[0], self.num_types))
        for group in self.groups:
            for type_index, model in enumerate(group):
                out[:, type_index] += predict(model, features)
        return out / len(self.groups)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def _as_matrix(features) -> np.ndarray:
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DataError(f"feature array must be 1- or 2-dimensional, got ndim={arr.ndim}")
    return np.ascontiguousarray(arr)


def train(features, labels, config: GbdtConfig) -> GbdtModel:
    """Fit one binary model. Deterministic given config.seed.

    All-one-class labels yield a base-score-only model (with a warning), so a
    degenerate target predicts its clipped base rate everywhere.
    """
    X = _as_matrix(features)
    y = np.asarray(labels, dtype=np.float64).ravel()
    if X.shape[0] == 0:
        raise TrainingError("cannot train on an empty feature matrix")
    if y.shape[0] != X.shape[0]:
        raise ArityError(f"{X.shape[0]} rows but {y.shape[0]} labels")
    if not np.isfinite(X).all():
        raise DataError("features must be finite")
    if not np.isin(y, (0.0, 1.0)).all():
        raise DataError("labels must be binary 0/1")

    n, num_features = X.shape
    rate = float(y.mean())
    base_score = _logit(min(max(rate, _PROB_CLIP), 1.0 - _PROB_CLIP))
    if rate in (0.0, 1.0):
        warnings.warn("all labels belong to one class; model is base score only", stacklevel=2)
        return GbdtModel(base_score=base_score, trees=(), num_features=num_features)

    if config.growth == "oblivious":
        grower = _ObliviousGrower(X, config)
    else:
        grower = _ExactGrower(X, config)
    rng = np.random.default_rng(config.seed)
    margins = np.full(n, base_score)
    trees = []
    for _ in range(config.rounds):
        p = _sigmoid(margins)
        g = p - y
        h = p * (1.0 - p)
        rows = _subsample(rng, n, config.row_subsample)
        feats = _subsample(rng, num_features, config.feature_subsample)
        tree = grower.grow(g, h, y, rows, feats)
        trees.append(tree)
        margins += _tree_values(tree, X)
    return GbdtModel(base_score=base_score, trees=tuple(trees), num_features=num_features)


def _subsample(rng, count: int, fraction: float) -> np.ndarray:
    if fraction >= 1.0:
        return np.arange(count)
    take = max(1, int(round(fraction * count)))
    return np.sort(rng.choice(count, size=take, replace=False))


def raw_score(model: GbdtModel, features) -> np.ndarray:
    X = _as_matrix(features)
    if X.shape[1] != model.num_features:
        raise ArityError(f"model expects {model.num_features} features, got {X.shape[1]}")
    margins = np.full(X.shape[0], model.base_score)
    for tree in model.trees:
        margins += _tree_values(tree, X)
    return margins


def predict(model: GbdtModel, features) -> np.ndarray:
    """Probabilities sigmoid(base + sum of tree values); strictly inside (0, 1)."""
    return _sigmoid(raw_score(model, features))


def _tree_values(tree: Tree, X: np.ndarray) -> np.ndarray:
    nodes = np.zeros(X.shape[0], dtype=np.int32)
    row_index = np.arange(X.shape[0])
    while True:
        feat = tree.feature[nodes]
        interior = feat >= 0
        if not interior.any():
            return tree.value[nodes]
        x = X[row_index, np.where(interior, feat, 0)]
        go_left = x <= tree.threshold[nodes]
        step = np.where(go_left, tree.left[nodes], tree.right[nodes])
        nodes = np.where(interior, step, nodes)


class _TreeBuilder:
    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def add_leaf(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.feature) - 1

    def to_split(self, node: int, feature: int, threshold: float, left: int, right: int) -> None:
        self.feature[node] = feature
        self.threshold[node] = threshold
        self.left[node] = left
        self.right[node] = right
        self.value[node] = 0.0

    def build(self) -> Tree:
        return Tree(
            feature=np.asarray(self.feature, dtype=np.int32),
            threshold=np.asarray(self.threshold, dtype=np.float64),
            left=np.asarray(self.left, dtype=np.int32),
            right=np.asarray(self.right, dtype=np.int32),
            value=np.asarray(self.value, dtype=np.float64),
        )


@dataclass(eq=False)
class _Leaf:
    node: int
    depth: int
    sidx: np.ndarray   # (features, rows) row ids sorted per feature
    vals: np.ndarray   # feature values in the same order
    gs: np.ndarray
    hs: np.ndarray
    grad_sum: float
    hess_sum: float
    best: tuple[float, int, float] | None  # (gain, local feature, threshold)


class _ExactGrower:
    """Presorted exact split search shared by leafwise and depthwise growth."""

    def __init__(self, X: np.ndarray, config: GbdtConfig):
        self.X = X
        self.config = config
        order = np.argsort(X, axis=0, kind="stable")
        self.order_t = np.ascontiguousarray(order.T.astype(np.int32))
        self.vals_t = np.ascontiguousarray(np.take_along_axis(X, order, axis=0).T)

    def grow(self, g, h, y, rows, feats) -> Tree:
        self.g, self.h, self.y = g, h, y
        self.feats = feats
        n = self.X.shape[0]
        sidx = self.order_t[feats]
        vals = self.vals_t[feats]
        if len(rows) != n:
            keep = np.zeros(n, dtype=bool)
            keep[rows] = True
            member = keep[sidx]
            m = len(rows)
            sidx = sidx[member].reshape(len(feats), m)
            vals = vals[member].reshape(len(feats), m)
        builder = _TreeBuilder()
        root = self._make_leaf(builder, 0, sidx, vals)
        if self.config.growth == "depthwise":
            self._grow_depthwise(builder, root)
        else:
            self._grow_leafwise(builder, root)
        return builder.build()

    def _make_leaf(self, builder, depth, sidx, vals) -> _Leaf:
        gs = self.g[sidx]
        hs = self.h[sidx]
        grad_sum = float(gs[0].sum())
        hess_sum = float(hs[0].sum())
        node = builder.add_leaf(-grad_sum / (hess_sum + self.config.l2_reg)
                                * self.config.learning_rate)
        leaf = _Leaf(node, depth, sidx, vals, gs, hs, grad_sum, hess_sum, None)
        if self.config.max_depth is None or depth < self.config.max_depth:
            leaf.best = self._eval_split(leaf)
        return leaf

    def _eval_split(self, leaf: _Leaf):
        msl = self.config.min_samples_leaf
        lam = self.config.l2_reg
        m = leaf.sidx.shape[1]
        if m < 2 * msl:
            return None
        node_y = self.y[leaf.sidx[0]]
        if node_y.min() == node_y.max():
            return None  # label-pure; nothing a split can improve
        left_g = np.cumsum(leaf.gs, axis=1)[:, :-1]
        left_h = np.cumsum(leaf.hs, axis=1)[:, :-1]
        right_g = leaf.grad_sum - left_g
        right_h = leaf.hess_sum - left_h
        parent = leaf.grad_sum ** 2 / (leaf.hess_sum + lam)
        gain = 0.5 * (left_g ** 2 / (left_h + lam) + right_g ** 2 / (right_h + lam) - parent)
        counts = np.arange(1, m)
        valid = leaf.vals[:, 1:] != leaf.vals[:, :-1]
        valid &= (counts >= msl) & (m - counts >= msl)
        gain = np.where(valid, gain, -np.inf)
        best = gain.max()
        if best < -_GAIN_NOISE_RELATIVE * (1.0 + abs(parent)):
            return None
        flat = int(np.argmax(gain == best))  # first hit: lowest feature, then lowest threshold
        local_feature, cut = divmod(flat, m - 1)
        low = leaf.vals[local_feature, cut]
        high = leaf.vals[local_feature, cut + 1]
        threshold = low + (high - low) / 2.0
        if threshold >= high:  # rounding collapsed the midpoint onto the upper value
            threshold = low
        return float(best), int(local_feature), float(threshold)

    def _split(self, builder, leaf: _Leaf) -> tuple[_Leaf, _Leaf]:
        _, local_feature, threshold = leaf.best
        keep = np.zeros(self.X.shape[0], dtype=bool)
        left_rows = leaf.sidx[local_feature][leaf.vals[local_feature] <= threshold]
        keep[left_rows] = True
        member = keep[leaf.sidx]
        num_feats = leaf.sidx.shape[0]
        num_left = len(left_rows)

        def take(arr, mask, width):
            return arr[mask].reshape(num_feats, width)

        left = self._make_leaf(builder, leaf.depth + 1,
                               take(leaf.sidx, member, num_left),
                               take(leaf.vals, member, num_left))
        right = self._make_leaf(builder, leaf.depth + 1,
                                take(leaf.sidx, ~member, leaf.sidx.shape[1] - num_left),
                                take(leaf.vals, ~member, leaf.sidx.shape[1] - num_left))
        builder.to_split(leaf.node, int(self.feats[local_feature]), threshold,
                         left.node, right.node)
        leaf.sidx = leaf.vals = leaf.gs = leaf.hs = None  # free node data early
        return left, right

    def _grow_leafwise(self, builder, root: _Leaf) -> None:
        open_leaves = [root]
        num_leaves = 1
        while num_leaves < self.config.max_leaves:
            chosen = None
            for leaf in open_leaves:  # creation order; earliest wins ties
                if leaf.best is not None and (chosen is None or leaf.best[0] > chosen.best[0]):
                    chosen = leaf
            if chosen is None:
                break
            open_leaves.remove(chosen)
            open_leaves.extend(self._split(builder, chosen))
            num_leaves += 1

    def _grow_depthwise(self, builder, root: _Leaf) -> None:
        level = [root]
        num_leaves = 1
        for _ in range(self.config.max_depth):
            splittable = [leaf for leaf in level if leaf.best is not None]
            splittable.sort(key=lambda leaf: -leaf.best[0])  # stable: ties keep creation order
            next_level = []
            for leaf in splittable:
                if num_leaves >= self.config.max_leaves:
                    break
                next_level.extend(self._split(builder, leaf))
                num_leaves += 1
            if not next_level:
                break
            level = next_level


class _ObliviousGrower:
    """Level-shared splits over a fixed per-feature border grid.

    Borders are value midpoints when a feature has few distinct values and
    evenly spaced midpoint quantiles otherwise; min_samples_leaf applies to
    the level totals on each side of the shared split.
    """

    def __init__(self, X: np.ndarray, config: GbdtConfig):
        self.config = config
        self.borders: list[np.ndarray] = []
        codes = np.empty(X.shape, dtype=np.int16)
        for j in range(X.shape[1]):
            distinct = np.unique(X[:, j])
            if len(distinct) < 2:
                borders = np.empty(0)
            else:
                borders = (distinct[:-1] + distinct[1:]) / 2.0
                if len(borders) > _OBLIVIOUS_MAX_BORDERS:
                    pick = np.linspace(0, len(borders) - 1, _OBLIVIOUS_MAX_BORDERS)
                    borders = borders[np.unique(pick.round().astype(int))]
            self.borders.append(borders)
            codes[:, j] = np.searchsorted(borders, X[:, j], side="left")
        self.codes = codes

    def grow(self, g, h, y, rows, feats) -> Tree:
        lam = self.config.l2_reg
        msl = self.config.min_samples_leaf
        lr = self.config.learning_rate
        m = len(rows)
        codes = self.codes[np.ix_(rows, feats)].astype(np.int64)
        border_lens = np.array([len(self.borders[j]) for j in feats])
        stride = int(border_lens.max(initial=0)) + 1
        g_rows = g[rows]
        h_rows = h[rows]
        g_rep = np.repeat(g_rows, len(feats))
        h_rep = np.repeat(h_rows, len(feats))
        node_y = y[rows]
        levels: list[tuple[int, float]] = []
        leaf_of = np.zeros(m, dtype=np.int64)

        if stride > 1 and node_y.min() != node_y.max():
            feature_offsets = np.arange(len(feats), dtype=np.int64)
            cut_valid = np.arange(stride - 1) < border_lens[:, None]
            for _ in range(self.config.max_depth):
                num_leaves = 1 << len(levels)
                flat = ((leaf_of[:, None] * len(feats) + feature_offsets) * stride + codes).ravel()
                size = num_leaves * len(feats) * stride
                hist_g = np.bincount(flat, weights=g_rep, minlength=size)
                hist_h = np.bincount(flat, weights=h_rep, minlength=size)
                hist_c = np.bincount(flat, minlength=size).astype(np.float64)
                hist_g = hist_g.reshape(num_leaves, len(feats), stride)
                hist_h = hist_h.reshape(num_leaves, len(feats), stride)
                hist_c = hist_c.reshape(num_leaves, len(feats), stride)
                total_g = np.bincount(leaf_of, weights=g_rows, minlength=num_leaves)
                total_h = np.bincount(leaf_of, weights=h_rows, minlength=num_leaves)
                left_g = np.cumsum(hist_g, axis=2)[:, :, :-1]
                left_h = np.cumsum(hist_h, axis=2)[:, :, :-1]
                left_c = np.cumsum(hist_c, axis=2)[:, :, :-1]
                right_g = total_g[:, None, None] - left_g
                right_h = total_h[:, None, None] - left_h
                gain = (_safe_ratio(left_g, left_h + lam)
                        + _safe_ratio(right_g, right_h + lam)
                        - _safe_ratio(total_g, total_h + lam)[:, None, None])
                gain = 0.5 * gain.sum(axis=0)
                left_total = left_c.sum(axis=0)
                valid = cut_valid & (left_total >= msl) & (m - left_total >= msl)
                gain = np.where(valid, gain, -np.inf)
                best = gain.max()
                parent = float(_safe_ratio(total_g, total_h + lam).sum())
                if best < -_GAIN_NOISE_RELATIVE * (1.0 + abs(parent)):
                    break
                flat_best = int(np.argmax(gain == best))
                local_feature, cut = divmod(flat_best, stride - 1)
                levels.append((int(feats[local_feature]), float(self.borders[feats[local_feature]][cut])))
                leaf_of = leaf_of * 2 + (codes[:, local_feature] > cut)

        depth = len(levels)
        num_leaves = 1 << depth
        leaf_g = np.bincount(leaf_of, weights=g_rows, minlength=num_leaves)
        leaf_h = np.bincount(leaf_of, weights=h_rows, minlength=num_leaves)
        leaf_n = np.bincount(leaf_of, minlength=num_leaves)
        denom = leaf_h + lam
        values = np.where((leaf_n > 0) & (denom > 0), -leaf_g / np.where(denom > 0, denom, 1.0), 0.0)
        return _assemble_full_tree(levels, values * lr)


def _safe_ratio(num, den):
    den = np.asarray(den, dtype=np.float64)
    return np.where(den > 0, num * num / np.where(den > 0, den, 1.0), 0.0)


def _assemble_full_tree(levels: list[tuple[int, float]], leaf_values: np.ndarray) -> Tree:
    """Heap-layout full binary tree; leaves sit left-to-right in path order."""
    depth = len(levels)
    num_nodes = (1 << (depth + 1)) - 1
    feature = np.full(num_nodes, -1, dtype=np.int32)
    threshold = np.zeros(num_nodes, dtype=np.float64)
    left = np.full(num_nodes, -1, dtype=np.int32)
    right = np.full(num_nodes, -1, dtype=np.int32)
    value = np.zeros(num_nodes, dtype=np.float64)
    for level, (feat, thr) in enumerate(levels):
        start = (1 << level) - 1
        for node in range(start, (1 << (level + 1)) - 1):
            feature[node] = feat
            threshold[node] = thr
            left[node] = 2 * node + 1
            right[node] = 2 * node + 2
    value[(1 << depth) - 1:] = leaf_values
    return Tree(feature=feature, threshold=threshold, left=left, right=right, value=value)


def train_ensemble(features, labels, configs) -> GbdtEnsemble:
    """Independent per-type models for each config; labels are (n, types) binary."""
    if not configs:
        raise ArityError("train_ensemble needs at least one config")
    Y = np.asarray(labels)
    if Y.ndim != 2:
        raise DataError(f"ensemble labels must be (rows, types), got ndim={Y.ndim}")
    groups = []
    for config in configs:
        groups.append(tuple(train(features, Y[:, t], config) for t in range(Y.shape[1])))
    return GbdtEnsemble(groups=tuple(groups))


def _tree_to_json(tree: Tree) -> dict:
    return {
        "feature": tree.feature.tolist(),
        "threshold": tree.threshold.tolist(),
        "left": tree.left.tolist(),
        "right": tree.right.tolist(),
        "value": tree.value.tolist(),
    }


def _tree_from_json(payload: dict) -> Tree:
    try:
        tree = Tree(
            feature=np.asarray(payload["feature"], dtype=np.int32),
            threshold=np.asarray(payload["threshold"], dtype=np.float64),
            left=np.asarray(payload["left"], dtype=np.int32),
            right=np.asarray(payload["right"], dtype=np.int32),
            value=np.asarray(payload["value"], dtype=np.float64),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed tree record: {exc}") from exc
    lengths = {tree.feature.size, tree.threshold.size, tree.left.size,
               tree.right.size, tree.value.size}
    if len(lengths) != 1 or tree.feature.size == 0:
        raise FormatError("tree arrays must be non-empty and equal length")
    return tree


def model_to_json(model: GbdtModel) -> dict:
    return {
        "format": _MODEL_FORMAT,
        "version": 1,
        "base_score": model.base_score,
        "num_features": model.num_features,
        "trees": [_tree_to_json(tree) for tree in model.trees],
    }


def model_from_json(payload: dict) -> GbdtModel:
    if not isinstance(payload, dict) or payload.get("format") != _MODEL_FORMAT:
        raise FormatError(f"not a {_MODEL_FORMAT} record")
    if payload.get("version") != 1:
        raise FormatError(f"unsupported model version {payload.get('version')!r}")
    try:
        return GbdtModel(
            base_score=float(payload["base_score"]),
            trees=tuple(_tree_from_json(t) for t in payload["trees"]),
            num_features=int(payload["num_features"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed model record: {exc}") from exc


def save_model(model: GbdtModel, path) -> None:
    atomic_write_text(path, json.dumps(model_to_json(model)) + "\n")


def load_model(path) -> GbdtModel:
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from exc
    return model_from_json(payload)


def ensemble_to_json(ensemble: GbdtEnsemble) -> dict:
    return {
        "format": _ENSEMBLE_FORMAT,
        "version": 1,
        "groups": [[model_to_json(model) for model in group] for group in ensemble.groups],
    }


def ensemble_from_json(payload: dict) -> GbdtEnsemble:
    if not isinstance(payload, dict) or payload.get("format") != _ENSEMBLE_FORMAT:
        raise FormatError(f"not a {_ENSEMBLE_FORMAT} record")
    if payload.get("version") != 1:
        raise FormatError(f"unsupported ensemble version {payload.get('version')!r}")
    try:
        groups = tuple(tuple(model_from_json(m) for m in group) for group in payload["groups"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed ensemble record: {exc}") from exc
    return GbdtEnsemble(groups=groups)


def save_ensemble(ensemble: GbdtEnsemble, path) -> None:
    atomic_write_text(path, json.dumps(ensemble_to_json(ensemble)) + "\n")


def load_ensemble(path) -> GbdtEnsemble:
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from exc
    return ensemble_from_json(payload)
