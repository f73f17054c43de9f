"""From-scratch tree ensembles: Extremely Randomized Trees and
histogram-based gradient boosting with logistic loss."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class FlatTree:
    """Array-of-nodes binary tree. feature = -1 marks a leaf; routing rule is
    x[feature] <= threshold goes left."""

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)

    def add_leaf(self, val: float) -> int:
        return self._add(-1, 0.0, -1, -1, val)

    def add_split(self, feat: int, thr: float) -> int:
        return self._add(feat, thr, -1, -1, 0.0)

    def _add(self, feat, thr, left, right, val) -> int:
        self.feature.append(feat)
        self.threshold.append(thr)
        self.left.append(left)
        self.right.append(right)
        self.value.append(val)
        return len(self.feature) - 1

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Leaf value per row, via index-partitioned descent."""
        out = np.empty(len(X))
        stack = [(0, np.arange(len(X)))]
        while stack:
            node, idx = stack.pop()
            if idx.size == 0:
                continue
            if self.feature[node] == -1:
                out[idx] = self.value[node]
                continue
            go_left = X[idx, self.feature[node]] <= self.threshold[node]
            stack.append((self.left[node], idx[go_left]))
            stack.append((self.right[node], idx[~go_left]))
        return out

    def to_dict(self) -> dict:
        return {"feature": self.feature, "threshold": self.threshold,
                "left": self.left, "right": self.right, "value": self.value}

    @classmethod
    def from_dict(cls, d: dict) -> "FlatTree":
        return cls(feature=list(d["feature"]), threshold=list(d["threshold"]),
                   left=list(d["left"]), right=list(d["right"]),
                   value=list(d["value"]))


def _check_binary_training_set(X: np.ndarray, y: np.ndarray) -> None:
    if X.ndim != 2 or X.shape[1] == 0:
        raise ValueError("X must be a nonempty 2-D matrix")
    if len(X) != len(y) or len(X) < 2:
        raise ValueError("need at least two labeled rows")
    classes = set(np.unique(y).tolist())
    if classes != {0, 1}:
        raise ValueError(f"need both classes present, got labels {sorted(classes)}")


# --- Extremely Randomized Trees --------------------------------------------

@dataclass
class ExtraTreesParams:
    n_trees: int = 300
    max_depth: int | None = None
    min_samples_leaf: int = 2
    k_features: int | None = None  # None -> ceil(sqrt(d))


@dataclass
class ExtraTreesModel:
    trees: list[FlatTree]
    params: ExtraTreesParams
    n_features: int
    seed: int

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        acc = np.zeros(len(X))
        for tree in self.trees:
            acc += tree.predict(X)
        return acc / len(self.trees)

    def to_dict(self) -> dict:
        return {"kind": "extratrees", "seed": self.seed,
                "n_features": self.n_features,
                "params": {"n_trees": self.params.n_trees,
                           "max_depth": self.params.max_depth,
                           "min_samples_leaf": self.params.min_samples_leaf,
                           "k_features": self.params.k_features},
                "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "ExtraTreesModel":
        return cls(trees=[FlatTree.from_dict(t) for t in d["trees"]],
                   params=ExtraTreesParams(**d["params"]),
                   n_features=d["n_features"], seed=d["seed"])


def _gini_sum(n_pos: float, n: float) -> float:
    # unnormalized impurity contribution: n * gini(p)
    if n == 0:
        return 0.0
    p = n_pos / n
    return n * 2.0 * p * (1.0 - p)


def _grow_extra_tree(X, y, seed_prefix, params: ExtraTreesParams, k: int) -> FlatTree:
    tree = FlatTree()

    def grow(idx: np.ndarray, depth: int, path: int) -> int:
        node_y = y[idx]
        n = len(idx)
        n_pos = int(node_y.sum())
        is_pure = n_pos == 0 or n_pos == n
        depth_capped = params.max_depth is not None and depth >= params.max_depth
        if n < 2 * params.min_samples_leaf or is_pure or depth_capped:
            return tree.add_leaf(n_pos / n)

        # per-node generator keyed by the tree position: independent of the
        # sample count, so structurally equal datasets draw identical splits
        rng = np.random.default_rng(seed_prefix + [path])
        feats = rng.choice(X.shape[1], size=min(k, X.shape[1]), replace=False)
        node_X = X[np.ix_(idx, feats)]
        lo = node_X.min(axis=0)
        hi = node_X.max(axis=0)
        thresholds = rng.uniform(lo, hi)

        best = None  # (reduction, feature, threshold, mask)
        parent_gini = _gini_sum(n_pos, n)
        for j in np.argsort(feats):
            if hi[j] <= lo[j]:
                continue
            t = thresholds[j]
            mask = node_X[:, j] <= t
            n_left = int(mask.sum())
            if n_left < params.min_samples_leaf or n - n_left < params.min_samples_leaf:
                continue
            pos_left = int(node_y[mask].sum())
            reduction = parent_gini - _gini_sum(pos_left, n_left) \
                - _gini_sum(n_pos - pos_left, n - n_left)
            key = (-reduction, feats[j], t)
            if best is None or key < best[0]:
                best = (key, int(feats[j]), float(t), mask)
        if best is None:
            return tree.add_leaf(n_pos / n)

        _, feat, thr, mask = best
        node = tree.add_split(feat, thr)
        tree.left[node] = grow(idx[mask], depth + 1, path * 2)
        tree.right[node] = grow(idx[~mask], depth + 1, path * 2 + 1)
        return node

    grow(np.arange(len(X)), 0, 1)
    return tree


def extra_trees_fit(X: np.ndarray, y: np.ndarray,
                    params: ExtraTreesParams = ExtraTreesParams(),
                    seed: int = 0) -> ExtraTreesModel:
    """Grow n_trees fully on the data (no bootstrap): each node draws k random
    features with one uniform threshold between the node-local min and max,
    keeping the best Gini reduction. Ties break toward the lowest feature
    index, then the lowest threshold."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    _check_binary_training_set(X, y)
    if params.n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    k = params.k_features or math.ceil(math.sqrt(X.shape[1]))
    trees = [_grow_extra_tree(X, y, [seed, t], params, k)
             for t in range(params.n_trees)]
    return ExtraTreesModel(trees=trees, params=params,
                           n_features=X.shape[1], seed=seed)


def extra_trees_predict_proba(model: ExtraTreesModel, X: np.ndarray) -> np.ndarray:
    return model.predict_proba(X)


# --- Histogram gradient boosting --------------------------------------------

@dataclass
class HgbParams:
    n_iter: int = 200
    learning_rate: float = 0.1
    max_depth: int = 6
    max_leaf: int = 31
    n_bins: int = 256
    l2: float = 1.0
    min_samples_leaf: int = 1


@dataclass
class HgbModel:
    initial_log_odds: float
    stages: list[FlatTree]
    learning_rate: float
    n_bins: int
    bin_edges: list[np.ndarray]
    n_features: int
    train_loss_trace: list[float] = field(default_factory=list)

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        score = np.full(len(X), self.initial_log_odds)
        for tree in self.stages:
            score += self.learning_rate * tree.predict(X)
        return score

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return _sigmoid(self.decision_function(X))

    def to_dict(self) -> dict:
        return {"kind": "hgb", "initial_log_odds": self.initial_log_odds,
                "learning_rate": self.learning_rate, "n_bins": self.n_bins,
                "n_features": self.n_features,
                "bin_edges": [e.tolist() for e in self.bin_edges],
                "stages": [t.to_dict() for t in self.stages]}

    @classmethod
    def from_dict(cls, d: dict) -> "HgbModel":
        return cls(initial_log_odds=d["initial_log_odds"],
                   stages=[FlatTree.from_dict(t) for t in d["stages"]],
                   learning_rate=d["learning_rate"], n_bins=d["n_bins"],
                   bin_edges=[np.asarray(e) for e in d["bin_edges"]],
                   n_features=d["n_features"])


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def fit_bin_edges(col: np.ndarray, n_bins: int) -> np.ndarray:
    """Quantile bin edges; a value x lands in bin searchsorted(edges, x, 'left'),
    so bin <= b exactly matches x <= edges[b]. Constant columns get no edges
    (single bin, never split on)."""
    uniq = np.unique(col)
    if len(uniq) <= 1:
        return np.empty(0)
    if len(uniq) <= n_bins:
        return (uniq[:-1] + uniq[1:]) / 2.0
    qs = np.quantile(col, np.linspace(0.0, 1.0, n_bins + 1)[1:-1])
    return np.unique(qs)


def bin_features(X: np.ndarray, edges: list[np.ndarray]) -> np.ndarray:
    binned = np.empty(X.shape, dtype=np.int64)
    for f, e in enumerate(edges):
        binned[:, f] = np.searchsorted(e, X[:, f], side="left")
    return binned


def _build_hgb_tree(binned, codes, edges, g, h, params: HgbParams) -> FlatTree:
    """Best-first growth: histograms of gradient/hessian sums per (feature,
    bin), split gain G_L^2/(H_L+l2) + G_R^2/(H_R+l2) - G_P^2/(H_P+l2)."""
    d = binned.shape[1]
    n_bins = params.n_bins
    l2 = params.l2

    def best_split(idx):
        flat = codes[idx].ravel()
        hist_g = np.bincount(flat, weights=np.repeat(g[idx], d),
                             minlength=d * n_bins).reshape(d, n_bins)
        hist_h = np.bincount(flat, weights=np.repeat(h[idx], d),
                             minlength=d * n_bins).reshape(d, n_bins)
        hist_c = np.bincount(flat, minlength=d * n_bins).reshape(d, n_bins)
        gp, hp = g[idx].sum(), h[idx].sum()
        gl = np.cumsum(hist_g, axis=1)
        hl = np.cumsum(hist_h, axis=1)
        cl = np.cumsum(hist_c, axis=1)
        gr = gp - gl
        hr = hp - hl
        cr = len(idx) - cl
        gain = gl ** 2 / (hl + l2) + gr ** 2 / (hr + l2) - gp ** 2 / (hp + l2)
        # a split at bin b sends bins <= b left; the last bin of each feature
        # cannot be a split point, nor can empty children
        valid = (cl >= params.min_samples_leaf) & (cr >= params.min_samples_leaf)
        for f in range(d):
            valid[f, len(edges[f]):] = False
        gain = np.where(valid, gain, -np.inf)
        flat_best = int(np.argmax(gain))  # first max: lowest feature, then bin
        f, b = divmod(flat_best, n_bins)
        return gain[f, b], f, b

    tree = FlatTree()
    root_idx = np.arange(len(binned))
    root = tree.add_leaf(-g.sum() / (h.sum() + l2))
    # candidates: (-gain, insertion order, node, idx, feature, bin, depth)
    candidates = []
    counter = 0

    def consider(node, idx, depth):
        nonlocal counter
        if depth >= params.max_depth or len(idx) < 2 * params.min_samples_leaf:
            return
        gain, f, b = best_split(idx)
        if gain > 1e-12 and np.isfinite(gain):
            candidates.append((-gain, counter, node, idx, f, b, depth))
            counter += 1

    consider(root, root_idx, 0)
    n_leaves = 1
    while candidates and n_leaves < params.max_leaf:
        candidates.sort()
        _, _, node, idx, f, b, depth = candidates.pop(0)
        mask = binned[idx, f] <= b
        left_idx, right_idx = idx[mask], idx[~mask]
        tree.feature[node] = f
        tree.threshold[node] = float(edges[f][b])
        tree.value[node] = 0.0
        li = tree.add_leaf(-g[left_idx].sum() / (h[left_idx].sum() + l2))
        ri = tree.add_leaf(-g[right_idx].sum() / (h[right_idx].sum() + l2))
        tree.left[node], tree.right[node] = li, ri
        n_leaves += 1
        consider(li, left_idx, depth + 1)
        consider(ri, right_idx, depth + 1)
    return tree


def log_loss(y: np.ndarray, p: np.ndarray, eps: float = 1e-12) -> float:
    p = np.clip(p, eps, 1.0 - eps)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def hgb_fit(X: np.ndarray, y: np.ndarray,
            params: HgbParams = HgbParams()) -> HgbModel:
    """Boost histogram regression trees on logistic-loss gradients
    g = p - y with hessians h = p(1-p); leaf value -sum(g)/(sum(h)+l2);
    the initial prediction is the class-prior log-odds."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_binary_training_set(X, y.astype(np.int64))

    edges = [fit_bin_edges(X[:, f], params.n_bins) for f in range(X.shape[1])]
    binned = bin_features(X, edges)
    codes = binned + params.n_bins * np.arange(X.shape[1])

    prior = float(y.mean())
    init = math.log(prior / (1.0 - prior))
    score = np.full(len(y), init)
    stages: list[FlatTree] = []
    trace = [log_loss(y, _sigmoid(score))]
    for _ in range(params.n_iter):
        p = _sigmoid(score)
        g = p - y
        h = p * (1.0 - p)
        tree = _build_hgb_tree(binned, codes, edges, g, h, params)
        # route through bins to replay training-time paths exactly
        score += params.learning_rate * tree.predict(X)
        stages.append(tree)
        trace.append(log_loss(y, _sigmoid(score)))
    return HgbModel(initial_log_odds=init, stages=stages,
                    learning_rate=params.learning_rate, n_bins=params.n_bins,
                    bin_edges=edges, n_features=X.shape[1],
                    train_loss_trace=trace)


def hgb_predict_proba(model: HgbModel, X: np.ndarray) -> np.ndarray:
    return model.predict_proba(X)
