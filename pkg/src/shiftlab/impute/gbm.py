"""Histogram gradient-boosted regression trees for squared-error targets.

Features are quantile binned on the training data; the last bin id
(``max_bins``) is reserved for missing values. A split sends bins
``<= threshold`` left and missing values to whichever side maximised the
gain; when a node saw no missing values they follow the larger child.

With squared loss every hessian is one, so a leaf holding ``n`` rows with
gradient sum ``G`` gets value ``-G/(n + l2)`` and the split gain is
``G_L^2/(n_L + l2) + G_R^2/(n_R + l2) - G^2/(n + l2)``. Each such leaf update
changes the training loss by ``lr G^2/(n + l2) (lr n/(2(n + l2)) - 1)``,
which is never positive for ``learning_rate < 2``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import FeatureCountMismatch, InsufficientData

MISSING_SIDE_LEFT = 1
MISSING_SIDE_RIGHT = 0


@dataclass(frozen=True)
class GbmParams:
    learning_rate: float = 0.2
    l2_regularization: float = 125.0
    min_samples_leaf: int = 20
    max_bins: int = 255
    max_iter: int = 100
    max_depth: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 2 <= self.max_bins <= 255:
            raise ValueError("max_bins must lie in [2, 255]")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be at least 1")
        if self.l2_regularization < 0:
            raise ValueError("l2_regularization must be nonnegative")
        if self.max_iter < 0:
            raise ValueError("max_iter must be nonnegative")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be at least 1")


# ----------------------------------------------------------------------------
# binning

def bin_edges(x: np.ndarray, max_bins: int) -> np.ndarray:
    """Upper bin edges for one feature; at most ``max_bins - 1`` of them."""
    x = x[~np.isnan(x)]
    if x.size == 0:
        return np.empty(0)
    distinct = np.unique(x)
    if distinct.size <= max_bins:
        return (distinct[:-1] + distinct[1:]) / 2
    qs = np.quantile(x, np.linspace(0, 1, max_bins + 1)[1:-1])
    return np.unique(qs)


def apply_bins(X: np.ndarray, edges: list[np.ndarray], missing_bin: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    out = np.empty(X.shape, dtype=np.uint8)
    for j, e in enumerate(edges):
        col = X[:, j]
        b = np.searchsorted(e, col, side="left")
        b[np.isnan(col)] = missing_bin
        out[:, j] = b
    return out


# ----------------------------------------------------------------------------
# trees

@dataclass
class Tree:
    """Flat node arrays; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    missing_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def apply(self, Xb: np.ndarray, missing_bin: int) -> np.ndarray:
        """Leaf index reached by each binned row."""
        node = np.zeros(Xb.shape[0], dtype=np.int64)
        rows = np.arange(Xb.shape[0])
        active = self.feature[node] >= 0
        while active.any():
            r = rows[active]
            nd = node[r]
            b = Xb[r, self.feature[nd]]
            go_left = np.where(b == missing_bin, self.missing_left[nd], b <= self.threshold[nd])
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active[r] = self.feature[node[r]] >= 0
        return node

    def predict_binned(self, Xb: np.ndarray, missing_bin: int) -> np.ndarray:
        return self.value[self.apply(Xb, missing_bin)]

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in
                ("feature", "threshold", "missing_left", "left", "right", "value")}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=np.int64),
            missing_left=np.asarray(d["missing_left"], dtype=bool),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=float),
        )


@dataclass
class GbmModel:
    baseline: float
    trees: list[Tree]
    feature_bins: list[np.ndarray]
    params: GbmParams
    train_loss: list[float] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return len(self.feature_bins)

    def bin(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise FeatureCountMismatch(f"model has {self.n_features} features, got {X.shape[1]}")
        return apply_bins(X, self.feature_bins, self.params.max_bins)

    def predict_binned(self, Xb: np.ndarray) -> np.ndarray:
        raw = np.full(Xb.shape[0], self.baseline)
        for t in self.trees:
            raw += self.params.learning_rate * t.predict_binned(Xb, self.params.max_bins)
        return raw

    def used_features(self) -> set[int]:
        return {int(f) for t in self.trees for f in t.feature if f >= 0}

    def to_dict(self) -> dict:
        return {
            "schema": "1",
            "baseline": self.baseline,
            "params": asdict(self.params),
            "feature_bins": [e.tolist() for e in self.feature_bins],
            "trees": [t.to_dict() for t in self.trees],
            "train_loss": list(self.train_loss),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbmModel":
        return cls(
            baseline=float(d["baseline"]),
            trees=[Tree.from_dict(t) for t in d["trees"]],
            feature_bins=[np.asarray(e, dtype=float) for e in d["feature_bins"]],
            params=GbmParams(**d["params"]),
            train_loss=list(d.get("train_loss", [])),
        )

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "GbmModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


class _Grower:
    """Depth-first growth of one tree on binned features."""

    def __init__(self, Xb, n_bins, grad, params: GbmParams):
        self.Xb = Xb
        self.n_bins = n_bins  # bins in use per feature, excluding the missing bin
        self.grad = grad
        self.p = params
        self.width = params.max_bins + 1
        self.offsets = np.arange(Xb.shape[1]) * self.width
        self.nodes: list[list] = []  # [feature, threshold, missing_left, left, right, value]
        self.leaf_rows: list[tuple[int, np.ndarray]] = []

    def _histograms(self, idx):
        flat = (self.Xb[idx] + self.offsets).ravel()
        size = self.width * self.Xb.shape[1]
        g = np.bincount(flat, weights=np.repeat(self.grad[idx], self.Xb.shape[1]), minlength=size)
        c = np.bincount(flat, minlength=size)
        return g.reshape(-1, self.width), c.reshape(-1, self.width).astype(float)

    def _best_split(self, idx, G, n):
        lam = self.p.l2_regularization
        msl = self.p.min_samples_leaf
        if n < 2 * msl:
            return None
        hg, hc = self._histograms(idx)
        parent = G * G / (n + lam)
        best = None
        best_gain = 1e-12 * max(1.0, parent)
        for j in range(hg.shape[0]):
            nb = self.n_bins[j]
            gm, cm = hg[j, -1], hc[j, -1]
            cg = np.cumsum(hg[j, :nb])
            cc = np.cumsum(hc[j, :nb])
            sides = (MISSING_SIDE_LEFT, MISSING_SIDE_RIGHT) if cm > 0 else (None,)
            for side in sides:
                if side is None:
                    gl, nl = cg[:-1], cc[:-1]
                elif side == MISSING_SIDE_LEFT:
                    gl, nl = cg[:-1] + gm, cc[:-1] + cm
                else:
                    # the last threshold separates missing from everything else
                    gl, nl = cg, cc
                gr, nr = G - gl, n - nl
                ok = (nl >= msl) & (nr >= msl)
                if not ok.any():
                    continue
                gain = np.where(ok, gl * gl / (nl + lam) + gr * gr / (nr + lam) - parent, -np.inf)
                b = int(np.argmax(gain))
                if gain[b] > best_gain:
                    best_gain = float(gain[b])
                    if side is None:
                        mleft = nl[b] >= nr[b]
                    else:
                        mleft = side == MISSING_SIDE_LEFT
                    best = (j, b, bool(mleft))
        return best

    def grow(self, idx, depth=0) -> int:
        G = float(self.grad[idx].sum())
        n = float(idx.size)
        node_id = len(self.nodes)
        self.nodes.append([-1, 0, False, -1, -1, -G / (n + self.p.l2_regularization)])
        if self.p.max_depth is not None and depth >= self.p.max_depth:
            self.leaf_rows.append((node_id, idx))
            return node_id
        split = self._best_split(idx, G, n)
        if split is None:
            self.leaf_rows.append((node_id, idx))
            return node_id
        j, b, mleft = split
        col = self.Xb[idx, j]
        missing = col == self.p.max_bins
        go_left = np.where(missing, mleft, col <= b)
        self.nodes[node_id][:3] = [j, b, mleft]
        self.nodes[node_id][3] = self.grow(idx[go_left], depth + 1)
        self.nodes[node_id][4] = self.grow(idx[~go_left], depth + 1)
        return node_id

    def tree(self) -> Tree:
        a = list(zip(*self.nodes))
        return Tree(
            feature=np.asarray(a[0], dtype=np.int64),
            threshold=np.asarray(a[1], dtype=np.int64),
            missing_left=np.asarray(a[2], dtype=bool),
            left=np.asarray(a[3], dtype=np.int64),
            right=np.asarray(a[4], dtype=np.int64),
            value=np.asarray(a[5], dtype=float),
        )


def _loss(raw, y) -> float:
    r = raw - y
    return 0.5 * float(r @ r) / y.size


def fit_gbm(features, target, params: GbmParams = GbmParams()) -> GbmModel:
    """Boost squared-error trees on ``features`` (``nan`` = missing).

    ``train_loss[i]`` is the mean half squared error after ``i`` trees.
    Boosting stops early only once a tree would be a single leaf with a
    zero value, which happens when the residuals are exactly balanced
    (e.g. a constant target).
    """
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(target, dtype=float)
    if X.shape[0] != y.size:
        raise ValueError("features and target have different lengths")
    if not np.all(np.isfinite(y)):
        raise ValueError("target must be finite")
    if y.size < 2 * params.min_samples_leaf:
        raise InsufficientData(f"need at least {2 * params.min_samples_leaf} rows, got {y.size}")

    edges = [bin_edges(X[:, j], params.max_bins) for j in range(X.shape[1])]
    Xb = apply_bins(X, edges, params.max_bins)
    n_bins = np.array([e.size + 1 for e in edges])
    baseline = float(np.mean(y))
    raw = np.full(y.size, baseline)
    model = GbmModel(baseline, [], edges, params, [_loss(raw, y)])
    all_rows = np.arange(y.size)
    for _ in range(params.max_iter):
        grower = _Grower(Xb, n_bins, raw - y, params)
        grower.grow(all_rows)
        tree = grower.tree()
        if tree.feature.size == 1 and abs(tree.value[0]) <= 1e-15 * max(1.0, abs(baseline)):
            break
        for node_id, rows in grower.leaf_rows:
            raw[rows] += params.learning_rate * tree.value[node_id]
        model.trees.append(tree)
        model.train_loss.append(_loss(raw, y))
    return model


def predict_gbm(model: GbmModel, features) -> np.ndarray:
    return model.predict_binned(model.bin(features))


def r2_score(y, pred) -> float:
    y = np.asarray(y, dtype=float)
    tss = float(np.sum((y - y.mean()) ** 2))
    rss = float(np.sum((y - pred) ** 2))
    return 1.0 - rss / tss if tss > 0 else (1.0 if rss == 0 else 0.0)


@dataclass(frozen=True)
class Importance:
    baseline_r2: float
    mean: np.ndarray
    std: np.ndarray
    samples: np.ndarray  # repeats x features


def permutation_importance(model: GbmModel, features, target, repeats: int = 10, seed: int = 0,
                           columns=None) -> Importance:
    """Drop in R² when one feature column is shuffled, averaged over ``repeats``.

    Only trees that split on the shuffled feature are re-evaluated.
    ``columns`` restricts the computation to some features; the others get
    ``nan``. Each column draws from its own generator seeded by
    ``(seed, column)``, so results do not depend on which columns are asked for.
    """
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    Xb = model.bin(features)
    y = np.asarray(target, dtype=float)
    lr, mb = model.params.learning_rate, model.params.max_bins
    per_tree = [t.predict_binned(Xb, mb) for t in model.trees]
    raw = model.baseline + lr * np.sum(per_tree, axis=0) if per_tree else np.full(y.size, model.baseline)
    base = r2_score(y, raw)
    drops = np.full((repeats, Xb.shape[1]), np.nan)
    for j in range(Xb.shape[1]) if columns is None else columns:
        rng = np.random.default_rng([seed, j])
        users = [i for i, t in enumerate(model.trees) if np.any(t.feature == j)]
        fixed = raw - lr * sum((per_tree[i] for i in users), np.zeros(y.size))
        shuffled = Xb.copy()
        for r in range(repeats):
            shuffled[:, j] = Xb[rng.permutation(Xb.shape[0]), j]
            pred = fixed + lr * sum((model.trees[i].predict_binned(shuffled, mb) for i in users), np.zeros(y.size))
            drops[r, j] = base - r2_score(y, pred)
    std = drops.std(axis=0, ddof=1) if repeats > 1 else np.zeros(Xb.shape[1])
    return Importance(base, drops.mean(axis=0), std, drops)
