"""Regression trees grown greedily on squared error, and bagged forests of them.

Tree growth follows the classic recursive scheme: a node predicts the mean
of its observations; the best split ``(j, t)`` over a random subset of
``m_try`` features minimizes the summed squared deviation of the two
children; recursion is depth-first, left child first.

Two stopping rules apply. A node is split only while its share of the
*whole* training set exceeds ``s_min``, so with ``s_min = 0.9`` a node
holding 5 of 100 observations is never split further. Growth also stops
once the tree has ``k_max`` leaves.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

logger = logging.getLogger(__name__)

LEAF = -1


@dataclass(frozen=True)
class RegressionTree:
    """Flat array representation; node 0 is the root."""

    feature: NDArray[np.int64]
    threshold: NDArray[np.float64]
    left: NDArray[np.int64]
    right: NDArray[np.int64]
    value: NDArray[np.float64]
    n_samples: NDArray[np.int64]
    s_min: float
    k_max: int

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature == LEAF))

    @property
    def n_splits(self) -> int:
        return int(np.sum(self.feature != LEAF))

    def apply(self, X: ArrayLike) -> NDArray[np.int64]:
        """Index of the leaf each row of ``X`` falls into."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            feat = self.feature[node]
            inner = feat != LEAF
            if not np.any(inner):
                return node
            r = rows[inner]
            go_left = X[r, feat[inner]] <= self.threshold[node[inner]]
            node[r] = np.where(go_left, self.left[node[inner]], self.right[node[inner]])

    def predict(self, X: ArrayLike) -> NDArray[np.float64] | float:
        X = np.asarray(X, dtype=np.float64)
        out = self.value[self.apply(X)]
        return float(out[0]) if X.ndim == 1 else out

    def to_dict(self) -> dict:
        """Preorder node list; inner nodes carry ``feature``/``threshold``."""
        nodes = []

        def visit(i: int) -> None:
            if self.feature[i] == LEAF:
                nodes.append({"value": float(self.value[i]), "n": int(self.n_samples[i])})
                return
            nodes.append({
                "feature": int(self.feature[i]),
                "threshold": float(self.threshold[i]),
                "value": float(self.value[i]),
                "n": int(self.n_samples[i]),
            })
            visit(int(self.left[i]))
            visit(int(self.right[i]))

        visit(0)
        return {"s_min": self.s_min, "k_max": self.k_max, "nodes": nodes}

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        b = _Builder()
        it = iter(d["nodes"])

        def build() -> int:
            nd = next(it)
            idx = b.add(nd["value"], nd["n"])
            if "feature" in nd:
                b.feature[idx] = nd["feature"]
                b.threshold[idx] = nd["threshold"]
                b.left[idx] = build()
                b.right[idx] = build()
            return idx

        build()
        return b.finish(float(d["s_min"]), int(d["k_max"]))


class _Builder:
    def __init__(self) -> None:
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []
        self.n: list[int] = []

    def add(self, value: float, n: int) -> int:
        self.feature.append(LEAF)
        self.threshold.append(np.nan)
        self.left.append(LEAF)
        self.right.append(LEAF)
        self.value.append(value)
        self.n.append(n)
        return len(self.value) - 1

    def finish(self, s_min: float, k_max: int) -> RegressionTree:
        return RegressionTree(
            feature=np.asarray(self.feature, dtype=np.int64),
            threshold=np.asarray(self.threshold, dtype=np.float64),
            left=np.asarray(self.left, dtype=np.int64),
            right=np.asarray(self.right, dtype=np.int64),
            value=np.asarray(self.value, dtype=np.float64),
            n_samples=np.asarray(self.n, dtype=np.int64),
            s_min=s_min,
            k_max=k_max,
        )


def sse(y: NDArray[np.float64]) -> float:
    """Sum of squared deviations from the mean."""
    if y.size == 0:
        return 0.0
    d = y - y.mean()
    return float(d @ d)


def best_split(X: NDArray[np.float64], y: NDArray[np.float64], features) -> tuple[int, float, float] | None:
    """Lowest-cost ``(feature, threshold, cost)`` over midpoints of sorted unique values.

    Ties go to the earlier feature in ``features`` and then the smaller
    threshold. Returns ``None`` if no feature has two distinct values.
    """
    yc = y - y.mean()
    n = y.size
    total_sq = float(yc @ yc)
    best = None
    for j in features:
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        ys = yc[order]
        cut = np.flatnonzero(xs[:-1] < xs[1:])
        if cut.size == 0:
            continue
        csum = np.cumsum(ys)
        nl = cut + 1.0
        sl = csum[cut]
        sr = csum[-1] - sl
        cost = total_sq - sl * sl / nl - sr * sr / (n - nl)
        k = int(np.argmin(cost))
        c = float(cost[k])
        if best is None or c < best[2]:
            i = cut[k]
            best = (int(j), 0.5 * (xs[i] + xs[i + 1]), c)
    return best


def fit_regression_tree(
    X: ArrayLike,
    y: ArrayLike,
    m_try: int | None = None,
    s_min: float = 0.0,
    k_max: int = 2**31 - 1,
    rng_seed: int | np.random.SeedSequence | None = 0,
) -> RegressionTree:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size == 0:
        raise ValueError("cannot fit a tree on empty data")
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError(f"X {X.shape} and y {y.shape} do not align")
    m = X.shape[1]
    m_try = m if m_try is None else int(m_try)
    if not 1 <= m_try <= m:
        raise ValueError(f"m_try={m_try} outside [1, {m}]")
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    rng = np.random.default_rng(rng_seed)
    N = y.size
    b = _Builder()
    leaves = 1

    def grow(idx: NDArray[np.int64]) -> int:
        nonlocal leaves
        ys = y[idx]
        node = b.add(float(ys.mean()), idx.size)
        if leaves >= k_max or idx.size / N <= s_min or idx.size < 2:
            return node
        node_cost = sse(ys)
        if node_cost == 0.0:
            return node
        feats = rng.choice(m, size=m_try, replace=False)
        split = best_split(X[idx], ys, feats)
        if split is None or split[2] >= node_cost * (1.0 - 1e-12):
            return node
        j, t, _ = split
        mask = X[idx, j] <= t
        leaves += 1
        b.feature[node] = j
        b.threshold[node] = t
        left = grow(idx[mask])
        right = grow(idx[~mask])
        b.left[node] = left
        b.right[node] = right
        return node

    grow(np.arange(N))
    return b.finish(float(s_min), int(k_max))


def predict_tree(tree: RegressionTree, x: ArrayLike) -> NDArray[np.float64] | float:
    return tree.predict(x)


@dataclass(frozen=True)
class RandomForestModel:
    trees: tuple[RegressionTree, ...]
    seeds: tuple[int, ...]
    m_try: int
    bootstrap: bool = True
    base_seed: int = 0
    meta: dict = field(default_factory=dict, repr=False)

    @property
    def B(self) -> int:
        return len(self.trees)

    def predict(self, X: ArrayLike) -> NDArray[np.float64] | float:
        return predict_random_forest(self, X)

    def to_dict(self) -> dict:
        return {
            "family": "random_forest",
            "m_try": self.m_try,
            "bootstrap": self.bootstrap,
            "base_seed": self.base_seed,
            "seeds": list(self.seeds),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RandomForestModel":
        return cls(
            trees=tuple(RegressionTree.from_dict(t) for t in d["trees"]),
            seeds=tuple(int(s) for s in d["seeds"]),
            m_try=int(d["m_try"]),
            bootstrap=bool(d["bootstrap"]),
            base_seed=int(d["base_seed"]),
        )


def tree_seeds(base_seed: int, B: int) -> list[int]:
    """Independent per-tree seeds derived from one base seed."""
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in np.random.SeedSequence(base_seed).spawn(B)]


def fit_random_forest(
    X: ArrayLike,
    y: ArrayLike,
    B: int = 500,
    m_try: int | None = None,
    s_min: float = 0.95,
    k_max: int = 6,
    base_seed: int = 0,
    bootstrap: bool = True,
) -> RandomForestModel:
    """Bag ``B`` trees, each on a bootstrap resample the size of the training set."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if B < 1:
        raise ValueError("B must be at least 1")
    if y.size == 0:
        raise ValueError("cannot fit a forest on empty data")
    m_try = X.shape[1] if m_try is None else min(int(m_try), X.shape[1])
    seeds = tree_seeds(base_seed, B)
    trees = []
    N = y.size
    for s in seeds:
        if bootstrap:
            idx = np.random.default_rng([s, 1]).integers(0, N, size=N)
            Xb, yb = X[idx], y[idx]
        else:
            Xb, yb = X, y
        trees.append(fit_regression_tree(Xb, yb, m_try=m_try, s_min=s_min, k_max=k_max, rng_seed=s))
    return RandomForestModel(tuple(trees), tuple(seeds), m_try, bootstrap, int(base_seed))


def predict_random_forest(model: RandomForestModel, X: ArrayLike) -> NDArray[np.float64] | float:
    """Arithmetic mean of the trees' predictions."""
    X = np.asarray(X, dtype=np.float64)
    preds = np.stack([np.atleast_1d(t.value[t.apply(X)]) for t in model.trees])
    out = preds.sum(axis=0) / model.B
    return float(out[0]) if X.ndim == 1 else out
