"""CART regression trees: exact sorted-scan squared-error splits.

Splits are placed at the midpoint of adjacent distinct values, rows with
``x[f] <= threshold`` go left, and gain ties resolve to the lowest feature
index and then the lowest threshold.  The build loop runs under numba; node
arrays are plain numpy so fitted trees serialise trivially.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numba
import numpy as np

LEAF = -1


@dataclass(frozen=True)
class TreeConfig:
    max_depth: int = 3
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    max_features: Union[int, str, None] = "all"

    def __post_init__(self):
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        mf = self.max_features
        if not (mf in ("all", None) or (isinstance(mf, int) and mf >= 1)):
            raise ValueError(f"max_features must be a positive int or 'all', got {mf!r}")

    def n_candidates(self, d: int) -> int:
        if self.max_features in ("all", None):
            return d
        return min(int(self.max_features), d)


@dataclass(frozen=True)
class RegressionTree:
    feature: np.ndarray  # LEAF for leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature == LEAF))

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] != LEAF:
                depth[self.left[i]] = depth[i] + 1
                depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def _check(self, X):
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        used = self.feature[self.feature != LEAF]
        if used.size and X.shape[1] <= used.max():
            raise IndexError(f"tree uses feature {used.max()} but rows have {X.shape[1]} columns")
        return X

    def apply(self, X) -> np.ndarray:
        """Leaf node index reached by each row."""
        X = self._check(X)
        return _apply(X, self.feature, self.threshold, self.left, self.right)

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def with_leaf_values(self, values: np.ndarray) -> "RegressionTree":
        return RegressionTree(self.feature, self.threshold, self.left, self.right,
                              np.asarray(values, dtype=float), self.n_samples)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_samples": self.n_samples.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=float),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=float),
            np.asarray(d["n_samples"], dtype=np.int64),
        )

    def __eq__(self, other):
        if not isinstance(other, RegressionTree):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k))
                   for k in ("feature", "threshold", "left", "right", "value", "n_samples"))

    __hash__ = None


def predict_tree(tree: RegressionTree, x) -> float:
    return float(tree.predict(np.asarray(x, dtype=float)[None, :])[0])


def fit_tree(X, targets, config: TreeConfig, rng: Optional[np.random.Generator] = None) -> RegressionTree:
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(targets, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError(f"X has shape {X.shape} but there are {y.shape[0]} targets")
    if y.shape[0] == 0:
        raise ValueError("cannot fit a tree on zero rows")
    n, d = X.shape
    k = config.n_candidates(d)
    if k < d:
        if rng is None:
            raise ValueError("feature subsampling needs an rng")
        uniforms = rng.random((2 * n) * d)
    else:
        uniforms = np.empty(0)
    arrays = _build(X, y, config.max_depth, config.min_samples_split, config.min_samples_leaf, k, uniforms)
    return RegressionTree(*arrays)


@numba.njit(cache=True)
def _apply(X, feature, threshold, left, right):
    out = np.empty(X.shape[0], dtype=np.int64)
    for i in range(X.shape[0]):
        node = 0
        while feature[node] != -1:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@numba.njit(cache=True)
def _build(X, y, max_depth, min_split, min_leaf, n_cand, uniforms):
    n, d = X.shape
    cap = 2 * n
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    count = np.zeros(cap, dtype=np.int64)

    idx = np.arange(n)
    buf = np.empty(n, dtype=np.int64)
    perm = np.arange(d)
    # stack of (node, start, end, depth)
    stack = np.empty((cap, 4), dtype=np.int64)
    top = 0
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n
    stack[0, 3] = 0
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]
        depth = stack[top, 3]
        m = end - start

        total = 0.0
        lo = np.inf
        hi = -np.inf
        for p in range(start, end):
            v = y[idx[p]]
            total += v
            if v < lo:
                lo = v
            if v > hi:
                hi = v
        mean = total / m
        value[node] = mean
        count[node] = m
        if depth >= max_depth or m < min_split or m < 2 * min_leaf or lo == hi:
            continue
        sse = 0.0
        for p in range(start, end):
            r = y[idx[p]] - mean
            sse += r * r

        # candidate features: partial Fisher-Yates, then ascending order
        for j in range(d):
            perm[j] = j
        if n_cand < d:
            base = node * d
            for j in range(n_cand):
                r = j + int(uniforms[base + j] * (d - j))
                if r >= d:
                    r = d - 1
                tmp = perm[j]
                perm[j] = perm[r]
                perm[r] = tmp
            cands = np.sort(perm[:n_cand])
        else:
            cands = perm[:d].copy()

        best_gain = 0.0
        best_f = -1
        best_thr = 0.0
        parent_term = total * total / m
        xs = np.empty(m)
        ys = np.empty(m)
        for c in range(cands.shape[0]):
            f = cands[c]
            for p in range(m):
                xs[p] = X[idx[start + p], f]
            order = np.argsort(xs, kind="mergesort")
            for p in range(m):
                ys[p] = y[idx[start + order[p]]]
            left_sum = 0.0
            for p in range(min_leaf - 1):
                left_sum += ys[p]
            for i in range(min_leaf, m - min_leaf + 1):
                left_sum += ys[i - 1]
                xa = xs[order[i - 1]]
                xb = xs[order[i]]
                if xa >= xb:
                    continue
                right_sum = total - left_sum
                gain = left_sum * left_sum / i + right_sum * right_sum / (m - i) - parent_term
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    thr = 0.5 * (xa + xb)
                    if thr >= xb:
                        thr = xa
                    best_thr = thr
        if best_f < 0 or best_gain <= 1e-12 * sse:
            continue

        # stable partition of idx[start:end]
        nl = 0
        for p in range(start, end):
            if X[idx[p], best_f] <= best_thr:
                buf[nl] = idx[p]
                nl += 1
        k = nl
        for p in range(start, end):
            if X[idx[p], best_f] > best_thr:
                buf[k] = idx[p]
                k += 1
        for p in range(m):
            idx[start + p] = buf[p]

        li = n_nodes
        ri = n_nodes + 1
        n_nodes += 2
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = li
        right[node] = ri
        # right first so the left subtree is expanded first
        stack[top, 0] = ri
        stack[top, 1] = start + nl
        stack[top, 2] = end
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = li
        stack[top, 1] = start
        stack[top, 2] = start + nl
        stack[top, 3] = depth + 1
        top += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy(), count[:n_nodes].copy())
