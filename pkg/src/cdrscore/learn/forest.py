"""Random forest built on bagged CART trees with Gini splits.

Determinism contract: every tree's randomness comes from its own splitmix64
stream seeded by (master seed, tree index), so results are identical across
thread counts and bit-exact across runs. Scores are vote fractions (each
tree votes its leaf's majority class; ties vote 0.5), and importances are
mean decrease in Gini summed over each feature's splits, averaged over trees.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from ..util import thread_count

_SM64_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM64_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_SM64_MUL2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True, inline="always")
def _splitmix64(state):
    state = state + _SM64_GAMMA
    z = state
    z = (z ^ (z >> np.uint64(30))) * _SM64_MUL1
    z = (z ^ (z >> np.uint64(27))) * _SM64_MUL2
    z = z ^ (z >> np.uint64(31))
    return state, z


def derive_tree_seed(master_seed: int, tree_index: int) -> int:
    """Stable per-tree seed; independent of scheduling. Wrapping uint64
    arithmetic done on Python ints with an explicit mask."""
    mask = (1 << 64) - 1
    z = (master_seed ^ ((tree_index + 1) * int(_SM64_MUL2))) & mask
    z = (z + int(_SM64_GAMMA)) & mask
    z = ((z ^ (z >> 30)) * int(_SM64_MUL1)) & mask
    z = ((z ^ (z >> 27)) * int(_SM64_MUL2)) & mask
    return (z ^ (z >> 31)) & mask


@njit(cache=True, nogil=True)
def _grow_tree(X, y, seed, mtry, min_leaf):
    """Grow one CART tree on a bootstrap sample; returns node arrays plus the
    per-feature Gini importance accumulated over this tree's splits."""
    n, p = X.shape
    state = np.uint64(seed)

    idx = np.empty(n, np.int64)
    for i in range(n):
        state, z = _splitmix64(state)
        idx[i] = np.int64(z % np.uint64(n))

    max_nodes = 2 * n + 1
    feature = np.full(max_nodes, -1, np.int32)
    threshold = np.zeros(max_nodes, np.float64)
    left = np.full(max_nodes, -1, np.int32)
    right = np.full(max_nodes, -1, np.int32)
    count0 = np.zeros(max_nodes, np.int32)
    count1 = np.zeros(max_nodes, np.int32)
    importance = np.zeros(p, np.float64)

    stack_node = np.empty(max_nodes, np.int32)
    stack_lo = np.empty(max_nodes, np.int64)
    stack_hi = np.empty(max_nodes, np.int64)
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n
    top = 1
    node_count = 1

    feat_perm = np.arange(p)
    vbuf = np.empty(n, np.float64)
    scratch = np.empty(n, np.int64)

    while top > 0:
        top -= 1
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        m = hi - lo

        c1 = 0
        for i in range(lo, hi):
            c1 += y[idx[i]]
        c0 = int(m - c1)
        count0[node] = c0
        count1[node] = c1
        if c0 == 0 or c1 == 0 or m < 2 * min_leaf:
            continue

        fm = float(m)
        parent_gini = 1.0 - (c0 / fm) ** 2 - (c1 / fm) ** 2
        best_gain = 1e-12
        best_f = -1
        best_thr = 0.0

        k = mtry if mtry < p else p
        for t in range(k):
            state, z = _splitmix64(state)
            j = t + np.int64(z % np.uint64(p - t))
            tmp = feat_perm[t]
            feat_perm[t] = feat_perm[j]
            feat_perm[j] = tmp
            f = feat_perm[t]

            for i in range(m):
                vbuf[i] = X[idx[lo + i], f]
            order = np.argsort(vbuf[:m], kind="mergesort")

            lc0 = 0
            lc1 = 0
            for i in range(m - 1):
                if y[idx[lo + order[i]]] == 1:
                    lc1 += 1
                else:
                    lc0 += 1
                v_here = vbuf[order[i]]
                v_next = vbuf[order[i + 1]]
                if not (v_next > v_here):
                    continue
                nl = i + 1
                nr = m - nl
                if nl < min_leaf or nr < min_leaf:
                    continue
                rc0 = c0 - lc0
                rc1 = c1 - lc1
                fl = float(nl)
                fr = float(nr)
                gini_l = 1.0 - (lc0 / fl) ** 2 - (lc1 / fl) ** 2
                gini_r = 1.0 - (rc0 / fr) ** 2 - (rc1 / fr) ** 2
                gain = parent_gini - (fl * gini_l + fr * gini_r) / fm
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    thr = v_here + 0.5 * (v_next - v_here)
                    if thr <= v_here:
                        thr = v_next
                    best_thr = thr

        if best_f < 0:
            continue

        # stable partition keeps within-node order deterministic
        nl = 0
        for i in range(lo, hi):
            if X[idx[i], best_f] < best_thr:
                scratch[nl] = idx[i]
                nl += 1
        nr = 0
        for i in range(lo, hi):
            if not (X[idx[i], best_f] < best_thr):
                scratch[nl + nr] = idx[i]
                nr += 1
        for i in range(m):
            idx[lo + i] = scratch[i]

        # child ginis at the accepted split, for the importance bookkeeping
        lc1 = 0
        for i in range(lo, lo + nl):
            lc1 += y[idx[i]]
        lc0 = nl - lc1
        rc1 = c1 - lc1
        rc0 = c0 - lc0
        gini_l = 1.0 - (lc0 / float(nl)) ** 2 - (lc1 / float(nl)) ** 2
        gini_r = 1.0 - (rc0 / float(nr)) ** 2 - (rc1 / float(nr)) ** 2
        importance[best_f] += (
            m * parent_gini - nl * gini_l - nr * gini_r
        ) / float(n)

        feature[node] = best_f
        threshold[node] = best_thr
        left_id = node_count
        right_id = node_count + 1
        node_count += 2
        left[node] = left_id
        right[node] = right_id
        stack_node[top] = left_id
        stack_lo[top] = lo
        stack_hi[top] = lo + nl
        top += 1
        stack_node[top] = right_id
        stack_lo[top] = lo + nl
        stack_hi[top] = hi
        top += 1

    return (
        feature[:node_count].copy(),
        threshold[:node_count].copy(),
        left[:node_count].copy(),
        right[:node_count].copy(),
        count0[:node_count].copy(),
        count1[:node_count].copy(),
        importance,
    )


@njit(cache=True, nogil=True)
def _predict_tree(feature, threshold, left, right, count0, count1, X, out):
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] < threshold[node]:
                node = left[node]
            else:
                node = right[node]
        c0 = count0[node]
        c1 = count1[node]
        if c1 > c0:
            out[i] = 1.0
        elif c0 > c1:
            out[i] = 0.0
        else:
            out[i] = 0.5


@dataclass(frozen=True)
class ForestSpec:
    n_trees: int = 500
    mtry: int | None = None  # None -> floor(sqrt(p)), the classification default
    min_leaf: int = 1
    seed: int = 0

    def resolve_mtry(self, p: int) -> int:
        m = self.mtry if self.mtry is not None else int(np.sqrt(p))
        return int(min(max(m, 1), p))

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "mtry": self.mtry,
            "min_leaf": self.min_leaf,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestSpec":
        return cls(
            n_trees=int(d["n_trees"]),
            mtry=None if d.get("mtry") is None else int(d["mtry"]),
            min_leaf=int(d.get("min_leaf", 1)),
            seed=int(d["seed"]),
        )


class RandomForest:
    """Bagged Gini CART ensemble scored by vote fractions."""

    def __init__(self, spec: ForestSpec, feature_names: Sequence[str]):
        self.spec = spec
        self.feature_names = list(feature_names)
        self.trees: list[tuple] = []
        self.importances: np.ndarray | None = None

    def fit(self, X: np.ndarray, y: np.ndarray) -> "RandomForest":
        X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
        y = np.asarray(y).astype(np.int8)
        if len(np.unique(y)) < 2:
            raise ValueError("forest training requires both classes present")
        if X.shape[0] < 2:
            raise ValueError("forest training requires at least 2 rows")
        p = X.shape[1]
        mtry = self.spec.resolve_mtry(p)
        seeds = [derive_tree_seed(self.spec.seed, t) for t in range(self.spec.n_trees)]

        def grow(seed: int):
            return _grow_tree(X, y, np.uint64(seed), mtry, self.spec.min_leaf)

        workers = thread_count()
        if workers > 1 and self.spec.n_trees > 1:
            grow(seeds[0])  # warm the JIT once before fanning out
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(grow, seeds))
        else:
            results = [grow(s) for s in seeds]

        self.trees = [r[:6] for r in results]
        imp = np.zeros(p)
        for r in results:  # fixed tree order: deterministic reduction
            imp += r[6]
        self.importances = imp / self.spec.n_trees
        return self

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
        votes = np.zeros((len(self.trees), X.shape[0]))
        for t, tree in enumerate(self.trees):
            _predict_tree(*tree, X, votes[t])
        return votes.mean(axis=0)

    def importance_table(self) -> list[tuple[str, float]]:
        order = np.argsort(-self.importances, kind="stable")
        return [(self.feature_names[j], float(self.importances[j])) for j in order]

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "feature_names": self.feature_names,
            "trees": [
                {
                    "feature": t[0].tolist(),
                    "threshold": t[1].tolist(),
                    "left": t[2].tolist(),
                    "right": t[3].tolist(),
                    "count0": t[4].tolist(),
                    "count1": t[5].tolist(),
                }
                for t in self.trees
            ],
            "importances": self.importances.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RandomForest":
        forest = cls(ForestSpec.from_dict(d["spec"]), d["feature_names"])
        forest.trees = [
            (
                np.asarray(t["feature"], np.int32),
                np.asarray(t["threshold"], np.float64),
                np.asarray(t["left"], np.int32),
                np.asarray(t["right"], np.int32),
                np.asarray(t["count0"], np.int32),
                np.asarray(t["count1"], np.int32),
            )
            for t in d["trees"]
        ]
        forest.importances = np.asarray(d["importances"], np.float64)
        return forest
