"""CART ensembles compiled with numba.

Each tree grows on a bootstrap sample (or a subsample drawn without
replacement) to unlimited depth (subject to ``min_leaf``), choosing the
best split among ``mtry`` randomly drawn features by squared-error
reduction. Honest trees re-estimate their leaf means on a held-out half of
the subsample. For 0/1 labels squared-error reduction
is proportional to Gini reduction, so classification reuses the regression
tree and its leaf means are class fractions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit


@njit(cache=True)
def _grow_tree(x, y, gorder, min_leaf, mtry, max_depth, seed, count, draw_boot):
    n, p = x.shape
    np.random.seed(seed)
    if draw_boot:
        boot = np.random.randint(0, n, n)
        count = np.zeros(n, dtype=np.int64)
        for i in range(n):
            count[boot[i]] += 1
    # sample slots: original record i owns slots first[i] .. first[i]+count[i]-1
    first = np.zeros(n, dtype=np.int64)
    acc = 0
    for i in range(n):
        first[i] = acc
        acc += count[i]
    nb = acc
    xb = np.empty((nb, p))
    yb = np.empty(nb)
    for i in range(n):
        for c in range(count[i]):
            yb[first[i] + c] = y[i]
            for f in range(p):
                xb[first[i] + c, f] = x[i, f]
    # presorted record order expands into sorted slot order in O(n p)
    order = np.empty((p, nb), dtype=np.int64)
    for f in range(p):
        k = 0
        for j in range(n):
            i = gorder[f, j]
            for c in range(count[i]):
                order[f, k] = first[i] + c
                k += 1

    cap = 2 * nb + 1
    feat = np.full(cap, -1, dtype=np.int64)
    thr = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    n_nodes = 1

    st_node = np.empty(cap, dtype=np.int64)
    st_s = np.empty(cap, dtype=np.int64)
    st_e = np.empty(cap, dtype=np.int64)
    st_d = np.empty(cap, dtype=np.int64)
    top = 0
    st_node[0] = 0
    st_s[0] = 0
    st_e[0] = nb
    st_d[0] = 0
    top = 1
    goes_left = np.zeros(nb, dtype=np.bool_)
    buf = np.empty(nb, dtype=np.int64)

    while top > 0:
        top -= 1
        node = st_node[top]
        s = st_s[top]
        e = st_e[top]
        depth = st_d[top]
        m = e - s
        total = 0.0
        ymin = np.inf
        ymax = -np.inf
        for i in range(s, e):
            v = yb[order[0, i]]
            total += v
            if v < ymin:
                ymin = v
            if v > ymax:
                ymax = v
        value[node] = total / m
        if m < 2 * min_leaf or ymin == ymax or (max_depth >= 0 and depth >= max_depth):
            continue

        perm = np.random.permutation(p)
        best_score = -np.inf
        best_f = -1
        best_pos = -1
        tried = 0
        for k in range(p):
            if tried >= mtry and best_f >= 0:
                break
            f = perm[k]
            tried += 1
            csum = 0.0
            for j in range(s, e - 1):
                idx = order[f, j]
                csum += yb[idx]
                nl = j - s + 1
                nr = m - nl
                if nl < min_leaf:
                    continue
                if nr < min_leaf:
                    break
                if xb[idx, f] == xb[order[f, j + 1], f]:
                    continue
                sr = total - csum
                score = csum * csum / nl + sr * sr / nr
                if score > best_score:
                    best_score = score
                    best_f = f
                    best_pos = j
        if best_f < 0:
            continue

        lo = xb[order[best_f, best_pos], best_f]
        hi = xb[order[best_f, best_pos + 1], best_f]
        cut = lo + (hi - lo) / 2.0
        if not (cut > lo and cut < hi):
            cut = lo
        for j in range(s, e):
            goes_left[order[best_f, j]] = j <= best_pos
        mid = best_pos + 1
        for f in range(p):
            a = s
            b = 0
            for j in range(s, e):
                idx = order[f, j]
                if goes_left[idx]:
                    order[f, a] = idx
                    a += 1
                else:
                    buf[b] = idx
                    b += 1
            for j in range(b):
                order[f, a + j] = buf[j]
        ln = n_nodes
        rn = n_nodes + 1
        n_nodes += 2
        feat[node] = best_f
        thr[node] = cut
        left[node] = ln
        right[node] = rn
        st_node[top] = rn
        st_s[top] = mid
        st_e[top] = e
        st_d[top] = depth + 1
        top += 1
        st_node[top] = ln
        st_s[top] = s
        st_e[top] = mid
        st_d[top] = depth + 1
        top += 1

    return feat[:n_nodes].copy(), thr[:n_nodes].copy(), left[:n_nodes].copy(), right[:n_nodes].copy(), value[:n_nodes].copy(), count


@njit(cache=True)
def _predict(x, offsets, feat, thr, left, right, value):
    n = x.shape[0]
    n_trees = offsets.shape[0] - 1
    out = np.zeros(n)
    for t in range(n_trees):
        base = offsets[t]
        for i in range(n):
            node = 0
            while feat[base + node] >= 0:
                if x[i, feat[base + node]] <= thr[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            out[i] += value[base + node]
    return out / n_trees


@njit(cache=True)
def _honest_values(xh, yh, feat, thr, left, right, value):
    """Re-estimate node means from held-out records.

    Nodes that receive no held-out record inherit their parent's estimate,
    so every leaf stays defined.
    """
    n_nodes = feat.shape[0]
    tot = np.zeros(n_nodes)
    cnt = np.zeros(n_nodes)
    for i in range(xh.shape[0]):
        node = 0
        while True:
            tot[node] += yh[i]
            cnt[node] += 1.0
            if feat[node] < 0:
                break
            if xh[i, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
    out = value.copy()
    if cnt[0] > 0:
        out[0] = tot[0] / cnt[0]
    # children always carry larger indices than their parent
    for node in range(n_nodes):
        if feat[node] < 0:
            continue
        for child in (left[node], right[node]):
            out[child] = tot[child] / cnt[child] if cnt[child] > 0 else out[node]
    return out


@dataclass(frozen=True)
class ForestParams:
    """Forest hyperparameters.

    The defaults grow bagged trees on bootstrap samples. Setting
    ``sample_fraction`` switches to subsampling without replacement, and
    ``honest=True`` additionally splits each subsample in half: one half
    chooses the splits, the other estimates the leaf values.
    """

    n_trees: int = 200
    min_leaf: int = 5
    mtry: int | None = None
    max_depth: int | None = None
    sample_fraction: float | None = None
    honest: bool = False

    def __post_init__(self):
        if self.sample_fraction is not None and not 0 < self.sample_fraction <= 1:
            raise ValueError("sample_fraction must lie in (0, 1]")
        if self.honest and self.sample_fraction is None:
            raise ValueError("honest forests need a sample_fraction")

    def min_records(self) -> int:
        """Smallest training set that leaves every tree room for one split."""
        need = 2 * self.min_leaf
        if self.honest:
            need *= 2
        if self.sample_fraction is not None:
            need = math.ceil(need / self.sample_fraction)
        return need

    @classmethod
    def honest_subsampled(cls, n_trees: int = 200) -> "ForestParams":
        """Half-sample subsampling, honest leaves and every feature tried at each split."""
        return cls(n_trees=n_trees, min_leaf=5, mtry=0, sample_fraction=0.5, honest=True)


@dataclass(frozen=True, eq=False)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    in_bag_counts: np.ndarray = field(repr=False)  # bootstrap multiplicity per training record

    def apply(self, x) -> np.ndarray:
        """Leaf index reached by each row."""
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape[0], dtype=np.int64)
        for i, row in enumerate(x):
            node = 0
            while self.feature[node] >= 0:
                node = self.left[node] if row[self.feature[node]] <= self.threshold[node] else self.right[node]
            out[i] = node
        return out


@dataclass(frozen=True, eq=False)
class ForestModelFit:
    trees: list
    task: str
    params: ForestParams
    mtry: int
    seed: int
    _flat: tuple = field(repr=False)

    def predict(self, x) -> np.ndarray:
        x = np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=float)))
        return _predict(x, *self._flat)


def default_mtry(p: int, task: str) -> int:
    return max(1, math.ceil(p / 3) if task == "regression" else math.ceil(math.sqrt(p)))


def fit_forest(x, y, params: ForestParams | None = None, seed: int = 0, task: str = "regression") -> ForestModelFit:
    """Fit a CART ensemble (bagged, or subsampled and optionally honest).

    Parameters
    ----------
    x : array (n, p)
    y : array (n,)
        Real targets, or 0/1 labels when ``task == "classification"``.
    params : ForestParams, optional
    seed : int
        Every tree draws its bootstrap and feature subsets from a seed
        spawned from this one, so fits are reproducible bit for bit.
    """
    params = params or ForestParams()
    x = np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=float)))
    if x.shape[0] == 1 and np.size(y) > 1:
        x = np.ascontiguousarray(x.T)
    y = np.ascontiguousarray(np.asarray(y, dtype=float))
    n, p = x.shape
    min_leaf = params.min_leaf
    grow_n = n if params.sample_fraction is None else int(n * params.sample_fraction)
    if params.honest:
        grow_n //= 2
    if grow_n < 2 * min_leaf:
        raise ValueError(f"forest needs at least {params.min_records()} records, got {n}")
    if params.mtry == 0:
        mtry = p
    else:
        mtry = params.mtry or default_mtry(p, task)
    seeds = np.random.SeedSequence(seed).generate_state(params.n_trees) % (2**31 - 1)
    depth = -1 if params.max_depth is None else params.max_depth
    gorder = np.ascontiguousarray(np.argsort(x, axis=0, kind="mergesort").T)
    trees = []
    no_counts = np.zeros(n, dtype=np.int64)
    for s in seeds:
        if params.sample_fraction is None:
            feat, thr, lft, rgt, val, boot = _grow_tree(x, y, gorder, min_leaf, mtry, depth, int(s), no_counts, True)
        else:
            sub = np.random.default_rng(int(s)).permutation(n)[:int(n * params.sample_fraction)]
            grow = sub[:grow_n] if params.honest else sub
            counts = np.zeros(n, dtype=np.int64)
            counts[grow] = 1
            feat, thr, lft, rgt, val, _ = _grow_tree(x, y, gorder, min_leaf, mtry, depth, int(s), counts, False)
            if params.honest:
                held = np.sort(sub[grow_n:])
                val = _honest_values(x[held], y[held], feat, thr, lft, rgt, val)
            boot = np.zeros(n, dtype=np.int64)
            boot[sub] = 1
        trees.append(Tree(feat, thr, lft, rgt, val, boot))
    offsets = np.zeros(len(trees) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([t.feature.size for t in trees])
    flat = (
        offsets,
        np.concatenate([t.feature for t in trees]),
        np.concatenate([t.threshold for t in trees]),
        np.concatenate([t.left for t in trees]),
        np.concatenate([t.right for t in trees]),
        np.concatenate([t.value for t in trees]),
    )
    return ForestModelFit(trees, task, params, mtry, seed, flat)


@njit(cache=True)
def _predict_oob(x, offsets, feat, thr, left, right, value, counts):
    n = x.shape[0]
    n_trees = offsets.shape[0] - 1
    out = np.zeros(n)
    used = np.zeros(n)
    for t in range(n_trees):
        base = offsets[t]
        for i in range(n):
            if counts[t, i] > 0:
                continue
            node = 0
            while feat[base + node] >= 0:
                if x[i, feat[base + node]] <= thr[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            out[i] += value[base + node]
            used[i] += 1.0
    return out, used


def oob_predict(fit: ForestModelFit, x_train) -> np.ndarray:
    """Out-of-bag predictions on the training rows (NaN where every tree saw the row)."""
    x = np.ascontiguousarray(np.atleast_2d(np.asarray(x_train, dtype=float)))
    counts = np.stack([t.in_bag_counts for t in fit.trees])
    if counts.shape[1] != x.shape[0]:
        raise ValueError("oob_predict needs the exact training matrix")
    out, used = _predict_oob(x, *fit._flat, counts)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(used > 0, out / used, np.nan)
