"""Hot numeric kernels with two interchangeable backends.

Every kernel here exists twice: a loop form compiled with numba's ``@njit``
and a pure-numpy form.  The loop form is the default; setting the
environment variable ``RTBSIM_NO_NUMBA=1`` (or running without numba
installed) selects the numpy form.  The two backends are bit-identical for
every kernel: integer arithmetic is exact, and the float accumulations are
arranged so both sides add in the same order (``np.cumsum``/``np.bincount``
accumulate sequentially, matching the scalar loops).  The test suite
asserts this equality, and ``benchmarks/bench_kernels.py`` compares their
speed.

The backend flag changes performance only, never results, so it is safe to
flip between runs of the same experiment.
"""

from __future__ import annotations

import math
import os

import numpy as np

ENV_FLAG = "RTBSIM_NO_NUMBA"

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


def _flag_disabled() -> bool:
    return os.environ.get(ENV_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


NUMBA_ENABLED = HAVE_NUMBA and not _flag_disabled()


def _njit(fn):
    """Compile with numba when available, otherwise return fn unchanged."""
    if HAVE_NUMBA:
        return numba.njit(cache=True)(fn)
    return fn


# ---------------------------------------------------------------------------
# Auction replay: sequential budget-constrained win scan.
# ---------------------------------------------------------------------------

def _win_scan_py(bids, paying, floor, budget):
    # Strict second-price win rule: bid must beat both the logged market
    # price and the floor.  Budget check is pre-bid; the final win may
    # overshoot the budget by one paying price.
    n = bids.shape[0]
    win = np.zeros(n, dtype=np.uint8)
    spent = np.int64(0)
    exhausted = np.int64(-1)
    for i in range(n):
        if spent >= budget:
            exhausted = i
            break
        b = bids[i]
        if b > paying[i] and b > floor[i]:
            win[i] = 1
            spent += paying[i]
    return win, spent, exhausted


win_scan_loop = _njit(_win_scan_py)


def win_scan_numpy(bids, paying, floor, budget):
    """Vectorized equivalent of the sequential scan.

    Because bids do not adapt mid-run, the winners are exactly the eligible
    cases whose cumulative eligible spend before them is under budget; that
    prefix structure makes a cumsum formulation exact.
    """
    elig = (bids > paying) & (bids > floor)
    pe = np.where(elig, paying, 0).astype(np.int64)
    cs = np.cumsum(pe)
    spent_before = cs - pe
    win = (elig & (spent_before < budget)).astype(np.uint8)
    spent = np.int64(pe[win.astype(bool)].sum())
    over = spent_before >= budget
    exhausted = np.int64(np.argmax(over)) if over.any() else np.int64(-1)
    return win, spent, exhausted


win_scan = win_scan_loop if NUMBA_ENABLED else win_scan_numpy


# ---------------------------------------------------------------------------
# Logistic regression: one SGD epoch over CSR one-hot rows.
# ---------------------------------------------------------------------------

def _sgd_epoch_py(indptr, indices, labels, v, order, w0, s, t0, lr0, lam):
    # Weights are kept in scaled form w[1:] = s * v so the L2 shrink
    # (a proximal step, w /= 1 + lr*lam) costs O(1) per example.  Feature
    # index 0 is the unregularized bias, stored separately in w0.
    t = t0
    for k in range(order.shape[0]):
        i = order[k]
        t += 1
        lr = lr0 / math.sqrt(t)
        m = w0
        for j in range(indptr[i], indptr[i + 1]):
            m += s * v[indices[j] - 1]
        if m >= 0.0:
            p = 1.0 / (1.0 + math.exp(-m))
        else:
            em = math.exp(m)
            p = em / (1.0 + em)
        g = p - labels[i]
        w0 -= lr * g
        gu = lr * g / s
        for j in range(indptr[i], indptr[i + 1]):
            v[indices[j] - 1] -= gu
        s /= 1.0 + lr * lam
        if s < 1e-130:
            for q in range(v.shape[0]):
                v[q] *= s
            s = 1.0
    return w0, s, t


sgd_epoch_loop = _njit(_sgd_epoch_py)
sgd_epoch_python = _sgd_epoch_py
sgd_epoch = sgd_epoch_loop if NUMBA_ENABLED else sgd_epoch_python


# ---------------------------------------------------------------------------
# Regression tree growth: exact greedy splits on presorted columns.
# ---------------------------------------------------------------------------

def _grow_tree_py(x, sorted_ids, resid, min_leaf, max_depth):
    # Level-wise growth.  One pass over each presorted column per level
    # evaluates every candidate split of every frontier node; candidate
    # thresholds are midpoints between consecutive distinct values.
    n, nfeat = x.shape
    max_nodes = 2 ** (max_depth + 1) - 1
    feat = np.full(max_nodes, -1, dtype=np.int64)
    thr = np.zeros(max_nodes, dtype=np.float64)
    left = np.full(max_nodes, -1, dtype=np.int64)
    right = np.full(max_nodes, -1, dtype=np.int64)
    value = np.zeros(max_nodes, dtype=np.float64)

    node_of = np.zeros(n, dtype=np.int64)
    cnt = np.zeros(max_nodes, dtype=np.int64)
    ssum = np.zeros(max_nodes, dtype=np.float64)
    best_score = np.zeros(max_nodes, dtype=np.float64)
    best_feat = np.zeros(max_nodes, dtype=np.int64)
    best_thr = np.zeros(max_nodes, dtype=np.float64)
    run_cnt = np.zeros(max_nodes, dtype=np.int64)
    run_sum = np.zeros(max_nodes, dtype=np.float64)
    prev_val = np.zeros(max_nodes, dtype=np.float64)
    started = np.zeros(max_nodes, dtype=np.uint8)

    n_nodes = 1
    level_lo = 0
    level_hi = 1
    for depth in range(max_depth + 1):
        for nd in range(level_lo, level_hi):
            cnt[nd] = 0
            ssum[nd] = 0.0
            best_score[nd] = -np.inf
            best_feat[nd] = -1
        for i in range(n):
            nd = node_of[i]
            if level_lo <= nd < level_hi:
                cnt[nd] += 1
                ssum[nd] += resid[i]

        if depth < max_depth:
            for f in range(nfeat):
                for nd in range(level_lo, level_hi):
                    run_cnt[nd] = 0
                    run_sum[nd] = 0.0
                    started[nd] = 0
                for k in range(n):
                    i = sorted_ids[f, k]
                    nd = node_of[i]
                    if nd < level_lo or nd >= level_hi:
                        continue
                    if cnt[nd] < 2 * min_leaf:
                        continue
                    xv = x[i, f]
                    if started[nd] == 1 and xv != prev_val[nd]:
                        nl = run_cnt[nd]
                        nr = cnt[nd] - nl
                        if nl >= min_leaf and nr >= min_leaf:
                            sl = run_sum[nd]
                            sr = ssum[nd] - sl
                            sc = sl * sl / nl + sr * sr / nr
                            if sc > best_score[nd]:
                                best_score[nd] = sc
                                best_feat[nd] = f
                                best_thr[nd] = 0.5 * (prev_val[nd] + xv)
                    run_cnt[nd] += 1
                    run_sum[nd] += resid[i]
                    prev_val[nd] = xv
                    started[nd] = 1

        any_split = False
        for nd in range(level_lo, level_hi):
            parent_sc = ssum[nd] * ssum[nd] / cnt[nd]
            if best_feat[nd] >= 0 and best_score[nd] > parent_sc:
                feat[nd] = best_feat[nd]
                thr[nd] = best_thr[nd]
                left[nd] = n_nodes
                right[nd] = n_nodes + 1
                n_nodes += 2
                any_split = True
            else:
                left[nd] = -1
                value[nd] = ssum[nd] / cnt[nd]
        if any_split:
            for i in range(n):
                nd = node_of[i]
                if level_lo <= nd < level_hi and left[nd] >= 0:
                    if x[i, feat[nd]] <= thr[nd]:
                        node_of[i] = left[nd]
                    else:
                        node_of[i] = right[nd]
        level_lo = level_hi
        level_hi = n_nodes
        if not any_split:
            break
    return feat[:n_nodes], thr[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


grow_tree_loop = _njit(_grow_tree_py)


def grow_tree_numpy(x, sorted_ids, resid, min_leaf, max_depth):
    """Vectorized twin of the loop kernel (same splits, bit for bit)."""
    n, nfeat = x.shape
    max_nodes = 2 ** (max_depth + 1) - 1
    feat = np.full(max_nodes, -1, dtype=np.int64)
    thr = np.zeros(max_nodes, dtype=np.float64)
    left = np.full(max_nodes, -1, dtype=np.int64)
    right = np.full(max_nodes, -1, dtype=np.int64)
    value = np.zeros(max_nodes, dtype=np.float64)

    node_of = np.zeros(n, dtype=np.int64)
    n_nodes = 1
    level_lo = 0
    level_hi = 1
    for depth in range(max_depth + 1):
        cnt = np.bincount(node_of, minlength=max_nodes)
        ssum = np.bincount(node_of, weights=resid, minlength=max_nodes)
        best_score = np.full(max_nodes, -np.inf)
        best_feat = np.full(max_nodes, -1, dtype=np.int64)
        best_thr = np.zeros(max_nodes)

        if depth < max_depth:
            for f in range(nfeat):
                ids = sorted_ids[f]
                nds = node_of[ids]
                for nd in range(level_lo, level_hi):
                    n_nd = cnt[nd]
                    if n_nd < 2 * min_leaf:
                        continue
                    sub = ids[nds == nd]
                    vals = x[sub, f]
                    cum = np.cumsum(resid[sub])
                    total = ssum[nd]
                    nl = np.arange(1, n_nd)
                    valid = (vals[1:] != vals[:-1]) & (nl >= min_leaf) & (n_nd - nl >= min_leaf)
                    if not valid.any():
                        continue
                    sl = cum[:-1]
                    sr = total - sl
                    sc = sl * sl / nl + sr * sr / (n_nd - nl)
                    sc = np.where(valid, sc, -np.inf)
                    k = int(np.argmax(sc))
                    if sc[k] > best_score[nd]:
                        best_score[nd] = sc[k]
                        best_feat[nd] = f
                        best_thr[nd] = 0.5 * (vals[k] + vals[k + 1])

        any_split = False
        for nd in range(level_lo, level_hi):
            parent_sc = ssum[nd] * ssum[nd] / cnt[nd]
            if best_feat[nd] >= 0 and best_score[nd] > parent_sc:
                feat[nd] = best_feat[nd]
                thr[nd] = best_thr[nd]
                left[nd] = n_nodes
                right[nd] = n_nodes + 1
                n_nodes += 2
                any_split = True
            else:
                left[nd] = -1
                value[nd] = ssum[nd] / cnt[nd]
        if any_split:
            frontier = (node_of >= level_lo) & (node_of < level_hi) & (left[node_of] >= 0)
            go_left = x[np.arange(n), feat[node_of]] <= thr[node_of]
            node_of = np.where(frontier & go_left, left[node_of],
                               np.where(frontier, right[node_of], node_of))
        level_lo = level_hi
        level_hi = n_nodes
        if not any_split:
            break
    return feat[:n_nodes], thr[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


grow_tree = grow_tree_loop if NUMBA_ENABLED else grow_tree_numpy


def _apply_tree_py(x, feat, thr, left, right, value):
    n = x.shape[0]
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        nd = 0
        while left[nd] >= 0:
            if x[i, feat[nd]] <= thr[nd]:
                nd = left[nd]
            else:
                nd = right[nd]
        out[i] = value[nd]
    return out


apply_tree_loop = _njit(_apply_tree_py)


def apply_tree_numpy(x, feat, thr, left, right, value):
    n = x.shape[0]
    nd = np.zeros(n, dtype=np.int64)
    rows = np.arange(n)
    while True:
        internal = left[nd] >= 0
        if not internal.any():
            break
        xv = x[rows, feat[nd]]
        go_left = xv <= thr[nd]
        nd = np.where(internal & go_left, left[nd], np.where(internal, right[nd], nd))
    return value[nd]


apply_tree = apply_tree_loop if NUMBA_ENABLED else apply_tree_numpy


def warmup() -> None:
    """Trigger JIT compilation of every kernel on tiny inputs."""
    bids = np.array([5, 5], dtype=np.int64)
    pay = np.array([1, 2], dtype=np.int64)
    flr = np.array([0, 0], dtype=np.int64)
    win_scan(bids, pay, flr, np.int64(100))
    indptr = np.array([0, 1, 2], dtype=np.int64)
    indices = np.array([1, 2], dtype=np.int32)
    labels = np.array([0.0, 1.0])
    v = np.zeros(2)
    order = np.array([0, 1], dtype=np.int64)
    sgd_epoch(indptr, indices, labels, v, order, 0.0, 1.0, 0, 0.01, 1e-6)
    x = np.array([[0.0], [1.0], [2.0], [3.0]])
    sids = np.argsort(x, axis=0, kind="stable").T.copy()
    r = np.array([0.0, 0.0, 1.0, 1.0])
    tree = grow_tree(x, sids, r, 1, 2)
    apply_tree(x, *tree)
