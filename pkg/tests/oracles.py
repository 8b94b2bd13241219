"""Independent reference implementations used as test oracles.

Everything here is deliberately straight-line Python with no shared code
paths into the package internals it checks: the replay reference walks
case objects one by one, the AUC reference counts all positive/negative
pairs, and the gradient reference differentiates a locally re-stated loss
by central finite differences.
"""

from __future__ import annotations

import math

import numpy as np

from rtbsim.bidding import RandBid, compute_bid


def reference_simulate(cases, strategy, budget, pctr=None):
    """Straight-line replay: returns (wins, clicks, convs, spent_milli)."""
    rng = strategy.stream() if isinstance(strategy, RandBid) else None
    wins = clicks = convs = 0
    spent = 0
    for i, case in enumerate(cases):
        if spent >= budget:
            break
        p = None if pctr is None else float(pctr[i])
        bid = compute_bid(strategy, pctr=p, rng=rng)
        if bid > case.paying_price and bid > case.floor_price:
            wins += 1
            spent += case.paying_price
            if case.clicked:
                clicks += 1
            if case.converted:
                convs += 1
    return wins, clicks, convs, spent


def pairwise_auc(scores, labels) -> float:
    """O(n^2) Mann-Whitney count with half credit for ties."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for sp in pos:
        for sn in neg:
            if sp > sn:
                total += 1.0
            elif sp == sn:
                total += 0.5
    return total / (len(pos) * len(neg))


def reference_lr_loss(weights, l2, indptr, indices, labels) -> float:
    """Mean cross-entropy + (l2/2)||w[1:]||^2, restated from scratch."""
    n = len(labels)
    total = 0.0
    for i in range(n):
        m = weights[0]
        for j in range(indptr[i], indptr[i + 1]):
            m += weights[indices[j]]
        p = 1.0 / (1.0 + math.exp(-m)) if m >= 0 else math.exp(m) / (1.0 + math.exp(m))
        p = min(max(p, 1e-300), 1.0 - 1e-16)
        total += -(labels[i] * math.log(p) + (1.0 - labels[i]) * math.log(1.0 - p))
    reg = 0.5 * l2 * sum(w * w for w in weights[1:])
    return total / n + reg


def finite_difference_gradient(weights, l2, indptr, indices, labels, coords, h=1e-5):
    """Central differences of :func:`reference_lr_loss` at chosen coords."""
    grad = np.zeros(len(coords))
    for k, c in enumerate(coords):
        wp = weights.copy()
        wm = weights.copy()
        wp[c] += h
        wm[c] -= h
        grad[k] = (
            reference_lr_loss(wp, l2, indptr, indices, labels)
            - reference_lr_loss(wm, l2, indptr, indices, labels)
        ) / (2.0 * h)
    return grad
