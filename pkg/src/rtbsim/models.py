"""CTR estimators and their evaluation.

Two model families share one predict contract: an L2-regularized logistic
regression trained by SGD on sparse one-hot rows, and gradient-boosted
regression trees (squared-error boosting on the 0/1 click label) on dense
encoded rows.  AUC here is the Mann-Whitney rank statistic with half
credit for ties, so it agrees exactly with a pairwise count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .features import (
    CategoryEncodings,
    SparseBatch,
    Vocabulary,
    binarize_cases,
    densify,
)

__all__ = [
    "LrHyper",
    "LrModel",
    "GbrtHyper",
    "Tree",
    "GbrtModel",
    "EvalReport",
    "CtrScorer",
    "NonBinaryLabel",
    "DivergenceDetected",
    "InsufficientData",
    "DimensionMismatch",
    "SingleClassInput",
    "EmptyInput",
    "train_lr",
    "lr_gradient",
    "lr_loss",
    "train_gbrt",
    "predict",
    "auc",
    "rmse",
    "evaluate",
]

LR_CLAMP = 1e-12
GBRT_CLAMP = 1e-6


class NonBinaryLabel(ValueError):
    pass


class DivergenceDetected(RuntimeError):
    pass


class InsufficientData(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


class SingleClassInput(ValueError):
    pass


class EmptyInput(ValueError):
    pass


def _check_labels(labels: np.ndarray) -> None:
    if labels.size == 0:
        raise EmptyInput("need at least one example")
    if not np.isin(labels, (0.0, 1.0)).all():
        raise NonBinaryLabel("labels must be 0 or 1")


# ---------------------------------------------------------------------------
# Logistic regression
# ---------------------------------------------------------------------------

@dataclass
class LrHyper:
    learning_rate: float = 0.01  # decayed as lr / sqrt(t)
    l2: float = 1e-6
    epochs: int = 1
    seed: int = 0


@dataclass
class LrModel:
    weights: np.ndarray  # index 0 is the bias
    hyper: LrHyper

    @property
    def dimension(self) -> int:
        return len(self.weights)


def train_lr(batch: SparseBatch, hyper: LrHyper | None = None) -> LrModel:
    """SGD over cross-entropy with an L2 penalty on the non-bias weights.

    The L2 term is applied as a proximal shrink (w /= 1 + lr*l2) after each
    gradient step, which stays stable for arbitrarily large l2: in the
    l2 -> inf limit the non-bias weights go to zero instead of diverging.
    Deterministic given the seed; non-finite weights abort.
    """
    hyper = hyper or LrHyper()
    _check_labels(batch.labels)
    rng = np.random.Generator(np.random.PCG64(hyper.seed))
    n = len(batch)
    v = np.zeros(batch.dimension - 1, dtype=np.float64)
    w0, s, t = 0.0, 1.0, 0
    for _ in range(hyper.epochs):
        order = rng.permutation(n).astype(np.int64)
        w0, s, t = kernels.sgd_epoch(
            batch.indptr, batch.indices, batch.labels, v, order,
            w0, s, t, hyper.learning_rate, hyper.l2,
        )
        if not (math.isfinite(w0) and math.isfinite(s) and np.isfinite(v).all()):
            raise DivergenceDetected("non-finite weights during SGD")
    weights = np.empty(batch.dimension, dtype=np.float64)
    weights[0] = w0
    weights[1:] = v * s
    if not np.isfinite(weights).all():
        raise DivergenceDetected("non-finite weights after training")
    return LrModel(weights, hyper)


def _margins(model: LrModel, batch: SparseBatch) -> np.ndarray:
    if batch.dimension != model.dimension:
        raise DimensionMismatch(
            f"batch dimension {batch.dimension} != model dimension {model.dimension}"
        )
    n = len(batch)
    row_ids = np.repeat(np.arange(n), np.diff(batch.indptr))
    m = np.bincount(row_ids, weights=model.weights[batch.indices], minlength=n)
    return m + model.weights[0]


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def lr_loss(model: LrModel, batch: SparseBatch) -> float:
    """Mean cross-entropy plus (l2/2)*||w[1:]||^2; the quantity SGD descends."""
    _check_labels(batch.labels)
    p = np.clip(_sigmoid(_margins(model, batch)), 1e-300, 1.0 - 1e-16)
    ce = -np.mean(batch.labels * np.log(p) + (1.0 - batch.labels) * np.log(1.0 - p))
    reg = 0.5 * model.hyper.l2 * float(model.weights[1:] @ model.weights[1:])
    return float(ce + reg)


def lr_gradient(model: LrModel, batch: SparseBatch) -> np.ndarray:
    """Analytic gradient of :func:`lr_loss` with respect to the weights."""
    _check_labels(batch.labels)
    n = len(batch)
    p = _sigmoid(_margins(model, batch))
    err = (p - batch.labels) / n
    grad = np.zeros(model.dimension, dtype=np.float64)
    grad[0] = err.sum()
    row_ids = np.repeat(np.arange(n), np.diff(batch.indptr))
    np.add.at(grad, batch.indices, err[row_ids])
    grad[1:] += model.hyper.l2 * model.weights[1:]
    return grad


# ---------------------------------------------------------------------------
# Gradient-boosted regression trees
# ---------------------------------------------------------------------------

@dataclass
class GbrtHyper:
    rounds: int = 50
    shrinkage: float = 0.05
    max_depth: int = 5
    min_leaf: int = 20


@dataclass
class Tree:
    """Flat node arrays; left < 0 marks a leaf whose output is value."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def __eq__(self, other) -> bool:
        return isinstance(other, Tree) and all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("feature", "threshold", "left", "right", "value")
        )


@dataclass
class GbrtModel:
    base: float
    trees: list[Tree]
    hyper: GbrtHyper
    train_mse: list[float] = field(default_factory=list)  # after each round


def train_gbrt(x: np.ndarray, y: np.ndarray, hyper: GbrtHyper | None = None) -> GbrtModel:
    """Fit one depth-limited tree per round to the squared-loss residuals.

    Split search is exact greedy over midpoints of consecutive distinct
    values, ties broken toward the lowest feature then lowest threshold.
    Training MSE is recorded per round and is non-increasing.
    """
    hyper = hyper or GbrtHyper()
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_labels(y)
    if hyper.min_leaf < 1:
        raise ValueError("min_leaf must be >= 1")
    if len(y) < hyper.min_leaf:
        raise InsufficientData(f"need at least min_leaf={hyper.min_leaf} examples, got {len(y)}")
    sorted_ids = np.argsort(x, axis=0, kind="stable").T.copy()
    base = float(np.mean(y))
    pred = np.full(len(y), base)
    trees: list[Tree] = []
    mse: list[float] = []
    for _ in range(hyper.rounds):
        resid = y - pred
        tree = Tree(*kernels.grow_tree(x, sorted_ids, resid, hyper.min_leaf, hyper.max_depth))
        trees.append(tree)
        pred = pred + hyper.shrinkage * _apply(tree, x)
        mse.append(float(np.mean((y - pred) ** 2)))
    return GbrtModel(base, trees, hyper, mse)


def _apply(tree: Tree, x: np.ndarray) -> np.ndarray:
    return kernels.apply_tree(x, tree.feature, tree.threshold, tree.left, tree.right, tree.value)


# ---------------------------------------------------------------------------
# Unified prediction
# ---------------------------------------------------------------------------

def predict(model, features):
    """Predicted click probability, strictly inside (0, 1).

    LR takes a sparse index vector or a :class:`SparseBatch`; GBRT takes a
    dense vector or matrix.  Scalar in, scalar out; batch in, array out.
    """
    if isinstance(model, LrModel):
        if isinstance(features, SparseBatch):
            p = _sigmoid(_margins(model, features))
            return np.clip(p, LR_CLAMP, 1.0 - LR_CLAMP)
        idx = np.asarray(features, dtype=np.int64)
        if idx.size and idx.max() >= model.dimension:
            raise DimensionMismatch(f"feature index {idx.max()} out of range")
        m = model.weights[0] + model.weights[idx].sum()
        p = float(_sigmoid(np.array([m]))[0])
        return float(np.clip(p, LR_CLAMP, 1.0 - LR_CLAMP))
    if isinstance(model, GbrtModel):
        arr = np.asarray(features, dtype=np.float64)
        single = arr.ndim == 1
        mat = np.ascontiguousarray(arr.reshape(1, -1) if single else arr)
        if model.trees and mat.shape[1] <= int(max(t.feature.max(initial=-1) for t in model.trees)):
            raise DimensionMismatch("dense vector shorter than tree feature slots")
        total = np.full(mat.shape[0], model.base)
        for tree in model.trees:
            total += model.hyper.shrinkage * _apply(tree, mat)
        out = np.clip(total, GBRT_CLAMP, 1.0 - GBRT_CLAMP)
        return float(out[0]) if single else out
    raise TypeError(f"unsupported model type {type(model).__name__}")


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def auc(scores, labels) -> float:
    """P(score+ > score-) + 0.5 P(score+ = score-) via average ranks."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.size == 0:
        raise EmptyInput("auc of empty input")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClassInput("auc needs at least one positive and one negative label")
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    ranks = np.empty(len(s), dtype=np.float64)
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and s[j + 1] == s[i]:
            j += 1
        ranks[i:j + 1] = 0.5 * (i + j) + 1.0  # average of 1-based ranks i+1..j+1
        i = j + 1
    pos_rank_sum = ranks[np.asarray(labels)[order] == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def rmse(predictions, labels) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.size == 0:
        raise EmptyInput("rmse of empty input")
    return float(np.sqrt(np.mean((p - y) ** 2)))


@dataclass
class EvalReport:
    auc: float
    rmse: float
    n: int

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"auc={self.auc!r}\nrmse={self.rmse!r}\nn={self.n}\n")


def evaluate(scores, labels) -> EvalReport:
    return EvalReport(auc(scores, labels), rmse(scores, labels), int(len(labels)))


# ---------------------------------------------------------------------------
# Scoring bundle and serialization
# ---------------------------------------------------------------------------

@dataclass
class CtrScorer:
    """A trained model with the feature pipeline needed to score raw cases."""

    kind: str  # "lr" | "gbrt"
    model: LrModel | GbrtModel
    vocabulary: Vocabulary | None = None
    encodings: CategoryEncodings | None = None

    def score_cases(self, cases) -> np.ndarray:
        if self.kind == "lr":
            batch = binarize_cases(cases, self.vocabulary)
            return predict(self.model, batch)
        x = np.stack([densify(c.record, self.encodings) for c in cases])
        return predict(self.model, x)

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        if self.kind == "lr":
            self.vocabulary.save(directory / "vocab.txt")
            save_lr(self.model, directory / "model_lr.txt")
        else:
            self.encodings.save(directory / "encodings.txt")
            save_gbrt(self.model, directory / "model_gbrt.txt")

    @classmethod
    def load(cls, directory, kind: str) -> "CtrScorer":
        directory = Path(directory)
        if kind == "lr":
            return cls("lr", load_lr(directory / "model_lr.txt"),
                       vocabulary=Vocabulary.load(directory / "vocab.txt"))
        if kind == "gbrt":
            return cls("gbrt", load_gbrt(directory / "model_gbrt.txt"),
                       encodings=CategoryEncodings.load(directory / "encodings.txt"))
        raise ValueError(f"unknown model kind {kind!r}")


def save_lr(model: LrModel, path) -> None:
    h = model.hyper
    with open(path, "w", encoding="utf-8") as f:
        f.write("#rtbsim-lr v1\n")
        f.write(f"dimension\t{model.dimension}\n")
        f.write(f"hyper\tlearning_rate={h.learning_rate!r}\tl2={h.l2!r}\tepochs={h.epochs}\tseed={h.seed}\n")
        for i in np.flatnonzero(model.weights):
            f.write(f"{i}\t{float(model.weights[i])!r}\n")
        if model.weights[0] == 0.0:
            f.write(f"0\t{0.0!r}\n")


def load_lr(path) -> LrModel:
    with open(path, encoding="utf-8") as f:
        if f.readline().strip() != "#rtbsim-lr v1":
            raise ValueError("unsupported LR model file")
        dim = int(f.readline().split("\t")[1])
        hyper_parts = f.readline().rstrip("\n").split("\t")[1:]
        kv = dict(p.split("=", 1) for p in hyper_parts)
        hyper = LrHyper(float(kv["learning_rate"]), float(kv["l2"]), int(kv["epochs"]), int(kv["seed"]))
        w = np.zeros(dim, dtype=np.float64)
        for line in f:
            idx, wv = line.split("\t")
            w[int(idx)] = float(wv)
    return LrModel(w, hyper)


def _write_tree_preorder(f, tree: Tree, node: int) -> None:
    if tree.left[node] < 0:
        f.write(f"leaf\t{float(tree.value[node])!r}\n")
    else:
        f.write(f"split\t{tree.feature[node]}\t{float(tree.threshold[node])!r}\n")
        _write_tree_preorder(f, tree, int(tree.left[node]))
        _write_tree_preorder(f, tree, int(tree.right[node]))


def _read_tree_preorder(lines: list[str], pos: int, nodes: list) -> tuple[int, int]:
    parts = lines[pos].split("\t")
    my_id = len(nodes)
    nodes.append(None)
    if parts[0] == "leaf":
        nodes[my_id] = (-1, 0.0, -1, -1, float(parts[1]))
        return my_id, pos + 1
    left_id, pos = _read_tree_preorder(lines, pos + 1, nodes)
    right_id, pos = _read_tree_preorder(lines, pos, nodes)
    nodes[my_id] = (int(parts[1]), float(parts[2]), left_id, right_id, 0.0)
    return my_id, pos


def save_gbrt(model: GbrtModel, path) -> None:
    h = model.hyper
    with open(path, "w", encoding="utf-8") as f:
        f.write("#rtbsim-gbrt v1\n")
        f.write(f"base\t{model.base!r}\n")
        f.write(f"hyper\trounds={h.rounds}\tshrinkage={h.shrinkage!r}\tmax_depth={h.max_depth}\tmin_leaf={h.min_leaf}\n")
        for tree in model.trees:
            f.write(f"tree\t{len(tree.feature)}\n")
            _write_tree_preorder(f, tree, 0)


def load_gbrt(path) -> GbrtModel:
    with open(path, encoding="utf-8") as f:
        if f.readline().strip() != "#rtbsim-gbrt v1":
            raise ValueError("unsupported GBRT model file")
        base = float(f.readline().split("\t")[1])
        hyper_parts = f.readline().rstrip("\n").split("\t")[1:]
        kv = dict(p.split("=", 1) for p in hyper_parts)
        hyper = GbrtHyper(int(kv["rounds"]), float(kv["shrinkage"]), int(kv["max_depth"]), int(kv["min_leaf"]))
        lines = [ln.rstrip("\n") for ln in f]
    trees: list[Tree] = []
    pos = 0
    while pos < len(lines):
        if not lines[pos].startswith("tree\t"):
            raise ValueError(f"expected a tree header, got {lines[pos]!r}")
        pos += 1
        nodes: list = []
        _, pos = _read_tree_preorder(lines, pos, nodes)
        trees.append(Tree(
            feature=np.array([n[0] for n in nodes], dtype=np.int64),
            threshold=np.array([n[1] for n in nodes], dtype=np.float64),
            left=np.array([n[2] for n in nodes], dtype=np.int64),
            right=np.array([n[3] for n in nodes], dtype=np.int64),
            value=np.array([n[4] for n in nodes], dtype=np.float64),
        ))
    return GbrtModel(base, trees, hyper)


def write_scores_csv(bid_ids, scores, path) -> None:
    """Decoupled-evaluation output: one (bid_id, pctr) row per case."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("bid_id,pctr\n")
        for bid_id, s in zip(bid_ids, scores):
            f.write(f"{bid_id},{float(s)!r}\n")
