"""Retrieval metrics, linear baselines and node classification."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from kbmap.skipgram import EmbeddingTable


def cosine_scores(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Cosine of ``query`` against every row; a zero-norm operand scores 0."""
    dots = matrix @ query
    norms = np.linalg.norm(matrix, axis=1) * np.linalg.norm(query)
    out = np.zeros(len(matrix))
    ok = norms > 0
    out[ok] = dots[ok] / norms[ok]
    return out


def rank_order(scores: np.ndarray, labels: Sequence[str]) -> np.ndarray:
    """Indices sorted by descending score, ties by ascending label."""
    return np.lexsort((np.asarray(labels, dtype=str), -np.asarray(scores))).astype(np.int64)


def gold_rank(scores: np.ndarray, labels: Sequence[str], gold: int) -> int:
    """1-based rank of ``gold`` under the same ordering as ``rank_order``."""
    s = scores[gold]
    higher = int(np.count_nonzero(scores > s))
    tied = np.flatnonzero(scores == s)
    before = sum(1 for i in tied if labels[i] < labels[gold])
    return higher + before + 1


@dataclass(frozen=True)
class RankedResult:
    query: int
    gold: str
    rank: int


@dataclass
class MetricsReport:
    mrr: float
    acc_at: dict[int, float]
    n_queries: int
    results: list[RankedResult] | None = None

    def machine_lines(self) -> list[str]:
        lines = [f"mrr\t{self.mrr:.6f}"]
        lines += [f"acc@{k}\t{v:.6f}" for k, v in sorted(self.acc_at.items())]
        lines.append(f"n_queries\t{self.n_queries}")
        return lines

    def table(self) -> str:
        rows = [("MRR", f"{self.mrr:.4f}")]
        rows += [(f"Acc@{k}", f"{v:.4f}") for k, v in sorted(self.acc_at.items())]
        rows.append(("queries", str(self.n_queries)))
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)


def evaluate_retrieval(
    predictions: np.ndarray,
    golds: Sequence[str],
    index: EmbeddingTable,
    ks: Sequence[int] = (1, 10, 20, 100),
) -> MetricsReport:
    predictions = np.atleast_2d(np.asarray(predictions, dtype=np.float64))
    if len(predictions) != len(golds):
        raise ValueError(f"{len(predictions)} predictions but {len(golds)} golds")
    if not len(golds):
        raise ValueError("no queries")
    for g in golds:
        if g not in index:
            raise KeyError(f"gold entity {g!r} is not in the index")
    results = []
    for q, (y, g) in enumerate(zip(predictions, golds)):
        scores = cosine_scores(index.vectors, y)
        results.append(RankedResult(q, g, gold_rank(scores, index.labels, index.index[g])))
    ranks = np.array([r.rank for r in results])
    return MetricsReport(
        mrr=float(np.mean(1.0 / ranks)),
        acc_at={int(k): float(np.mean(ranks <= k)) for k in ks},
        n_queries=len(ranks),
        results=results,
    )


def avg_vector_baseline(tokens: Sequence[str], word_space: EmbeddingTable) -> np.ndarray:
    known = [word_space[t] for t in tokens if t in word_space]
    if not known:
        raise KeyError("every token is out of vocabulary")
    return np.mean(known, axis=0)


def least_squares_map(X, Y, ridge: float = 1e-6) -> np.ndarray:
    """Ridge-regularised least squares via the normal equations (Cholesky solve)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows, Y has {Y.shape[0]}")
    if X.shape[0] < 1:
        raise ValueError("need at least one row")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    gram = X.T @ X + ridge * np.eye(X.shape[1])
    return scipy.linalg.solve(gram, X.T @ Y, assume_a="pos")


def ridge_objective(X, Y, A, ridge: float) -> float:
    r = X @ A - Y
    return float(np.sum(r * r) + ridge * np.sum(A * A))


# ------------------------------------------------------ node classification


class LinearSVM:
    """One-vs-rest linear SVM: hinge loss + L2, plain SGD with a decaying step.

    Step size follows ``eta0 / (1 + eta0 * reg * t)``. The bias is not regularised.
    """

    def __init__(self, reg: float = 1e-4, epochs: int = 100, eta0: float = 0.1, seed: int = 0):
        self.reg = reg
        self.epochs = epochs
        self.eta0 = eta0
        self.seed = seed

    def fit(self, X, y) -> "LinearSVM":
        X = np.asarray(X, dtype=np.float64)
        self.classes_ = np.array(sorted(set(y)))
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        Y = np.where(np.asarray(y)[:, None] == self.classes_[None, :], 1.0, -1.0)
        n, d = X.shape
        W = np.zeros((len(self.classes_), d))
        b = np.zeros(len(self.classes_))
        rng = np.random.default_rng(self.seed)
        t = 0
        for _ in range(self.epochs):
            for i in rng.permutation(n):
                eta = self.eta0 / (1.0 + self.eta0 * self.reg * t)
                margin = Y[i] * (W @ X[i] + b)
                active = margin < 1.0
                W *= 1.0 - eta * self.reg
                W[active] += eta * Y[i, active, None] * X[i][None, :]
                b[active] += eta * Y[i, active]
                t += 1
        self.W, self.b = W, b
        return self

    def decision_function(self, X):
        return np.asarray(X, dtype=np.float64) @ self.W.T + self.b

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


def stratified_split(labels: Sequence, train_ratio: float, seed: int):
    """Per-class seeded shuffle; each class contributes round(ratio * n_c) to training."""
    if not 0.0 < train_ratio < 1.0:
        raise ValueError(f"train_ratio must lie in (0, 1), got {train_ratio}")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for cls in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        n_train = int(round(train_ratio * len(idx)))
        train.extend(idx[:n_train].tolist())
        test.extend(idx[n_train:].tolist())
    return np.array(sorted(train), dtype=np.int64), np.array(sorted(test), dtype=np.int64)


def classify_nodes(vectors, labels, train_ratio: float = 0.5, seed: int = 0, reg: float = 1e-4, epochs: int = 100) -> float:
    """Held-out accuracy of the linear SVM on a stratified split."""
    vectors = np.asarray(vectors, dtype=np.float64)
    labels = np.asarray(labels)
    if len(set(labels.tolist())) < 2:
        raise ValueError("need at least two classes")
    train, test = stratified_split(labels, train_ratio, seed)
    if set(labels[train].tolist()) != set(labels.tolist()):
        missing = set(labels.tolist()) - set(labels[train].tolist())
        raise ValueError(f"classes absent from the training split: {sorted(missing)}")
    if len(test) == 0:
        raise ValueError("empty test split")
    clf = LinearSVM(reg=reg, epochs=epochs, seed=seed).fit(vectors[train], labels[train])
    return float(np.mean(clf.predict(vectors[test]) == labels[test]))


# ------------------------------------------------------- seen/unseen split


class SplitMode(enum.Enum):
    SEEN = "seen"
    UNSEEN = "unseen"


def seen_unseen_split(pairs: Sequence, mode: SplitMode | str, holdout: int, seed: int = 0):
    """Return ``(train, test, test_entities)``.

    Seen: train is every pair and test is a sample of it. Unseen: test is held
    out, and ``test_entities`` lists the entities whose textual features must be
    kept out of the graph.
    """
    mode = SplitMode(mode)
    n = len(pairs)
    if holdout < 0 or holdout > n or (mode is SplitMode.UNSEEN and holdout >= n):
        raise ValueError(f"holdout {holdout} too large for {n} pairs")
    rng = np.random.default_rng(seed)
    test_idx = np.sort(rng.permutation(n)[:holdout])
    test = [pairs[i] for i in test_idx]
    if mode is SplitMode.SEEN:
        train = list(pairs)
    else:
        held = set(test_idx.tolist())
        train = [p for i, p in enumerate(pairs) if i not in held]
    test_entities = sorted({getattr(p, "entity", None) for p in test} - {None})
    return train, test, test_entities
