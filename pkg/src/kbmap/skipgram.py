"""Skipgram with negative sampling over walk corpora, and the embedding file format."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np

from kbmap import _accel
from kbmap._accel import njit, prange

NEG_POWER = 0.75
MIN_LR = 1e-4


class EmbeddingFormatError(ValueError):
    pass


class EmbeddingTable:
    """Label -> dense float64 vector, all of one dimension."""

    def __init__(self, labels: Sequence[str], vectors: np.ndarray):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(labels):
            raise ValueError("vectors must be a (len(labels), dim) matrix")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("embedding contains NaN or Inf")
        self.labels = list(labels)
        self.vectors = vectors
        self.index = {label: i for i, label in enumerate(self.labels)}
        if len(self.index) != len(self.labels):
            raise ValueError("duplicate labels")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label: str) -> bool:
        return label in self.index

    def __getitem__(self, label: str) -> np.ndarray:
        return self.vectors[self.index[label]]

    def subset(self, labels: Iterable[str]) -> "EmbeddingTable":
        labels = list(labels)
        return EmbeddingTable(labels, self.vectors[[self.index[x] for x in labels]])

    def write(self, out: TextIO) -> None:
        out.write(f"{len(self.labels)} {self.dim}\n")
        for label, vec in zip(self.labels, self.vectors):
            out.write(label)
            out.write(" ")
            out.write(" ".join(f"{x:.8g}" for x in vec))
            out.write("\n")

    @classmethod
    def read(cls, lines: Iterable[str]) -> "EmbeddingTable":
        it = iter(lines)
        try:
            header = next(it).split()
        except StopIteration:
            raise EmbeddingFormatError("empty embedding file") from None
        if len(header) != 2:
            raise EmbeddingFormatError("header must be 'count dim'")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError:
            raise EmbeddingFormatError("header must be 'count dim'") from None
        labels, rows = [], []
        for lineno, line in enumerate(it, start=2):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != dim + 1:
                raise EmbeddingFormatError(f"line {lineno}: expected {dim} values, got {len(parts) - 1}")
            labels.append(parts[0])
            rows.append([float(x) for x in parts[1:]])
        if len(rows) != count:
            raise EmbeddingFormatError(f"header says {count} rows, file has {len(rows)}")
        return cls(labels, np.asarray(rows, dtype=np.float64).reshape(count, dim))


@dataclass(frozen=True)
class SkipgramConfig:
    dim: int = 150
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    min_count: int = 0
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        for name in ("dim", "window", "negatives", "epochs", "threads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.min_count < 0:
            raise ValueError("min_count must be >= 0")


def extract_pairs(walk: Sequence, window: int) -> list[tuple]:
    """All (center, context) pairs with |offset| <= window, clipped at walk ends."""
    if window < 1:
        raise ValueError("window must be >= 1")
    n = len(walk)
    pairs = []
    for t in range(n):
        for c in range(max(0, t - window), min(n, t + window + 1)):
            if c != t:
                pairs.append((walk[t], walk[c]))
    return pairs


def pair_count(length: int, window: int) -> int:
    t = np.arange(length)
    return int(np.sum(np.minimum(t, window) + np.minimum(length - 1 - t, window)))


def _sigmoid(x: float) -> float:
    if x > 30.0:
        x = 30.0
    elif x < -30.0:
        x = -30.0
    return 1.0 / (1.0 + math.exp(-x))


_sigmoid_k = njit(_sigmoid)


def _sgns_kernel(tokens, offsets, w_lo, w_hi, pair_base, negs, w_in, w_out, window, n_neg, lr0, lr_min, done, total):
    dim = w_in.shape[1]
    for wi in prange(w_lo, w_hi):
        s = offsets[wi]
        e = offsets[wi + 1]
        p = pair_base[wi - w_lo]
        neu1e = np.empty(dim)
        for t in range(s, e):
            center = tokens[t]
            lo = max(s, t - window)
            hi = min(e, t + window + 1)
            for c in range(lo, hi):
                if c == t:
                    continue
                lr = lr0 - (lr0 - lr_min) * (done + p) / total
                if lr < lr_min:
                    lr = lr_min
                for d in range(dim):
                    neu1e[d] = 0.0
                for k in range(n_neg + 1):
                    if k == 0:
                        target = tokens[c]
                        label = 1.0
                    else:
                        target = negs[p * n_neg + k - 1]
                        if target == tokens[c]:
                            continue
                        label = 0.0
                    f = 0.0
                    for d in range(dim):
                        f += w_in[center, d] * w_out[target, d]
                    g = (label - _sigmoid_k(f)) * lr
                    for d in range(dim):
                        neu1e[d] += g * w_out[target, d]
                        w_out[target, d] += g * w_in[center, d]
                for d in range(dim):
                    w_in[center, d] += neu1e[d]
                p += 1


def _sgns_numpy(tokens, offsets, w_lo, w_hi, pair_base, negs, w_in, w_out, window, n_neg, lr0, lr_min, done, total):
    """Same update order as the kernel with numpy row operations; agrees to rounding."""
    for wi in range(w_lo, w_hi):
        s, e = offsets[wi], offsets[wi + 1]
        p = pair_base[wi - w_lo]
        for t in range(s, e):
            v = w_in[tokens[t]]
            for c in range(max(s, t - window), min(e, t + window + 1)):
                if c == t:
                    continue
                lr = max(lr0 - (lr0 - lr_min) * (done + p) / total, lr_min)
                ctx = tokens[c]
                neu1e = np.zeros_like(v)
                targets = [(ctx, 1.0)] + [(n, 0.0) for n in negs[p * n_neg : (p + 1) * n_neg] if n != ctx]
                for target, label in targets:
                    u = w_out[target]
                    g = (label - _sigmoid(float(v @ u))) * lr
                    neu1e += g * u
                    u += g * v
                v += neu1e
                p += 1


_sgns_jit = njit(_sgns_kernel)
_sgns_jit_parallel = njit(_sgns_kernel, parallel=True)


def run_sgns(args, threads=1, backend=None):
    backend = backend or _accel.backend_name()
    if backend == "numba":
        if not _accel.USE_NUMBA:
            raise RuntimeError("numba backend requested but JIT is disabled")
        (_sgns_jit_parallel if threads > 1 else _sgns_jit)(*args)
    elif backend == "numpy":
        _sgns_numpy(*args)
    else:
        raise ValueError(f"unknown backend {backend!r}")


def sgns_loss_grad(v, u_pos, u_negs):
    """Negative-sampling loss for one (center, context, negatives) triple and its gradients.

    loss = -log s(u_pos.v) - sum_k log s(-u_neg_k.v)
    Returns (loss, d_v, d_u_pos, d_u_negs).
    """
    u_negs = np.atleast_2d(u_negs)
    sp = 1.0 / (1.0 + np.exp(-(u_pos @ v)))
    sn = 1.0 / (1.0 + np.exp(-(u_negs @ v)))
    loss = -np.log(sp) - np.sum(np.log1p(-sn))
    d_v = -(1.0 - sp) * u_pos + sn @ u_negs
    d_u_pos = -(1.0 - sp) * v
    d_u_negs = sn[:, None] * v[None, :]
    return float(loss), d_v, d_u_pos, d_u_negs


def sgns_mean_loss(w_in, w_out, centers, contexts, negs):
    """Mean negative-sampling loss over a batch of pairs; ``negs`` is (n_pairs, k)."""
    v = w_in[centers]
    pos = np.einsum("ij,ij->i", v, w_out[contexts])
    neg = np.einsum("ij,ikj->ik", v, w_out[negs])
    loss = np.logaddexp(0.0, -pos) + np.sum(np.logaddexp(0.0, neg), axis=1)
    return float(loss.mean())


def negative_weights(counts: np.ndarray, power: float = NEG_POWER) -> np.ndarray:
    w = np.asarray(counts, dtype=np.float64) ** power
    return w / w.sum()


@dataclass(frozen=True)
class AliasTable:
    """Walker alias table: O(1) exact sampling from a discrete distribution."""

    prob: np.ndarray
    alias: np.ndarray

    @classmethod
    def build(cls, p: np.ndarray) -> "AliasTable":
        n = len(p)
        scaled = np.asarray(p, dtype=np.float64) * n
        prob = np.ones(n)
        alias = np.arange(n, dtype=np.int64)
        small = [i for i in range(n) if scaled[i] < 1.0]
        large = [i for i in range(n) if scaled[i] >= 1.0]
        while small and large:
            s, l = small.pop(), large.pop()
            prob[s] = scaled[s]
            alias[s] = l
            scaled[l] -= 1.0 - scaled[s]
            (small if scaled[l] < 1.0 else large).append(l)
        # leftovers are 1 up to rounding
        return cls(prob, alias)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        k = len(self.prob)
        col = rng.integers(0, k, size=n)
        keep = rng.random(n) < self.prob[col]
        return np.where(keep, col, self.alias[col])


def draw_negatives(table: AliasTable, n: int, rng: np.random.Generator) -> np.ndarray:
    return table.sample(n, rng)


@dataclass
class SkipgramModel:
    vocab: list[str]
    counts: np.ndarray
    w_in: np.ndarray
    w_out: np.ndarray
    loss_history: list[float] = field(default_factory=list)

    def table(self) -> EmbeddingTable:
        return EmbeddingTable(self.vocab, self.w_in.copy())


def build_vocab(sentences: Sequence[Sequence[str]], min_count: int = 0):
    counts = Counter(tok for s in sentences for tok in s)
    kept = [(tok, c) for tok, c in counts.items() if c >= min_count]
    kept.sort(key=lambda x: (-x[1], x[0]))
    return [t for t, _ in kept], np.array([c for _, c in kept], dtype=np.int64)


def _encode(sentences, index):
    toks, offs = [], [0]
    for s in sentences:
        ids = [index[t] for t in s if t in index]
        toks.extend(ids)
        offs.append(len(toks))
    return np.asarray(toks, dtype=np.int64), np.asarray(offs, dtype=np.int64)


def all_pairs(tokens, offsets, window):
    """Vectorised pair enumeration over a flat corpus; same pair set as ``extract_pairs``."""
    walk_of = np.repeat(np.arange(len(offsets) - 1), np.diff(offsets))
    pos = np.arange(len(tokens))
    cs, xs = [], []
    for j in range(-window, window + 1):
        if j == 0:
            continue
        other = pos + j
        ok = (other >= 0) & (other < len(tokens))
        ok[ok] &= walk_of[other[ok]] == walk_of[ok]
        cs.append(tokens[ok])
        xs.append(tokens[other[ok]])
    return np.concatenate(cs), np.concatenate(xs)


def _walk_pair_counts(offsets, window):
    lengths = np.diff(offsets)
    return np.array([pair_count(int(n), window) for n in lengths], dtype=np.int64)


CHUNK_PAIRS = 1 << 20


def fit_skipgram(
    sentences,
    cfg: SkipgramConfig,
    loss_sample: int = 0,
    backend: str | None = None,
) -> SkipgramModel:
    """Train input/output vectors with per-pair SGD.

    ``loss_sample > 0`` freezes that many (center, context, negatives) triples
    before training and records their mean loss after every epoch.
    """
    if hasattr(sentences, "sentences"):
        sentences = sentences.sentences()
    sentences = [list(s) for s in sentences]
    if not any(sentences):
        raise ValueError("empty corpus")
    vocab, counts = build_vocab(sentences, cfg.min_count)
    if not vocab:
        raise ValueError("vocabulary is empty after min_count filtering")
    index = {t: i for i, t in enumerate(vocab)}
    tokens, offsets = _encode(sentences, index)
    per_walk = _walk_pair_counts(offsets, cfg.window)
    total = int(per_walk.sum()) * cfg.epochs

    root = np.random.SeedSequence(int(cfg.seed) & 0xFFFFFFFFFFFFFFFF)
    init_rng = np.random.Generator(np.random.PCG64(root.spawn(1)[0]))
    n, dim = len(vocab), cfg.dim
    w_in = init_rng.uniform(-0.5 / dim, 0.5 / dim, size=(n, dim))
    w_out = np.zeros((n, dim))
    neg_table = AliasTable.build(negative_weights(counts))
    model = SkipgramModel(vocab, counts, w_in, w_out)

    frozen = None
    if loss_sample > 0 and per_walk.sum() > 0:
        srng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(cfg.seed) & 0xFFFFFFFF, 7919])))
        centers, contexts = all_pairs(tokens, offsets, cfg.window)
        pick = np.sort(srng.choice(len(centers), size=min(loss_sample, len(centers)), replace=False))
        centers, contexts = centers[pick], contexts[pick]
        negs = draw_negatives(neg_table, len(pick) * cfg.negatives, srng).reshape(len(pick), cfg.negatives)
        frozen = (centers, contexts, negs)

    if total == 0:
        return model

    n_walks = len(offsets) - 1
    done = 0
    for epoch in range(cfg.epochs):
        erng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(cfg.seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=(1, epoch))))
        w = 0
        while w < n_walks:
            # chunk of walks holding roughly CHUNK_PAIRS pairs
            cum = np.cumsum(per_walk[w:])
            w_hi = w + max(1, int(np.searchsorted(cum, CHUNK_PAIRS, side="right")))
            w_hi = min(w_hi, n_walks)
            chunk = per_walk[w:w_hi]
            base = np.concatenate([[0], np.cumsum(chunk)[:-1]]).astype(np.int64)
            n_pairs = int(chunk.sum())
            negs = draw_negatives(neg_table, n_pairs * cfg.negatives, erng)
            args = (tokens, offsets, w, w_hi, base, negs, w_in, w_out, cfg.window, cfg.negatives,
                    cfg.learning_rate, MIN_LR, float(done), float(total))
            run_sgns(args, cfg.threads, backend)
            done += n_pairs
            w = w_hi
        if frozen is not None:
            model.loss_history.append(sgns_mean_loss(w_in, w_out, *frozen))
    return model


def train_skipgram(corpus, cfg: SkipgramConfig, backend: str | None = None) -> EmbeddingTable:
    return fit_skipgram(corpus, cfg, backend=backend).table()
