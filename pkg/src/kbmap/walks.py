"""Random-walk corpus generation with a tunable share of textual-feature hops.

At every step the walker splits probability mass between entity neighbours
(uniform, total ``1 - lam``) and textual neighbours (proportional to tf-idf,
total ``lam``). When one of the two groups is empty the other receives all of
the mass. ``lam = 0`` is plain DeepWalk; ``lam = 1`` alternates entity and
textual nodes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, TextIO

import numpy as np

from kbmap import _accel
from kbmap._accel import njit, prange
from kbmap.graph import KbGraph, NodeKind, neighbors


@dataclass(frozen=True)
class WalkConfig:
    lam: float = 1.0
    walk_length: int = 20
    walks_per_node: int = 10
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.walk_length < 1:
            raise ValueError("walk_length must be >= 1")
        if self.walks_per_node < 1:
            raise ValueError("walks_per_node must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass(frozen=True)
class StepDistribution:
    nodes: np.ndarray  # entity neighbours (ascending) then textual neighbours (ascending)
    probs: np.ndarray

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.nodes.tolist(), self.probs.tolist()))


@dataclass(frozen=True)
class Walk:
    nodes: list[int]
    truncated: bool


@dataclass
class WalkCorpus:
    """Walks stored flat: walk ``i`` is ``tokens[offsets[i]:offsets[i + 1]]``."""

    tokens: np.ndarray
    offsets: np.ndarray
    labels: list[str]
    truncated: np.ndarray

    def __len__(self) -> int:
        return len(self.offsets) - 1

    def walk(self, i: int) -> np.ndarray:
        return self.tokens[self.offsets[i] : self.offsets[i + 1]]

    def __iter__(self) -> Iterator[np.ndarray]:
        for i in range(len(self)):
            yield self.walk(i)

    @property
    def vocabulary(self) -> set[int]:
        return set(np.unique(self.tokens).tolist())

    def sentences(self) -> list[list[str]]:
        return [[self.labels[t] for t in w] for w in self]

    def write(self, out: TextIO) -> None:
        for w in self:
            out.write(" ".join(self.labels[t] for t in w))
            out.write("\n")


def read_corpus(lines) -> list[list[str]]:
    return [line.split() for line in lines if line.strip()]


def step_distribution(g: KbGraph, n: int, lam: float) -> StepDistribution:
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    ents, texts = neighbors(g, n)
    if not ents and not texts:
        raise ValueError(f"node {g.labels[n]!r} has no neighbours")
    t_ids = np.array([t for t, _ in texts], dtype=np.int64)
    t_w = np.array([w for _, w in texts], dtype=np.float64)
    if ents and texts:
        ent_mass, text_mass = 1.0 - lam, lam
    elif ents:
        ent_mass, text_mass = 1.0, 0.0
    else:
        ent_mass, text_mass = 0.0, 1.0
    p_ent = np.full(len(ents), ent_mass / len(ents)) if ents else np.empty(0)
    p_text = text_mass * t_w / t_w.sum() if texts else np.empty(0)
    return StepDistribution(
        nodes=np.concatenate([np.asarray(ents, dtype=np.int64), t_ids]),
        probs=np.concatenate([p_ent, p_text]),
    )


@dataclass(frozen=True)
class TransitionTable:
    """Per-node cumulative step distributions in CSR layout."""

    offsets: np.ndarray
    targets: np.ndarray
    cdf: np.ndarray


def transition_table(g: KbGraph, lam: float) -> TransitionTable:
    n = len(g)
    offsets = g.offsets.astype(np.int64).copy()
    targets = np.empty(offsets[-1], dtype=np.int64)
    cdf = np.empty(offsets[-1], dtype=np.float64)
    for v in range(n):
        s, e = offsets[v], offsets[v + 1]
        if s == e:
            continue
        d = step_distribution(g, v, lam)
        targets[s:e] = d.nodes
        c = np.cumsum(d.probs)
        c[-1] = 1.0
        cdf[s:e] = c
    return TransitionTable(offsets, targets, cdf)


def _walk_kernel(offsets, targets, cdf, starts, uniforms, out, lengths):
    length = out.shape[1]
    for w in prange(starts.shape[0]):
        cur = starts[w]
        out[w, 0] = cur
        n = 1
        for step in range(1, length):
            lo = offsets[cur]
            hi = offsets[cur + 1] - 1
            if hi < lo:
                break
            u = uniforms[w, step - 1]
            # first position whose cumulative probability exceeds u
            while lo < hi:
                mid = (lo + hi) // 2
                if cdf[mid] > u:
                    hi = mid
                else:
                    lo = mid + 1
            cur = targets[lo]
            out[w, step] = cur
            n += 1
        lengths[w] = n


def _walk_numpy(offsets, targets, cdf, starts, uniforms, out, lengths):
    """Vectorised over walks; same comparisons as the kernel, so identical output."""
    n_walks, length = out.shape
    cur = starts.copy()
    out[:, 0] = cur
    alive = np.ones(n_walks, dtype=bool)
    lengths[:] = 1
    for step in range(1, length):
        lo = offsets[cur]
        hi = offsets[cur + 1] - 1
        alive &= hi >= lo
        if not alive.any():
            break
        lo = np.where(alive, lo, 0)
        hi = np.where(alive, hi, 0)
        u = uniforms[:, step - 1]
        active = lo < hi
        while active.any():
            mid = (lo + hi) // 2
            right = cdf[np.where(active, mid, 0)] > u
            hi = np.where(active & right, mid, hi)
            lo = np.where(active & ~right, mid + 1, lo)
            active = lo < hi
        cur = np.where(alive, targets[lo] if len(targets) else cur, cur)
        out[:, step] = np.where(alive, cur, out[:, step])
        lengths += alive


_walk_jit = njit(_walk_kernel)
_walk_jit_parallel = njit(_walk_kernel, parallel=True)


def run_walks(table, starts, uniforms, length, threads=1, backend=None):
    """Dispatch to the compiled kernel or the numpy path; returns (paths, lengths)."""
    starts = np.ascontiguousarray(starts, dtype=np.int64)
    out = np.full((len(starts), length), -1, dtype=np.int64)
    lengths = np.zeros(len(starts), dtype=np.int64)
    backend = backend or _accel.backend_name()
    if backend == "numba":
        if not _accel.USE_NUMBA:
            raise RuntimeError("numba backend requested but JIT is disabled")
        kernel = _walk_jit_parallel if threads > 1 else _walk_jit
        kernel(table.offsets, table.targets, table.cdf, starts, uniforms, out, lengths)
    elif backend == "numpy":
        _walk_numpy(table.offsets, table.targets, table.cdf, starts, uniforms, out, lengths)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    return out, lengths


def walk_uniforms(seed: int, starts, walk_index, steps: int) -> np.ndarray:
    """One independent PCG64 stream per (start node, walk index) pair."""
    entropy = int(seed) & 0xFFFFFFFFFFFFFFFF
    u = np.empty((len(starts), max(steps, 0)), dtype=np.float64)
    for i, (node, w) in enumerate(zip(starts, walk_index)):
        ss = np.random.SeedSequence(entropy, spawn_key=(int(node), int(w)))
        u[i] = np.random.Generator(np.random.PCG64(ss)).random(steps)
    return u


def sample_walk(g: KbGraph, start: int, cfg: WalkConfig, walk_index: int = 0, table=None) -> Walk:
    g._check(start)
    table = table or transition_table(g, cfg.lam)
    u = walk_uniforms(cfg.seed, [start], [walk_index], cfg.walk_length - 1)
    out, lengths = run_walks(table, [start], u, cfg.walk_length)
    n = int(lengths[0])
    return Walk(out[0, :n].tolist(), truncated=n < cfg.walk_length)


def generate_corpus(g: KbGraph, cfg: WalkConfig, backend: str | None = None) -> WalkCorpus:
    """``walks_per_node`` walks from every non-isolated node, ordered by (node, walk index).

    At ``lam = 0`` textual nodes carry no probability mass, so they do not
    start walks either and the corpus is exactly DeepWalk on the entities.
    """
    if len(g) == 0:
        raise ValueError("empty graph")
    table = transition_table(g, cfg.lam)
    deg = np.diff(g.offsets)
    start_ok = deg > 0
    if cfg.lam == 0.0:
        start_ok &= g.kinds == NodeKind.ENTITY
    nodes = np.flatnonzero(start_ok)
    starts = np.repeat(nodes, cfg.walks_per_node)
    walk_index = np.tile(np.arange(cfg.walks_per_node), len(nodes))
    u = walk_uniforms(cfg.seed, starts, walk_index, cfg.walk_length - 1)
    out, lengths = run_walks(table, starts, u, cfg.walk_length, cfg.threads, backend)
    mask = np.arange(cfg.walk_length)[None, :] < lengths[:, None]
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    return WalkCorpus(
        tokens=out[mask],
        offsets=offsets,
        labels=g.labels,
        truncated=lengths < cfg.walk_length,
    )


def count_kind_violations(g: KbGraph, corpus: WalkCorpus) -> dict[str, int]:
    """Count textual->textual steps and entity->entity steps from entities with features."""
    has_text = np.zeros(len(g), dtype=bool)
    tx = g.kinds[g.targets] == NodeKind.TEXTUAL
    owner = np.repeat(np.arange(len(g)), np.diff(g.offsets))
    has_text[owner[tx]] = True
    tt = ee = 0
    for w in corpus:
        if len(w) < 2:
            continue
        a, b = w[:-1], w[1:]
        ka, kb = g.kinds[a], g.kinds[b]
        tt += int(np.count_nonzero((ka == NodeKind.TEXTUAL) & (kb == NodeKind.TEXTUAL)))
        ee += int(np.count_nonzero((ka == NodeKind.ENTITY) & (kb == NodeKind.ENTITY) & has_text[a]))
    return {"textual_textual": tt, "entity_entity_with_features": ee}
