"""In-memory knowledge graph with entity and textual-feature nodes."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, TextIO

import numpy as np

TEXT_PREFIX = "tf::"


class NodeKind(enum.IntEnum):
    ENTITY = 0
    TEXTUAL = 1


class GraphFormatError(ValueError):
    """Malformed edge-list or description input; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownNodeError(KeyError):
    pass


@dataclass(frozen=True)
class GraphStats:
    n_nodes: int
    n_entity: int
    n_textual: int
    n_edges: int
    min_degree: int
    mean_degree: float
    max_degree: int

    def lines(self) -> list[str]:
        return [
            f"nodes\t{self.n_nodes}",
            f"entity_nodes\t{self.n_entity}",
            f"textual_nodes\t{self.n_textual}",
            f"edges\t{self.n_edges}",
            f"min_degree\t{self.min_degree}",
            f"mean_degree\t{self.mean_degree:.4f}",
            f"max_degree\t{self.max_degree}",
        ]


class GraphBuilder:
    """Accumulates nodes and undirected edges; ``build`` freezes into a KbGraph.

    Node ids are assigned in first-seen order. Parallel edges collapse to one,
    keeping the larger weight.
    """

    def __init__(self):
        self._index: dict[str, int] = {}
        self._labels: list[str] = []
        self._kinds: list[NodeKind] = []
        self._adj: list[dict[int, float]] = []

    def add_node(self, label: str, kind: NodeKind = NodeKind.ENTITY) -> int:
        if not label:
            raise ValueError("empty node label")
        idx = self._index.get(label)
        if idx is not None:
            if self._kinds[idx] != kind:
                raise ValueError(f"node {label!r} already exists with kind {self._kinds[idx].name}")
            return idx
        idx = len(self._labels)
        self._index[label] = idx
        self._labels.append(label)
        self._kinds.append(NodeKind(kind))
        self._adj.append({})
        return idx

    def add_edge(self, u: int, v: int, weight: float = 1.0) -> None:
        if u == v:
            raise ValueError(f"self-loop on {self._labels[u]!r}")
        if not weight > 0:
            raise ValueError(f"edge weight must be positive, got {weight}")
        if self._kinds[u] == NodeKind.TEXTUAL and self._kinds[v] == NodeKind.TEXTUAL:
            raise ValueError("textual nodes cannot be linked to each other")
        prev = self._adj[u].get(v, 0.0)
        w = max(prev, float(weight))
        self._adj[u][v] = w
        self._adj[v][u] = w

    def degree(self, u: int) -> int:
        return len(self._adj[u])

    def build(self) -> "KbGraph":
        n = len(self._labels)
        offsets = np.zeros(n + 1, dtype=np.int64)
        for i, nb in enumerate(self._adj):
            offsets[i + 1] = offsets[i] + len(nb)
        targets = np.empty(offsets[-1], dtype=np.int64)
        weights = np.empty(offsets[-1], dtype=np.float64)
        for i, nb in enumerate(self._adj):
            order = sorted(nb)
            s = offsets[i]
            targets[s : s + len(order)] = order
            weights[s : s + len(order)] = [nb[j] for j in order]
        kinds = np.asarray([int(k) for k in self._kinds], dtype=np.int8)
        return KbGraph(list(self._labels), kinds, offsets, targets, weights)


class KbGraph:
    """Immutable undirected graph in CSR form.

    Neighbour lists are sorted by node id. ``kinds[i]`` is a ``NodeKind`` value.
    """

    def __init__(self, labels, kinds, offsets, targets, weights):
        self.labels: list[str] = labels
        self.kinds = kinds
        self.offsets = offsets
        self.targets = targets
        self.weights = weights
        self.index = {label: i for i, label in enumerate(labels)}
        for arr in (kinds, offsets, targets, weights):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_edges(self) -> int:
        return int(self.offsets[-1]) // 2

    def node_id(self, label: str) -> int:
        try:
            return self.index[label]
        except KeyError:
            raise UnknownNodeError(label) from None

    def kind(self, n: int) -> NodeKind:
        self._check(n)
        return NodeKind(int(self.kinds[n]))

    def is_textual(self, n: int) -> bool:
        return self.kind(n) == NodeKind.TEXTUAL

    def entity_ids(self) -> np.ndarray:
        return np.flatnonzero(self.kinds == NodeKind.ENTITY)

    def textual_ids(self) -> np.ndarray:
        return np.flatnonzero(self.kinds == NodeKind.TEXTUAL)

    def adjacency(self, n: int) -> list[tuple[int, float]]:
        self._check(n)
        s, e = self.offsets[n], self.offsets[n + 1]
        return list(zip(self.targets[s:e].tolist(), self.weights[s:e].tolist()))

    def degree(self, n: int) -> int:
        self._check(n)
        return int(self.offsets[n + 1] - self.offsets[n])

    def edges(self) -> Iterable[tuple[int, int, float]]:
        """Each undirected edge once, as (u, v, w) with u < v, ordered by u then v."""
        for u in range(len(self)):
            s, e = self.offsets[u], self.offsets[u + 1]
            for v, w in zip(self.targets[s:e], self.weights[s:e]):
                if v > u:
                    yield u, int(v), float(w)

    def _check(self, n: int) -> None:
        if not 0 <= n < len(self.labels):
            raise UnknownNodeError(n)


def neighbors(g: KbGraph, n: int) -> tuple[list[int], list[tuple[int, float]]]:
    """Split the neighbourhood of ``n`` into entity ids and (textual id, weight) pairs."""
    entities, textual = [], []
    for v, w in g.adjacency(n):
        if g.kinds[v] == NodeKind.TEXTUAL:
            textual.append((v, w))
        else:
            entities.append(v)
    return entities, textual


def degree_stats(g: KbGraph) -> GraphStats:
    n = len(g)
    if n == 0:
        return GraphStats(0, 0, 0, 0, 0, 0.0, 0)
    deg = np.diff(g.offsets)
    n_text = int(np.count_nonzero(g.kinds == NodeKind.TEXTUAL))
    return GraphStats(
        n_nodes=n,
        n_entity=n - n_text,
        n_textual=n_text,
        n_edges=g.n_edges,
        min_degree=int(deg.min()),
        mean_degree=float(deg.mean()),
        max_degree=int(deg.max()),
    )


def _content_lines(lines: Iterable[str]):
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        yield lineno, line


def _check_label(label: str, lineno: int) -> None:
    if not label:
        raise GraphFormatError("empty label", lineno)
    # Walk corpora and embedding files are whitespace-delimited.
    if any(ch.isspace() for ch in label):
        raise GraphFormatError(f"label {label!r} contains whitespace", lineno)


def load_edge_list(lines: Iterable[str]) -> KbGraph:
    """Parse ``src<TAB>dst`` lines into an entity-only graph with unit weights."""
    b = GraphBuilder()
    for lineno, line in _content_lines(lines):
        fields = line.split("\t")
        if len(fields) != 2:
            raise GraphFormatError(f"expected 2 tab-separated fields, got {len(fields)}", lineno)
        src, dst = fields
        _check_label(src, lineno)
        _check_label(dst, lineno)
        if src == dst:
            raise GraphFormatError(f"self-loop on {src!r}", lineno)
        b.add_edge(b.add_node(src), b.add_node(dst))
    return b.build()


def read_graph(lines: Iterable[str]) -> KbGraph:
    """Parse a (possibly weighted) edge list; ``tf::`` labels become textual nodes.

    Accepts ``src<TAB>dst`` or ``src<TAB>dst<TAB>weight`` per line.
    """
    b = GraphBuilder()
    for lineno, line in _content_lines(lines):
        fields = line.split("\t")
        if len(fields) not in (2, 3):
            raise GraphFormatError(f"expected 2 or 3 tab-separated fields, got {len(fields)}", lineno)
        src, dst = fields[0], fields[1]
        _check_label(src, lineno)
        _check_label(dst, lineno)
        weight = 1.0
        if len(fields) == 3:
            try:
                weight = float(fields[2])
            except ValueError:
                raise GraphFormatError(f"bad weight {fields[2]!r}", lineno) from None
        if src == dst:
            raise GraphFormatError(f"self-loop on {src!r}", lineno)
        try:
            u = b.add_node(src, _kind_of(src))
            v = b.add_node(dst, _kind_of(dst))
            b.add_edge(u, v, weight)
        except ValueError as exc:
            raise GraphFormatError(str(exc), lineno) from None
    return b.build()


def _kind_of(label: str) -> NodeKind:
    return NodeKind.TEXTUAL if label.startswith(TEXT_PREFIX) else NodeKind.ENTITY


def write_graph(g: KbGraph, out: TextIO, weighted: bool | None = None) -> None:
    """Write each undirected edge once. Weights are written when any differs from 1."""
    if weighted is None:
        weighted = bool(np.any(g.weights != 1.0))
    for u, v, w in g.edges():
        if weighted:
            out.write(f"{g.labels[u]}\t{g.labels[v]}\t{w:.6f}\n")
        else:
            out.write(f"{g.labels[u]}\t{g.labels[v]}\n")


def load_descriptions(lines: Iterable[str]) -> dict[str, str]:
    """Parse ``entity_label<TAB>text`` lines; repeated labels are concatenated in order."""
    out: dict[str, list[str]] = {}
    for lineno, line in _content_lines(lines):
        label, sep, text = line.partition("\t")
        if not sep:
            raise GraphFormatError("expected entity_label<TAB>text", lineno)
        _check_label(label, lineno)
        out.setdefault(label, []).append(text)
    return {label: " ".join(parts) for label, parts in out.items()}
