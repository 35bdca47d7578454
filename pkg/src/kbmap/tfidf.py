"""TF-IDF textual features and graph extension with weighted textual nodes."""

from __future__ import annotations

import math
import re
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, TextIO

from kbmap.graph import TEXT_PREFIX, GraphBuilder, GraphFormatError, KbGraph, NodeKind

STOPWORDS = frozenset(
    """
    a about above after again against all am an and any are as at be because been
    before being below between both but by can could did do does doing down during
    each few for from further had has have having he her here hers herself him
    himself his how i if in into is it its itself just me more most my myself no nor
    not of off on once only or other our ours ourselves out over own same she should
    so some such than that the their theirs them themselves then there these they
    this those through to too under until up very was we were what when where which
    while who whom why will with would you your yours yourself yourselves
    """.split()
)

_SPLIT = re.compile(r"[^0-9a-z]+")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumeric runs, drop empties and stopwords."""
    return [t for t in _SPLIT.split(text.lower()) if t and t not in STOPWORDS]


@dataclass
class EntityDocument:
    entity: str
    tokens: list[str]


@dataclass
class TfIdfTable:
    """Per-entity ``token -> weight`` maps plus the corpus statistics used to build them."""

    weights: dict[str, dict[str, float]]
    n_docs: int
    df: dict[str, int] = field(default_factory=dict)

    def features(self, entity: str) -> dict[str, float]:
        return self.weights.get(entity, {})

    def tokens(self) -> list[str]:
        return sorted({t for feats in self.weights.values() for t in feats})

    def write(self, out: TextIO) -> None:
        for entity, feats in self.weights.items():
            for token in sorted(feats):
                out.write(f"{entity}\t{token}\t{feats[token]:.6f}\n")

    @classmethod
    def read(cls, lines: Iterable[str]) -> "TfIdfTable":
        weights: dict[str, dict[str, float]] = {}
        for lineno, raw in enumerate(lines, start=1):
            line = raw.rstrip("\r\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise GraphFormatError("expected entity<TAB>token<TAB>weight", lineno)
            try:
                w = float(parts[2])
            except ValueError:
                raise GraphFormatError(f"bad weight {parts[2]!r}", lineno) from None
            weights.setdefault(parts[0], {})[parts[1]] = w
        # Corpus statistics are not serialized.
        return cls(weights=weights, n_docs=len(weights))


def documents_from_descriptions(descriptions: Mapping[str, str]) -> list[EntityDocument]:
    return [EntityDocument(label, tokenize(text)) for label, text in descriptions.items()]


def compute_tfidf(docs: Iterable[EntityDocument]) -> TfIdfTable:
    """Raw-count tf times ln(N/df). Zero weights (df == N) are dropped."""
    docs = list(docs)
    if not docs:
        raise ValueError("empty corpus")
    counts: dict[str, Counter] = {}
    for doc in docs:
        if not doc.tokens:
            warnings.warn(f"entity {doc.entity!r} has no tokens; it gets no textual features")
            continue
        counts.setdefault(doc.entity, Counter()).update(doc.tokens)
    n = len(counts)
    if n == 0:
        raise ValueError("every document is empty after tokenization")
    df: Counter = Counter()
    for c in counts.values():
        df.update(c.keys())
    weights: dict[str, dict[str, float]] = {}
    for entity, c in counts.items():
        feats = {}
        for token, tf in c.items():
            w = tf * math.log(n / df[token])
            if w > 0:
                feats[token] = w
        weights[entity] = feats
    return TfIdfTable(weights=weights, n_docs=n, df=dict(df))


def extend_graph(g: KbGraph, table: TfIdfTable, exclude: Iterable[str] = ()) -> KbGraph:
    """Copy ``g`` and attach one ``tf::token`` node per distinct feature token.

    Entities in ``exclude`` (labels) contribute no features.
    """
    exclude = set(exclude)
    for entity in table.weights:
        if entity not in g.index:
            raise GraphFormatError(f"tf-idf table references unknown entity {entity!r}")
        if g.kinds[g.index[entity]] != NodeKind.ENTITY:
            raise GraphFormatError(f"{entity!r} is not an entity node")

    b = GraphBuilder()
    for label, kind in zip(g.labels, g.kinds):
        b.add_node(label, NodeKind(int(kind)))
    for u, v, w in g.edges():
        b.add_edge(u, v, w)
    # Entity id order, then token order, keeps textual id assignment deterministic.
    for entity in sorted(table.weights, key=g.index.__getitem__):
        if entity in exclude:
            continue
        c = g.index[entity]
        feats = table.weights[entity]
        for token in sorted(feats):
            w = feats[token]
            if w <= 0:
                continue
            t = b.add_node(TEXT_PREFIX + token, NodeKind.TEXTUAL)
            b.add_edge(c, t, w)
    return b.build()
