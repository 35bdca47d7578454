"""End-to-end helpers: build a KB space from a graph and descriptions, then map text into it."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from kbmap.evaluation import MetricsReport, SplitMode, evaluate_retrieval, seen_unseen_split
from kbmap.graph import TEXT_PREFIX, KbGraph, NodeKind
from kbmap.mslstm import MsLstmConfig, MsLstmModel, TrainConfig, TrainingPair, anchor_pairs, train, vocabulary
from kbmap.skipgram import EmbeddingTable, SkipgramConfig, train_skipgram
from kbmap.tfidf import EntityDocument, compute_tfidf, documents_from_descriptions, extend_graph, tokenize
from kbmap.walks import WalkConfig, generate_corpus


@dataclass(frozen=True)
class SpaceConfig:
    lam: float = 1.0
    walk: WalkConfig = field(default_factory=WalkConfig)
    skipgram: SkipgramConfig = field(default_factory=SkipgramConfig)


def build_space(
    graph: KbGraph,
    descriptions: Mapping[str, str],
    cfg: SpaceConfig,
    exclude: Iterable[str] = (),
    exclude_tokens: Iterable[str] = (),
) -> tuple[KbGraph, EmbeddingTable]:
    """Extend ``graph`` with tf-idf features, walk it and embed it.

    Entities in ``exclude`` contribute no text at all, and tokens in
    ``exclude_tokens`` never become textual features. Both are removed before
    the tf-idf statistics are computed.
    """
    exclude, drop = set(exclude), set(exclude_tokens)
    docs = [
        EntityDocument(d.entity, [t for t in d.tokens if t not in drop])
        for d in documents_from_descriptions(descriptions)
        if d.entity not in exclude
    ]
    docs = [d for d in docs if d.tokens]
    g = graph
    if docs:
        g = extend_graph(graph, compute_tfidf(docs))
    walk_cfg = replace(cfg.walk, lam=cfg.lam)
    corpus = generate_corpus(g, walk_cfg)
    return g, train_skipgram(corpus, cfg.skipgram)


def entity_index(space: EmbeddingTable) -> EmbeddingTable:
    """Candidate set for retrieval: every non-textual label in the space."""
    return space.subset([lab for lab in space.labels if not lab.startswith(TEXT_PREFIX)])


def description_pairs(descriptions: Mapping[str, str], space: EmbeddingTable) -> list[TrainingPair]:
    out = []
    for entity, text in descriptions.items():
        toks = tokenize(text)
        if toks and entity in space:
            out.append(TrainingPair(toks, space[entity].copy(), entity=entity))
    return out


@dataclass
class RetrievalRun:
    report: MetricsReport
    train_report: MetricsReport | None
    model: MsLstmModel
    n_train: int
    n_anchors: int


class Exclusion(enum.Enum):
    """What the KB space may not see of the held-out part in unseen mode."""

    ENTITIES = "entities"  # every feature of a held-out entity
    TOKENS = "tokens"  # every feature token that occurs in a held-out text
    NONE = "none"


def retrieval_experiment(
    graph: KbGraph,
    descriptions: Mapping[str, str],
    space_cfg: SpaceConfig,
    model_cfg: MsLstmConfig,
    train_cfg: TrainConfig,
    texts: Mapping[str, str] | None = None,
    mode: SplitMode | str = SplitMode.UNSEEN,
    exclusion: Exclusion | str = Exclusion.TOKENS,
    holdout_fraction: float = 0.2,
    anchors: bool = False,
    split_seed: int = 0,
    evaluate_train: bool = False,
) -> RetrievalRun:
    """Split the mapping texts, build the space without the held-out part, train and evaluate.

    ``texts`` are the ``entity -> text`` mapping pairs; they default to the
    descriptions themselves.
    """
    texts = descriptions if texts is None else texts
    mode, exclusion = SplitMode(mode), Exclusion(exclusion)
    entities = [lab for lab, kind in zip(graph.labels, graph.kinds) if kind == NodeKind.ENTITY]
    rows = [TrainingPair(tokenize(texts[e]), np.zeros(0), entity=e) for e in entities if e in texts and tokenize(texts[e])]
    holdout = int(round(holdout_fraction * len(rows)))
    train_rows, test_rows, test_entities = seen_unseen_split(rows, mode, holdout, split_seed)
    exclude, drop = [], set()
    if mode is SplitMode.UNSEEN and exclusion is Exclusion.ENTITIES:
        exclude = test_entities
    elif mode is SplitMode.UNSEEN and exclusion is Exclusion.TOKENS:
        drop = {t for r in test_rows for t in r.tokens}
    _, space = build_space(graph, descriptions, space_cfg, exclude=exclude, exclude_tokens=drop)

    def resolve(rs: Sequence[TrainingPair]) -> list[TrainingPair]:
        return [TrainingPair(r.tokens, space[r.entity].copy(), entity=r.entity) for r in rs]

    train_pairs = resolve(train_rows)
    extra = anchor_pairs(space) if anchors else []
    cfg = replace(model_cfg, output_dim=space.dim)
    model = MsLstmModel.create(cfg, vocabulary(train_pairs + extra))
    train(model, train_pairs + extra, train_cfg)
    index = entity_index(space)
    test_pairs = resolve(test_rows)
    report = evaluate_retrieval(model.predict([p.tokens for p in test_pairs]), [p.entity for p in test_pairs], index)
    train_report = None
    if evaluate_train:
        train_report = evaluate_retrieval(
            model.predict([p.tokens for p in train_pairs]), [p.entity for p in train_pairs], index
        )
    return RetrievalRun(report, train_report, model, len(train_pairs), len(extra))
