"""Planted synthetic knowledge bases used by the tests, the acceptance suite and the benchmark."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from kbmap.graph import GraphBuilder, KbGraph, NodeKind


@dataclass
class SyntheticKb:
    graph: KbGraph
    # KB-side text that becomes textual features
    descriptions: dict[str, str]
    # separate texts used as mapping pairs (text -> entity)
    definitions: dict[str, str]
    classes: dict[str, int]
    # ambiguous word -> the two community ids it is shared between
    ambiguous: dict[str, tuple[int, int]]
    community_words: list[list[str]]


def planted_kb(
    n_entities: int = 200,
    n_communities: int = 20,
    words_per_community: int = 8,
    desc_len: tuple[int, int] = (3, 6),
    gloss_len: tuple[int, int] = (6, 9),
    local_words: int = 2,
    noise_edges: float = 2.0,
    edge_keep: float = 0.3,
    n_ambiguous: int = 0,
    ambiguity_rate: float = 0.5,
    seed: int = 0,
) -> SyntheticKb:
    """Communities of entities whose text follows a ring layout the graph only partly shows.

    Members of a community sit on a ring. Each ring position owns
    ``local_words`` words that also describe the two following positions, so
    ring neighbours share vocabulary. The graph keeps each first- and
    second-neighbour ring edge with probability ``edge_keep`` and adds
    ``noise_edges`` random cross-community edges per entity, so on its own it
    is a blurred view of the layout while the text is clean.

    Two texts per entity are drawn independently: a KB-side ``description``
    (``gloss_len`` words, the source of textual features) and a short
    ``definition`` (``desc_len`` words, two or three of them local) used as
    the mapping text. Ambiguous words are shared by two communities and
    replace a general word in a fraction ``ambiguity_rate`` of the texts of each.
    """
    if n_communities < 1 or n_entities < 4 * n_communities:
        raise ValueError("need at least four entities per community")
    lo, hi = desc_len
    if not 3 <= lo <= hi:
        raise ValueError("definitions need at least three words")
    if not 1 <= gloss_len[0] <= gloss_len[1]:
        raise ValueError("bad gloss length range")
    rng = np.random.default_rng(seed)
    sizes = [n_entities // n_communities + (c < n_entities % n_communities) for c in range(n_communities)]

    b = GraphBuilder()
    members: list[list[int]] = []
    classes: dict[str, int] = {}
    labels: list[str] = []
    for c, size in enumerate(sizes):
        ids = []
        for _ in range(size):
            label = f"e{len(labels):04d}"
            ids.append(b.add_node(label))
            labels.append(label)
            classes[label] = c
        members.append(ids)
        for i in range(size):
            for step in (1, 2):
                if rng.random() < edge_keep:
                    b.add_edge(ids[i], ids[(i + step) % size])
    for _ in range(int(round(noise_edges * n_entities))):
        u, v = rng.choice(n_entities, size=2, replace=False)
        b.add_edge(int(u), int(v))
    # nothing may be isolated: reattach to a random member of the own community
    for ids in members:
        for i, node in enumerate(ids):
            if b.degree(node) == 0:
                b.add_edge(node, ids[(i + 1 + int(rng.integers(len(ids) - 1))) % len(ids)])
    graph = b.build()

    general = [[f"k{c}g{j}" for j in range(words_per_community)] for c in range(n_communities)]
    ambiguous: dict[str, tuple[int, int]] = {}
    amb_of: dict[int, list[str]] = {}
    order = rng.permutation(n_communities)
    for a in range(min(n_ambiguous, n_communities // 2)):
        word = f"amb{a}"
        c1, c2 = int(order[2 * a]), int(order[2 * a + 1])
        ambiguous[word] = (c1, c2)
        amb_of.setdefault(c1, []).append(word)
        amb_of.setdefault(c2, []).append(word)

    def sample_text(c: int, i: int, m: int, n: int, n_local: int) -> str:
        local = [f"k{c}l{(i - j) % m}x{r}" for j in range(3) for r in range(local_words)]
        n_local = min(n_local, len(local), n)
        words = [str(w) for w in rng.choice(local, size=n_local, replace=False)]
        words += [str(w) for w in rng.choice(general[c], size=min(n - n_local, len(general[c])), replace=False)]
        if amb_of.get(c) and len(words) > n_local and rng.random() < ambiguity_rate:
            words[-1] = str(rng.choice(amb_of[c]))
        return " ".join(words[j] for j in rng.permutation(len(words)))

    descriptions: dict[str, str] = {}
    definitions: dict[str, str] = {}
    for c, ids in enumerate(members):
        m = len(ids)
        for i, node in enumerate(ids):
            n = int(rng.integers(gloss_len[0], gloss_len[1] + 1))
            descriptions[graph.labels[node]] = sample_text(c, i, m, n, (n + 1) // 2 + 1)
            n = int(rng.integers(lo, hi + 1))
            definitions[graph.labels[node]] = sample_text(c, i, m, n, int(rng.integers(2, 4)))
    return SyntheticKb(graph, descriptions, definitions, classes, ambiguous, general)


def sampler_fixture() -> tuple[KbGraph, int]:
    """A hub with two entity neighbours and two textual features weighted 3 and 1."""
    b = GraphBuilder()
    hub = b.add_node("hub")
    c1 = b.add_node("c1")
    c2 = b.add_node("c2")
    t1 = b.add_node("tf::alpha", NodeKind.TEXTUAL)
    t2 = b.add_node("tf::beta", NodeKind.TEXTUAL)
    b.add_edge(hub, c1)
    b.add_edge(hub, c2)
    b.add_edge(hub, t1, 3.0)
    b.add_edge(hub, t2, 1.0)
    return b.build(), hub
