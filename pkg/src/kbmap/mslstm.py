"""Multi-sense LSTM mapping text onto points of a knowledge-base vector space.

Each vocabulary word owns one generic vector and ``k`` sense vectors. For the
word at position ``i`` the context ``c_i`` is the mean generic vector of the
other positions. Sense ``j`` scores ``w'_j . tanh(W s_ij + U c_i + b)``; the
softmax over those scores weights the senses into a single input vector for a
two-layer LSTM, whose last hidden state is projected into the KB space.
Training minimises mean squared error with Adam, and after each batch every
sense of every word in it is nudged along its context by ``(s . c) c``.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import BinaryIO, Iterable, Sequence, TextIO

import numpy as np

from kbmap.evaluation import cosine_scores, rank_order
from kbmap.graph import TEXT_PREFIX
from kbmap.neural import (
    Adam,
    LstmParams,
    dropout,
    lstm_sequence,
    lstm_sequence_backward,
    lstm_step,
    read_arrays,
    softmax,
    softmax_backward,
    write_arrays,
)
from kbmap.skipgram import EmbeddingTable
from kbmap.tfidf import tokenize

log = logging.getLogger(__name__)

UNK = "<unk>"
SENSE_WEIGHTINGS = ("none", "attention", "argmax")


@dataclass
class TrainingPair:
    tokens: list[str]
    target: np.ndarray
    entity: str | None = None
    is_anchor: bool = False

    def __post_init__(self):
        if not self.tokens:
            raise ValueError("training pair needs at least one token")


@dataclass
class MsLstmConfig:
    embed_dim: int = 150
    senses: int = 3
    attention_dim: int = 50
    hidden_dim: int = 200
    output_dim: int = 150
    dropout: float = 0.3
    # additive context update of the sense vectors after each batch
    sense_update: bool = True
    sense_update_rate: float = 0.01
    # rescale each updated sense to its previous norm; the raw rule grows without bound
    sense_update_keep_norm: bool = True
    # shrink the update rate linearly to zero over the training epochs
    sense_update_decay: bool = True
    # how each sense's share of an update is weighted: "none" moves every sense
    # equally, "attention" scales sense j by its attention probability and
    # "argmax" moves only the most probable sense
    sense_update_weighting: str = "none"
    # MSE gradient on the sense vectors
    sense_gradient: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("embed_dim", "senses", "attention_dim", "hidden_dim", "output_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.sense_update_rate < 0:
            raise ValueError("sense_update_rate must be >= 0")
        if self.sense_update_weighting not in SENSE_WEIGHTINGS:
            raise ValueError(f"sense_update_weighting must be one of {SENSE_WEIGHTINGS}")

    @classmethod
    def standard_lstm(cls, **kw) -> "MsLstmConfig":
        """Single-sense configuration: attention is a no-op and no context updates."""
        kw.setdefault("senses", 1)
        kw["sense_update"] = False
        return cls(**kw)


@dataclass
class SenseBank:
    vocab: dict[str, int]
    generic: np.ndarray  # (V, d)
    senses: np.ndarray  # (V, k, d)

    @property
    def words(self) -> list[str]:
        return sorted(self.vocab, key=self.vocab.__getitem__)

    @property
    def k(self) -> int:
        return self.senses.shape[1]

    @property
    def d(self) -> int:
        return self.senses.shape[2]

    def id(self, word: str) -> int:
        return self.vocab.get(word, self.vocab[UNK])

    @classmethod
    def create(cls, words: Iterable[str], d: int, k: int, rng: np.random.Generator) -> "SenseBank":
        vocab = {UNK: 0}
        for w in words:
            if w not in vocab:
                vocab[w] = len(vocab)
        a = 1.0 / np.sqrt(d)
        generic = rng.uniform(-a, a, size=(len(vocab), d))
        senses = generic[:, None, :] + rng.normal(0.0, 0.01, size=(len(vocab), k, d))
        return cls(vocab, generic, senses)


# ----------------------------------------------------- single-word pieces


def context_vector(bank: SenseBank, tokens: Sequence[str], i: int) -> np.ndarray:
    if not 0 <= i < len(tokens):
        raise IndexError(i)
    others = [bank.generic[bank.id(t)] for j, t in enumerate(tokens) if j != i]
    if not others:
        return np.zeros(bank.d)
    return np.mean(others, axis=0)


@dataclass
class AttentionParams:
    W: np.ndarray  # (d_a, d)
    U: np.ndarray  # (d_a, d)
    b: np.ndarray  # (d_a,)
    Wp: np.ndarray  # (k, d_a)


def sense_attention(bank: SenseBank, att: AttentionParams, word: str, c: np.ndarray):
    """Return ``(p, attended)``: sense probabilities and the probability-weighted sense."""
    s = bank.senses[bank.id(word)]
    hidden = np.tanh(s @ att.W.T + att.U @ c + att.b)
    p = softmax(np.sum(hidden * att.Wp, axis=1))
    return p, p @ s


def sense_update(bank: SenseBank, word: str, c: np.ndarray, rate: float = 1.0) -> np.ndarray:
    """``s_j <- s_j + rate * (s_j . c) c`` for every sense of ``word``; returns the senses."""
    s = bank.senses[bank.id(word)]
    s += rate * (s @ c)[:, None] * c[None, :]
    return s


def mse_loss(predictions, targets) -> float:
    """Mean over examples of the squared Euclidean residual norm."""
    p = np.atleast_2d(np.asarray(predictions, dtype=np.float64))
    t = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    if len(p) == 0:
        raise ValueError("no examples")
    return float(np.mean(np.sum((p - t) ** 2, axis=1)))


# ------------------------------------------------------------------ model


@dataclass
class _Cache:
    ids: np.ndarray
    mask: np.ndarray
    denom: np.ndarray
    c: np.ndarray
    S: np.ndarray
    A: np.ndarray
    p: np.ndarray
    m1: np.ndarray | None
    m2: np.ndarray | None
    c1: list
    c2: list
    h_last: np.ndarray


@dataclass
class EpochLog:
    epoch: int
    train_mse: float
    dev_mse: float | None = None


class MsLstmModel:
    def __init__(self, config: MsLstmConfig, bank: SenseBank, params: dict[str, np.ndarray]):
        self.config = config
        self.bank = bank
        self.params = params
        self.optimizer: Adam | None = None

    # -- construction ---------------------------------------------------

    @classmethod
    def create(cls, config: MsLstmConfig, words: Iterable[str]) -> "MsLstmModel":
        rng = np.random.default_rng(np.random.SeedSequence(int(config.seed) & 0xFFFFFFFFFFFFFFFF))
        d, k, da, h, e = config.embed_dim, config.senses, config.attention_dim, config.hidden_dim, config.output_dim
        bank = SenseBank.create(words, d, k, rng)
        ad, aa, ah = 1.0 / np.sqrt(d), 1.0 / np.sqrt(da), 1.0 / np.sqrt(h)
        lstm1 = LstmParams.init(d, h, rng)
        lstm2 = LstmParams.init(h, h, rng)
        params = {
            "generic": bank.generic,
            "senses": bank.senses,
            "att.W": rng.uniform(-ad, ad, size=(da, d)),
            "att.U": rng.uniform(-ad, ad, size=(da, d)),
            "att.b": np.zeros(da),
            "att.Wp": rng.uniform(-aa, aa, size=(k, da)),
            **lstm1.arrays("lstm1"),
            **lstm2.arrays("lstm2"),
            "proj.W": rng.uniform(-ah, ah, size=(e, h)),
            "proj.b": np.zeros(e),
        }
        return cls(config, bank, params)

    def lstm(self, name: str) -> LstmParams:
        p = self.params
        return LstmParams(p[f"{name}.Wx"], p[f"{name}.Wh"], p[f"{name}.b"])

    @property
    def attention(self) -> AttentionParams:
        p = self.params
        return AttentionParams(p["att.W"], p["att.U"], p["att.b"], p["att.Wp"])

    # -- batching -------------------------------------------------------

    def encode(self, token_lists: Sequence[Sequence[str]]):
        if any(len(t) == 0 for t in token_lists):
            raise ValueError("empty token list")
        T = max(len(t) for t in token_lists)
        ids = np.zeros((len(token_lists), T), dtype=np.int64)
        mask = np.zeros((len(token_lists), T))
        for b, toks in enumerate(token_lists):
            ids[b, : len(toks)] = [self.bank.id(t) for t in toks]
            mask[b, : len(toks)] = 1.0
        return ids, mask

    # -- forward/backward -----------------------------------------------

    def forward(self, ids, mask, training: bool = False, rng: np.random.Generator | None = None):
        p = self.params
        rate = self.config.dropout if training else 0.0
        valid = mask[..., None]
        G = p["generic"][ids] * valid
        lengths = mask.sum(axis=1)
        denom = np.maximum(lengths - 1.0, 1.0)[:, None, None]
        c = (G.sum(axis=1, keepdims=True) - G) / denom
        c *= valid * (lengths > 1)[:, None, None]
        S = p["senses"][ids]  # (B, T, k, d)
        A = np.tanh(S @ p["att.W"].T + (c @ p["att.U"].T)[:, :, None, :] + p["att.b"])
        logits = np.einsum("btkh,kh->btk", A, p["att.Wp"])
        probs = softmax(logits, axis=-1)
        attended = np.einsum("btk,btkd->btd", probs, S)
        x1, m1 = dropout(attended, rate, training, rng)
        H1, _, c1 = lstm_sequence(self.lstm("lstm1"), x1, mask)
        x2, m2 = dropout(H1, rate, training, rng)
        _, h_last, c2 = lstm_sequence(self.lstm("lstm2"), x2, mask)
        y = h_last @ p["proj.W"].T + p["proj.b"]
        return y, _Cache(ids, mask, denom, c, S, A, probs, m1, m2, c1, c2, h_last)

    def backward(self, cache: _Cache, dy: np.ndarray) -> dict[str, np.ndarray]:
        p = self.params
        grads = {"proj.W": dy.T @ cache.h_last, "proj.b": dy.sum(axis=0)}
        dh_last = dy @ p["proj.W"]
        mask = cache.mask
        B, T = mask.shape
        zeros = np.zeros((B, T, self.config.hidden_dim), dtype=dh_last.dtype)
        dX2, (gx, gh, gb) = lstm_sequence_backward(self.lstm("lstm2"), cache.c2, mask, zeros, dh_last)
        grads.update({"lstm2.Wx": gx, "lstm2.Wh": gh, "lstm2.b": gb})
        dH1 = dX2 if cache.m2 is None else dX2 * cache.m2
        dX1, (gx, gh, gb) = lstm_sequence_backward(self.lstm("lstm1"), cache.c1, mask, dH1)
        grads.update({"lstm1.Wx": gx, "lstm1.Wh": gh, "lstm1.b": gb})
        d_att = dX1 if cache.m1 is None else dX1 * cache.m1
        d_att = d_att * mask[..., None]

        S, A, probs = cache.S, cache.A, cache.p
        dS = probs[..., None] * d_att[:, :, None, :]
        dprobs = np.einsum("btkd,btd->btk", S, d_att)
        dlogits = softmax_backward(probs, dprobs)
        grads["att.Wp"] = np.einsum("btk,btkh->kh", dlogits, A)
        dpre = dlogits[..., None] * p["att.Wp"] * (1.0 - A * A)
        grads["att.W"] = np.einsum("btkh,btkd->hd", dpre, S)
        dS += dpre @ p["att.W"]
        dUc = dpre.sum(axis=2)
        grads["att.U"] = np.einsum("bth,btd->hd", dUc, cache.c)
        grads["att.b"] = dUc.sum(axis=(0, 1))
        lengths = mask.sum(axis=1)
        dc = (dUc @ p["att.U"]) * mask[..., None] * (lengths > 1)[:, None, None]
        # c_i = (sum_t g_t - g_i) / (L - 1)
        dc = dc / cache.denom
        dG = (dc.sum(axis=1, keepdims=True) - dc) * mask[..., None]

        valid = mask.astype(bool)
        ids = cache.ids[valid]
        d_generic = np.zeros_like(p["generic"])
        np.add.at(d_generic, ids, dG[valid])
        d_senses = np.zeros_like(p["senses"])
        np.add.at(d_senses, ids, dS[valid])
        grads["generic"] = d_generic
        grads["senses"] = d_senses
        return grads

    def loss_and_grad(self, ids, mask, targets, training=False, rng=None):
        y, cache = self.forward(ids, mask, training, rng)
        diff = y - targets
        # kept as a numpy scalar so extended-precision parameters give an extended-precision loss
        loss = np.mean(np.sum(diff * diff, axis=1))
        return loss, self.backward(cache, 2.0 * diff / len(targets)), cache

    def apply_sense_updates(self, cache: _Cache, rate: float | None = None) -> None:
        rate = self.config.sense_update_rate if rate is None else rate
        if rate == 0.0:
            return
        senses = self.params["senses"]
        weighting = self.config.sense_update_weighting
        for b, t in zip(*np.nonzero(cache.mask)):
            c = cache.c[b, t]
            s = senses[cache.ids[b, t]]
            before = np.linalg.norm(s, axis=1, keepdims=True)
            share = np.ones(len(s))
            if weighting == "attention":
                share = cache.p[b, t]
            elif weighting == "argmax":
                share = np.zeros(len(s))
                share[np.argmax(cache.p[b, t])] = 1.0
            s += rate * (share * (s @ c))[:, None] * c[None, :]
            if self.config.sense_update_keep_norm:
                after = np.linalg.norm(s, axis=1, keepdims=True)
                s *= np.divide(before, after, out=np.ones_like(after), where=after > 0)

    # -- inference ------------------------------------------------------

    def compose(self, tokens: Sequence[str]) -> np.ndarray:
        if not tokens:
            raise ValueError("empty token list")
        ids, mask = self.encode([tokens])
        return self.forward(ids, mask, training=False)[0][0]

    def predict(self, token_lists: Sequence[Sequence[str]], batch_size: int = 256) -> np.ndarray:
        out = np.zeros((len(token_lists), self.config.output_dim))
        for s in range(0, len(token_lists), batch_size):
            ids, mask = self.encode(token_lists[s : s + batch_size])
            out[s : s + batch_size] = self.forward(ids, mask, training=False)[0]
        return out

    def infer(self, tokens: Sequence[str], index: EmbeddingTable, top_k: int = 10) -> list[tuple[str, float]]:
        if len(index) == 0:
            raise ValueError("empty index")
        y = self.compose(tokens)
        scores = cosine_scores(index.vectors, y)
        order = rank_order(scores, index.labels)[: max(0, top_k)]
        return [(index.labels[i], float(scores[i])) for i in order]

    def nearest_words_per_sense(self, word: str, n: int = 5) -> list[list[tuple[str, float]]]:
        if word not in self.bank.vocab:
            raise KeyError(f"unknown word {word!r}")
        words = self.bank.words
        keep = [i for i, w in enumerate(words) if w not in (word, UNK)]
        cand = self.params["generic"][keep]
        labels = [words[i] for i in keep]
        out = []
        for s in self.params["senses"][self.bank.vocab[word]]:
            scores = cosine_scores(cand, s)
            order = rank_order(scores, labels)[: max(0, n)]
            out.append([(labels[i], float(scores[i])) for i in order])
        return out

    # -- persistence ----------------------------------------------------

    def save(self, stream: BinaryIO, vocab_stream: TextIO | None = None) -> None:
        arrays = dict(self.params)
        for f in fields(MsLstmConfig):
            v = getattr(self.config, f.name)
            if f.name == "sense_update_weighting":
                v = SENSE_WEIGHTINGS.index(v)
            arrays[f"config.{f.name}"] = np.array(float(v))
        write_arrays(stream, arrays)
        if vocab_stream is not None:
            for w in self.bank.words:
                vocab_stream.write(f"{w}\t{self.bank.vocab[w]}\n")

    @classmethod
    def load(cls, stream: BinaryIO, vocab_lines: Iterable[str]) -> "MsLstmModel":
        arrays = read_arrays(stream)
        kw = {}
        for f in fields(MsLstmConfig):
            v = arrays.pop(f"config.{f.name}").item()
            if f.name == "sense_update_weighting":
                kw[f.name] = SENSE_WEIGHTINGS[int(v)]
            else:
                kw[f.name] = bool(v) if f.type in ("bool", bool) else (float(v) if f.type in ("float", float) else int(v))
        config = MsLstmConfig(**kw)
        vocab = {}
        for line in vocab_lines:
            if line.strip():
                w, idx = line.rstrip("\n").split("\t")
                vocab[w] = int(idx)
        if len(vocab) != len(arrays["generic"]):
            raise ValueError("vocabulary sidecar does not match the checkpoint")
        bank = SenseBank(vocab, arrays["generic"], arrays["senses"])
        return cls(config, bank, arrays)


def standard_lstm_forward(model: MsLstmModel, tokens: Sequence[str]) -> np.ndarray:
    """Plain two-layer LSTM over the first sense vector of each token, step by step.

    Reference path for the single-sense model: no attention, no masking.
    """
    p = model.params
    l1, l2 = model.lstm("lstm1"), model.lstm("lstm2")
    h1 = np.zeros((1, l1.hidden_dim))
    c1 = np.zeros_like(h1)
    h2 = np.zeros((1, l2.hidden_dim))
    c2 = np.zeros_like(h2)
    for t in tokens:
        x = p["senses"][model.bank.id(t)][0][None, :]
        h1, c1, _ = lstm_step(l1, x, h1, c1)
        h2, c2, _ = lstm_step(l2, h1, h2, c2)
    return (h2 @ p["proj.W"].T + p["proj.b"])[0]


# --------------------------------------------------------------- training


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    learning_rate: float = 0.001

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


def train(
    model: MsLstmModel,
    pairs: Sequence[TrainingPair],
    cfg: TrainConfig,
    dev: Sequence[TrainingPair] | None = None,
    on_epoch=None,
) -> list[EpochLog]:
    """Mini-batch Adam on MSE; sense context updates follow each optimizer step."""
    if not pairs:
        raise ValueError("no training pairs")
    rng = np.random.default_rng(np.random.SeedSequence(int(cfg.seed) & 0xFFFFFFFFFFFFFFFF))
    if model.optimizer is None:
        model.optimizer = Adam(model.params, alpha=cfg.learning_rate)
    targets = np.stack([p.target for p in pairs])
    if targets.shape[1] != model.config.output_dim:
        raise ValueError(f"targets have dimension {targets.shape[1]}, model outputs {model.config.output_dim}")
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(pairs))
        total = 0.0
        for s in range(0, len(order), cfg.batch_size):
            batch = order[s : s + cfg.batch_size]
            ids, mask = model.encode([pairs[i].tokens for i in batch])
            loss, grads, cache = model.loss_and_grad(ids, mask, targets[batch], training=True, rng=rng)
            if not model.config.sense_gradient:
                grads["senses"][:] = 0.0
            model.optimizer.step(grads)
            if model.config.sense_update:
                rate = model.config.sense_update_rate
                if model.config.sense_update_decay:
                    rate *= 1.0 - (epoch - 1) / cfg.epochs
                model.apply_sense_updates(cache, rate)
            total += loss * len(batch)
        entry = EpochLog(epoch, total / len(pairs))
        if dev:
            entry.dev_mse = mse_loss(model.predict([p.tokens for p in dev]), np.stack([p.target for p in dev]))
        history.append(entry)
        # a callback returning True ends training early
        if on_epoch is not None and on_epoch(entry):
            break
    return history


def anchor_pairs(kb: EmbeddingTable) -> list[TrainingPair]:
    """One (feature tokens, feature vector) pair per textual node in the KB space."""
    out = []
    for label, vec in zip(kb.labels, kb.vectors):
        if label.startswith(TEXT_PREFIX):
            word = label[len(TEXT_PREFIX) :]
            out.append(TrainingPair(tokenize(word) or [word], vec.copy(), entity=label, is_anchor=True))
    return out


def pairs_from_texts(rows: Iterable[tuple[str, str]], kb: EmbeddingTable) -> list[TrainingPair]:
    """Resolve ``(text, entity_label)`` rows against the KB space."""
    out = []
    for text, entity in rows:
        if entity not in kb:
            raise KeyError(f"no vector for entity {entity!r}")
        toks = tokenize(text)
        if not toks:
            log.warning("text for %s has no tokens after filtering; skipped", entity)
            continue
        out.append(TrainingPair(toks, kb[entity].copy(), entity=entity))
    return out


def read_pairs_file(lines: Iterable[str]) -> list[tuple[str, str]]:
    rows = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        text, sep, entity = line.rpartition("\t")
        if not sep or not entity:
            raise ValueError(f"line {lineno}: expected text<TAB>entity_label")
        rows.append((text, entity))
    return rows


def vocabulary(pairs: Iterable[TrainingPair]) -> list[str]:
    seen: dict[str, None] = {}
    for p in pairs:
        for t in p.tokens:
            seen.setdefault(t, None)
    return list(seen)


def cast_params(model: MsLstmModel, dtype) -> MsLstmModel:
    """Copy of ``model`` with every array cast to ``dtype`` (e.g. ``np.longdouble`` for gradient checks)."""
    params = {k: v.astype(dtype) for k, v in model.params.items()}
    bank = SenseBank(dict(model.bank.vocab), params["generic"], params["senses"])
    return MsLstmModel(model.config, bank, params)
