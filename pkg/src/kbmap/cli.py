"""Command-line driver: every pipeline stage is a subcommand with file-based handoff.

Exit status is 0 on success, 1 for bad input or usage and 2 when an internal
invariant breaks.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
import tempfile
import warnings
from pathlib import Path

import numpy as np

from kbmap.evaluation import classify_nodes, evaluate_retrieval
from kbmap.graph import GraphFormatError, KbGraph, degree_stats, load_descriptions, read_graph, write_graph
from kbmap.mslstm import (
    MsLstmConfig,
    MsLstmModel,
    TrainConfig,
    anchor_pairs,
    pairs_from_texts,
    read_pairs_file,
    train,
    vocabulary,
)
from kbmap.pipeline import entity_index
from kbmap.skipgram import EmbeddingFormatError, EmbeddingTable, SkipgramConfig, train_skipgram
from kbmap.tfidf import TfIdfTable, compute_tfidf, documents_from_descriptions, extend_graph
from kbmap.walks import WalkConfig, generate_corpus, read_corpus

log = logging.getLogger("kbmap")


class UserError(Exception):
    """Bad input or arguments; reported without a traceback and exit status 1."""


USER_ERRORS = (UserError, ValueError, KeyError, OSError, GraphFormatError, EmbeddingFormatError)


@contextlib.contextmanager
def atomic_write(path: str | os.PathLike, binary: bool = False):
    """Write to a temporary file next to ``path`` and rename it into place on success."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb" if binary else "w", encoding=None if binary else "utf-8", newline=None if binary else "\n") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def _open_text(path: str):
    try:
        return open(path, encoding="utf-8")
    except FileNotFoundError:
        raise UserError(f"no such file: {path}") from None


def _read_graph(path: str) -> KbGraph:
    with _open_text(path) as fh:
        return read_graph(fh)


def _read_embeddings(path: str) -> EmbeddingTable:
    with _open_text(path) as fh:
        return EmbeddingTable.read(fh)


def _load_model(path: str, vocab_path: str | None) -> MsLstmModel:
    vocab_path = vocab_path or path + ".vocab"
    try:
        with open(path, "rb") as fh, _open_text(vocab_path) as vf:
            return MsLstmModel.load(fh, vf)
    except FileNotFoundError:
        raise UserError(f"no such file: {path}") from None


def _ks(text: str) -> list[int]:
    try:
        ks = [int(k) for k in text.split(",") if k.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not ks or any(k < 1 for k in ks):
        raise argparse.ArgumentTypeError("cut-offs must be positive integers")
    return ks


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


# ---------------------------------------------------------------- commands


def cmd_graph(args) -> int:
    g = _read_graph(args.edges)
    with atomic_write(args.out) as fh:
        write_graph(g, fh)
    for line in degree_stats(g).lines():
        print(line)
    return 0


def cmd_extend(args) -> int:
    g = _read_graph(args.graph)
    with _open_text(args.descriptions) as fh:
        descriptions = load_descriptions(fh)
    unknown = sorted(set(descriptions) - set(g.index))
    if unknown:
        raise UserError(f"description for unknown entity {unknown[0]!r}")
    exclude: set[str] = set()
    if args.exclude:
        with _open_text(args.exclude) as fh:
            exclude = {line.strip() for line in fh if line.strip() and not line.startswith("#")}
    kept = {k: v for k, v in descriptions.items() if k not in exclude}
    docs = [d for d in documents_from_descriptions(kept) if d.tokens]
    if not docs:
        log.warning("no usable descriptions; graph left unchanged")
        table, out = TfIdfTable({}, 0), g
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            table = compute_tfidf(docs)
        out = extend_graph(g, table)
    with atomic_write(args.out) as fh:
        write_graph(out, fh)
    if args.tfidf_out:
        with atomic_write(args.tfidf_out) as fh:
            table.write(fh)
    print(f"textual nodes added\t{len(out) - len(g)}")
    return 0


def cmd_walk(args) -> int:
    cfg = WalkConfig(
        lam=args.lam, walk_length=args.length, walks_per_node=args.walks_per_node, seed=args.seed, threads=args.threads
    )
    g = _read_graph(args.graph)
    corpus = generate_corpus(g, cfg)
    with atomic_write(args.out) as fh:
        corpus.write(fh)
    print(f"walks\t{len(corpus)}")
    print(f"truncated\t{int(corpus.truncated.sum())}")
    return 0


def cmd_embed(args) -> int:
    cfg = SkipgramConfig(
        dim=args.dim,
        window=args.window,
        negatives=args.negatives,
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        seed=args.seed,
        threads=args.threads,
    )
    with _open_text(args.corpus) as fh:
        sentences = read_corpus(fh)
    if not sentences:
        raise UserError(f"corpus {args.corpus} is empty")
    table = train_skipgram(sentences, cfg)
    with atomic_write(args.out) as fh:
        table.write(fh)
    print(f"vectors\t{len(table)}")
    print(f"dim\t{table.dim}")
    return 0


def _pairs(path: str, kb: EmbeddingTable):
    with _open_text(path) as fh:
        rows = read_pairs_file(fh)
    return pairs_from_texts(rows, kb)


def cmd_train(args) -> int:
    model_cfg = MsLstmConfig(
        embed_dim=args.embed_dim,
        senses=args.senses,
        attention_dim=args.attention_dim,
        hidden_dim=args.hidden_dim,
        output_dim=1,
        dropout=args.dropout,
        seed=args.seed,
    )
    train_cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, seed=args.seed, learning_rate=args.learning_rate)
    kb = _read_embeddings(args.kb)
    pairs = _pairs(args.pairs, kb)
    if not pairs:
        raise UserError(f"no usable training pairs in {args.pairs}")
    dev = _pairs(args.dev, kb) if args.dev else None
    extra = anchor_pairs(kb) if args.anchors else []
    print(f"training pairs\t{len(pairs)}")
    print(f"anchor pairs\t{len(extra)}")
    kw = dict(vars(model_cfg), output_dim=kb.dim)
    model_cfg = MsLstmConfig.standard_lstm(**kw) if args.senses == 1 else MsLstmConfig(**kw)
    model = MsLstmModel.create(model_cfg, vocabulary(pairs + extra))

    with atomic_write(args.loss_log) if args.loss_log else contextlib.nullcontext(None) as loss_fh:

        def on_epoch(entry):
            line = f"{entry.epoch}\t{entry.train_mse:.8f}"
            if entry.dev_mse is not None:
                line += f"\t{entry.dev_mse:.8f}"
            if loss_fh is not None:
                loss_fh.write(line + "\n")
            log.info("epoch %s", line)

        history = train(model, pairs + extra, train_cfg, dev=dev, on_epoch=on_epoch)
        with atomic_write(args.out, binary=True) as fh, atomic_write(args.out + ".vocab") as vf:
            model.save(fh, vf)
    print(f"final train mse\t{history[-1].train_mse:.6f}")
    return 0


def cmd_eval(args) -> int:
    model = _load_model(args.model, args.vocab)
    kb = _read_embeddings(args.kb)
    with _open_text(args.pairs) as fh:
        rows = read_pairs_file(fh)
    if not rows:
        raise UserError(f"test file {args.pairs} has no pairs")
    index = entity_index(kb)
    pairs = pairs_from_texts(rows, kb)
    for p in pairs:
        if p.entity not in index:
            raise UserError(f"gold entity {p.entity!r} is not an entity of the KB space")
    if not pairs:
        raise UserError(f"test file {args.pairs} has no usable pairs")
    report = evaluate_retrieval(model.predict([p.tokens for p in pairs]), [p.entity for p in pairs], index, ks=args.ks)
    print(report.table())
    if args.out:
        with atomic_write(args.out) as fh:
            fh.write("\n".join(report.machine_lines()) + "\n")
    return 0


def cmd_infer(args) -> int:
    from kbmap.tfidf import tokenize

    if not args.text.strip():
        raise UserError("empty text")
    tokens = tokenize(args.text) or args.text.lower().split()
    if args.top < 1:
        raise UserError("--top must be >= 1")
    model = _load_model(args.model, args.vocab)
    kb = _read_embeddings(args.kb)
    for label, score in model.infer(tokens, entity_index(kb), top_k=args.top):
        print(f"{label}\t{score:.4f}")
    return 0


def cmd_classify(args) -> int:
    if not 0.0 < args.train_ratio < 1.0:
        raise UserError(f"--train-ratio must lie in (0, 1), got {args.train_ratio}")
    emb = _read_embeddings(args.embeddings)
    nodes, classes = [], []
    with _open_text(args.labels) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            node, sep, cls = line.partition("\t")
            if not sep or not cls:
                raise UserError(f"{args.labels}: line {lineno}: expected node_label<TAB>class_label")
            if node not in emb:
                raise UserError(f"{args.labels}: line {lineno}: no vector for {node!r}")
            nodes.append(node)
            classes.append(cls)
    acc = classify_nodes(
        np.stack([emb[n] for n in nodes]), classes, train_ratio=args.train_ratio, seed=args.seed
    )
    print(f"accuracy\t{acc:.4f}")
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1, help="parallel walk/skipgram workers (non-deterministic if > 1)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="kbmap", description="Map text onto knowledge-base vector spaces.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("graph", parents=[common], help="validate and normalise an edge list")
    s.add_argument("edges")
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_graph)

    s = sub.add_parser("extend", parents=[common], help="attach tf-idf textual nodes")
    s.add_argument("graph")
    s.add_argument("descriptions", help="entity_label<TAB>text lines")
    s.add_argument("--exclude", help="file of entity labels whose text is left out")
    s.add_argument("-o", "--out", required=True)
    s.add_argument("--tfidf-out")
    s.set_defaults(func=cmd_extend)

    s = sub.add_parser("walk", parents=[common], help="generate a random-walk corpus")
    s.add_argument("graph")
    s.add_argument("--lambda", dest="lam", type=float, default=1.0)
    s.add_argument("--length", type=int, default=20)
    s.add_argument("--walks-per-node", type=int, default=10)
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_walk)

    s = sub.add_parser("embed", parents=[common], help="skipgram embeddings of a walk corpus")
    s.add_argument("corpus")
    s.add_argument("--dim", type=int, default=150)
    s.add_argument("--window", type=int, default=5)
    s.add_argument("--negatives", type=int, default=5)
    s.add_argument("--epochs", type=int, default=5)
    s.add_argument("--learning-rate", type=float, default=0.025)
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("train", parents=[common], help="train the text-to-KB mapper")
    s.add_argument("pairs", help="text<TAB>entity_label lines")
    s.add_argument("kb", help="KB embedding file")
    s.add_argument("--senses", type=int, default=3)
    s.add_argument("--anchors", type=_on_off, default=False, metavar="{on,off}")
    s.add_argument("--epochs", type=int, default=100)
    s.add_argument("--batch-size", type=int, default=32)
    s.add_argument("--learning-rate", type=float, default=0.001)
    s.add_argument("--embed-dim", type=int, default=150)
    s.add_argument("--attention-dim", type=int, default=50)
    s.add_argument("--hidden-dim", type=int, default=200)
    s.add_argument("--dropout", type=float, default=0.3)
    s.add_argument("--dev", help="held-out pairs for a per-epoch dev MSE")
    s.add_argument("--loss-log")
    s.add_argument("-o", "--out", required=True, help="checkpoint path; the vocabulary goes to OUT.vocab")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="retrieval metrics on test pairs")
    s.add_argument("model")
    s.add_argument("pairs")
    s.add_argument("kb")
    s.add_argument("--vocab")
    s.add_argument("--ks", type=_ks, default=[1, 10, 20, 100])
    s.add_argument("-o", "--out", help="metric<TAB>value report")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("infer", parents=[common], help="rank entities for a piece of text")
    s.add_argument("model")
    s.add_argument("kb")
    s.add_argument("--vocab")
    s.add_argument("--text", required=True)
    s.add_argument("--top", type=int, default=10)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("classify", parents=[common], help="linear node classification accuracy")
    s.add_argument("embeddings")
    s.add_argument("labels", help="node_label<TAB>class_label lines")
    s.add_argument("--train-ratio", type=float, default=0.5)
    s.set_defaults(func=cmd_classify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors; those are user errors here
        return 0 if exc.code == 0 else 1
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.threads < 1:
        print("kbmap: error: --threads must be >= 1", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except USER_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"kbmap: error: {msg}", file=sys.stderr)
        return 1
    except Exception as exc:  # invariant violations and bugs
        print(f"kbmap: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
