"""Time the compiled kernels against the numpy fallback on a planted KB.

Runs both backends in one process: the numba kernels are compiled and warmed
up first, then each workload is timed ``--repeats`` times per backend and the
best time is reported. With ``KBMAP_DISABLE_JIT=1`` only the numpy rows are
produced.

    python3 benchmarks/bench_kernels.py --entities 400 --repeats 3
"""

import argparse
import time

import numpy as np

from kbmap import _accel
from kbmap.skipgram import SkipgramConfig, train_skipgram
from kbmap.synthetic import planted_kb
from kbmap.tfidf import compute_tfidf, documents_from_descriptions, extend_graph
from kbmap.walks import WalkConfig, generate_corpus, run_walks, transition_table, walk_uniforms


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--entities", type=int, default=400)
    ap.add_argument("--walk-length", type=int, default=20)
    ap.add_argument("--walks-per-node", type=int, default=10)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--skipgram-walks", type=int, default=400, help="walks fed to the skipgram timing")
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args(argv)

    kb = planted_kb(n_entities=args.entities, n_communities=max(1, args.entities // 10), seed=0)
    g = extend_graph(kb.graph, compute_tfidf(documents_from_descriptions(kb.descriptions)))
    wcfg = WalkConfig(lam=0.5, walk_length=args.walk_length, walks_per_node=args.walks_per_node)

    # the sampling kernel alone, uniforms drawn up front
    table = transition_table(g, wcfg.lam)
    nodes = np.flatnonzero(np.diff(g.offsets) > 0)
    starts = np.repeat(nodes, wcfg.walks_per_node)
    uniforms = walk_uniforms(0, starts, np.tile(np.arange(wcfg.walks_per_node), len(nodes)), wcfg.walk_length - 1)
    corpus = generate_corpus(g, wcfg, backend="numpy")
    sentences = corpus.sentences()[: args.skipgram_walks]
    scfg = SkipgramConfig(dim=args.dim, epochs=1)
    n_pairs = sum(len(s) for s in sentences) * 2 * scfg.window

    backends = ["numpy"] + (["numba"] if _accel.USE_NUMBA else [])
    if _accel.USE_NUMBA:
        # compile outside the timed region
        run_walks(table, starts[:2], uniforms[:2], wcfg.walk_length, backend="numba")
        train_skipgram(sentences[:2], SkipgramConfig(dim=4, epochs=1), backend="numba")

    print(f"graph: {len(g)} nodes ({args.entities} entities), {g.n_edges} edges")
    print(f"walk kernel: {len(starts)} walks x {wcfg.walk_length} steps; skipgram: {len(sentences)} walks (~{n_pairs} pairs), dim {args.dim}")
    print(f"{'workload':<22}{'backend':<9}{'best s':>10}")
    results = {}
    for backend in backends:
        results["walk kernel", backend] = best_of(
            lambda: run_walks(table, starts, uniforms, wcfg.walk_length, backend=backend), args.repeats
        )
        results["corpus (end to end)", backend] = best_of(lambda: generate_corpus(g, wcfg, backend=backend), args.repeats)
        results["skipgram epoch", backend] = best_of(lambda: train_skipgram(sentences, scfg, backend=backend), args.repeats)
    for (name, backend), secs in results.items():
        print(f"{name:<22}{backend:<9}{secs:>10.4f}")
    if _accel.USE_NUMBA:
        print("speed-up of numba over numpy:")
        for name in ("walk kernel", "corpus (end to end)", "skipgram epoch"):
            print(f"  {name:<20}{results[name, 'numpy'] / results[name, 'numba']:>8.1f}x")


if __name__ == "__main__":
    main()
