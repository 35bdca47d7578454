"""Fixtures shared by the module tests and the acceptance suite."""

import numpy as np

from kbmap.mslstm import MsLstmConfig, MsLstmModel, TrainingPair, cast_params, vocabulary
from kbmap.neural import grad_check

MODEL_BLOCKS = (
    "senses",
    "generic",
    "att.W",
    "att.U",
    "att.b",
    "att.Wp",
    "lstm1.Wx",
    "lstm1.Wh",
    "lstm1.b",
    "lstm2.Wx",
    "lstm2.Wh",
    "lstm2.b",
    "proj.W",
    "proj.b",
)


def model_grad_check(seed: int, dropout: float = 0.3):
    """Central differences over every block of a tiny mapper, in extended precision.

    Weights are spread out from their near-identical initial values so that
    every block, including the attention path, carries a visible gradient.
    """
    cfg = MsLstmConfig(embed_dim=4, senses=3, attention_dim=3, hidden_dim=5, output_dim=4, dropout=dropout, seed=seed)
    model = MsLstmModel.create(cfg, ["a", "b", "c", "d"])
    rng = np.random.default_rng(seed)
    model.params["senses"][:] = rng.normal(0, 0.7, model.params["senses"].shape)
    model.params["generic"][:] = rng.normal(0, 0.7, model.params["generic"].shape)
    model.params["att.b"][:] = rng.normal(0, 0.3, model.params["att.b"].shape)
    model = cast_params(model, np.longdouble)
    ids, mask = model.encode([["a", "b", "c"], ["d", "a"], ["b"]])
    targets = rng.normal(size=(3, 4))

    def f():
        # the same dropout masks on every evaluation
        loss, grads, _ = model.loss_and_grad(ids, mask, targets, training=True, rng=np.random.default_rng(seed + 1000))
        return loss, grads

    return grad_check(f, model.params, blocks=MODEL_BLOCKS)


def toy_pairs(n_pairs=20, n_words=30, dim=8, seed=0):
    rng = np.random.default_rng(seed)
    words = [f"w{i}" for i in range(n_words)]
    return [
        TrainingPair([str(w) for w in rng.choice(words, int(rng.integers(2, 5)))], rng.normal(size=dim) * 0.3)
        for _ in range(n_pairs)
    ]


def toy_model(pairs, senses, dim=8, seed=0):
    kw = dict(embed_dim=16, attention_dim=8, hidden_dim=32, output_dim=dim, dropout=0.0, seed=seed)
    cfg = MsLstmConfig(senses=senses, **kw) if senses > 1 else MsLstmConfig.standard_lstm(**kw)
    return MsLstmModel.create(cfg, vocabulary(pairs))


# filled by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def report(criterion: str, passed: bool, detail: str) -> bool:
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)
    return passed
