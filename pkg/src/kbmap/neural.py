"""Small double-precision neural toolkit: LSTM cell with manual backward, Adam,
dropout, softmax, finite-difference gradient checking and a binary checkpoint
format.

Gate layout in the stacked LSTM weights is ``[input, forget, output, candidate]``.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Callable, Mapping

import numpy as np

ADAM_ALPHA = 0.001
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class ShapeError(ValueError):
    pass


def _as_float(x):
    """Float array preserving float64/longdouble inputs; anything else becomes float64."""
    x = np.asarray(x)
    return x if x.dtype.kind == "f" else x.astype(np.float64)


def sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def softmax(logits, axis=-1):
    logits = _as_float(logits)
    if np.isnan(logits).any():
        raise ValueError("softmax input contains NaN")
    z = np.exp(logits - logits.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def softmax_backward(p, dp, axis=-1):
    return p * (dp - np.sum(p * dp, axis=axis, keepdims=True))


# --------------------------------------------------------------------- LSTM


@dataclass
class LstmParams:
    Wx: np.ndarray  # (4h, input_dim)
    Wh: np.ndarray  # (4h, h)
    b: np.ndarray  # (4h,)

    @property
    def input_dim(self) -> int:
        return self.Wx.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.Wh.shape[1]

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator) -> "LstmParams":
        ax = 1.0 / np.sqrt(input_dim)
        ah = 1.0 / np.sqrt(hidden_dim)
        b = np.zeros(4 * hidden_dim)
        b[hidden_dim : 2 * hidden_dim] = 1.0
        return cls(
            Wx=rng.uniform(-ax, ax, size=(4 * hidden_dim, input_dim)),
            Wh=rng.uniform(-ah, ah, size=(4 * hidden_dim, hidden_dim)),
            b=b,
        )

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "LstmParams":
        return cls(np.zeros((4 * hidden_dim, input_dim)), np.zeros((4 * hidden_dim, hidden_dim)), np.zeros(4 * hidden_dim))

    def arrays(self, prefix: str) -> dict[str, np.ndarray]:
        return {f"{prefix}.Wx": self.Wx, f"{prefix}.Wh": self.Wh, f"{prefix}.b": self.b}


@dataclass
class LstmCache:
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    tanh_c: np.ndarray


def lstm_step(params: LstmParams, x, h_prev, c_prev):
    """One LSTM step. Accepts single vectors or row-batched matrices.

    Returns ``(h, c, cache)``.
    """
    x, h_prev, c_prev = _as_float(x), _as_float(h_prev), _as_float(c_prev)
    H = params.hidden_dim
    if x.shape[-1] != params.input_dim:
        raise ShapeError(f"input has {x.shape[-1]} features, cell expects {params.input_dim}")
    if h_prev.shape[-1] != H or c_prev.shape[-1] != H:
        raise ShapeError(f"state must have {H} features")
    z = x @ params.Wx.T + h_prev @ params.Wh.T + params.b
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H : 2 * H])
    o = sigmoid(z[..., 2 * H : 3 * H])
    g = np.tanh(z[..., 3 * H :])
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return h, c, LstmCache(x, h_prev, c_prev, i, f, o, g, tanh_c)


def lstm_step_backward(params: LstmParams, cache: LstmCache, dh, dc):
    """Backward of ``lstm_step``. Returns ``(dx, dh_prev, dc_prev, (dWx, dWh, db))``."""
    dc = dc + dh * cache.o * (1.0 - cache.tanh_c**2)
    do = dh * cache.tanh_c
    di = dc * cache.g
    dg = dc * cache.i
    df = dc * cache.c_prev
    dc_prev = dc * cache.f
    dz = np.concatenate(
        [
            di * cache.i * (1.0 - cache.i),
            df * cache.f * (1.0 - cache.f),
            do * cache.o * (1.0 - cache.o),
            dg * (1.0 - cache.g**2),
        ],
        axis=-1,
    )
    dx = dz @ params.Wx
    dh_prev = dz @ params.Wh
    dz2 = np.atleast_2d(dz)
    dWx = dz2.T @ np.atleast_2d(cache.x)
    dWh = dz2.T @ np.atleast_2d(cache.h_prev)
    db = dz2.sum(axis=0)
    return dx, dh_prev, dc_prev, (dWx, dWh, db)


def lstm_sequence(params: LstmParams, X, mask=None):
    """Run a batch of padded sequences ``X`` (B, T, in).

    Where ``mask[b, t]`` is 0 the state is carried through unchanged, so the
    state at the last step is the state after each sequence's own last token.
    Returns ``(H, h_last, caches)`` with ``H`` of shape (B, T, hidden).
    """
    B, T, _ = X.shape
    Hd = params.hidden_dim
    if mask is None:
        mask = np.ones((B, T))
    dt = np.result_type(X, params.Wx)
    h = np.zeros((B, Hd), dtype=dt)
    c = np.zeros((B, Hd), dtype=dt)
    out = np.zeros((B, T, Hd), dtype=dt)
    caches = []
    for t in range(T):
        h_new, c_new, cache = lstm_step(params, X[:, t], h, c)
        m = mask[:, t : t + 1]
        h = m * h_new + (1.0 - m) * h
        c = m * c_new + (1.0 - m) * c
        out[:, t] = h
        caches.append(cache)
    return out, h, caches


def lstm_sequence_backward(params: LstmParams, caches, mask, dH, dh_last=None):
    """Backward of ``lstm_sequence``. ``dH`` is the gradient w.r.t. every output step."""
    B, T, Hd = dH.shape
    dX = np.zeros((B, T, params.input_dim), dtype=np.result_type(dH, params.Wx))
    dWx = np.zeros_like(params.Wx)
    dWh = np.zeros_like(params.Wh)
    db = np.zeros_like(params.b)
    dh = np.zeros((B, Hd), dtype=dX.dtype) if dh_last is None else dh_last.copy()
    dc = np.zeros((B, Hd), dtype=dX.dtype)
    for t in range(T - 1, -1, -1):
        dh = dh + dH[:, t]
        m = mask[:, t : t + 1]
        dx, dh_prev, dc_prev, (gx, gh, gb) = lstm_step_backward(params, caches[t], m * dh, m * dc)
        dX[:, t] = dx
        dWx += gx
        dWh += gh
        db += gb
        dh = dh_prev + (1.0 - m) * dh
        dc = dc_prev + (1.0 - m) * dc
    return dX, (dWx, dWh, db)


# --------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    alpha: float = ADAM_ALPHA
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    @classmethod
    def like(cls, param: np.ndarray, **kw) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param), **kw)


def adam_update(param: np.ndarray, grad: np.ndarray, state: AdamState) -> np.ndarray:
    """Bias-corrected Adam step applied to ``param`` in place."""
    if param.shape != grad.shape or param.shape != state.m.shape:
        raise ShapeError(f"shape mismatch: param {param.shape}, grad {grad.shape}, state {state.m.shape}")
    state.step += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grad
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    param -= state.alpha * m_hat / (np.sqrt(v_hat) + state.eps)
    return param


class Adam:
    """Adam over a named parameter dictionary; parameters are updated in place."""

    def __init__(self, params: Mapping[str, np.ndarray], alpha: float = ADAM_ALPHA):
        self.params = params
        self.states = {k: AdamState.like(p, alpha=alpha) for k, p in params.items()}

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        for k, g in grads.items():
            adam_update(self.params[k], g, self.states[k])


# ------------------------------------------------------------------ dropout


def dropout(x, rate: float, training: bool, rng: np.random.Generator | None = None):
    """Inverted dropout. Returns ``(y, mask)``; ``mask`` already includes the 1/(1-rate) scale."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    x = _as_float(x)
    if not training or rate == 0.0:
        return x, None
    keep = rng.random(x.shape) >= rate
    mask = keep / (1.0 - rate)
    return x * mask, mask


# --------------------------------------------------------------- grad check


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    tolerance: float
    analytic_nonzero: dict[str, bool] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(e <= self.tolerance for e in self.max_rel_error.values())

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


def grad_check(
    loss_and_grad: Callable[[], tuple[float, Mapping[str, np.ndarray]]],
    params: Mapping[str, np.ndarray],
    tolerance: float = 1e-4,
    step: float = 1e-5,
    blocks=None,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``loss_and_grad`` is a closure evaluated at the current contents of
    ``params``; entries are perturbed in place and restored. Relative error is
    ``|a - n| / max(|a|, |n|, 1e-8)``. With ``max_entries`` set, that many
    entries per block are checked, chosen with ``rng``.
    """
    _, analytic = loss_and_grad()
    analytic = {k: np.array(v, copy=True) for k, v in analytic.items()}
    names = list(blocks) if blocks is not None else list(params)
    errors, nonzero = {}, {}
    for name in names:
        p = params[name]
        flat = p.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, size=max_entries, replace=False)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            lp = loss_and_grad()[0]
            flat[i] = orig - step
            lm = loss_and_grad()[0]
            flat[i] = orig
            num = (lp - lm) / (2.0 * step)
            a = a_flat[i]
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
        errors[name] = worst
        nonzero[name] = bool(np.any(a_flat != 0.0))
    return GradCheckReport(errors, tolerance, nonzero)


# --------------------------------------------------------------- checkpoint

MAGIC = b"KBMPCKPT"
VERSION = 1


def write_arrays(stream: BinaryIO, arrays: Mapping[str, np.ndarray]) -> None:
    """Little-endian blocks: name length, name, ndim, shape, row-major float64 data."""
    stream.write(MAGIC)
    stream.write(struct.pack("<II", VERSION, len(arrays)))
    for name, arr in arrays.items():
        arr = np.array(arr, dtype="<f8", order="C")  # ascontiguousarray would promote 0-d to 1-d
        raw = name.encode("utf-8")
        stream.write(struct.pack("<I", len(raw)))
        stream.write(raw)
        stream.write(struct.pack("<I", arr.ndim))
        stream.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        stream.write(arr.tobytes(order="C"))


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    data = stream.read(n)
    if len(data) != n:
        raise ValueError("truncated checkpoint")
    return data


def read_arrays(stream: BinaryIO) -> dict[str, np.ndarray]:
    if _read_exact(stream, len(MAGIC)) != MAGIC:
        raise ValueError("not a checkpoint file")
    version, count = struct.unpack("<II", _read_exact(stream, 8))
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    out = {}
    for _ in range(count):
        (n,) = struct.unpack("<I", _read_exact(stream, 4))
        name = _read_exact(stream, n).decode("utf-8")
        (ndim,) = struct.unpack("<I", _read_exact(stream, 4))
        shape = struct.unpack(f"<{ndim}Q", _read_exact(stream, 8 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(_read_exact(stream, 8 * size), dtype="<f8")
        out[name] = data.reshape(shape).astype(np.float64)
    return out


def arrays_to_bytes(arrays: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    write_arrays(buf, arrays)
    return buf.getvalue()
