"""Event LSTM: affine embedding, stacked LSTM, two ReLU/dropout FC layers, softmax head.

Everything is batched, time-major and feature-major internally. Gate rows inside each
``Wx``/``Wh``/``b`` are ordered (input, forget, output, cell) so the three
sigmoid gates form one contiguous slice.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np
from numba import njit

from ..errors import LengthMismatch, NonFiniteInput
from ..regimes import N_CLASSES


@dataclass(frozen=True)
class LstmHyper:
    embed_dim: int = 32
    hidden: int = 128
    layers: int = 2
    fc_dim: int = 128
    dropout_rate: float = 0.3
    classes: int = N_CLASSES
    seq_len: int = 5000
    lr: float = 3e-4
    batch: int = 128
    epochs: int = 10
    clip_norm: float = 1.0
    # initial forget-gate bias; larger values start the cell with a longer memory
    forget_bias: float = 1.0
    # if > 1, forget biases are drawn as log(U(1, span - 1)) per unit and input biases
    # set to their negation, spreading initial memory lengths up to ``chrono_span`` steps
    chrono_span: int = 0
    # "constant", or "cosine" to anneal the rate from lr to zero over all training steps
    lr_schedule: str = "constant"
    seed: int = 0
    in_dim: int = 3
    dtype: str = "float64"
    # windows per forward/backward pass; only bounds memory, never changes the result's meaning
    micro_batch: int = 64

    def __post_init__(self):
        for name in ("embed_dim", "hidden", "layers", "fc_dim", "classes", "seq_len",
                     "batch", "epochs", "in_dim", "micro_batch"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.chrono_span < 0 or self.chrono_span == 1 or self.chrono_span == 2:
            raise ValueError("chrono_span must be 0 or at least 3")
        if self.lr <= 0 or self.clip_norm <= 0:
            raise ValueError("lr and clip_norm must be positive")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")

    def replace(self, **kw) -> "LstmHyper":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)


FC_LAYERS = 2


def param_shapes(h: LstmHyper) -> list[tuple[str, tuple[int, ...]]]:
    """Names and shapes in serialization order."""
    shapes = [("emb.W", (h.embed_dim, h.in_dim)), ("emb.b", (h.embed_dim,))]
    d_in = h.embed_dim
    for layer in range(h.layers):
        shapes += [
            (f"lstm{layer}.Wx", (4 * h.hidden, d_in)),
            (f"lstm{layer}.Wh", (4 * h.hidden, h.hidden)),
            (f"lstm{layer}.b", (4 * h.hidden,)),
        ]
        d_in = h.hidden
    for j in range(FC_LAYERS):
        shapes += [(f"fc{j}.W", (h.fc_dim, d_in)), (f"fc{j}.b", (h.fc_dim,))]
        d_in = h.fc_dim
    shapes += [("head.W", (h.classes, d_in)), ("head.b", (h.classes,))]
    return shapes


def param_count(h: LstmHyper) -> int:
    return sum(int(np.prod(s)) for _, s in param_shapes(h))


class LstmParams:
    """Named parameter arrays plus the hyperparameters that shaped them."""

    def __init__(self, hyper: LstmHyper, arrays: dict[str, np.ndarray]):
        expected = param_shapes(hyper)
        if [n for n, _ in expected] != list(arrays):
            raise ValueError("parameter names do not match the architecture")
        for name, shape in expected:
            if arrays[name].shape != shape:
                raise ValueError(f"{name}: shape {arrays[name].shape}, expected {shape}")
        self.hyper = hyper
        self.arrays = arrays

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __iter__(self):
        return iter(self.arrays)

    def items(self):
        return self.arrays.items()

    @property
    def count(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def copy(self) -> "LstmParams":
        return LstmParams(self.hyper, {k: v.copy() for k, v in self.arrays.items()})

    def astype(self, dtype) -> "LstmParams":
        return LstmParams(self.hyper, {k: v.astype(dtype) for k, v in self.arrays.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays.values()])


def init_params(hyper: LstmHyper, rng: np.random.Generator) -> LstmParams:
    """Uniform(+-1/sqrt(fan_in)) weights; zero biases except the LSTM gates.

    Forget gates start at ``forget_bias``, or with ``chrono_span`` at
    log(U(1, span - 1)) with the input gates at the negated values.
    """
    dtype = np.dtype(hyper.dtype)
    arrays = {}
    H = hyper.hidden
    for name, shape in param_shapes(hyper):
        if len(shape) == 2:
            bound = 1.0 / np.sqrt(shape[1])
            arrays[name] = rng.uniform(-bound, bound, shape).astype(dtype)
        else:
            b = np.zeros(shape, dtype=dtype)
            if name.startswith("lstm"):
                if hyper.chrono_span:
                    bf = np.log(rng.uniform(1.0, hyper.chrono_span - 1, H))
                    b[H:2 * H] = bf
                    b[:H] = -bf
                else:
                    b[H:2 * H] = hyper.forget_bias
            arrays[name] = b
    return LstmParams(hyper, arrays)


def zero_params(hyper: LstmHyper) -> LstmParams:
    dtype = np.dtype(hyper.dtype)
    return LstmParams(hyper, {n: np.zeros(s, dtype=dtype) for n, s in param_shapes(hyper)})


# --- forward ------------------------------------------------------------------


def _as_batch(x, seq_len: int, dtype) -> np.ndarray:
    X = np.asarray(getattr(x, "events", x), dtype=dtype)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[2] != 3:
        raise LengthMismatch(f"expected (N, 3) or (B, N, 3) input, got shape {X.shape}")
    if X.shape[1] != seq_len:
        raise LengthMismatch(f"window length {X.shape[1]}, model expects {seq_len}")
    if not np.isfinite(X).all():
        raise NonFiniteInput("window contains NaN or inf")
    return X


_TANH_CLAMP = np.float32(7.90531110763549805)


@njit(fastmath=True, error_model="numpy", inline="always", cache=True)
def _ftanh(x):
    """float32 tanh by a rational approximation (max abs error ~3e-7) that vectorizes without SVML."""
    x = min(max(x, -_TANH_CLAMP), _TANH_CLAMP)
    x2 = x * x
    p = np.float32(-2.76076847742355e-16)
    p = p * x2 + np.float32(2.00018790482477e-13)
    p = p * x2 + np.float32(-8.60467152213735e-11)
    p = p * x2 + np.float32(5.12229709037114e-08)
    p = p * x2 + np.float32(1.48572235717979e-05)
    p = p * x2 + np.float32(6.37261928875436e-04)
    p = p * x2 + np.float32(4.89352455891786e-03)
    q = np.float32(1.19825839466702e-06)
    q = q * x2 + np.float32(1.18534705686654e-04)
    q = q * x2 + np.float32(2.26843463243900e-03)
    q = q * x2 + np.float32(4.89352518554385e-03)
    return x * p / q


@njit(fastmath=True, error_model="numpy", cache=True)
def _recurrence_f32(Z, Wh, hs, cs, tcs):
    """float32 batched recurrence over input projections ``Z`` (T, 4H, B).

    Same layout and outputs as the numpy loop in :func:`_lstm_layer_forward`;
    ``cs``/``tcs`` are only written when they have T rows.
    """
    T, H4, B = Z.shape
    H = H4 // 4
    keep = cs.shape[0] > 0
    h = np.zeros((H, B), np.float32)
    c = np.zeros((H, B), np.float32)
    half = np.float32(0.5)
    for t in range(T):
        rec = np.dot(Wh, h)
        zt = Z[t]
        for r in range(3 * H):
            for j in range(B):
                zt[r, j] = half + half * _ftanh(half * (zt[r, j] + rec[r, j]))
        for r in range(3 * H, H4):
            for j in range(B):
                zt[r, j] = _ftanh(zt[r, j] + rec[r, j])
        for k in range(H):
            for j in range(B):
                cn = zt[H + k, j] * c[k, j] + zt[k, j] * zt[3 * H + k, j]
                tc = _ftanh(cn)
                c[k, j] = cn
                h[k, j] = zt[2 * H + k, j] * tc
                hs[t, k, j] = h[k, j]
                if keep:
                    cs[t, k, j] = cn
                    tcs[t, k, j] = tc


def _lstm_layer_forward(xs: np.ndarray, Wx, Wh, b, keep: bool):
    """Run one LSTM layer over feature-major ``xs`` (T, D, B).

    float32 runs through a compiled kernel; other dtypes through the numpy
    loop below, which uses exact tanh throughout. Keeping the batch on the last axis makes every gate block a contiguous
    slab, which is what numpy's vectorized tanh wants. With ``keep`` the gate
    activations (i, f, o, g), cell states and their tanh are returned for
    backprop.
    """
    T, D, B = xs.shape
    H = Wh.shape[1]
    Z = np.matmul(Wx, xs)  # (T, 4H, B)
    Z += b[:, None]
    hs = np.empty((T, H, B), dtype=xs.dtype)
    cs = np.empty((T, H, B), dtype=xs.dtype) if keep else None
    tcs = np.empty((T, H, B), dtype=xs.dtype) if keep else None
    if xs.dtype == np.float32:
        empty = np.empty((0, H, B), dtype=np.float32)
        _recurrence_f32(Z, np.ascontiguousarray(Wh), hs, cs if keep else empty, tcs if keep else empty)
        return hs, (Z, cs, tcs) if keep else None
    h = np.zeros((H, B), dtype=xs.dtype)
    c = np.zeros((H, B), dtype=xs.dtype)
    rec = np.empty((4 * H, B), dtype=xs.dtype)
    tmp = np.empty((H, B), dtype=xs.dtype)
    for t in range(T):
        z = Z[t]
        np.matmul(Wh, h, out=rec)
        z += rec
        sig = z[:3 * H]
        # logistic(x) == (1 + tanh(x / 2)) / 2, and tanh is far cheaper than exp here
        sig *= 0.5
        np.tanh(sig, out=sig)
        sig *= 0.5
        sig += 0.5
        g = z[3 * H:]
        np.tanh(g, out=g)
        c_new = cs[t] if keep else np.empty_like(c)
        np.multiply(z[H:2 * H], c, out=c_new)
        np.multiply(z[:H], g, out=tmp)
        c_new += tmp
        c = c_new
        tc = tcs[t] if keep else tmp
        np.tanh(c, out=tc)
        h = hs[t]
        np.multiply(tc, z[2 * H:3 * H], out=h)
    return hs, (Z, cs, tcs) if keep else None


def _relu(a):
    return np.maximum(a, 0)


def _softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _dropout_masks(rng, B: int, hyper: LstmHyper, dtype):
    keep = 1.0 - hyper.dropout_rate
    return [(rng.random((B, hyper.fc_dim)) < keep).astype(dtype) / keep for _ in range(FC_LAYERS)]


def _forward(params: LstmParams, X: np.ndarray, masks, keep: bool):
    hp = params.hyper
    p = params.arrays
    xs = np.ascontiguousarray(X.transpose(1, 2, 0))  # (T, 3, B)
    emb = np.matmul(p["emb.W"], xs)
    emb += p["emb.b"][:, None]
    layer_in = emb
    caches = []
    for layer in range(hp.layers):
        hs, cache = _lstm_layer_forward(layer_in, p[f"lstm{layer}.Wx"], p[f"lstm{layer}.Wh"],
                                        p[f"lstm{layer}.b"], keep)
        caches.append((layer_in, hs, cache))
        layer_in = hs
    a = np.ascontiguousarray(layer_in[-1].T)  # (B, H)
    fc_cache = []
    for j in range(FC_LAYERS):
        pre = a @ p[f"fc{j}.W"].T + p[f"fc{j}.b"]
        act = _relu(pre)
        out = act * masks[j] if masks is not None else act
        fc_cache.append((a, pre, out))
        a = out
    logits = a @ p["head.W"].T + p["head.b"]
    probs = _softmax(logits.astype(np.float64))
    cache = {"xs": xs, "emb": emb, "layers": caches, "fc": fc_cache, "top": a, "masks": masks}
    return probs, cache


def forward(params: LstmParams, window, train_mode: bool = False,
            rng: Optional[np.random.Generator] = None):
    """Class probabilities for one window (N, 3) or a batch (B, N, 3).

    Dropout is applied only with ``train_mode``; inference draws nothing
    from ``rng``. Returns ``(probs, cache)``; ``probs`` is (7,) for a single
    window, (B, 7) for a batch.
    """
    hp = params.hyper
    single = np.asarray(getattr(window, "events", window)).ndim == 2
    X = _as_batch(window, hp.seq_len, np.dtype(hp.dtype))
    masks = None
    if train_mode and hp.dropout_rate > 0:
        if rng is None:
            raise ValueError("train_mode needs an rng for dropout masks")
        masks = _dropout_masks(rng, X.shape[0], hp, X.dtype)
    probs, cache = _forward(params, X, masks, keep=train_mode)
    return (probs[0] if single else probs), cache


# --- backward -----------------------------------------------------------------


_CHUNK = 16


@njit(cache=True)
def _bptt(Z, cs, tcs, dhs, dh_last, WhT, floor):
    """Step backwards through one layer, overwriting the gate activations in
    ``Z`` (T, 4H, B) with pre-activation gradients.

    ``dhs`` (T, H, B) holds upstream gradients on every hidden state; pass an
    empty (0, H, B) array when only the last step receives ``dh_last``.
    """
    T, H4, B = Z.shape
    H = H4 // 4
    dh_next = np.zeros((H, B), Z.dtype)
    dc_next = np.zeros((H, B), Z.dtype)
    per_step = dhs.shape[0] > 0
    for t in range(T - 1, -1, -1):
        zt = Z[t]
        for k in range(H):
            for j in range(B):
                dh = dh_next[k, j]
                if per_step:
                    dh += dhs[t, k, j]
                elif t == T - 1:
                    dh += dh_last[k, j]
                i = zt[k, j]
                f = zt[H + k, j]
                o = zt[2 * H + k, j]
                g = zt[3 * H + k, j]
                tc = tcs[t, k, j]
                c_prev = cs[t - 1, k, j] if t > 0 else 0.0
                dc = dh * o * (1.0 - tc * tc) + dc_next[k, j]
                dcn = dc * f
                dc_next[k, j] = dcn if abs(dcn) >= floor else 0.0
                zt[k, j] = dc * g * i * (1.0 - i)
                zt[H + k, j] = dc * c_prev * f * (1.0 - f)
                zt[2 * H + k, j] = dh * tc * o * (1.0 - o)
                zt[3 * H + k, j] = dc * i * (1.0 - g * g)
        dh_next = np.dot(WhT, zt)
        for k in range(H):
            for j in range(B):
                if abs(dh_next[k, j]) < floor:
                    dh_next[k, j] = 0.0


def _lstm_layer_backward(dhs, dh_last, layer_in, hs, cache, Wx, Wh):
    """BPTT through one layer, feature-major like the forward pass.

    ``dhs`` (T, H, B) is the upstream gradient on every hidden state, or
    None when only the last step receives ``dh_last`` (H, B). Only the
    recurrent product runs step by step; weight gradients and the input
    gradient are single products over the whole sequence afterwards.
    Overwrites the cached gate activations with pre-activation gradients.
    Returns (d_layer_in, dWx, dWh, db).
    """
    Z, cs, tcs = cache
    T, H4, B = Z.shape
    H = H4 // 4
    dtype = Z.dtype
    if dhs is None:
        dhs = np.zeros((0, H, B), dtype=dtype)
        dh_last = np.ascontiguousarray(dh_last, dtype=dtype)
    else:
        dh_last = np.zeros((H, B), dtype=dtype)
    # gradients decay geometrically back through time; once they reach the
    # subnormal range every op on them gets ~100x slower, so flush them to zero
    floor = float(np.finfo(dtype).tiny) * 2.0 ** 24
    _bptt(Z, cs, tcs, dhs, dh_last, np.ascontiguousarray(Wh.T), floor)
    # weight and input gradients from time chunks small enough to stay in cache
    D = layer_in.shape[1]
    dW = np.zeros((H4, D + H), dtype=dtype)
    d_in = np.empty((T, D, B), dtype=dtype)
    WxT = np.ascontiguousarray(Wx.T)
    rhs = np.zeros((_CHUNK, B, D + H), dtype=dtype)
    for s in range(0, T, _CHUNK):
        e = min(s + _CHUNK, T)
        n = e - s
        zc = Z[s:e].transpose(1, 0, 2).reshape(H4, n * B)
        rhs[:n, :, :D] = layer_in[s:e].transpose(0, 2, 1)
        if s > 0:
            rhs[:n, :, D:] = hs[s - 1:e - 1].transpose(0, 2, 1)
        else:
            rhs[0, :, D:] = 0.0
            rhs[1:n, :, D:] = hs[:n - 1].transpose(0, 2, 1)
        dW += zc @ rhs[:n].reshape(n * B, D + H)
        d_in[s:e] = (WxT @ zc).reshape(D, n, B).transpose(1, 0, 2)
    dWx = np.ascontiguousarray(dW[:, :D])
    dWh = np.ascontiguousarray(dW[:, D:])
    db = Z.sum(axis=(0, 2))
    return d_in, dWx, dWh, db


def _backward(params: LstmParams, probs: np.ndarray, y: np.ndarray, cache, scale: float):
    """Gradients of ``scale * sum(cross-entropy)`` for the cached forward pass."""
    hp = params.hyper
    p = params.arrays
    dtype = cache["xs"].dtype
    grads = {}
    dlogits = probs.copy()
    dlogits[np.arange(len(y)), y] -= 1.0
    dlogits = (dlogits * scale).astype(dtype)
    top = cache["top"]
    grads["head.W"] = dlogits.T @ top
    grads["head.b"] = dlogits.sum(axis=0)
    da = dlogits @ p["head.W"]
    for j in range(FC_LAYERS - 1, -1, -1):
        a_in, pre, _ = cache["fc"][j]
        if cache["masks"] is not None:
            da = da * cache["masks"][j]
        dpre = da * (pre > 0)
        grads[f"fc{j}.W"] = dpre.T @ a_in
        grads[f"fc{j}.b"] = dpre.sum(axis=0)
        da = dpre @ p[f"fc{j}.W"]
    dh_last = np.ascontiguousarray(da.T)
    dhs = None
    for layer in range(hp.layers - 1, -1, -1):
        layer_in, hs, lcache = cache["layers"][layer]
        d_in, dWx, dWh, db = _lstm_layer_backward(dhs, dh_last, layer_in, hs, lcache,
                                                  p[f"lstm{layer}.Wx"], p[f"lstm{layer}.Wh"])
        grads[f"lstm{layer}.Wx"] = dWx
        grads[f"lstm{layer}.Wh"] = dWh
        grads[f"lstm{layer}.b"] = db
        dhs, dh_last = d_in, None
    xs = cache["xs"]
    grads["emb.W"] = np.matmul(dhs, xs.transpose(0, 2, 1)).sum(axis=0)
    grads["emb.b"] = dhs.sum(axis=(0, 2))
    return grads


def loss_and_grad(params: LstmParams, X, y, rng: Optional[np.random.Generator] = None):
    """Mean cross-entropy over the batch and its exact gradient (full BPTT).

    Dropout masks are drawn from ``rng`` for the whole batch up front, in
    window order, so splitting the work into micro-batches does not change
    which mask a window receives.
    """
    hp = params.hyper
    dtype = np.dtype(hp.dtype)
    Xb = _as_batch(X, hp.seq_len, dtype)
    y = np.asarray(y, dtype=np.int64)
    if len(y) != len(Xb):
        raise LengthMismatch(f"{len(Xb)} windows but {len(y)} labels")
    if y.min() < 0 or y.max() >= hp.classes:
        raise ValueError("label out of range")
    B = len(Xb)
    masks = None
    if hp.dropout_rate > 0 and rng is not None:
        masks = _dropout_masks(rng, B, hp, dtype)
    total = {name: np.zeros_like(a) for name, a in params.items()}
    loss = 0.0
    for s in range(0, B, hp.micro_batch):
        sl = slice(s, s + hp.micro_batch)
        mb_masks = [m[sl] for m in masks] if masks is not None else None
        probs, cache = _forward(params, Xb[sl], mb_masks, keep=True)
        yb = y[sl]
        loss -= float(np.log(np.maximum(probs[np.arange(len(yb)), yb], 1e-300)).sum())
        grads = _backward(params, probs, yb, cache, 1.0 / B)
        del cache
        for name, g in grads.items():
            total[name] += g
    return loss / B, total


def predict_proba(params: LstmParams, X, batch: int = 128) -> np.ndarray:
    """Inference-mode probabilities for a batch, processed ``batch`` windows at a time."""
    hp = params.hyper
    Xb = _as_batch(X, hp.seq_len, np.dtype(hp.dtype))
    out = []
    for s in range(0, len(Xb), batch):
        probs, _ = _forward(params, Xb[s:s + batch], None, keep=False)
        out.append(probs)
    return np.concatenate(out) if out else np.zeros((0, hp.classes))
