"""Single-window float32 inference for the real-time path.

The embedding is affine, so it is folded into the first layer's input
projection. Each layer's input projections are computed for the whole
window in one matrix product; only the recurrent part runs step by step,
inside a numba kernel that evaluates tanh with a rational approximation
(max abs error ~3e-7) so the gate math vectorizes without SVML.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from ..errors import LengthMismatch, NonFiniteInput
from .model import FC_LAYERS, LstmParams, _ftanh, predict_proba

@njit(fastmath=True, error_model="numpy", cache=True)
def _recurrence(Z, WhT, hs):
    """Advance one LSTM layer over precomputed input projections ``Z`` (T, 4H).

    ``WhT`` is the transposed recurrent matrix (H, 4H); gate columns are
    (i, f, o, g). Hidden states are written into ``hs`` (T, H).
    """
    T = Z.shape[0]
    H = WhT.shape[0]
    h = np.zeros(H, np.float32)
    c = np.zeros(H, np.float32)
    z = np.empty(4 * H, np.float32)
    half = np.float32(0.5)
    for t in range(T):
        for j in range(4 * H):
            z[j] = Z[t, j]
        for k in range(H):
            hk = h[k]
            for j in range(4 * H):
                z[j] += hk * WhT[k, j]
        for j in range(3 * H):
            z[j] = half + half * _ftanh(half * z[j])
        for j in range(3 * H, 4 * H):
            z[j] = _ftanh(z[j])
        for k in range(H):
            ck = z[H + k] * c[k] + z[k] * z[3 * H + k]
            c[k] = ck
            h[k] = z[2 * H + k] * _ftanh(ck)
        for k in range(H):
            hs[t, k] = h[k]


class LstmClassifier:
    """Deterministic window classifier: ``clf(events) -> probabilities``.

    Calls on one (N, 3) window use the compiled float32 path; this is the
    path the streaming pipeline and offline ``classify`` share.
    ``predict_proba_batch`` is the numpy batched path used for bulk
    evaluation.
    """

    def __init__(self, params: LstmParams):
        hp = params.hyper
        self.params = params
        self.hyper = hp
        self.seq_len = hp.seq_len
        f32 = {k: np.ascontiguousarray(v, dtype=np.float32) for k, v in params.items()}
        Wx0 = f32["lstm0.Wx"]
        self._w_in = [np.ascontiguousarray((Wx0 @ f32["emb.W"]).T)]
        self._b_in = [Wx0 @ f32["emb.b"] + f32["lstm0.b"]]
        for layer in range(1, hp.layers):
            self._w_in.append(np.ascontiguousarray(f32[f"lstm{layer}.Wx"].T))
            self._b_in.append(f32[f"lstm{layer}.b"])
        self._wh = [np.ascontiguousarray(f32[f"lstm{layer}.Wh"].T) for layer in range(hp.layers)]
        self._fc = [(f32[f"fc{j}.W"].astype(np.float64), f32[f"fc{j}.b"].astype(np.float64))
                    for j in range(FC_LAYERS)]
        self._head = (f32["head.W"].astype(np.float64), f32["head.b"].astype(np.float64))
        self._batch_params = params.astype(np.float32)
        self._batch_params.hyper = hp.replace(dtype="float32")

    def _check(self, events) -> np.ndarray:
        x = np.asarray(getattr(events, "events", events))
        if x.ndim != 2 or x.shape[1] != 3 or x.shape[0] != self.seq_len:
            raise LengthMismatch(f"window shape {x.shape}, model expects ({self.seq_len}, 3)")
        if not np.isfinite(x).all():
            raise NonFiniteInput("window contains NaN or inf")
        return x

    def __call__(self, events) -> np.ndarray:
        x = self._check(events).astype(np.float32)
        seq = x
        for w_in, b_in, wh in zip(self._w_in, self._b_in, self._wh):
            Z = seq @ w_in
            Z += b_in
            hs = np.empty((len(x), wh.shape[0]), np.float32)
            _recurrence(Z, wh, hs)
            seq = hs
        a = seq[-1].astype(np.float64)
        for W, b in self._fc:
            a = np.maximum(W @ a + b, 0.0)
        logits = self._head[0] @ a + self._head[1]
        e = np.exp(logits - logits.max())
        return e / e.sum()

    def predict(self, events) -> int:
        return int(np.argmax(self(events)))

    def predict_proba_batch(self, X, batch: int = 128) -> np.ndarray:
        return predict_proba(self._batch_params, np.asarray(X, dtype=np.float32), batch)

    def predict_batch(self, windows) -> np.ndarray:
        X = np.stack([np.asarray(getattr(w, "events", w)) for w in windows])
        return self.predict_proba_batch(X).argmax(axis=1)
