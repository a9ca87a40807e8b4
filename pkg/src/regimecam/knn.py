"""Fourier-magnitude features over accumulated frames and an exhaustive k-NN."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .accumulate import AccumFrame, window_to_frame
from .errors import (
    BadMagic,
    CountMismatch,
    DimensionMismatch,
    InsufficientTraining,
    TruncatedRecord,
)
from .fft import center_spectrum, fft2, zero_pad_pow2
from .regimes import N_CLASSES, FlowRegime

KNN1_MAGIC = b"KNN1"
KNN1_HEADER = struct.Struct("<4sIII")


def spectral_features(frame: AccumFrame | np.ndarray, block: int = 16, log_compress: bool = True) -> np.ndarray:
    """Centered low-frequency block of the magnitude spectrum, L2-normalized.

    Accepts an :class:`AccumFrame` (dual channels are collapsed to
    positive minus negative) or a bare 2-D grid.
    """
    grid = frame.signed_grid if isinstance(frame, AccumFrame) else np.asarray(frame)
    padded = zero_pad_pow2(grid.astype(np.float64))
    h, w = padded.shape
    if block < 1 or block > h or block > w:
        raise ValueError(f"block {block} does not fit a {h}x{w} spectrum")
    mag = np.abs(center_spectrum(fft2(padded)))
    r0, c0 = h // 2 - block // 2, w // 2 - block // 2
    crop = mag[r0:r0 + block, c0:c0 + block]
    if log_compress:
        crop = np.log1p(crop)
    vec = crop.ravel()
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else np.zeros_like(vec)


@dataclass(frozen=True)
class KnnModel:
    features: np.ndarray  # (n, F)
    labels: np.ndarray  # (n,) class codes
    k: int = 5

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def knn_fit(features, labels, k: int = 5) -> KnnModel:
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray([int(FlowRegime.parse(v)) for v in labels], dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise DimensionMismatch(f"{len(X)} feature rows for {len(y)} labels")
    if k < 1:
        raise ValueError("k must be positive")
    if len(X) < k:
        raise InsufficientTraining(f"{len(X)} samples for k={k}")
    X = X.copy()
    X.setflags(write=False)
    y.setflags(write=False)
    return KnnModel(X, y, int(k))


def _vote(labels: np.ndarray, dists: np.ndarray) -> int:
    counts = np.bincount(labels, minlength=N_CLASSES)
    tied = np.flatnonzero(counts == counts.max())
    if len(tied) == 1:
        return int(tied[0])
    sums = np.array([dists[labels == c].sum() for c in tied])
    # np.argmin returns the first minimum, i.e. the lowest class code
    return int(tied[np.argmin(sums)])


def _neighbours(model: KnnModel, Q: np.ndarray):
    if Q.shape[1] != model.dim:
        raise DimensionMismatch(f"query has {Q.shape[1]} features, model {model.dim}")
    # direct differences rather than the |a|^2 - 2ab + |b|^2 expansion, which cancels badly at tiny distances
    d = np.sqrt(((Q[:, None, :] - model.features[None, :, :]) ** 2).sum(axis=2))
    order = np.argsort(d, axis=1, kind="stable")[:, : model.k]
    return order, np.take_along_axis(d, order, axis=1)


def knn_predict(model: KnnModel, feature) -> tuple[FlowRegime, np.ndarray]:
    """Label of the majority among the ``k`` nearest points, with their distances."""
    q = np.asarray(feature, dtype=np.float64).reshape(1, -1)
    idx, dist = _neighbours(model, q)
    return FlowRegime(_vote(model.labels[idx[0]], dist[0])), dist[0]


def knn_predict_batch(model: KnnModel, features, chunk: int = 256) -> np.ndarray:
    Q = np.asarray(features, dtype=np.float64)
    out = np.empty(len(Q), dtype=np.int64)
    for s in range(0, len(Q), chunk):
        idx, dist = _neighbours(model, Q[s:s + chunk])
        for r in range(len(idx)):
            out[s + r] = _vote(model.labels[idx[r]], dist[r])
    return out


class KnnClassifier:
    """Window classifier: accumulate, take spectral features, vote.

    Calling it on an (N, 3) window returns the neighbour vote fractions as
    a 7-way probability vector.
    """

    def __init__(self, model: KnnModel, dims: tuple[int, int] = (64, 32), block: int = 16):
        self.model = model
        self.dims = dims
        self.block = block

    def features(self, window_events: np.ndarray) -> np.ndarray:
        return spectral_features(window_to_frame(window_events, self.dims), self.block)

    def __call__(self, window_events: np.ndarray) -> np.ndarray:
        idx, dist = _neighbours(self.model, self.features(window_events)[None, :])
        labels = self.model.labels[idx[0]]
        label = _vote(labels, dist[0])
        probs = np.bincount(labels, minlength=N_CLASSES) / self.model.k
        # a distance tie-break may pick a class other than the first argmax; let it win
        if np.argmax(probs) != label:
            probs[label] += 1e-9
            probs /= probs.sum()
        return probs

    def predict_batch(self, windows: list[np.ndarray]) -> np.ndarray:
        feats = np.stack([self.features(w) for w in windows])
        return knn_predict_batch(self.model, feats)


# --- KNN1 persistence -------------------------------------------------------


def encode_knn(model: KnnModel) -> bytes:
    n, F = model.features.shape
    rec = np.dtype([("f", "<f8", (F,)), ("label", "u1")])
    body = np.zeros(n, dtype=rec)
    body["f"] = model.features
    body["label"] = model.labels
    return KNN1_HEADER.pack(KNN1_MAGIC, model.k, F, n) + body.tobytes()


def decode_knn(data: bytes) -> KnnModel:
    if len(data) < KNN1_HEADER.size:
        raise TruncatedRecord("KNN1 header truncated")
    magic, k, F, n = KNN1_HEADER.unpack_from(data)
    if magic != KNN1_MAGIC:
        raise BadMagic(f"expected {KNN1_MAGIC!r}, got {magic!r}")
    rec = np.dtype([("f", "<f8", (F,)), ("label", "u1")])
    body = data[KNN1_HEADER.size:]
    if len(body) != n * rec.itemsize:
        raise CountMismatch(f"expected {n} records of {rec.itemsize} bytes, got {len(body)} bytes")
    arr = np.frombuffer(body, dtype=rec)
    return knn_fit(arr["f"].astype(np.float64), arr["label"].astype(np.int64), k)
