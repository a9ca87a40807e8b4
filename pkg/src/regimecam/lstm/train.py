"""Mini-batch training loop for the event LSTM."""
from __future__ import annotations

import hashlib
import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import EmptyDataset, SingleClass
from .model import LstmHyper, LstmParams, init_params, loss_and_grad, predict_proba
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_accuracy: float
    seconds: float = 0.0


def stack_windows(windows) -> tuple[np.ndarray, np.ndarray]:
    """(B, N, 3) inputs and (B,) label codes from a list of EventWindow."""
    if isinstance(windows, tuple):
        X, y = windows
        return np.asarray(X), np.asarray(y, dtype=np.int64)
    if not windows:
        return np.zeros((0, 0, 3)), np.zeros(0, dtype=np.int64)
    X = np.stack([w.events for w in windows])
    y = np.array([-1 if w.label is None else int(w.label) for w in windows], dtype=np.int64)
    return X, y


def stratified_split(labels: Sequence[int], val_fraction: float = 0.2, seed: int = 0):
    """Per-class seeded split; returns (train_idx, val_idx), both sorted."""
    labels = np.asarray(labels)
    rng = np.random.default_rng([seed, 7])
    train, val = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        n_val = int(round(len(idx) * val_fraction))
        val.extend(idx[:n_val])
        train.extend(idx[n_val:])
    return np.sort(np.array(train, dtype=np.int64)), np.sort(np.array(val, dtype=np.int64))


def _canonical_order(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    # content-derived order, so shuffles depend on the seed and not on how the caller listed the data
    keys = [hashlib.blake2b(np.ascontiguousarray(X[i]).tobytes() + int(y[i]).to_bytes(2, "little"),
                            digest_size=16).digest() for i in range(len(y))]
    return np.array(sorted(range(len(y)), key=keys.__getitem__), dtype=np.int64)


def learning_rate(hyper: LstmHyper, step: int, total_steps: int) -> float:
    """Rate for optimizer step ``step`` (0-based) out of ``total_steps``."""
    if hyper.lr_schedule == "cosine":
        return hyper.lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))
    return hyper.lr


def accuracy(params: LstmParams, X: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        return float("nan")
    pred = predict_proba(params, X).argmax(axis=1)
    return float((pred == y).mean())


def train(
    dataset,
    hyper: LstmHyper,
    val=None,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> tuple[LstmParams, list[EpochRecord]]:
    """Train from scratch and return the final parameters with per-epoch history.

    Without an explicit ``val`` set, 20% of ``dataset`` (stratified, seeded)
    is held out.
    """
    X, y = stack_windows(dataset)
    if len(y) == 0:
        raise EmptyDataset("no training windows")
    if (y < 0).any():
        raise ValueError("every training window needs a label")
    if len(np.unique(y)) < 2:
        raise SingleClass("training data covers a single class")
    dtype = np.dtype(hyper.dtype)
    order = _canonical_order(X, y)
    X, y = X[order].astype(dtype, copy=False), y[order]
    if val is None:
        tr, va = stratified_split(y, 0.2, hyper.seed)
        Xv, yv = X[va], y[va]
        X, y = X[tr], y[tr]
    else:
        Xv, yv = stack_windows(val)
        Xv = Xv.astype(dtype, copy=False)

    params = init_params(hyper, np.random.default_rng([hyper.seed, 0]))
    shuffle_rng = np.random.default_rng([hyper.seed, 1])
    dropout_rng = np.random.default_rng([hyper.seed, 2])
    state = AdamState.for_params(params)
    history = []
    total_steps = hyper.epochs * math.ceil(len(y) / hyper.batch)
    step = 0
    for epoch in range(1, hyper.epochs + 1):
        t0 = time.perf_counter()
        perm = shuffle_rng.permutation(len(y))
        total, seen = 0.0, 0
        for s in range(0, len(perm), hyper.batch):
            idx = perm[s:s + hyper.batch]
            loss, grads = loss_and_grad(params, X[idx], y[idx], dropout_rng)
            adam_step(params, grads, state, learning_rate(hyper, step, total_steps), hyper.clip_norm)
            step += 1
            total += loss * len(idx)
            seen += len(idx)
        rec = EpochRecord(epoch, total / seen, accuracy(params, Xv, yv), time.perf_counter() - t0)
        history.append(rec)
        log.info("epoch %d loss %.4f val_acc %.4f (%.1fs)", rec.epoch, rec.train_loss, rec.val_accuracy, rec.seconds)
        if on_epoch is not None:
            on_epoch(rec)
    return params, history


def history_csv(history: Sequence[EpochRecord]) -> str:
    lines = ["epoch,train_loss,val_accuracy"]
    lines += [f"{r.epoch},{r.train_loss:.6f},{r.val_accuracy:.6f}" for r in history]
    return "\n".join(lines) + "\n"
