"""Accuracy, confusion matrices, and the sequence-length sweep."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import EmptyEvaluation, RegimeCamError
from .events import RateLimiter, Roi, SensorMeta, Windower, normalize_roi
from .regimes import N_CLASSES, FlowRegime

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with rows = true class, columns = predicted class."""

    counts: np.ndarray

    @classmethod
    def from_labels(cls, y_true, y_pred, classes: int = N_CLASSES) -> "ConfusionMatrix":
        m = np.zeros((classes, classes), dtype=np.int64)
        np.add.at(m, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
        return cls(m)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total

    def recall(self) -> dict[FlowRegime, float]:
        """Per-class recall; classes with no samples are left out."""
        rows = self.counts.sum(axis=1)
        return {FlowRegime(c): float(self.counts[c, c]) / rows[c] for c in np.flatnonzero(rows)}

    def grid(self) -> str:
        names = [r.name for r in FlowRegime][:len(self.counts)]
        w = max(5, len(str(self.counts.max())) + 1)
        lines = ["true\\pred".ljust(10) + "".join(n.rjust(w) for n in names)]
        for name, row in zip(names, self.counts):
            lines.append(name.ljust(10) + "".join(str(v).rjust(w) for v in row))
        return "\n".join(lines)

    def csv(self) -> str:
        names = [r.name for r in FlowRegime][:len(self.counts)]
        lines = ["true," + ",".join(names)]
        lines += [name + "," + ",".join(map(str, row)) for name, row in zip(names, self.counts)]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Evaluation:
    accuracy: float
    confusion: ConfusionMatrix
    recall: dict
    n: int


def predict_labels(classifier, windows: Sequence) -> np.ndarray:
    """Labels from ``predict_batch`` when the classifier has one, else per window."""
    events = [getattr(w, "events", w) for w in windows]
    if hasattr(classifier, "predict_batch"):
        return np.asarray(classifier.predict_batch(events), dtype=np.int64)
    return np.array([int(np.argmax(classifier(e))) for e in events], dtype=np.int64)


def evaluate(classifier, windows: Sequence, labels: Optional[Sequence] = None) -> Evaluation:
    """Score ``classifier`` on labeled windows (labels taken from the windows by default)."""
    if len(windows) == 0:
        raise EmptyEvaluation("nothing to evaluate")
    if labels is None:
        labels = [w.label for w in windows]
    y = np.array([int(FlowRegime.parse(l)) for l in labels], dtype=np.int64)
    pred = predict_labels(classifier, windows)
    cm = ConfusionMatrix.from_labels(y, pred)
    return Evaluation(cm.accuracy, cm, cm.recall(), len(y))


# --- timing -------------------------------------------------------------------


@dataclass(frozen=True)
class Timing:
    mean_inference_us: float
    mean_processing_us: float
    n: int


def time_windows(classifier: Callable, raw_windows: Sequence[np.ndarray], meta: SensorMeta,
                 seq_len: int, max_per_us: int = 1024) -> Timing:
    """Wall-clock cost per window on the single-window path, first window excluded.

    Processing covers normalization, rate limiting, windowing and the cast
    to the model's input array; inference is the classifier call alone.
    ``raw_windows`` are raw event chunks holding at least ``seq_len`` events.
    """
    if len(raw_windows) < 2:
        raise EmptyEvaluation("need at least two windows (the first is warm-up)")
    roi = Roi.full(meta)
    proc, infer = [], []
    for raw in raw_windows:
        t0 = time.perf_counter_ns()
        norm = normalize_roi(raw, roi, meta)
        kept = RateLimiter(max_per_us)(norm)
        wins = Windower(seq_len).push(kept)
        if not wins:
            raise EmptyEvaluation("raw chunk shorter than one window after rate limiting")
        x = np.ascontiguousarray(wins[0].events, dtype=np.float32)
        t1 = time.perf_counter_ns()
        classifier(x)
        t2 = time.perf_counter_ns()
        proc.append(t1 - t0)
        infer.append(t2 - t1)
    return Timing(float(np.mean(infer[1:])) / 1e3, float(np.mean(proc[1:])) / 1e3, len(infer) - 1)


# --- sequence-length sweep ----------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    seq_len: int
    accuracy: float
    mean_inference_us: float
    mean_processing_us: float
    n_eval: int
    n_timed: int
    train_seconds: float = 0.0
    error: str = ""


@dataclass
class SweepResult:
    rows: list = field(default_factory=list)

    def csv(self) -> str:
        lines = ["seq_len,accuracy,mean_inference_us,mean_processing_us,n_eval,n_timed,train_seconds,error"]
        lines += [f"{r.seq_len},{r.accuracy:.6f},{r.mean_inference_us:.1f},{r.mean_processing_us:.1f},"
                  f"{r.n_eval},{r.n_timed},{r.train_seconds:.1f},{r.error}" for r in self.rows]
        return "\n".join(lines) + "\n"

    def row(self, seq_len: int) -> SweepRow:
        return next(r for r in self.rows if r.seq_len == seq_len)


def sweep_sequence_length(make_data: Callable, lengths: Sequence[int], fit: Callable,
                          min_timed: int = 100) -> SweepResult:
    """Train, score and time one model per sequence length.

    ``make_data(seq_len)`` returns ``(train_windows, eval_windows,
    raw_chunks, meta)``, where ``raw_chunks`` are raw event arrays used for
    timing; ``fit(train_windows, seq_len)`` returns a classifier. A length
    whose training or data generation fails is recorded with its error and
    the sweep moves on.
    """
    lengths = list(lengths)
    if lengths != sorted(set(lengths)):
        raise ValueError("lengths must be strictly increasing")
    result = SweepResult()
    for n in lengths:
        try:
            train_w, eval_w, raw, meta = make_data(n)
            t0 = time.perf_counter()
            clf = fit(train_w, n)
            train_s = time.perf_counter() - t0
            ev = evaluate(clf, eval_w)
            if len(raw) < min_timed + 1:
                raise EmptyEvaluation(f"only {len(raw)} raw chunks for timing, need {min_timed + 1}")
            tm = time_windows(clf, raw[:min_timed + 1], meta, n)
        except (RegimeCamError, ValueError) as exc:
            log.warning("sweep length %d failed: %s", n, exc)
            result.rows.append(SweepRow(n, float("nan"), float("nan"), float("nan"), 0, 0, 0.0, str(exc)))
            continue
        result.rows.append(SweepRow(n, ev.accuracy, tm.mean_inference_us, tm.mean_processing_us,
                                    ev.n, tm.n, train_s))
        log.info("sweep %d: acc %.4f infer %.0f us proc %.0f us", n, ev.accuracy,
                 tm.mean_inference_us, tm.mean_processing_us)
    return result
