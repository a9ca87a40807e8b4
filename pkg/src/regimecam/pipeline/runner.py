"""Three-stage streaming classifier: acquisition, inference, sink.

Acquisition turns raw event chunks into fixed-count windows and hands each
one to a capacity-1 slot; a window still waiting when the next arrives is
replaced and counted as dropped. Inference takes whatever is in the slot,
classifies and smooths it, and queues a Prediction for the sink on a small
drop-oldest FIFO. ``mode="deterministic"`` runs the same stages round-robin
on the calling thread, classifying every window in order.
"""
from __future__ import annotations

import logging
import socket
import sys
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Optional, TextIO

import numpy as np

from ..errors import RegimeCamError, SinkError, SourceError
from ..events import RateLimiter, Roi, SensorMeta, Windower, normalize_roi, read_events
from ..regimes import FlowRegime
from .smoother import DEFAULT_WINDOW, SmootherState, predictive_entropy, regime_proportions, smoother_push
from .transport import MSG_BATCH, MSG_HEADER, iter_messages

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    seq_len: int = 2500
    max_events_per_us: int = 1024
    smoother_window: int = DEFAULT_WINDOW
    sink_capacity: int = 64
    roi: Optional[Roi] = None
    mode: str = "threaded"  # or "deterministic"

    def validate(self) -> None:
        if self.seq_len < 1 or self.smoother_window < 1:
            raise ValueError("seq_len and smoother_window must be >= 1")
        if self.max_events_per_us < 1 or self.sink_capacity < 1:
            raise ValueError("max_events_per_us and sink_capacity must be >= 1")
        if self.mode not in ("threaded", "deterministic"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class Prediction:
    index: int
    probabilities: np.ndarray
    raw_label: FlowRegime
    smoothed_label: FlowRegime
    softmax_confidence: float
    vote_confidence: float
    entropy: float
    window_event_count: int
    t_window_end: int
    proportions: dict = field(default_factory=dict)
    # monotonic nanoseconds
    t_ready: int = 0
    t_infer_start: int = 0
    t_infer_end: int = 0

    CSV_HEADER = ("index,raw_label,smoothed_label,softmax_confidence,vote_confidence,entropy,"
                  "event_count,t_window_end_us," + ",".join(f"p_{r.name}" for r in FlowRegime)
                  + ",inference_us")

    def csv_row(self) -> str:
        probs = ",".join(f"{p:.9g}" for p in self.probabilities)
        infer_us = (self.t_infer_end - self.t_infer_start) / 1e3
        return (f"{self.index},{self.raw_label.name},{self.smoothed_label.name},"
                f"{self.softmax_confidence:.9g},{self.vote_confidence:.9g},{self.entropy:.9g},"
                f"{self.window_event_count},{self.t_window_end},{probs},{infer_us:.1f}")


def _percentiles(samples_ns: list) -> dict:
    if not samples_ns:
        return {"p50": float("nan"), "p95": float("nan"), "p99": float("nan")}
    a = np.asarray(samples_ns, dtype=np.float64) / 1e3
    p50, p95, p99 = np.percentile(a, [50, 95, 99])
    return {"p50": float(p50), "p95": float(p95), "p99": float(p99)}


@dataclass
class PipelineStats:
    produced: int = 0
    classified: int = 0
    dropped: int = 0
    errors: int = 0
    in_flight: int = 0
    sink_dropped: int = 0
    events_in: int = 0
    events_outside_roi: int = 0
    events_rate_limited: int = 0
    processing_ns: list = field(default_factory=list, repr=False)
    queue_wait_ns: list = field(default_factory=list, repr=False)
    inference_ns: list = field(default_factory=list, repr=False)
    sink_ns: list = field(default_factory=list, repr=False)

    def latency(self) -> dict:
        """Per-stage latency percentiles in microseconds."""
        return {"processing": _percentiles(self.processing_ns),
                "queue_wait": _percentiles(self.queue_wait_ns),
                "inference": _percentiles(self.inference_ns),
                "sink": _percentiles(self.sink_ns)}

    def consistent(self) -> bool:
        return self.classified + self.dropped + self.errors + self.in_flight == self.produced

    def summary(self) -> str:
        lat = self.latency()["inference"]
        return (f"produced {self.produced} classified {self.classified} dropped {self.dropped} "
                f"errors {self.errors} in_flight {self.in_flight} sink_dropped {self.sink_dropped} | "
                f"events {self.events_in} rate_limited {self.events_rate_limited} | "
                f"inference p50 {lat['p50']:.0f} us p95 {lat['p95']:.0f} us p99 {lat['p99']:.0f} us")


# --- sources ------------------------------------------------------------------


class ArraySource:
    """Replays an in-memory event array in chunks, fast or at recorded pace."""

    def __init__(self, events: np.ndarray, meta: SensorMeta, chunk: int = 4096, pace: str = "fast"):
        if pace not in ("fast", "real"):
            raise ValueError("pace must be 'fast' or 'real'")
        self.events = events
        self.meta = meta
        self.chunk = int(chunk)
        self.pace = pace

    def __iter__(self) -> Iterator[np.ndarray]:
        ev = self.events
        if not len(ev):
            return
        start = time.monotonic()
        t0 = int(ev["t"][0])
        for s in range(0, len(ev), self.chunk):
            chunk = ev[s:s + self.chunk]
            if self.pace == "real":
                wait = (int(chunk["t"][-1]) - t0) * 1e-6 - (time.monotonic() - start)
                if wait > 0:
                    time.sleep(wait)
            yield chunk


class FileSource(ArraySource):
    def __init__(self, path, meta: Optional[SensorMeta] = None, chunk: int = 4096, pace: str = "fast"):
        try:
            events, file_meta = read_events(path)
        except (OSError, RegimeCamError) as exc:
            raise SourceError(f"cannot read {path}: {exc}") from exc
        meta = meta or file_meta
        if meta is None:
            if not len(events):
                raise SourceError(f"{path}: no events and no sensor size")
            meta = SensorMeta(int(events["x"].max()) + 1, int(events["y"].max()) + 1)
        super().__init__(events, meta, chunk, pace)


class NetworkSource:
    """Connects to an event server and yields the batches it sends."""

    def __init__(self, host: str, port: int, timeout: float = 10.0):
        self.host, self.port, self.timeout = host, int(port), timeout
        self.meta: Optional[SensorMeta] = None
        self._sock: Optional[socket.socket] = None

    def connect(self) -> "NetworkSource":
        try:
            self._sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
        except OSError as exc:
            raise SourceError(f"cannot connect to {self.host}:{self.port}: {exc}") from exc
        return self

    def __iter__(self) -> Iterator[np.ndarray]:
        if self._sock is None:
            self.connect()
        try:
            for msg in iter_messages(self._sock):
                if msg.kind == MSG_HEADER:
                    self.meta = msg.value
                elif msg.kind == MSG_BATCH:
                    if self.meta is None:
                        raise SourceError("event batch before header")
                    yield msg.value
        except (OSError, RegimeCamError) as exc:
            if isinstance(exc, SourceError):
                raise
            raise SourceError(f"network source failed: {exc}") from exc
        finally:
            self._sock.close()
            self._sock = None


# --- sinks --------------------------------------------------------------------


class ListSink:
    def __init__(self):
        self.items: list[Prediction] = []

    def __call__(self, pred: Prediction) -> None:
        self.items.append(pred)


class CsvSink:
    """One comma-separated row per Prediction, header first."""

    def __init__(self, target):
        self._own = not hasattr(target, "write")
        try:
            self._fh = open(target, "w", encoding="utf-8") if self._own else target
            self._fh.write(Prediction.CSV_HEADER + "\n")
        except OSError as exc:
            raise SinkError(f"cannot open log {target}: {exc}") from exc

    def __call__(self, pred: Prediction) -> None:
        try:
            self._fh.write(pred.csv_row() + "\n")
        except (OSError, ValueError) as exc:
            raise SinkError(f"log write failed: {exc}") from exc

    def close(self) -> None:
        if self._own:
            self._fh.close()
        else:
            self._fh.flush()


class StatusSink:
    """Single status line rewritten in place."""

    def __init__(self, stream: TextIO = sys.stderr, stats: Optional[PipelineStats] = None):
        self.stream = stream
        self.stats = stats

    def __call__(self, pred: Prediction) -> None:
        drops = self.stats.dropped if self.stats is not None else 0
        line = (f"\r{pred.smoothed_label.name:>2} vote {pred.vote_confidence:5.1%} "
                f"softmax {pred.softmax_confidence:5.1%} H {pred.entropy:.3f} "
                f"events {pred.window_event_count} dropped {drops} ")
        try:
            self.stream.write(line)
            self.stream.flush()
        except (OSError, ValueError) as exc:
            raise SinkError(str(exc)) from exc

    def close(self) -> None:
        self.stream.write("\n")


class TeeSink:
    def __init__(self, *sinks):
        self.sinks = sinks

    def __call__(self, pred):
        for s in self.sinks:
            s(pred)

    def close(self):
        for s in self.sinks:
            if hasattr(s, "close"):
                s.close()


# --- queues -------------------------------------------------------------------


class LatestSlot:
    """Capacity-1 handoff; ``put`` replaces any unconsumed item and returns it."""

    def __init__(self):
        self._item = None
        self._closed = False
        self._cond = threading.Condition()

    def put(self, item):
        with self._cond:
            old, self._item = self._item, item
            self._cond.notify()
            return old

    def get(self, timeout: Optional[float] = None):
        """Next item, or None once the slot is closed and empty (or on timeout)."""
        with self._cond:
            if self._item is None and not self._closed:
                self._cond.wait(timeout)
            item, self._item = self._item, None
            return item

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    @property
    def closed(self) -> bool:
        return self._closed

    def take(self):
        with self._cond:
            item, self._item = self._item, None
            return item


class DropOldestQueue:
    def __init__(self, capacity: int):
        self._q: deque = deque()
        self.capacity = capacity
        self.dropped = 0
        self._closed = False
        self._cond = threading.Condition()

    def put(self, item) -> None:
        with self._cond:
            if len(self._q) >= self.capacity:
                self._q.popleft()
                self.dropped += 1
            self._q.append(item)
            self._cond.notify()

    def get(self, timeout: Optional[float] = None):
        with self._cond:
            if not self._q and not self._closed:
                self._cond.wait(timeout)
            return self._q.popleft() if self._q else None

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    @property
    def drained(self) -> bool:
        with self._cond:
            return self._closed and not self._q


# --- stages -------------------------------------------------------------------


class _Window:
    __slots__ = ("index", "events", "t_end", "t_ready", "count")

    def __init__(self, index, events, t_end, t_ready):
        self.index, self.events, self.t_end, self.t_ready = index, events, t_end, t_ready
        self.count = len(events)


class _Acquisition:
    """Chunk -> ROI normalization -> rate limiting -> fixed-count windows."""

    def __init__(self, cfg: PipelineConfig, stats: PipelineStats):
        self.cfg = cfg
        self.stats = stats
        self.limiter = RateLimiter(cfg.max_events_per_us)
        self.windower = Windower(cfg.seq_len)
        self.next_index = 0

    def process(self, chunk: np.ndarray, meta: SensorMeta) -> list[_Window]:
        t0 = time.perf_counter_ns()
        roi = self.cfg.roi or Roi.full(meta)
        norm = normalize_roi(chunk, roi, meta)
        kept = self.limiter(norm)
        st = self.stats
        st.events_in += len(chunk)
        st.events_outside_roi += len(chunk) - len(norm)
        st.events_rate_limited += len(norm) - len(kept)
        out = []
        for w in self.windower.push(kept):
            out.append(_Window(self.next_index, w.events, w.t_end, 0))
            self.next_index += 1
        t1 = time.perf_counter_ns()
        for w in out:
            w.t_ready = t1
            st.processing_ns.append((t1 - t0) // max(len(out), 1))
        st.produced += len(out)
        return out


class Inference:
    """Classifier plus smoothing; shared by the online stage and offline ``classify``."""

    def __init__(self, classifier: Callable, smoother_window: int = DEFAULT_WINDOW):
        self.classifier = classifier
        self.smoother = SmootherState(smoother_window)

    def predict(self, index: int, events: np.ndarray, t_end: int = 0, t_ready: int = 0) -> Prediction:
        t0 = time.perf_counter_ns()
        probs = np.asarray(self.classifier(events), dtype=np.float64)
        t1 = time.perf_counter_ns()
        raw = FlowRegime(int(np.argmax(probs)))
        smoothed = smoother_push(self.smoother, raw)
        return Prediction(index, probs, raw, smoothed, float(probs.max()),
                          self.smoother.vote_fraction(smoothed), predictive_entropy(probs),
                          len(events), int(t_end), regime_proportions(self.smoother),
                          t_ready, t0, t1)


def classify_windows(classifier: Callable, windows: Iterable, smoother_window: int = DEFAULT_WINDOW
                     ) -> list[Prediction]:
    """Offline counterpart of the pipeline: every window, in order, same smoothing."""
    inf = Inference(classifier, smoother_window)
    out = []
    for i, w in enumerate(windows):
        events = getattr(w, "events", w)
        out.append(inf.predict(i, events, getattr(w, "t_end", 0)))
    return out


def _source_chunks(source) -> Iterator[tuple[np.ndarray, SensorMeta]]:
    try:
        for chunk in source:
            meta = source.meta
            if meta is None:
                raise SourceError("source produced events before its sensor size was known")
            yield chunk, meta
    except SourceError:
        raise
    except (OSError, RegimeCamError) as exc:
        raise SourceError(str(exc)) from exc


def run_pipeline(source, classifier: Callable, sink: Callable, config: Optional[PipelineConfig] = None,
                 stop: Optional[threading.Event] = None) -> PipelineStats:
    """Run until the source is exhausted or ``stop`` is set; returns exact counts.

    ``source`` is an iterable of raw event chunks exposing ``meta``; the
    classifier maps one (N, 3) window to class probabilities; ``sink`` is
    called with every Prediction that survives the sink queue.
    """
    cfg = config or PipelineConfig()
    cfg.validate()
    stop = stop or threading.Event()
    stats = PipelineStats()
    for s in getattr(sink, "sinks", (sink,)):
        if isinstance(s, StatusSink) and s.stats is None:
            s.stats = stats
    try:
        if cfg.mode == "deterministic":
            _run_deterministic(source, classifier, sink, cfg, stats, stop)
        else:
            _run_threaded(source, classifier, sink, cfg, stats, stop)
    finally:
        if hasattr(sink, "close"):
            sink.close()
    return stats


def _classify_one(inf: Inference, w: _Window, stats: PipelineStats) -> Optional[Prediction]:
    try:
        pred = inf.predict(w.index, w.events, w.t_end, w.t_ready)
    except Exception as exc:  # a bad window must never stop the stream
        stats.errors += 1
        log.warning("window %d failed: %s", w.index, exc)
        return None
    stats.classified += 1
    stats.queue_wait_ns.append(pred.t_infer_start - w.t_ready)
    stats.inference_ns.append(pred.t_infer_end - pred.t_infer_start)
    return pred


def _emit(sink, pred: Prediction, stats: PipelineStats) -> None:
    t0 = time.perf_counter_ns()
    try:
        sink(pred)
    except SinkError:
        raise
    except Exception as exc:
        raise SinkError(str(exc)) from exc
    stats.sink_ns.append(time.perf_counter_ns() - t0)


def _run_deterministic(source, classifier, sink, cfg, stats, stop) -> None:
    acq = _Acquisition(cfg, stats)
    inf = Inference(classifier, cfg.smoother_window)
    for chunk, meta in _source_chunks(source):
        for w in acq.process(chunk, meta):
            pred = _classify_one(inf, w, stats)
            if pred is not None:
                _emit(sink, pred, stats)
        if stop.is_set():
            break


def _run_threaded(source, classifier, sink, cfg, stats, stop) -> None:
    slot = LatestSlot()
    out_q = DropOldestQueue(cfg.sink_capacity)
    failures: list[BaseException] = []
    lock = threading.Lock()

    def fail(exc):
        with lock:
            failures.append(exc)
        stop.set()

    def acquisition():
        acq = _Acquisition(cfg, stats)
        try:
            for chunk, meta in _source_chunks(source):
                for w in acq.process(chunk, meta):
                    if slot.put(w) is not None:
                        with lock:
                            stats.dropped += 1
                if stop.is_set():
                    break
        except BaseException as exc:
            fail(exc)
        finally:
            slot.close()

    def inference():
        inf = Inference(classifier, cfg.smoother_window)
        try:
            while not stop.is_set():
                w = slot.get(timeout=0.05)
                if w is None:
                    if slot.closed:
                        w = slot.take()
                        if w is None:
                            break
                    else:
                        continue
                pred = _classify_one(inf, w, stats)
                if pred is not None:
                    out_q.put(pred)
        except BaseException as exc:
            fail(exc)
        finally:
            out_q.close()

    def sink_stage():
        try:
            while True:
                pred = out_q.get(timeout=0.05)
                if pred is None:
                    if out_q.drained:
                        break
                    continue
                _emit(sink, pred, stats)
        except BaseException as exc:
            fail(exc)

    threads = [threading.Thread(target=f, name=f"pipeline-{f.__name__}", daemon=True)
               for f in (acquisition, inference, sink_stage)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    left = slot.take()
    if left is not None:
        stats.in_flight += 1
    stats.sink_dropped = out_q.dropped
    if failures:
        raise failures[0]
