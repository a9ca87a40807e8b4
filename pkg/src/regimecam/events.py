"""Event data model, codecs and the stream operators that feed the classifiers.

Streams are handled as numpy structured arrays (chunks) rather than per-event
objects; ``EVENT_DTYPE`` has exactly the 16-byte layout of an EVF1 record so
the binary codec is a view, not a loop.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple, Optional

import numpy as np

from .errors import (
    BadMagic,
    InvalidRoi,
    MalformedRow,
    NonMonotonicTimestamp,
    OutOfBounds,
    TruncatedRecord,
    UnsupportedVersion,
)
from .regimes import FlowRegime

EVENT_DTYPE = np.dtype(
    {
        "names": ["t", "x", "y", "p"],
        "formats": ["<u8", "<u2", "<u2", "i1"],
        "offsets": [0, 8, 10, 12],
        "itemsize": 16,
    }
)

NORM_DTYPE = np.dtype([("xn", "<f8"), ("yn", "<f8"), ("p", "i1"), ("t", "<u8")])

EVF1_MAGIC = b"EVF1"
EVF1_VERSION = 1
EVF1_HEADER = struct.Struct("<4sHHHH")
RECORD_SIZE = 16


class Event(NamedTuple):
    x: int
    y: int
    t: int
    p: int


@dataclass(frozen=True)
class SensorMeta:
    width: int
    height: int


@dataclass(frozen=True)
class Roi:
    x0: int
    y0: int
    width: int
    height: int

    def validate(self, meta: Optional[SensorMeta] = None) -> None:
        if self.width <= 0 or self.height <= 0:
            raise InvalidRoi(f"non-positive extent {self.width}x{self.height}")
        if self.x0 < 0 or self.y0 < 0:
            raise InvalidRoi("negative origin")
        if meta is not None and (
            self.x0 + self.width > meta.width or self.y0 + self.height > meta.height
        ):
            raise InvalidRoi(f"{self} exceeds sensor {meta.width}x{meta.height}")

    @classmethod
    def full(cls, meta: SensorMeta) -> "Roi":
        return cls(0, 0, meta.width, meta.height)


@dataclass
class EventWindow:
    """Fixed-length classifier input.

    ``events`` is an (N, 3) float64 array of ``(xn, yn, p)`` rows in source
    timestamp order; the timestamps themselves survive only as metadata.
    """

    events: np.ndarray
    label: Optional[FlowRegime] = None
    t_start: int = 0
    t_end: int = 0

    def __len__(self) -> int:
        return len(self.events)


def make_events(x, y, t, p) -> np.ndarray:
    """Build an event array from column sequences."""
    t = np.asarray(t)
    out = np.zeros(t.shape[0], dtype=EVENT_DTYPE)
    out["x"] = x
    out["y"] = y
    out["t"] = t
    out["p"] = p
    return out


def events_from_tuples(events: Iterable[Event]) -> np.ndarray:
    rows = list(events)
    if not rows:
        return np.zeros(0, dtype=EVENT_DTYPE)
    x, y, t, p = zip(*rows)
    return make_events(x, y, t, p)


def iter_events(arr: np.ndarray) -> Iterator[Event]:
    for x, y, t, p in zip(arr["x"].tolist(), arr["y"].tolist(), arr["t"].tolist(), arr["p"].tolist()):
        yield Event(x, y, t, p)


def check_events(arr: np.ndarray, meta: Optional[SensorMeta] = None) -> None:
    """Raise if ``arr`` violates the Event invariants."""
    if len(arr) == 0:
        return
    if not np.isin(arr["p"], (-1, 1)).all():
        raise ValueError("polarity must be +1 or -1")
    if np.any(np.diff(arr["t"].astype(np.int64)) < 0):
        raise ValueError("timestamps must be non-decreasing")
    if meta is not None:
        bad = (arr["x"] >= meta.width) | (arr["y"] >= meta.height)
        if bad.any():
            i = int(np.argmax(bad))
            raise OutOfBounds(f"event {i} at ({arr['x'][i]}, {arr['y'][i]}) outside {meta.width}x{meta.height}")


# --- text codec -----------------------------------------------------------

TEXT_COLUMNS = ("x", "y", "t", "p")


def parse_event_text(lines: Iterable[str], columns: Optional[tuple] = None) -> Iterator[Event]:
    """Lazily parse comma-separated ``x,y,t,p`` rows.

    The first line is the header. If ``columns`` is given the header must
    match it; otherwise any permutation of ``x,y,t,p`` is accepted and used
    as the column order. Polarity ``0`` is read as -1.
    """
    it = iter(lines)
    try:
        header = next(it)
    except StopIteration:
        return
    names = tuple(h.strip() for h in header.strip().lstrip("﻿").split(","))
    if sorted(names) != sorted(TEXT_COLUMNS) or (columns is not None and names != tuple(columns)):
        raise MalformedRow(1, f"unexpected header {header.strip()!r}")
    ix, iy, it_, ip = (names.index(c) for c in TEXT_COLUMNS)
    last_t = -1
    for line_no, line in enumerate(it, start=2):
        line = line.strip()
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != 4:
            raise MalformedRow(line_no, f"expected 4 fields, got {len(fields)}")
        try:
            x, y, t, p = (int(fields[i]) for i in (ix, iy, it_, ip))
        except ValueError as exc:
            raise MalformedRow(line_no, str(exc)) from None
        if x < 0 or y < 0 or t < 0:
            raise MalformedRow(line_no, "negative coordinate or timestamp")
        if p == 0:
            p = -1
        elif p not in (1, -1):
            raise MalformedRow(line_no, f"polarity {p}")
        if t < last_t:
            raise NonMonotonicTimestamp(line_no)
        last_t = t
        yield Event(x, y, t, p)


def read_event_text(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        return events_from_tuples(parse_event_text(fh))


def write_event_text(path_or_file, events: np.ndarray) -> None:
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", encoding="utf-8", newline="\n") if own else path_or_file
    try:
        fh.write("x,y,t,p\n")
        cols = np.column_stack([events["x"], events["y"], events["t"], events["p"]]).astype(np.int64)
        buf = io.StringIO()
        np.savetxt(buf, cols, fmt="%d", delimiter=",")
        fh.write(buf.getvalue())
    finally:
        if own:
            fh.close()


# --- EVF1 binary codec ----------------------------------------------------


def encode_header(meta: SensorMeta) -> bytes:
    return EVF1_HEADER.pack(EVF1_MAGIC, EVF1_VERSION, meta.width, meta.height, 0)


def decode_header(data: bytes) -> SensorMeta:
    if len(data) < EVF1_HEADER.size:
        raise TruncatedRecord(f"header needs {EVF1_HEADER.size} bytes, got {len(data)}")
    magic, version, width, height, _ = EVF1_HEADER.unpack_from(data)
    if magic != EVF1_MAGIC:
        raise BadMagic(f"expected {EVF1_MAGIC!r}, got {magic!r}")
    if version != EVF1_VERSION:
        raise UnsupportedVersion(f"EVF1 version {version}")
    return SensorMeta(width, height)


def encode_records(events: np.ndarray) -> bytes:
    """Pack events into 16-byte EVF1 records (pad bytes zeroed)."""
    out = np.zeros(len(events), dtype=EVENT_DTYPE)
    for name in ("t", "x", "y", "p"):
        out[name] = events[name]
    return out.tobytes()


def decode_records(data: bytes) -> np.ndarray:
    if len(data) % RECORD_SIZE:
        raise TruncatedRecord(f"{len(data)} bytes is not a whole number of records")
    return np.frombuffer(data, dtype=EVENT_DTYPE).copy()


def encode_events_binary(events: np.ndarray, meta: SensorMeta) -> bytes:
    check_events(events, meta)
    return encode_header(meta) + encode_records(events)


def decode_events_binary(data: bytes) -> tuple[np.ndarray, SensorMeta]:
    meta = decode_header(data)
    events = decode_records(data[EVF1_HEADER.size:])
    return events, meta


def write_evf(path, events: np.ndarray, meta: SensorMeta) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_events_binary(events, meta))


def read_evf(path) -> tuple[np.ndarray, SensorMeta]:
    with open(path, "rb") as fh:
        return decode_events_binary(fh.read())


def read_events(path) -> tuple[np.ndarray, Optional[SensorMeta]]:
    """Read an EVF1 or text event file, sniffing the magic bytes."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == EVF1_MAGIC:
        return read_evf(path)
    return read_event_text(path), None


# --- stream operators -----------------------------------------------------


def normalize_roi(events: np.ndarray, roi: Roi, meta: Optional[SensorMeta] = None) -> np.ndarray:
    """Drop events outside ``roi`` and map the rest to [0, 1] coordinates."""
    roi.validate(meta)
    x = events["x"].astype(np.int64) - roi.x0
    y = events["y"].astype(np.int64) - roi.y0
    keep = (x >= 0) & (x < roi.width) & (y >= 0) & (y < roi.height)
    out = np.empty(int(keep.sum()), dtype=NORM_DTYPE)
    # true division, so the far edge lands on exactly 1.0
    out["xn"] = x[keep] / (roi.width - 1) if roi.width > 1 else 0.0
    out["yn"] = y[keep] / (roi.height - 1) if roi.height > 1 else 0.0
    out["p"] = events["p"][keep]
    out["t"] = events["t"][keep]
    return out


class RateLimiter:
    """Stateful per-microsecond cap that works across chunk boundaries.

    Keeps the earliest ``max_per_us`` events of every timestamp bucket.
    """

    def __init__(self, max_per_us: int):
        if max_per_us < 1:
            raise ValueError("max_per_us must be positive")
        self.max_per_us = int(max_per_us)
        self.dropped = 0
        self._bucket = None
        self._count = 0

    def __call__(self, events: np.ndarray) -> np.ndarray:
        n = len(events)
        if n == 0:
            return events
        t = events["t"]
        starts = np.empty(n, dtype=bool)
        starts[0] = True
        np.not_equal(t[1:], t[:-1], out=starts[1:])
        idx = np.arange(n)
        run_start = np.maximum.accumulate(np.where(starts, idx, 0))
        rank = idx - run_start
        if self._bucket is not None and t[0] == self._bucket:
            first_run = run_start == 0
            rank[first_run] += self._count
        keep = rank < self.max_per_us
        # carry the tail bucket's running count into the next chunk
        last = int(t[-1])
        tail_count = int(rank[-1]) + 1
        self._bucket, self._count = last, tail_count
        self.dropped += n - int(keep.sum())
        return events[keep]


def rate_limit(events: np.ndarray, max_per_us: int) -> tuple[np.ndarray, int]:
    """Apply the per-microsecond cap to a whole array; returns (kept, dropped)."""
    limiter = RateLimiter(max_per_us)
    kept = limiter(events)
    return kept, limiter.dropped


def _to_window(chunk: np.ndarray, label) -> EventWindow:
    feats = np.empty((len(chunk), 3), dtype=np.float64)
    feats[:, 0] = chunk["xn"]
    feats[:, 1] = chunk["yn"]
    feats[:, 2] = chunk["p"]
    return EventWindow(feats, label, int(chunk["t"][0]), int(chunk["t"][-1]))


class Windower:
    """Streaming fixed-count grouping of normalized events into windows."""

    def __init__(self, n: int, label: Optional[FlowRegime] = None):
        if n < 1:
            raise ValueError("window length must be >= 1")
        self.n = int(n)
        self.label = label
        self._pending = np.zeros(0, dtype=NORM_DTYPE)

    @property
    def pending(self) -> int:
        return len(self._pending)

    def push(self, events: np.ndarray) -> list[EventWindow]:
        buf = np.concatenate([self._pending, events]) if len(self._pending) else events
        full = len(buf) // self.n
        windows = [_to_window(buf[i * self.n:(i + 1) * self.n], self.label) for i in range(full)]
        self._pending = buf[full * self.n:].copy()
        return windows


def window_fixed_count(
    events: np.ndarray, n: int, label: Optional[FlowRegime] = None
) -> tuple[list[EventWindow], int]:
    """Split normalized events into consecutive windows of exactly ``n``.

    Returns the windows and the number of trailing events discarded.
    """
    w = Windower(n, label)
    windows = w.push(events)
    return windows, w.pending
