"""Fixed-count accumulation of events into 2-D frames."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .errors import BadMagic, OutOfBounds, TruncatedRecord
from .events import EVENT_DTYPE

SIGNED = "signed"
DUAL = "dual"

ACF1_MAGIC = b"ACF1"
ACF1_HEADER = struct.Struct("<4sHHHII")


@dataclass
class AccumFrame:
    """Accumulated counts from ``event_count`` consecutive events.

    ``grid`` is (H, W) signed counts in signed mode, or (2, H, W) with the
    positive channel first in dual mode.
    """

    grid: np.ndarray
    event_count: int
    delta_t: int
    t_start: int

    @property
    def mode(self) -> str:
        return DUAL if self.grid.ndim == 3 else SIGNED

    @property
    def signed_grid(self) -> np.ndarray:
        if self.grid.ndim == 3:
            return self.grid[0] - self.grid[1]
        return self.grid

    @property
    def dims(self) -> tuple[int, int]:
        """(width, height)."""
        return self.grid.shape[-1], self.grid.shape[-2]


def accumulate(events: np.ndarray, count_threshold: int, mode: str = SIGNED,
               dims: tuple[int, int] = (64, 32)) -> list[AccumFrame]:
    """Group ``events`` into frames of exactly ``count_threshold`` events.

    ``dims`` is (width, height). The trailing partial group is discarded.
    """
    if count_threshold < 1:
        raise ValueError("count_threshold must be positive")
    if mode not in (SIGNED, DUAL):
        raise ValueError(f"unknown accumulation mode {mode!r}")
    width, height = dims
    n_frames = len(events) // count_threshold
    used = events[: n_frames * count_threshold]
    if n_frames == 0:
        return []
    x = used["x"].astype(np.int64)
    y = used["y"].astype(np.int64)
    bad = (x >= width) | (y >= height)
    if bad.any():
        i = int(np.argmax(bad))
        raise OutOfBounds(f"event ({x[i]}, {y[i]}) outside {width}x{height}")
    npix = width * height
    frame_idx = np.arange(len(used)) // count_threshold
    flat = frame_idx * npix + y * width + x
    p = used["p"]
    if mode == SIGNED:
        grids = np.bincount(flat, weights=p, minlength=n_frames * npix)
        grids = grids.astype(np.int32).reshape(n_frames, height, width)
    else:
        pos = np.bincount(flat[p > 0], minlength=n_frames * npix)
        neg = np.bincount(flat[p < 0], minlength=n_frames * npix)
        grids = np.stack([pos.reshape(n_frames, height, width), neg.reshape(n_frames, height, width)],
                         axis=1).astype(np.int32)
    t = used["t"].reshape(n_frames, count_threshold)
    t_first = t[:, 0].astype(np.int64)
    delta = t.max(axis=1).astype(np.int64) - t.min(axis=1).astype(np.int64)
    return [AccumFrame(grids[i], count_threshold, int(delta[i]), int(t_first[i])) for i in range(n_frames)]


class Accumulator:
    """Streaming counterpart of :func:`accumulate` that carries partials across chunks."""

    def __init__(self, count_threshold: int, mode: str = SIGNED, dims: tuple[int, int] = (64, 32)):
        self.count_threshold = count_threshold
        self.mode = mode
        self.dims = dims
        self._pending = np.zeros(0, dtype=EVENT_DTYPE)

    def push(self, events: np.ndarray) -> list[AccumFrame]:
        buf = np.concatenate([self._pending, events]) if len(self._pending) else events
        frames = accumulate(buf, self.count_threshold, self.mode, self.dims)
        self._pending = buf[len(frames) * self.count_threshold:].copy()
        return frames


def iter_accumulate(chunks, count_threshold: int, mode: str = SIGNED,
                    dims: tuple[int, int] = (64, 32)) -> Iterator[AccumFrame]:
    acc = Accumulator(count_threshold, mode, dims)
    for chunk in chunks:
        yield from acc.push(chunk)


def render_accum(frame: AccumFrame) -> np.ndarray:
    """8-bit diagnostic image: zero count is mid-grey, each count shifts by 32."""
    img = 128 + 32 * frame.signed_grid.astype(np.int64)
    return np.clip(img, 0, 255).astype(np.uint8)


def window_to_frame(window_events: np.ndarray, dims: tuple[int, int], mode: str = SIGNED) -> AccumFrame:
    """Accumulate an (N, 3) normalized window back onto a ``dims`` pixel grid."""
    width, height = dims
    ev = np.zeros(len(window_events), dtype=EVENT_DTYPE)
    ev["x"] = np.rint(window_events[:, 0] * (width - 1))
    ev["y"] = np.rint(window_events[:, 1] * (height - 1))
    ev["p"] = window_events[:, 2]
    return accumulate(ev, len(ev), mode, dims)[0]


# --- ACF1 raw grid format ----------------------------------------------------


def encode_accum(frame: AccumFrame) -> bytes:
    channels = 2 if frame.grid.ndim == 3 else 1
    width, height = frame.dims
    header = ACF1_HEADER.pack(ACF1_MAGIC, width, height, channels,
                              frame.event_count, min(int(frame.delta_t), 0xFFFFFFFF))
    return header + frame.grid.astype("<i4").tobytes()


def decode_accum(data: bytes, t_start: int = 0) -> AccumFrame:
    if len(data) < ACF1_HEADER.size:
        raise TruncatedRecord("ACF1 header truncated")
    magic, width, height, channels, count, delta = ACF1_HEADER.unpack_from(data)
    if magic != ACF1_MAGIC:
        raise BadMagic(f"expected {ACF1_MAGIC!r}, got {magic!r}")
    n = width * height * channels
    body = data[ACF1_HEADER.size:]
    if len(body) != 4 * n:
        raise TruncatedRecord(f"expected {4 * n} grid bytes, got {len(body)}")
    grid = np.frombuffer(body, dtype="<i4").astype(np.int32)
    shape = (height, width) if channels == 1 else (channels, height, width)
    return AccumFrame(grid.reshape(shape), count, delta, t_start)


def write_accum_stream(path, frames: list[AccumFrame]) -> None:
    with open(path, "wb") as fh:
        for f in frames:
            fh.write(encode_accum(f))


def read_accum_stream(path) -> list[AccumFrame]:
    data = open(path, "rb").read()
    frames, pos = [], 0
    while pos < len(data):
        if len(data) - pos < ACF1_HEADER.size:
            raise TruncatedRecord("ACF1 header truncated")
        _, w, h, c, _, _ = ACF1_HEADER.unpack_from(data, pos)
        size = ACF1_HEADER.size + 4 * w * h * c
        frames.append(decode_accum(data[pos:pos + size]))
        pos += size
    return frames
