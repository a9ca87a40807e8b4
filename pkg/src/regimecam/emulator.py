"""Frame-to-event conversion by per-pixel log-intensity thresholding.

A pixel keeps a reference log intensity. Whenever the current frame moves
it by at least one contrast threshold, the pixel fires one event per
threshold crossed and its reference advances by exactly that many
thresholds, so sub-threshold residue carries into later frames.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import EmptySequence, OutOfRange, ShapeMismatch
from .events import EVENT_DTYPE
from .regimes import FlowRegime

# floor(|d| / C) is taken with this slack so analytically exact multiples
# of the threshold (e.g. ln 200 - ln 100 == ln 2) are not lost to rounding
_FLOOR_SLACK = 1e-9


@dataclass
class FrameSequence:
    frames: np.ndarray  # (F, H, W), values in [0, 255]
    dt: int  # inter-frame interval, us
    t0: int = 0

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 3:
            raise ShapeMismatch(f"frames must be (F, H, W), got shape {self.frames.shape}")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]

    def __len__(self) -> int:
        return self.frames.shape[0]


@dataclass
class EmulatorConfig:
    contrast_threshold: float = 0.2
    linlog_cutoff: float = 20.0
    max_events_per_pixel_per_frame: int = 16

    def __post_init__(self):
        if self.contrast_threshold <= 0 or self.linlog_cutoff <= 0:
            raise ValueError("contrast threshold and linlog cutoff must be positive")
        if self.max_events_per_pixel_per_frame < 1:
            raise ValueError("per-pixel event cap must be >= 1")


def lin_log(intensity: np.ndarray, cutoff: float = 20.0) -> np.ndarray:
    """ln(I) above ``cutoff``, continued by its tangent line below it."""
    x = np.asarray(intensity, dtype=np.float64)
    return np.where(
        x >= cutoff,
        np.log(np.maximum(x, cutoff)),
        np.log(cutoff) + (x - cutoff) / cutoff,
    )


def _frame_events(k: np.ndarray, sign: np.ndarray, width: int, t_base: int, dt: int) -> np.ndarray:
    flat_k = k.ravel()
    pix = np.flatnonzero(flat_k)
    if pix.size == 0:
        return np.zeros(0, dtype=EVENT_DTYPE)
    counts = flat_k[pix]
    rep_pix = np.repeat(pix, counts)
    rep_k = np.repeat(counts, counts)
    # j-th event (0-based) of a pixel's k events
    first = np.repeat(np.cumsum(counts) - counts, counts)
    j = np.arange(rep_pix.size) - first
    t = t_base + ((j + 1) * dt) // (rep_k + 1)
    order = np.lexsort((rep_pix, t))
    rep_pix, t = rep_pix[order], t[order]
    out = np.zeros(rep_pix.size, dtype=EVENT_DTYPE)
    out["t"] = t
    out["y"] = rep_pix // width
    out["x"] = rep_pix % width
    out["p"] = sign.ravel()[rep_pix]
    return out


def emulate_events(frames: FrameSequence, cfg: Optional[EmulatorConfig] = None) -> np.ndarray:
    """Convert a frame sequence to a timestamp-sorted event array.

    Events produced by the transition from frame ``i-1`` to frame ``i`` are
    spread uniformly over ``[t0 + (i-1)*dt, t0 + i*dt)``; ties in time are
    ordered by raster position.
    """
    cfg = cfg or EmulatorConfig()
    if len(frames) == 0:
        raise EmptySequence("no frames")
    if len(frames) < 2:
        raise EmptySequence("need at least two frames to detect changes")
    C = float(cfg.contrast_threshold)
    cap = int(cfg.max_events_per_pixel_per_frame)
    height, width = frames.shape
    dt = int(frames.dt)
    l_ref = lin_log(frames.frames[0], cfg.linlog_cutoff)
    chunks = []
    for i in range(1, len(frames)):
        d = lin_log(frames.frames[i], cfg.linlog_cutoff) - l_ref
        k = np.minimum(np.floor(np.abs(d) / C + _FLOOR_SLACK), cap).astype(np.int64)
        sign = np.where(d >= 0, 1, -1).astype(np.int8)
        l_ref += k * C * sign
        chunks.append(_frame_events(k, sign, width, int(frames.t0) + (i - 1) * dt, dt))
    return np.concatenate(chunks) if chunks else np.zeros(0, dtype=EVENT_DTYPE)


def label_events(events: np.ndarray, frames: FrameSequence, labels: Sequence) -> np.ndarray:
    """Per-event label codes taken from the frame whose interval holds ``t``."""
    if len(labels) != len(frames):
        raise ShapeMismatch(f"{len(labels)} labels for {len(frames)} frames")
    t = events["t"].astype(np.int64)
    idx = (t - int(frames.t0)) // int(frames.dt)
    bad = (t < frames.t0) | (idx >= len(frames))
    if bad.any():
        raise OutOfRange(int(t[np.argmax(bad)]))
    codes = np.array([int(FlowRegime.parse(lab)) for lab in labels], dtype=np.int64)
    return codes[idx]


# --- PGM directory format ---------------------------------------------------

META_NAME = "meta.txt"


def write_pgm(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval > 255:
        raise ValueError(f"{path}: only 8-bit PGM supported")
    return np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w).copy()


def write_frame_dir(directory, frames: FrameSequence, labels: Optional[Sequence] = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames.frames):
        write_pgm(d / f"frame_{i:06d}.pgm", frame)
    lines = [f"dt_us {int(frames.dt)}", f"t0_us {int(frames.t0)}"]
    if labels is not None:
        lines.append("labels " + ",".join(FlowRegime.parse(lab).name for lab in labels))
    (d / META_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_frame_dir(directory) -> tuple[FrameSequence, Optional[list[FlowRegime]]]:
    d = Path(directory)
    meta = {}
    for line in (d / META_NAME).read_text(encoding="utf-8").splitlines():
        if line.strip():
            key, _, value = line.strip().partition(" ")
            meta[key] = value.strip()
    files = sorted(p for p in os.listdir(d) if p.endswith(".pgm"))
    if not files:
        raise EmptySequence(f"no PGM frames in {d}")
    frames = np.stack([read_pgm(d / f) for f in files])
    labels = None
    if meta.get("labels"):
        labels = [FlowRegime.parse(s) for s in meta["labels"].split(",")]
    return FrameSequence(frames, int(meta["dt_us"]), int(meta.get("t0_us", 0))), labels
