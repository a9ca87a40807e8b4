"""Labeled window datasets built from synthetic regime video.

Each regime contributes windows cut from several independently seeded
sequences. The path per sequence is the one the live pipeline uses:
synthesize, emulate, full-frame normalization, rate limiting, fixed-count
windowing.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .emulator import EmulatorConfig, emulate_events
from .events import EventWindow, RateLimiter, Roi, SensorMeta, Windower, normalize_roi
from .regimes import FlowRegime
from .synth import SynthParams, synth_regime

DEFAULT_MAX_PER_US = 1024


@dataclass(frozen=True)
class DatasetConfig:
    windows_per_regime: int = 300
    seq_len: int = 2500
    width: int = 64
    height: int = 32
    frames_per_sequence: int = 250
    # cap per sequence so every class draws on several independent videos
    max_windows_per_sequence: int = 16
    # per-sequence jitter of flow speed and feature density, as fractions
    jitter: float = 0.25
    flow_speed: float = 1.5
    feature_density: float = 0.5
    max_per_us: int = DEFAULT_MAX_PER_US
    seed: int = 0
    emulator: EmulatorConfig = field(default_factory=EmulatorConfig)

    @property
    def dims(self) -> tuple[int, int]:
        return self.width, self.height


def sequence_events(params: SynthParams, emulator: Optional[EmulatorConfig] = None) -> np.ndarray:
    """Raw emulated events for one synthetic sequence."""
    frames, _ = synth_regime(params)
    return emulate_events(frames, emulator)


def _sequence_params(cfg: DatasetConfig, regime: FlowRegime, k: int) -> SynthParams:
    ss = np.random.SeedSequence([cfg.seed, int(regime), k])
    rng = np.random.default_rng(ss)
    j = cfg.jitter
    speed = cfg.flow_speed * (1.0 + rng.uniform(-j, j))
    density = float(np.clip(cfg.feature_density * (1.0 + rng.uniform(-j, j)), 0.05, 1.0))
    return SynthParams(regime, cfg.width, cfg.height, cfg.frames_per_sequence,
                       flow_speed=speed, feature_density=density,
                       seed=int(ss.generate_state(1)[0]))


def windows_from_events(events: np.ndarray, meta: SensorMeta, seq_len: int,
                        label=None, max_per_us: int = DEFAULT_MAX_PER_US) -> list[EventWindow]:
    """Normalize, rate-limit and cut raw events into full windows (remainder dropped)."""
    norm = normalize_roi(events, Roi.full(meta), meta)
    kept = RateLimiter(max_per_us)(norm)
    return Windower(seq_len, label).push(kept)


def regime_windows(regime, cfg: DatasetConfig) -> list[EventWindow]:
    """``cfg.windows_per_regime`` labeled windows of one regime."""
    regime = FlowRegime.parse(regime)
    meta = SensorMeta(cfg.width, cfg.height)
    out: list[EventWindow] = []
    k = 0
    while len(out) < cfg.windows_per_regime:
        params = _sequence_params(cfg, regime, k)
        wins = windows_from_events(sequence_events(params, cfg.emulator), meta,
                                   cfg.seq_len, regime, cfg.max_per_us)
        out.extend(wins[:cfg.max_windows_per_sequence])
        k += 1
        if k > 100_000:
            raise RuntimeError(f"regime {regime.name} produces too few events to fill the dataset")
    return out[:cfg.windows_per_regime]


def build_dataset(cfg: DatasetConfig, regimes: Iterable = tuple(FlowRegime)) -> list[EventWindow]:
    """Windows for every requested regime, grouped by regime in the given order."""
    windows = []
    for r in regimes:
        windows.extend(regime_windows(r, cfg))
    return windows



def raw_chunks(cfg: DatasetConfig, regimes: Iterable, n: int, count: int, first_sequence: int = 10_000
               ) -> list[np.ndarray]:
    """Raw event chunks holding ``n`` events each after rate limiting.

    Cut from sequences numbered from ``first_sequence`` on, so they never
    overlap the sequences behind :func:`build_dataset`.
    """
    regimes = [FlowRegime.parse(r) for r in regimes]
    out: list[np.ndarray] = []
    k = first_sequence
    while len(out) < count:
        for r in regimes:
            ev = sequence_events(_sequence_params(cfg, r, k), cfg.emulator)
            kept = RateLimiter(cfg.max_per_us)(ev)
            out.extend(kept[s:s + n] for s in range(0, len(kept) - n + 1, n))
        k += 1
    return out[:count]
