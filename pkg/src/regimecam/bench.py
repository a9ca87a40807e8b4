"""Throughput and latency measurements behind ``regimecam bench``."""
from __future__ import annotations

import time

import numpy as np

from .accumulate import Accumulator
from .emulator import emulate_events
from .events import RateLimiter, Roi, SensorMeta, normalize_roi
from .regimes import FlowRegime
from .synth import SynthParams, synth_regime


def event_stream(n_events: int, seed: int = 0, regime=FlowRegime.U) -> tuple[np.ndarray, SensorMeta]:
    """At least ``n_events`` emulated events: one sequence tiled forward in time."""
    params = SynthParams(regime, frame_count=400, seed=seed)
    frames, _ = synth_regime(params)
    base = emulate_events(frames)
    span = int(base["t"][-1]) + params.dt_us
    reps = -(-n_events // len(base))
    ev = np.tile(base, reps)
    ev["t"] += np.repeat(np.arange(reps, dtype=np.uint64) * np.uint64(span), len(base))
    return ev[:n_events], SensorMeta(params.width, params.height)


def bench_throughput(n_events: int = 2_000_000, chunk: int = 8192, count_threshold: int = 2500,
                     max_per_us: int = 1024, seed: int = 0, events=None, meta=None) -> dict:
    """Events per second through rate limiting, normalization and accumulation, one thread."""
    if events is None:
        events, meta = event_stream(n_events, seed)
    roi = Roi.full(meta)
    limiter = RateLimiter(max_per_us)
    acc = Accumulator(count_threshold, dims=(meta.width, meta.height))
    frames = kept_total = 0
    t0 = time.perf_counter()
    for s in range(0, len(events), chunk):
        kept = limiter(events[s:s + chunk])
        normalize_roi(kept, roi, meta)
        frames += len(acc.push(kept))
        kept_total += len(kept)
    dt = time.perf_counter() - t0
    return {"n_events": len(events), "seconds": dt, "events_per_s": len(events) / dt,
            "frames": frames, "kept": kept_total, "rate_limited": limiter.dropped}


def bench_inference(model_path=None, seq_len: int = 2500, repeats: int = 20, batch: int = 32,
                    seed: int = 0, params=None) -> dict:
    """Single-window and batched LSTM inference cost, first call excluded."""
    from .lstm import LstmClassifier, LstmHyper, init_params, load_model
    if params is None:
        if model_path:
            params = load_model(model_path)
        else:
            params = init_params(LstmHyper(seq_len=seq_len, dtype="float32"), np.random.default_rng(seed))
    clf = LstmClassifier(params)
    n = params.hyper.seq_len
    rng = np.random.default_rng([seed, 3])
    X = rng.random((max(repeats, batch), n, 3)).astype(np.float32)
    X[:, :, 2] = np.where(X[:, :, 2] < 0.5, -1.0, 1.0)
    clf(X[0])
    times = []
    for i in range(repeats):
        t0 = time.perf_counter_ns()
        clf(X[i])
        times.append(time.perf_counter_ns() - t0)
    ms = np.asarray(times) / 1e6
    clf.predict_proba_batch(X[:2])
    t0 = time.perf_counter()
    clf.predict_proba_batch(X[:batch], batch)
    batched = (time.perf_counter() - t0) / batch * 1e3
    return {"seq_len": n, "single_ms": float(ms.mean()), "single_p50_ms": float(np.percentile(ms, 50)),
            "single_p99_ms": float(np.percentile(ms, 99)), "batched_ms": batched, "repeats": repeats}
