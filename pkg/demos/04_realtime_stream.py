"""Live classification over the network transport.

A server thread replays a synthetic recording that switches regime every
few seconds, pacing events by their timestamps. The pipeline connects as a
client, cuts fixed-count windows, classifies the newest one whenever the
classifier is free, and smooths labels with a majority vote. Windows that
arrive while the classifier is busy are replaced, never queued, so the
reported label tracks the present rather than a growing backlog.

Any ELS1 or KNN1 model works; without one a small k-NN is fitted first.

    python demos/04_realtime_stream.py [--model lstm.els]
"""
import argparse
import socket
import threading

import numpy as np

from regimecam.accumulate import window_to_frame
from regimecam.cli import load_classifier
from regimecam.dataset import DatasetConfig, build_dataset, sequence_events
from regimecam.events import SensorMeta
from regimecam.knn import KnnClassifier, knn_fit, spectral_features
from regimecam.pipeline import NetworkSource, PipelineConfig, run_pipeline
from regimecam.pipeline.transport import send_events
from regimecam.regimes import FlowRegime
from regimecam.synth import SynthParams


def recording(regimes, frames_each, seed):
    """Concatenated regime segments with their true labels by time."""
    parts, marks, t0 = [], [], 0
    for k, r in enumerate(regimes):
        ev = sequence_events(SynthParams(r, frame_count=frames_each, seed=seed + k))
        ev["t"] += np.uint64(t0)
        parts.append(ev)
        marks.append((t0, r))
        t0 = int(ev["t"][-1]) + 1000
    return np.concatenate(parts), marks


def quick_knn(seq_len):
    cfg = DatasetConfig(windows_per_regime=40, seq_len=seq_len, seed=1)
    windows = build_dataset(cfg)
    feats = np.stack([spectral_features(window_to_frame(w.events, cfg.dims)) for w in windows])
    return KnnClassifier(knn_fit(feats, [int(w.label) for w in windows], 5), cfg.dims)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--model")
    ap.add_argument("--seq-len", type=int, default=2500)
    ap.add_argument("--smoother-window", type=int, default=15)
    args = ap.parse_args()

    clf = load_classifier(args.model) if args.model else quick_knn(args.seq_len)
    seq_len = getattr(clf, "seq_len", args.seq_len)
    regimes = [FlowRegime.B, FlowRegime.S, FlowRegime.SW, FlowRegime.A]
    events, marks = recording(regimes, 1500, seed=20)
    print(f"replaying {len(events)} events over {events['t'][-1] / 1e6:.1f} s: "
          + " -> ".join(r.name for _, r in marks))

    server = socket.create_server(("127.0.0.1", 0))
    port = server.getsockname()[1]

    def serve():
        conn, _ = server.accept()
        with conn:
            send_events(conn, events, SensorMeta(64, 32), batch=512, pace="real")
        server.close()

    threading.Thread(target=serve, daemon=True).start()

    def truth(t):
        return [r for start, r in marks if start <= t][-1]

    rows = []

    def sink(pred):
        rows.append((pred.t_window_end, truth(pred.t_window_end), pred.raw_label, pred.smoothed_label,
                     pred.vote_confidence))
        if pred.index % 10 == 0:
            print(f"  t={pred.t_window_end / 1e6:5.2f} s true {rows[-1][1].name:2s} raw {pred.raw_label.name:2s} "
                  f"smoothed {pred.smoothed_label.name:2s} vote {pred.vote_confidence:4.0%} "
                  f"softmax {pred.softmax_confidence:4.0%}")

    cfg = PipelineConfig(seq_len=seq_len, smoother_window=args.smoother_window)
    stats = run_pipeline(NetworkSource("127.0.0.1", port), clf, sink, cfg)
    print("\n" + stats.summary())
    if rows:
        raw_ok = np.mean([r[1] == r[2] for r in rows])
        smooth_ok = np.mean([r[1] == r[3] for r in rows])
        print(f"agreement with the true regime: raw {raw_ok:.1%}, smoothed {smooth_ok:.1%}")


if __name__ == "__main__":
    main()
