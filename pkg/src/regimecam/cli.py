"""``regimecam`` command line.

Exit status: 0 on success, 1 on usage errors, 2 on runtime errors.
"""
from __future__ import annotations

import argparse
import logging
import socket
import sys
import threading
import time
from pathlib import Path

import numpy as np

from .accumulate import accumulate, write_accum_stream
from .dataset import DEFAULT_MAX_PER_US, DatasetConfig, build_dataset, raw_chunks, windows_from_events
from .emulator import EmulatorConfig, emulate_events, read_frame_dir, write_frame_dir
from .errors import RegimeCamError
from .events import EventWindow, Roi, SensorMeta, read_events, write_evf, write_event_text
from .regimes import FlowRegime
from .synth import SynthParams, synth_regime

log = logging.getLogger("regimecam")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _pair(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


def _lengths(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError("lengths are comma-separated integers") from None
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("lengths must be positive")
    return vals


def _regime(text: str) -> FlowRegime:
    try:
        return FlowRegime.parse(text)
    except (KeyError, ValueError):
        raise argparse.ArgumentTypeError(f"unknown regime {text!r}") from None


# --- shared data plumbing -----------------------------------------------------


def _add_data_args(p, split_default="all"):
    g = p.add_argument_group("data")
    g.add_argument("--data", help="dataset .npz (X, y); default is a synthetic dataset")
    g.add_argument("--windows-per-regime", type=int, default=300)
    g.add_argument("--seq-len", type=int, default=2500)
    g.add_argument("--regimes", default=",".join(r.name for r in FlowRegime),
                   help="comma-separated regimes for the synthetic dataset")
    g.add_argument("--split", choices=("train", "val", "all"), default=split_default,
                   help="seeded 80/20 stratified split to use")
    g.add_argument("--width", type=int, default=64)
    g.add_argument("--height", type=int, default=32)
    g.add_argument("--seed", type=int, default=0)


def _load_windows(args) -> tuple[list[EventWindow], tuple[int, int]]:
    from .lstm.train import stack_windows, stratified_split

    dims = (args.width, args.height)
    if args.data:
        with np.load(args.data) as z:
            X, y = z["X"], z["y"]
            if "dims" in z:
                dims = tuple(int(v) for v in z["dims"])
        windows = [EventWindow(X[i], FlowRegime(int(y[i])), 0, 0) for i in range(len(y))]
    else:
        regimes = [FlowRegime.parse(r) for r in args.regimes.split(",") if r]
        cfg = DatasetConfig(windows_per_regime=args.windows_per_regime, seq_len=args.seq_len,
                            width=args.width, height=args.height, seed=args.seed)
        windows = build_dataset(cfg, regimes)
    if args.split != "all":
        _, y = stack_windows(windows)
        tr, va = stratified_split(y, 0.2, args.seed)
        windows = [windows[i] for i in (tr if args.split == "train" else va)]
    return windows, dims


def load_classifier(path, dims=(64, 32)):
    """LstmClassifier or KnnClassifier, chosen by the file's magic bytes."""
    path = Path(path)
    head = path.read_bytes()[:4]
    if head == b"ELS1":
        from .lstm import LstmClassifier, load_model
        return LstmClassifier(load_model(path))
    if head == b"KNN1":
        from .knn import KnnClassifier, decode_knn
        model = decode_knn(path.read_bytes())
        return KnnClassifier(model, dims, int(round(np.sqrt(model.dim))))
    raise RegimeCamError(f"{path}: not an ELS1 or KNN1 model")


def _grid_dims(args, meta=None) -> tuple[int, int]:
    """Pixel grid for k-NN accumulation: explicit flags, else the sensor size, else 64x32."""
    if getattr(args, "width", None) and getattr(args, "height", None):
        return args.width, args.height
    if meta is not None:
        return meta.width, meta.height
    return 64, 32


def _meta_for(events, meta, args) -> SensorMeta:
    if meta is not None:
        return meta
    if getattr(args, "width", None) and getattr(args, "height", None):
        return SensorMeta(args.width, args.height)
    return SensorMeta(int(events["x"].max()) + 1, int(events["y"].max()) + 1)


# --- subcommands --------------------------------------------------------------


def cmd_synth(args) -> int:
    params = SynthParams(args.regime, args.width, args.height, args.frames, args.fps,
                         args.flow_speed, args.density, args.seed)
    frames, labels = synth_regime(params)
    write_frame_dir(args.out, frames, labels)
    print(f"wrote {len(frames)} frames of {args.regime.name} to {args.out}")
    return 0


def cmd_emulate(args) -> int:
    frames, _ = read_frame_dir(args.frames)
    cfg = EmulatorConfig(args.threshold, args.cutoff)
    events = emulate_events(frames, cfg)
    h, w = frames.shape
    if args.text:
        write_event_text(args.out, events)
    else:
        write_evf(args.out, events, SensorMeta(w, h))
    print(f"{len(events)} events from {len(frames)} frames -> {args.out}")
    return 0


def cmd_accumulate(args) -> int:
    events, meta = read_events(args.events)
    meta = _meta_for(events, meta, args)
    frames = accumulate(events, args.count, args.mode, (meta.width, meta.height))
    write_accum_stream(args.out, frames)
    print(f"{len(frames)} frames of {args.count} events -> {args.out}")
    if frames:
        dts = np.array([f.delta_t for f in frames])
        print(f"delta_t us: mean {dts.mean():.0f} min {dts.min()} max {dts.max()}")
    return 0


def _hyper_from(args):
    from .lstm import LstmHyper
    return LstmHyper(seq_len=args.seq_len, epochs=args.epochs, batch=args.batch, lr=args.lr,
                     seed=args.seed, dtype=args.dtype, micro_batch=args.micro_batch,
                     forget_bias=args.forget_bias, chrono_span=args.chrono_span,
                     lr_schedule=args.lr_schedule)


def cmd_train_lstm(args) -> int:
    from .lstm import LstmClassifier, history_csv, save_model, train
    windows, _ = _load_windows(args)
    hyper = _hyper_from(args)
    params, history = train(windows, hyper,
                            on_epoch=lambda r: print(f"epoch {r.epoch} loss {r.train_loss:.4f} "
                                                     f"val_acc {r.val_accuracy:.4f} ({r.seconds:.0f}s)",
                                                     flush=True))
    save_model(args.out, params)
    if args.history:
        Path(args.history).write_text(history_csv(history), encoding="utf-8")
    print(f"saved {params.count} parameters to {args.out}")
    return 0


def cmd_train_knn(args) -> int:
    from .accumulate import window_to_frame
    from .knn import encode_knn, knn_fit, spectral_features
    windows, dims = _load_windows(args)
    feats = np.stack([spectral_features(window_to_frame(w.events, dims), args.block) for w in windows])
    model = knn_fit(feats, [int(w.label) for w in windows], args.k)
    Path(args.out).write_bytes(encode_knn(model))
    print(f"stored {len(windows)} reference windows (k={args.k}, {feats.shape[1]} features) in {args.out}")
    return 0


def cmd_eval(args) -> int:
    from .metrics import evaluate
    windows, dims = _load_windows(args)
    clf = load_classifier(args.model, dims)
    res = evaluate(clf, windows)
    print(f"accuracy {res.accuracy:.4f} on {res.n} windows")
    print(res.confusion.grid())
    for r, v in res.recall.items():
        print(f"recall {r.name} {v:.4f}")
    if args.confusion_csv:
        Path(args.confusion_csv).write_text(res.confusion.csv(), encoding="utf-8")
    return 0


def cmd_sweep(args) -> int:
    from .lstm import LstmClassifier, train
    from .lstm.train import stack_windows, stratified_split
    from .metrics import sweep_sequence_length
    regimes = [FlowRegime.parse(r) for r in args.regimes.split(",") if r]

    def make_data(n):
        cfg = DatasetConfig(windows_per_regime=args.windows_per_regime, seq_len=n,
                            width=args.width, height=args.height, seed=args.seed)
        windows = build_dataset(cfg, regimes)
        _, y = stack_windows(windows)
        tr, va = stratified_split(y, 0.2, args.seed)
        raw = raw_chunks(cfg, regimes, n, args.timed + 1)
        return [windows[i] for i in tr], [windows[i] for i in va], raw, SensorMeta(args.width, args.height)

    def fit(train_w, n):
        hyper = _hyper_from(args).replace(seq_len=n)
        params, _ = train(train_w, hyper)
        return LstmClassifier(params)

    res = sweep_sequence_length(make_data, args.lengths, fit, args.timed)
    text = res.csv()
    print(text, end="")
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    return 0


def cmd_classify(args) -> int:
    from .pipeline import CsvSink, classify_windows
    events, meta = read_events(args.events)
    meta = _meta_for(events, meta, args)
    clf = load_classifier(args.model, _grid_dims(args, meta))
    seq_len = getattr(clf, "seq_len", args.seq_len)
    windows = windows_from_events(events, meta, seq_len, None, args.max_per_us)
    preds = classify_windows(clf, windows, args.smoother_window)
    sink = CsvSink(args.out if args.out else sys.stdout)
    for p in preds:
        sink(p)
    sink.close()
    if args.out:
        print(f"{len(preds)} windows classified -> {args.out}")
    return 0


def _make_source(spec: str, args):
    from .pipeline import FileSource, NetworkSource
    kind, _, rest = spec.partition(":")
    if kind == "replay" and rest:
        return FileSource(rest, None, args.chunk, args.pace)
    if kind == "tcp" and rest:
        host, port = _pair(rest)
        return NetworkSource(host, port)
    raise UsageError(f"--source must be replay:PATH or tcp:HOST:PORT, got {spec!r}")


def cmd_stream(args) -> int:
    from .pipeline import CsvSink, PipelineConfig, StatusSink, TeeSink, run_pipeline
    source = _make_source(args.source, args)
    clf = load_classifier(args.model, _grid_dims(args, getattr(source, "meta", None)))
    seq_len = getattr(clf, "seq_len", args.seq_len)
    sinks = []
    if args.log:
        sinks.append(CsvSink(args.log))
    if not args.quiet:
        sinks.append(StatusSink(sys.stderr))
    sink = TeeSink(*sinks)
    cfg = PipelineConfig(seq_len=seq_len, max_events_per_us=args.max_per_us,
                         smoother_window=args.smoother_window, mode=args.mode)
    stop = threading.Event()
    if args.duration:
        threading.Timer(args.duration, stop.set).start()
    try:
        stats = run_pipeline(source, clf, sink, cfg, stop)
    except KeyboardInterrupt:
        stop.set()
        return 2
    print(stats.summary())
    return 0


def cmd_serve_events(args) -> int:
    from .pipeline.transport import send_events
    events, meta = read_events(args.events)
    meta = _meta_for(events, meta, args)
    host, port = args.listen
    with socket.create_server((host, port)) as srv:
        print(f"serving {len(events)} events on {host}:{srv.getsockname()[1]}", flush=True)
        for _ in range(args.clients):
            conn, addr = srv.accept()
            with conn:
                send_events(conn, events, meta, args.batch, args.pace)
            log.info("served %s", addr)
    return 0


def cmd_bench(args) -> int:
    from .bench import bench_inference, bench_throughput
    if args.what in ("throughput", "all"):
        r = bench_throughput(n_events=args.events, seed=args.seed)
        print(f"throughput {r['events_per_s']:.0f} events/s "
              f"({r['n_events']} events, {r['seconds']:.3f} s, rate limit + normalize + accumulate)")
    if args.what in ("latency", "all"):
        r = bench_inference(args.model, seq_len=args.seq_len, repeats=args.repeats, seed=args.seed)
        print(f"inference N={r['seq_len']}: single-window mean {r['single_ms']:.2f} ms "
              f"(p50 {r['single_p50_ms']:.2f}, p99 {r['single_p99_ms']:.2f}); "
              f"batched {r['batched_ms']:.2f} ms per window")
    return 0


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="regimecam", description="Event-camera flow-regime toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="render a synthetic regime video")
    s.add_argument("--regime", type=_regime, required=True)
    s.add_argument("--frames", type=int, default=200)
    s.add_argument("--width", type=int, default=64)
    s.add_argument("--height", type=int, default=32)
    s.add_argument("--fps", type=float, default=1000.0)
    s.add_argument("--flow-speed", type=float, default=1.5)
    s.add_argument("--density", type=float, default=0.5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("emulate", help="frames to events")
    s.add_argument("--frames", required=True, help="frame directory from synth")
    s.add_argument("--out", required=True)
    s.add_argument("--threshold", type=float, default=0.2)
    s.add_argument("--cutoff", type=float, default=20.0)
    s.add_argument("--text", action="store_true", help="write text rows instead of EVF1")
    s.set_defaults(func=cmd_emulate)

    s = sub.add_parser("accumulate", help="events to fixed-count frames (ACF1)")
    s.add_argument("--events", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--mode", choices=("signed", "dual"), default="signed")
    s.add_argument("--width", type=int)
    s.add_argument("--height", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_accumulate)

    def hyper_args(s):
        s.add_argument("--epochs", type=int, default=10)
        s.add_argument("--batch", type=int, default=128)
        s.add_argument("--lr", type=float, default=3e-4)
        s.add_argument("--dtype", choices=("float32", "float64"), default="float32")
        s.add_argument("--micro-batch", type=int, default=64)
        s.add_argument("--forget-bias", type=float, default=1.0)
        s.add_argument("--lr-schedule", choices=("constant", "cosine"), default="constant")
        s.add_argument("--chrono-span", type=int, default=0,
                       help="spread initial forget biases up to this many steps (0 = constant)")

    s = sub.add_parser("train-lstm", help="train the event LSTM")
    _add_data_args(s, "all")
    hyper_args(s)
    s.add_argument("--out", required=True)
    s.add_argument("--history", help="write per-epoch history CSV here")
    s.set_defaults(func=cmd_train_lstm)

    s = sub.add_parser("train-knn", help="fit the Fourier k-NN")
    _add_data_args(s, "train")
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--block", type=int, default=16)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_knn)

    s = sub.add_parser("eval", help="accuracy and confusion matrix")
    _add_data_args(s, "val")
    s.add_argument("--model", required=True)
    s.add_argument("--confusion-csv")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="sequence-length trade-off")
    _add_data_args(s, "all")
    hyper_args(s)
    s.set_defaults(regimes="B,EB", windows_per_regime=150)
    s.add_argument("--lengths", type=_lengths, default=[1000, 2500, 5000, 10000])
    s.add_argument("--timed", type=int, default=100)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    def stream_common(s):
        s.add_argument("--model", required=True)
        s.add_argument("--seq-len", type=int, default=2500)
        s.add_argument("--max-per-us", type=int, default=DEFAULT_MAX_PER_US)
        s.add_argument("--smoother-window", type=int, default=150)
        s.add_argument("--width", type=int)
        s.add_argument("--height", type=int)

    s = sub.add_parser("classify", help="offline window predictions")
    stream_common(s)
    s.add_argument("--events", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("stream", help="run the real-time pipeline")
    stream_common(s)
    s.add_argument("--source", required=True, help="replay:PATH or tcp:HOST:PORT")
    s.add_argument("--pace", choices=("fast", "real"), default="fast")
    s.add_argument("--mode", choices=("threaded", "deterministic"), default="threaded")
    s.add_argument("--chunk", type=int, default=4096)
    s.add_argument("--log", help="CSV prediction log")
    s.add_argument("--quiet", action="store_true", help="no status line")
    s.add_argument("--duration", type=float, help="stop after this many seconds")
    s.set_defaults(func=cmd_stream)

    s = sub.add_parser("serve-events", help="replay an event file over TCP")
    s.add_argument("--events", required=True)
    s.add_argument("--listen", type=_pair, default=("127.0.0.1", 7878))
    s.add_argument("--pace", choices=("fast", "real"), default="fast")
    s.add_argument("--batch", type=int, default=4096)
    s.add_argument("--clients", type=int, default=1)
    s.add_argument("--width", type=int)
    s.add_argument("--height", type=int)
    s.set_defaults(func=cmd_serve_events)

    s = sub.add_parser("bench", help="throughput and latency")
    s.add_argument("--what", choices=("throughput", "latency", "all"), default="all")
    s.add_argument("--model", help="ELS1 model; default is a randomly initialised network")
    s.add_argument("--seq-len", type=int, default=2500)
    s.add_argument("--events", type=int, default=2_000_000)
    s.add_argument("--repeats", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"regimecam {args.command}: {exc}", file=sys.stderr)
        return 1
    except (RegimeCamError, OSError, ValueError) as exc:
        print(f"regimecam {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
