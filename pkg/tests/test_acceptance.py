"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

The lines are echoed as the tests run and repeated in the terminal summary.
Criteria 4 and 5 train full-size networks and take tens of minutes on one core.
"""
import math
import time

import numpy as np
import pytest

from regimecam.accumulate import window_to_frame
from regimecam.dataset import DatasetConfig, build_dataset, raw_chunks, windows_from_events
from regimecam.errors import (BadFrame, BadMagic, CountMismatch, PrematureEnd, TruncatedRecord, UnknownType,
                              UnsupportedVersion)
from regimecam.events import EVENT_DTYPE, SensorMeta, decode_events_binary, encode_events_binary
from regimecam.fft import fft2, ifft2
from regimecam.knn import KnnClassifier, knn_fit, spectral_features
from regimecam.lstm import (LstmClassifier, LstmHyper, deserialize_params, init_params, loss_and_grad,
                            param_count, serialize_params, train)
from regimecam.lstm.serialize import ELS1_HEADER
from regimecam.lstm.train import stack_windows, stratified_split
from regimecam.metrics import evaluate, sweep_sequence_length, time_windows
from regimecam.pipeline import (ArraySource, ListSink, PipelineConfig, SmootherState, StreamDecoder,
                                classify_windows, decode_stream_frame, encode_batch_message, encode_end_message,
                                encode_header_message, encode_stream_frame, predictive_entropy, run_pipeline,
                                smoother_push)
from regimecam.regimes import FlowRegime

RESULTS: dict[int, str] = {}

# training recipe for criteria 4 and 5 (see README for why it differs from the library defaults)
RECIPE = LstmHyper(seq_len=2500, epochs=10, batch=32, lr=2e-3, lr_schedule="cosine", chrono_span=2500,
                   dtype="float32", micro_batch=32)
TRAIN_BUDGET_S = 20 * 60
SWEEP_EPOCHS = 4


def report(capsys, n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    with capsys.disabled():
        print("\n" + line, flush=True)
    assert ok, line


# --- 1 -------------------------------------------------------------------------------

def dft_matrix(n):
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n)


def test_criterion_01_fft(capsys):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = {"dft": 0.0, "parseval": 0.0, "round_trip": 0.0}
    for h, w in [(8, 8), (16, 16), (32, 32), (64, 64), (8, 64), (32, 16)]:
        x = rng.normal(size=(h, w))
        X = fft2(x)
        naive = dft_matrix(h) @ x @ dft_matrix(w).T
        worst["dft"] = max(worst["dft"], np.abs(X - naive).max() / np.abs(naive).max())
        e_time, e_freq = (x ** 2).sum(), (np.abs(X) ** 2).sum() / x.size
        worst["parseval"] = max(worst["parseval"], abs(e_time - e_freq) / e_time)
        worst["round_trip"] = max(worst["round_trip"], np.abs(ifft2(X) - x).max() / np.abs(x).max())
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-9 and elapsed < 1.0
    report(capsys, 1, ok, f"max rel err dft {worst['dft']:.1e} parseval {worst['parseval']:.1e} "
                          f"round-trip {worst['round_trip']:.1e}; {elapsed * 1e3:.0f} ms")


# --- 2 -------------------------------------------------------------------------------

def test_criterion_02_gradients(capsys):
    t0 = time.perf_counter()
    hyper = LstmHyper(embed_dim=4, hidden=4, fc_dim=5, classes=3, seq_len=6, dropout_rate=0.3)
    params = init_params(hyper, np.random.default_rng(3))
    jitter = np.random.default_rng(4)
    for _, a in params.items():
        a += jitter.uniform(-0.3, 0.3, a.shape)
    data = np.random.default_rng(5)
    X = np.stack([np.column_stack([data.uniform(0, 1, 6), data.uniform(0, 1, 6), data.choice([-1.0, 1.0], 6)])
                  for _ in range(5)])
    y = np.array([0, 1, 2, 1, 0])
    _, grads = loss_and_grad(params, X, y, np.random.default_rng(9))
    eps, worst, worst_name = 1e-5, 0.0, ""
    for name, a in params.items():
        for idx in np.ndindex(a.shape):
            orig = a[idx]
            a[idx] = orig + eps
            lp = loss_and_grad(params, X, y, np.random.default_rng(9))[0]
            a[idx] = orig - eps
            lm = loss_and_grad(params, X, y, np.random.default_rng(9))[0]
            a[idx] = orig
            num, ana = (lp - lm) / (2 * eps), grads[name][idx]
            rel = abs(num - ana) / max(abs(num), abs(ana), 1e-6)
            if rel > worst:
                worst, worst_name = rel, name
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 30
    report(capsys, 2, ok, f"{params.count} parameters, max rel err {worst:.1e} ({worst_name}); {elapsed:.1f} s")


# --- 3 -------------------------------------------------------------------------------

def test_criterion_03_model_size(capsys):
    hyper = LstmHyper()
    params = init_params(hyper, np.random.default_rng(0)).astype(np.float32)
    data = serialize_params(params)
    payload = len(data) - ELS1_HEADER.size
    back = deserialize_params(data, hyper)
    exact = all(np.array_equal(back[k], v) for k, v in params.items())
    mb = payload / 1e6
    ok = param_count(hyper) == 248_071 and payload == 992_284 and abs(mb - 0.95) <= 0.095 and exact
    report(capsys, 3, ok, f"{param_count(hyper)} params, payload {payload} bytes = {mb:.3f} MB "
                          f"({payload / 2**20:.3f} MiB) vs 0.95 MB")


# --- 4 and 6 -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def regime_split():
    cfg = DatasetConfig(windows_per_regime=300, seq_len=2500, seed=0)
    windows = build_dataset(cfg)
    _, y = stack_windows(windows)
    tr, va = stratified_split(y, 0.2, 0)
    return [windows[i] for i in tr], [windows[i] for i in va], cfg


@pytest.fixture(scope="module")
def trained_lstm(regime_split):
    train_w, val_w, _ = regime_split
    t0 = time.perf_counter()
    params, history = train(train_w, RECIPE, val=val_w)
    return params, history, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_04_classification(capsys, regime_split, trained_lstm):
    train_w, val_w, cfg = regime_split
    params, history, seconds = trained_lstm
    lstm_acc = evaluate(LstmClassifier(params), val_w).accuracy
    feats = np.stack([spectral_features(window_to_frame(w.events, cfg.dims)) for w in train_w])
    knn = KnnClassifier(knn_fit(feats, [int(w.label) for w in train_w], 5), cfg.dims)
    knn_acc = evaluate(knn, val_w).accuracy
    curve = " ".join(f"{r.val_accuracy:.3f}" for r in history)
    ok = lstm_acc >= 0.90 and len(history) <= 10 and seconds <= TRAIN_BUDGET_S and knn_acc >= 0.70 \
        and lstm_acc > knn_acc
    report(capsys, 4, ok, f"LSTM {lstm_acc:.3f} after {len(history)} epochs in {seconds / 60:.1f} min "
                          f"(val curve {curve}); k-NN {knn_acc:.3f}; {len(train_w)}/{len(val_w)} windows; "
                          f"need LSTM >= 0.90 within 20 min, k-NN >= 0.70, LSTM > k-NN")


@pytest.mark.slow
def test_criterion_06_latency(capsys, regime_split, trained_lstm):
    _, _, cfg = regime_split
    clf = LstmClassifier(trained_lstm[0])
    raw = raw_chunks(cfg, list(FlowRegime), 2500, 101)
    tm = time_windows(clf, raw, SensorMeta(*cfg.dims), 2500, cfg.max_per_us)
    ok = tm.n == 100 and math.isfinite(tm.mean_inference_us) and tm.mean_inference_us < 10_000
    report(capsys, 6, ok, f"N=2500 mean inference {tm.mean_inference_us / 1e3:.2f} ms, processing "
                          f"{tm.mean_processing_us / 1e3:.3f} ms over {tm.n} windows (target < 10 ms)")


# --- 5 -------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_05_sequence_length(capsys):
    lengths = [1000, 2500, 5000, 10000]
    regimes = [FlowRegime.B, FlowRegime.EB]

    def make_data(n):
        cfg = DatasetConfig(windows_per_regime=150, seq_len=n, seed=0)
        windows = build_dataset(cfg, regimes)
        _, y = stack_windows(windows)
        tr, va = stratified_split(y, 0.2, 0)
        return ([windows[i] for i in tr], [windows[i] for i in va],
                raw_chunks(cfg, regimes, n, 101), SensorMeta(*cfg.dims))

    def fit(train_w, n):
        params, _ = train(train_w, RECIPE.replace(seq_len=n, epochs=SWEEP_EPOCHS))
        return LstmClassifier(params)

    res = sweep_sequence_length(make_data, lengths, fit, 100)
    times = [r.mean_inference_us for r in res.rows]
    accs = {r.seq_len: r.accuracy for r in res.rows}
    increasing = all(b > a for a, b in zip(times, times[1:]))
    close = abs(accs[2500] - accs[5000]) <= 0.02
    # two models stuck at chance agree trivially, so both must beat a coin flip by three binomial sds
    bar = {r.seq_len: 0.5 + 3 * math.sqrt(0.25 / max(r.n_eval, 1)) for r in res.rows}
    learned = all(accs[n] > bar[n] for n in (2500, 5000))
    table = "; ".join(f"N={r.seq_len} acc {r.accuracy:.3f} infer {r.mean_inference_us / 1e3:.2f} ms"
                      + (f" error {r.error}" if r.error else "") for r in res.rows)
    report(capsys, 5, increasing and close and learned and len(res.rows) == 4,
           f"{table}; time strictly increasing {increasing}; |acc2500 - acc5000| "
           f"{abs(accs[2500] - accs[5000]):.3f} <= 0.02 {close}; "
           f"above chance (> {bar[2500]:.3f}) {learned}")


# --- 7 -------------------------------------------------------------------------------

def stream(n_windows, seq_len, spacing_us, seed=0):
    rng = np.random.default_rng(seed)
    n = n_windows * seq_len
    ev = np.zeros(n, dtype=EVENT_DTYPE)
    ev["t"] = np.arange(n) * spacing_us
    ev["x"] = rng.integers(0, 64, n)
    ev["y"] = rng.integers(0, 32, n)
    ev["p"] = rng.choice([-1, 1], n)
    return ev


def share_classifier(events):
    share = float((events[:, 2] > 0).mean())
    probs = np.full(7, 0.01)
    probs[min(int(share * 7), 6)] = 0.94
    return probs


def test_criterion_07_pipeline_semantics(capsys):
    meta = SensorMeta(64, 32)

    def slow(events):
        time.sleep(0.008)
        return share_classifier(events)

    sink = ListSink()
    stats = run_pipeline(ArraySource(stream(100, 100, 20), meta, chunk=100, pace="real"), slow, sink,
                         PipelineConfig(seq_len=100))
    accounting = stats.classified + stats.dropped + stats.in_flight == stats.produced == 100
    latest = bool(sink.items) and sink.items[-1].index == 99

    immune = True
    for before in range(2, 40):
        for w in (3, 10, 150):
            s = SmootherState(w)
            out = [smoother_push(s, l) for l in [FlowRegime.SW] * before + [FlowRegime.A] + [FlowRegime.SW] * 200]
            immune &= all(o == FlowRegime.SW for o in out)

    ev = stream(40, 250, 2, seed=3)
    ev["t"][1::3] = ev["t"][0::3][: len(ev["t"][1::3])]
    cfg = PipelineConfig(seq_len=250, max_events_per_us=1, smoother_window=9, mode="deterministic")
    online = ListSink()
    run_pipeline(ArraySource(ev, meta, chunk=999), share_classifier, online, cfg)
    offline = classify_windows(share_classifier, windows_from_events(ev, meta, 250, None, 1), 9)
    same = len(online.items) == len(offline) > 0 and all(
        np.array_equal(a.probabilities, b.probabilities) and a.raw_label == b.raw_label
        and a.smoothed_label == b.smoothed_label and a.vote_confidence == b.vote_confidence
        and a.entropy == b.entropy and a.t_window_end == b.t_window_end for a, b in zip(online.items, offline))
    report(capsys, 7, accounting and latest and immune and same,
           f"produced {stats.produced} classified {stats.classified} dropped {stats.dropped} in-flight "
           f"{stats.in_flight}; last classified index {sink.items[-1].index if sink.items else None}; "
           f"outlier immunity {immune}; deterministic == offline over {len(offline)} windows {same}")


# --- 8 -------------------------------------------------------------------------------

def test_criterion_08_smoother_entropy(capsys):
    rng = np.random.default_rng(8)
    converge = True
    for _ in range(200):
        s = SmootherState(150)
        for l in rng.integers(0, 7, rng.integers(0, 400)):
            smoother_push(s, l)
        target = int(rng.integers(0, 7))
        out = [smoother_push(s, target) for _ in range(160)]
        converge &= all(o == target for o in out[149:])
    s = SmootherState(4)
    ties = [smoother_push(s, l) for l in (FlowRegime.B, FlowRegime.B, FlowRegime.EB, FlowRegime.EB)][-1]
    s = SmootherState(4)
    ties2 = [smoother_push(s, l) for l in (FlowRegime.EB, FlowRegime.EB, FlowRegime.B, FlowRegime.B)][-1]
    tie_ok = ties == FlowRegime.EB and ties2 == FlowRegime.B
    e = [predictive_entropy(np.full(7, 1 / 7)) - math.log(7), predictive_entropy(np.eye(7)[2]),
         predictive_entropy([0.5, 0.5, 0, 0, 0, 0, 0]) - math.log(2)]
    ent_ok = max(abs(v) for v in e) <= 1e-12
    report(capsys, 8, converge and tie_ok and ent_ok,
           f"150-window convergence {converge}; tie-break to latest {tie_ok}; entropy errors "
           + " ".join(f"{abs(v):.1e}" for v in e))


# --- 9 -------------------------------------------------------------------------------

def raises(exc, fn, *args):
    try:
        fn(*args)
    except exc:
        return True
    except Exception:
        return False
    return False


def test_criterion_09_formats(capsys):
    rng = np.random.default_rng(9)
    n = 5000
    ev = np.zeros(n, dtype=EVENT_DTYPE)
    ev["t"] = np.sort(rng.integers(0, 2**40, n))
    ev["x"] = rng.integers(0, 640, n)
    ev["y"] = rng.integers(0, 480, n)
    ev["p"] = rng.choice([-1, 1], n)
    meta = SensorMeta(640, 480)
    blob = encode_events_binary(ev, meta)
    back, meta2 = decode_events_binary(blob)
    evf_ok = np.array_equal(back, ev) and meta2 == meta

    hyper = LstmHyper(embed_dim=8, hidden=8, fc_dim=8)
    params = init_params(hyper, rng)
    els = serialize_params(params)
    els_ok = all(np.array_equal(deserialize_params(els, hyper)[k], v.astype(np.float32)) for k, v in params.items())

    two = ev[:2]
    golden = (encode_header_message(SensorMeta(64, 32))[:5] == bytes([12, 0, 0, 0, 0])
              and encode_batch_message(two) == bytes([32, 0, 0, 0, 1]) + blob[12:44]
              and encode_end_message() == bytes([0, 0, 0, 0, 2]))
    dec = StreamDecoder()
    msgs = dec.feed(encode_header_message(meta) + encode_batch_message(ev) + encode_end_message())
    framing = golden and len(msgs) == 3 and np.array_equal(msgs[1].value, ev)

    malformed = [
        raises(BadMagic, decode_events_binary, b"EVF2" + blob[4:]),
        raises(UnsupportedVersion, decode_events_binary, blob[:4] + bytes([9, 0]) + blob[6:]),
        raises(TruncatedRecord, decode_events_binary, blob[:-3]),
        raises(TruncatedRecord, decode_events_binary, blob[:7]),
        raises(CountMismatch, deserialize_params, els[:-4], hyper),
        raises(BadMagic, deserialize_params, b"ELS0" + els[4:], hyper),
        raises(BadFrame, decode_stream_frame, encode_stream_frame(1, bytes(17))),
        raises(UnknownType, decode_stream_frame, bytes([0, 0, 0, 0, 7])),
        raises(PrematureEnd, decode_stream_frame, encode_batch_message(two)[:-1]),
    ]
    fuzz_ok = True
    for _ in range(300):
        junk = rng.integers(0, 256, rng.integers(0, 64)).astype(np.uint8).tobytes()
        for fn in (decode_events_binary, lambda d: deserialize_params(d, hyper), lambda d: StreamDecoder().feed(d)):
            try:
                fn(junk)
            except Exception as exc:
                fuzz_ok &= type(exc).__module__.startswith("regimecam")
    ok = evf_ok and els_ok and framing and all(malformed) and fuzz_ok
    report(capsys, 9, ok, f"EVF1 exact {evf_ok}; ELS1 exact {els_ok}; framing goldens {framing}; "
                          f"named errors {sum(malformed)}/{len(malformed)}; random junk only raises "
                          f"package errors {fuzz_ok}")


# --- 10 ------------------------------------------------------------------------------

def test_criterion_10_throughput(capsys):
    from regimecam.bench import bench_throughput, event_stream
    events, meta = event_stream(2_000_000, seed=0)
    bench_throughput(events=events[:100_000], meta=meta)
    best = max(bench_throughput(events=events, meta=meta)["events_per_s"] for _ in range(3))
    report(capsys, 10, best >= 1_000_000, f"{best / 1e6:.2f} M events/s (rate limit + normalize + accumulate, "
                                          f"one thread, best of 3)")
