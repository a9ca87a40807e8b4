import numpy as np
import pytest
from hypothesis import given, strategies as st

from regimecam.accumulate import (DUAL, SIGNED, ACF1_HEADER, AccumFrame, Accumulator, accumulate, decode_accum,
                                  encode_accum, read_accum_stream, render_accum, window_to_frame,
                                  write_accum_stream)
from regimecam.dataset import sequence_events
from regimecam.errors import BadMagic, OutOfBounds, TruncatedRecord
from regimecam.events import EVENT_DTYPE, RateLimiter
from regimecam.regimes import FlowRegime
from regimecam.synth import SynthParams


def make_events(rng, n, dims=(64, 32)):
    ev = np.zeros(n, dtype=EVENT_DTYPE)
    ev["t"] = np.sort(rng.integers(0, 10 * n + 1, n))
    ev["x"] = rng.integers(0, dims[0], n)
    ev["y"] = rng.integers(0, dims[1], n)
    ev["p"] = rng.choice([-1, 1], n)
    return ev


def test_single_event_dual():
    ev = np.zeros(1, dtype=EVENT_DTYPE)
    ev[0] = (0, 3, 4, 1)
    (f,) = accumulate(ev, 1, DUAL)
    assert f.grid.shape == (2, 32, 64)
    assert f.grid[0, 4, 3] == 1 and f.grid.sum() == 1
    assert f.event_count == 1 and f.delta_t == 0


def test_two_frames_and_conservation(rng):
    frames = accumulate(make_events(rng, 10_000), 5_000, DUAL)
    assert len(frames) == 2
    assert [int(f.grid.sum()) for f in frames] == [5000, 5000]


def test_partial_frame_discarded(rng):
    assert len(accumulate(make_events(rng, 9_999), 5_000)) == 1
    assert accumulate(make_events(rng, 10), 11) == []


def test_delta_t():
    ev = np.zeros(4, dtype=EVENT_DTYPE)
    ev["t"] = [0, 200, 900, 1300]
    (f,) = accumulate(ev, 4)
    assert (f.delta_t, f.t_start) == (1300, 0)


def test_out_of_bounds():
    ev = np.zeros(2, dtype=EVENT_DTYPE)
    ev["x"] = [0, 64]
    with pytest.raises(OutOfBounds):
        accumulate(ev, 2)
    with pytest.raises(ValueError):
        accumulate(ev, 0)


def test_render():
    grid = np.zeros((2, 3), np.int32)
    assert (render_accum(AccumFrame(grid, 0, 0, 0)) == 128).all()
    grid[0, 0], grid[0, 1], grid[1, 2] = 4, -1, -9
    img = render_accum(AccumFrame(grid, 14, 0, 0))
    assert img.dtype == np.uint8
    assert (img[0, 0], img[0, 1], img[1, 2], img[1, 0]) == (255, 96, 0, 128)
    dual = AccumFrame(np.stack([np.maximum(grid, 0), np.maximum(-grid, 0)]), 14, 0, 0)
    assert np.array_equal(render_accum(dual), img)


@given(st.integers(0, 2**31), st.integers(1, 300), st.integers(1, 50))
def test_conservation_and_mode_equivalence(seed, n, threshold):
    ev = make_events(np.random.default_rng(seed), n, (8, 4))
    signed = accumulate(ev, threshold, SIGNED, (8, 4))
    dual = accumulate(ev, threshold, DUAL, (8, 4))
    assert len(signed) == len(dual) == n // threshold
    for s, d in zip(signed, dual):
        assert d.grid.sum() == threshold
        assert np.array_equal(s.grid, d.grid[0] - d.grid[1])
        assert np.abs(s.grid).sum() <= threshold
        assert s.delta_t >= 0


@given(st.integers(0, 2**31), st.integers(1, 40), st.lists(st.integers(0, 60), max_size=8))
def test_streaming_matches_batch(seed, threshold, cuts):
    ev = make_events(np.random.default_rng(seed), 300, (8, 4))
    edges = [0] + sorted(cuts) + [300]
    acc = Accumulator(threshold, DUAL, (8, 4))
    streamed = [f for a, b in zip(edges, edges[1:]) for f in acc.push(ev[a:b])]
    batch = accumulate(ev, threshold, DUAL, (8, 4))
    assert len(streamed) == len(batch)
    for a, b in zip(streamed, batch):
        assert np.array_equal(a.grid, b.grid) and (a.delta_t, a.t_start) == (b.delta_t, b.t_start)


def test_window_to_frame_inverts_normalization():
    w = np.array([[0.0, 0.0, 1.0], [1.0, 1.0, -1.0], [3 / 63, 2 / 31, 1.0]])
    f = window_to_frame(w, (64, 32))
    assert f.grid[0, 0] == 1 and f.grid[31, 63] == -1 and f.grid[2, 3] == 1


def test_stratified_windows_last_longer_than_bubbly():
    mean_dt = {}
    for r in (FlowRegime.SS, FlowRegime.B):
        ev = RateLimiter(1024)(sequence_events(SynthParams(r, frame_count=200, seed=11)))
        mean_dt[r] = np.mean([f.delta_t for f in accumulate(ev, 1000)])
    assert mean_dt[FlowRegime.SS] > mean_dt[FlowRegime.B]


# --- ACF1 --------------------------------------------------------------------------

def test_acf1_golden():
    grid = np.array([[1, -2, 0]], np.int32)
    data = encode_accum(AccumFrame(grid, 3, 70_000, 5))
    assert data == (b"ACF1" + bytes([3, 0, 1, 0, 1, 0, 3, 0, 0, 0, 0x70, 0x11, 1, 0])
                    + bytes([1, 0, 0, 0, 0xFE, 0xFF, 0xFF, 0xFF, 0, 0, 0, 0]))
    assert ACF1_HEADER.size == 18
    back = decode_accum(data)
    assert np.array_equal(back.grid, grid) and (back.event_count, back.delta_t) == (3, 70_000)


def test_acf1_stream_round_trip(tmp_path, rng):
    frames = accumulate(make_events(rng, 3000), 1000, DUAL) + accumulate(make_events(rng, 1000), 500)
    write_accum_stream(tmp_path / "a.acf", frames)
    back = read_accum_stream(tmp_path / "a.acf")
    assert len(back) == 5
    for a, b in zip(frames, back):
        assert np.array_equal(a.grid, b.grid) and a.delta_t == b.delta_t and b.mode == a.mode


def test_acf1_errors():
    data = encode_accum(AccumFrame(np.zeros((2, 2), np.int32), 0, 0, 0))
    with pytest.raises(BadMagic):
        decode_accum(b"XCF1" + data[4:])
    with pytest.raises(TruncatedRecord):
        decode_accum(data[:-1])
    with pytest.raises(TruncatedRecord):
        decode_accum(data[:10])


@given(st.integers(0, 2**31), st.integers(1, 30), st.integers(1, 5))
def test_larger_threshold_never_shortens_delta_t(seed, t1, m):
    ev = make_events(np.random.default_rng(seed), 400, (8, 4))
    small = accumulate(ev, t1, SIGNED, (8, 4))
    big = accumulate(ev, t1 * m, SIGNED, (8, 4))
    # frame k of the larger threshold spans frames mk .. mk+m-1 of the smaller one
    for k, f in enumerate(big):
        assert all(f.delta_t >= s.delta_t for s in small[m * k:m * (k + 1)])
    t2 = t1 + m
    a, b = accumulate(ev, t1, SIGNED, (8, 4)), accumulate(ev, t2, SIGNED, (8, 4))
    if a and b:
        assert b[0].delta_t >= a[0].delta_t
