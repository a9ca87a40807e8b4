import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from regimecam.errors import (BadMagic, InvalidRoi, MalformedRow, NonMonotonicTimestamp,
                              TruncatedRecord, UnsupportedVersion)
from regimecam.events import (EVENT_DTYPE, Event, Roi, SensorMeta, RateLimiter, Windower,
                              decode_events_binary, encode_events_binary, encode_records,
                              events_from_tuples, make_events, normalize_roi, parse_event_text,
                              rate_limit, read_events, window_fixed_count, write_event_text, write_evf)
from regimecam.regimes import FlowRegime


def random_events(rng, n, width=64, height=32, t_max=10_000):
    t = np.sort(rng.integers(0, t_max, n))
    return make_events(rng.integers(0, width, n), rng.integers(0, height, n), t,
                       rng.choice([-1, 1], n))


# --- regimes ------------------------------------------------------------------

def test_regime_codes_are_stable():
    assert [r.name for r in FlowRegime] == ["B", "EB", "S", "SS", "SW", "A", "U"]
    assert [int(r) for r in FlowRegime] == list(range(7))
    assert FlowRegime.parse("eb") is FlowRegime.EB
    assert FlowRegime.parse("6") is FlowRegime.U
    with pytest.raises(ValueError):
        FlowRegime.parse("X")


# --- text codec ---------------------------------------------------------------

def test_text_row_maps_fields():
    evs = list(parse_event_text(["x,y,t,p", "12,34,1000,1"]))
    assert evs == [Event(12, 34, 1000, 1)]


def test_text_zero_polarity_means_negative():
    (ev,) = parse_event_text(["x,y,t,p", "12,34,1000,0"])
    assert ev.p == -1


def test_text_accepts_signed_polarity_and_header_order():
    evs = list(parse_event_text(["t,p,x,y", "5,-1,3,4", "6,+1,1,2"]))
    assert evs == [Event(3, 4, 5, -1), Event(1, 2, 6, 1)]


def test_header_only_is_empty():
    assert list(parse_event_text(["x,y,t,p\n"])) == []
    assert list(parse_event_text([])) == []


def test_text_is_lazy():
    def lines():
        yield "x,y,t,p"
        yield "1,1,1,1"
        raise AssertionError("read past the first row")
    it = parse_event_text(lines())
    assert next(it) == Event(1, 1, 1, 1)


@pytest.mark.parametrize("row", ["1,2,3", "1,2,3,1,5", "a,2,3,1", "1,2,3,2", "1,-2,3,1"])
def test_text_malformed_rows(row):
    with pytest.raises(MalformedRow) as exc:
        list(parse_event_text(["x,y,t,p", "0,0,0,1", row]))
    assert exc.value.line_no == 3


def test_text_decreasing_timestamp():
    with pytest.raises(NonMonotonicTimestamp) as exc:
        list(parse_event_text(["x,y,t,p", "0,0,10,1", "0,0,10,1", "0,0,9,1"]))
    assert exc.value.line_no == 4


def test_text_expected_columns_enforced():
    with pytest.raises(MalformedRow):
        list(parse_event_text(["y,x,t,p", "1,2,3,1"], columns=("x", "y", "t", "p")))


def test_text_round_trip(rng, tmp_path):
    ev = random_events(rng, 500)
    path = tmp_path / "ev.csv"
    write_event_text(path, ev)
    back, meta = read_events(path)
    assert meta is None
    assert np.array_equal(back, ev)


# --- EVF1 ---------------------------------------------------------------------

def test_evf1_record_bytes():
    ev = events_from_tuples([Event(1, 2, 3, 1)])
    assert encode_records(ev) == bytes([3, 0, 0, 0, 0, 0, 0, 0, 1, 0, 2, 0, 1, 0, 0, 0])


def test_evf1_header_and_negative_polarity_bytes():
    ev = events_from_tuples([Event(0x0102, 7, 0x0A0B0C0D, -1)])
    data = encode_events_binary(ev, SensorMeta(640, 480))
    assert data[:12] == b"EVF1" + bytes([1, 0, 0x80, 0x02, 0xE0, 0x01, 0, 0])
    assert data[12:] == bytes([0x0D, 0x0C, 0x0B, 0x0A, 0, 0, 0, 0, 0x02, 0x01, 7, 0, 0xFF, 0, 0, 0])


def test_evf1_round_trip_10k(rng):
    ev = random_events(rng, 10_000, 1280, 720, 10**12)
    back, meta = decode_events_binary(encode_events_binary(ev, SensorMeta(1280, 720)))
    assert meta == SensorMeta(1280, 720)
    for name in ("x", "y", "t", "p"):
        assert np.array_equal(back[name], ev[name])


@given(st.lists(st.tuples(st.integers(0, 65534), st.integers(0, 65534), st.integers(0, 2**40),
                          st.sampled_from([-1, 1])), max_size=50))
def test_evf1_round_trip_property(rows):
    rows.sort(key=lambda r: r[2])
    ev = events_from_tuples([Event(x, y, t, p) for x, y, t, p in rows])
    back, _ = decode_events_binary(encode_events_binary(ev, SensorMeta(65535, 65535)))
    assert back.tolist() == ev.tolist()


def test_evf1_errors(rng):
    data = encode_events_binary(random_events(rng, 3), SensorMeta(64, 32))
    with pytest.raises(BadMagic):
        decode_events_binary(b"EVF2" + data[4:])
    with pytest.raises(UnsupportedVersion):
        decode_events_binary(data[:4] + b"\x02\x00" + data[6:])
    with pytest.raises(TruncatedRecord):
        decode_events_binary(data[:-1])
    with pytest.raises(TruncatedRecord):
        decode_events_binary(data[:5])


def test_read_events_sniffs_binary(rng, tmp_path):
    ev = random_events(rng, 20)
    write_evf(tmp_path / "a.evf", ev, SensorMeta(64, 32))
    back, meta = read_events(tmp_path / "a.evf")
    assert meta == SensorMeta(64, 32) and np.array_equal(back, ev)


# --- ROI normalization ---------------------------------------------------------

def test_roi_corners_and_outside():
    roi = Roi(10, 20, 100, 50)
    ev = make_events([10, 109, 9], [20, 69, 20], [0, 1, 2], [1, -1, 1])
    out = normalize_roi(ev, roi)
    assert len(out) == 2
    assert (out["xn"][0], out["yn"][0]) == (0.0, 0.0)
    assert (out["xn"][1], out["yn"][1]) == (1.0, 1.0)
    assert out["p"].tolist() == [1, -1]


def test_roi_single_pixel_maps_to_zero():
    out = normalize_roi(make_events([5], [6], [0], [1]), Roi(5, 6, 1, 1))
    assert (out["xn"][0], out["yn"][0]) == (0.0, 0.0)


@pytest.mark.parametrize("roi", [Roi(0, 0, 0, 5), Roi(0, 0, 5, -1), Roi(60, 0, 10, 10), Roi(-1, 0, 2, 2)])
def test_invalid_roi(roi):
    with pytest.raises(InvalidRoi):
        normalize_roi(make_events([0], [0], [0], [1]), roi, SensorMeta(64, 32))


@given(st.integers(0, 40), st.integers(0, 20), st.integers(1, 24), st.integers(1, 12), st.integers(0, 2**31))
def test_normalization_bounds(x0, y0, w, h, seed):
    rng = np.random.default_rng(seed)
    ev = random_events(rng, 200)
    out = normalize_roi(ev, Roi(x0, y0, w, h), SensorMeta(64, 32))
    assert len(out) <= len(ev)
    assert ((out["xn"] >= 0) & (out["xn"] <= 1) & (out["yn"] >= 0) & (out["yn"] <= 1)).all()
    inside = ((ev["x"] >= x0) & (ev["x"] < x0 + w) & (ev["y"] >= y0) & (ev["y"] < y0 + h)).sum()
    assert len(out) == inside


# --- rate limiting ---------------------------------------------------------------

def test_rate_limit_keeps_earliest():
    ev = make_events([1, 2, 3], [0, 0, 0], [5, 5, 5], [1, 1, 1])
    kept, dropped = rate_limit(ev, 1)
    assert kept["x"].tolist() == [1] and dropped == 2


def test_rate_limit_distinct_buckets_pass():
    ev = make_events([1, 2, 3], [0, 0, 0], [1, 2, 3], [1, 1, 1])
    kept, dropped = rate_limit(ev, 1)
    assert len(kept) == 3 and dropped == 0


def test_rate_limit_poisson_bucket_oracle():
    rng = np.random.default_rng(2024)
    per_us = rng.poisson(2.0, 50_000)
    t = np.repeat(np.arange(len(per_us)), per_us)
    ev = make_events(np.zeros_like(t), np.zeros_like(t), t, np.ones_like(t))
    kept, dropped = rate_limit(ev, 1)
    oracle = int((per_us > 0).sum())
    assert len(kept) == oracle
    assert dropped == len(t) - oracle


@given(st.lists(st.integers(0, 30), min_size=1, max_size=300), st.integers(1, 5), st.integers(1, 5),
       st.integers(1, 50))
def test_rate_limit_properties(gaps, m1, m2, chunk):
    t = np.cumsum(np.array(gaps) % 3 == 0)  # plenty of repeated timestamps
    ev = make_events(np.arange(len(t)) % 64, np.zeros(len(t)), t, np.ones(len(t)))
    once, _ = rate_limit(ev, m1)
    twice, _ = rate_limit(once, m1)
    assert np.array_equal(once, twice)
    lo, hi = sorted((m1, m2))
    assert len(rate_limit(ev, lo)[0]) <= len(rate_limit(ev, hi)[0])
    # chunked streaming equals one-shot
    lim = RateLimiter(m1)
    parts = [lim(ev[s:s + chunk]) for s in range(0, len(ev), chunk)]
    assert np.array_equal(np.concatenate(parts), once)
    assert lim.dropped == len(ev) - len(once)


# --- windowing ------------------------------------------------------------------

def _norm(n):
    ev = make_events(np.zeros(n), np.zeros(n), np.arange(n), np.ones(n))
    return normalize_roi(ev, Roi(0, 0, 2, 2))


@pytest.mark.parametrize("n_events,expected,discarded", [(10_000, 2, 0), (4_999, 0, 4_999), (12_345, 2, 2_345)])
def test_window_counts(n_events, expected, discarded):
    wins, left = window_fixed_count(_norm(n_events), 5_000)
    assert len(wins) == expected and left == discarded
    assert all(w.events.shape == (5_000, 3) for w in wins)


def test_window_metadata():
    wins, _ = window_fixed_count(_norm(25), 10, FlowRegime.SW)
    assert [(w.t_start, w.t_end) for w in wins] == [(0, 9), (10, 19)]
    assert all(w.label is FlowRegime.SW for w in wins)


@given(st.lists(st.integers(0, 40), max_size=12), st.integers(1, 17))
def test_windowing_conservation_streaming(chunks, n):
    total = sum(chunks)
    src = _norm(total)
    w = Windower(n)
    out, pos = [], 0
    for c in chunks:
        out += w.push(src[pos:pos + c])
        pos += c
    assert n * len(out) + w.pending == total
    if out:
        joined = np.concatenate([o.events for o in out])
        assert np.array_equal(joined[:, 0], src["xn"][:len(joined)])
