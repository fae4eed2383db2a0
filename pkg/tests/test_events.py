import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evpipe.errors import DataError, ParseError
from evpipe.events import (
    EventStream,
    SensorGeometry,
    parse_event_text,
    read_events_bin,
    sort_by_time,
    validate_stream,
    window_by_count,
    window_durations,
    write_event_text,
    write_events_bin,
)

from conftest import random_stream, stream_from


def test_geometry_rejects_degenerate():
    with pytest.raises(DataError):
        SensorGeometry(0, 10)
    with pytest.raises(DataError):
        SensorGeometry(10, -1)


def test_stream_field_lengths_must_agree(geo):
    with pytest.raises(DataError):
        EventStream(geo, t=np.zeros(3, np.int64), x=np.zeros(2, np.int32),
                    y=np.zeros(3, np.int32), p=np.ones(3, np.int8))


# --- text format ---


def test_parse_basic_lines(geo):
    lines = [
        "# a comment",
        "",
        "0.0 3 2 1",
        "1.5 0 0 0",  # 0 polarity means off
        "2.000001 15 11 -1",
    ]
    s = parse_event_text(lines, geo)
    assert list(s.t) == [0, 1_500_000, 2_000_001]
    assert list(s.x) == [3, 0, 15]
    assert list(s.y) == [2, 0, 11]
    assert list(s.p) == [1, -1, -1]


@pytest.mark.parametrize(
    "bad_line, fragment",
    [
        ("0.1 3 2", "expected 4 fields"),
        ("0.1 3 2 1 9", "expected 4 fields"),
        ("0.1 16 2 1", "x=16"),
        ("0.1 3 12 1", "y=12"),
        ("0.1 3 2 7", "polarity"),
        ("zero 3 2 1", "could not convert"),
    ],
)
def test_parse_errors_carry_line_numbers(geo, bad_line, fragment):
    lines = ["0.0 0 0 1", bad_line]
    with pytest.raises(ParseError) as err:
        parse_event_text(lines, geo)
    assert "line 2" in str(err.value)
    assert fragment in str(err.value)


def test_parse_rejects_decreasing_timestamps(geo):
    with pytest.raises(ParseError) as err:
        parse_event_text(["1.0 0 0 1", "0.5 1 1 1"], geo)
    assert "line 2" in str(err.value)
    assert "decreases" in str(err.value)


def test_text_round_trip_is_exact(rng, geo):
    s = random_stream(rng, geo, 200, t_max=3_000_000)
    buf = io.StringIO()
    write_event_text(s, buf)
    back = parse_event_text(buf.getvalue().splitlines(), geo)
    np.testing.assert_array_equal(back.t, s.t)
    np.testing.assert_array_equal(back.x, s.x)
    np.testing.assert_array_equal(back.y, s.y)
    np.testing.assert_array_equal(back.p, s.p)


@given(
    ts=st.lists(st.integers(min_value=0, max_value=10**7), min_size=0, max_size=50),
    seed=st.integers(min_value=0, max_value=2**16),
)
@settings(max_examples=50, deadline=None)
def test_text_round_trip_property(ts, seed):
    g = SensorGeometry(7, 5)
    r = np.random.default_rng(seed)
    n = len(ts)
    s = EventStream(
        g,
        t=np.sort(np.array(ts, np.int64)),
        x=r.integers(0, g.width, n, np.int32),
        y=r.integers(0, g.height, n, np.int32),
        p=np.where(r.random(n) < 0.5, -1, 1).astype(np.int8),
    )
    buf = io.StringIO()
    write_event_text(s, buf)
    back = parse_event_text(buf.getvalue().splitlines(), g)
    np.testing.assert_array_equal(back.t, s.t)
    np.testing.assert_array_equal(back.x, s.x)
    np.testing.assert_array_equal(back.y, s.y)
    np.testing.assert_array_equal(back.p, s.p)


# --- binary format ---


def test_binary_round_trip(tmp_path, rng, geo):
    s = random_stream(rng, geo, 500)
    # force the high 32 bits of the timestamp into play
    s.t += 5_000_000_000
    path = tmp_path / "ev.bin"
    write_events_bin(s, path)
    back = read_events_bin(path)
    assert back.geometry == geo
    np.testing.assert_array_equal(back.t, s.t)
    np.testing.assert_array_equal(back.x, s.x)
    np.testing.assert_array_equal(back.y, s.y)
    np.testing.assert_array_equal(back.p, s.p)


def test_binary_rejects_negative_timestamps(tmp_path, geo):
    s = stream_from(geo, [(-5, 0, 0, 1)])
    with pytest.raises(DataError):
        write_events_bin(s, tmp_path / "ev.bin")


def test_binary_bad_magic(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"JUNKxxxxxxxxxxxxxxxx")
    with pytest.raises(DataError) as err:
        read_events_bin(path)
    assert "magic" in str(err.value)


def test_binary_truncated_body(tmp_path, rng, geo):
    s = random_stream(rng, geo, 10)
    path = tmp_path / "ev.bin"
    write_events_bin(s, path)
    data = path.read_bytes()
    path.write_bytes(data[:-7])
    with pytest.raises(DataError):
        read_events_bin(path)


def test_binary_read_validates_bounds(tmp_path, geo):
    # x == width is out of bounds; the writer does not police it, the
    # reader must.
    s = stream_from(geo, [(0, geo.width, 0, 1)])
    path = tmp_path / "ev.bin"
    write_events_bin(s, path)
    with pytest.raises(DataError) as err:
        read_events_bin(path)
    assert "out of bounds" in str(err.value)


def test_binary_read_rejects_unsorted(tmp_path, geo):
    s = stream_from(geo, [(10, 0, 0, 1), (5, 1, 1, -1)])
    path = tmp_path / "ev.bin"
    write_events_bin(s, path)
    with pytest.raises(DataError):
        read_events_bin(path)


# --- validation, sorting, windowing ---


def test_validate_stream_counts(geo):
    s = stream_from(
        geo,
        [
            (0, 0, 0, 1),
            (10, 16, 0, 1),  # x out of bounds
            (5, 0, 0, 3),  # inversion + bad polarity
        ],
    )
    rep = validate_stream(s)
    assert rep.n_events == 3
    assert rep.out_of_bounds == 1
    assert rep.time_inversions == 1
    assert rep.bad_polarity == 1
    assert not rep.ok


def test_sort_by_time_breaks_ties_by_y_x_p(geo):
    s = stream_from(
        geo,
        [
            (10, 5, 3, 1),
            (5, 2, 7, -1),
            (10, 5, 3, -1),
            (10, 1, 3, 1),
        ],
    )
    out = sort_by_time(s)
    rows = [(int(out.t[i]), int(out.y[i]), int(out.x[i]), int(out.p[i])) for i in range(4)]
    assert rows == [(5, 7, 2, -1), (10, 3, 1, 1), (10, 3, 5, -1), (10, 3, 5, 1)]


def test_window_by_count_drops_remainder(geo):
    s = stream_from(geo, [(i * 100, i % geo.width, 0, 1) for i in range(10)])
    ws = window_by_count(s, 3)
    assert len(ws) == 3
    assert [len(w) for w in ws] == [3, 3, 3]
    assert ws[0].t0 == 0 and ws[0].t_last == 200
    assert ws[2].t0 == 600 and ws[2].t_last == 800
    assert ws[0].duration_us == 200
    # windows alias the parent stream, no copies
    assert np.shares_memory(ws[1].events.t, s.t)
    np.testing.assert_allclose(window_durations(ws), [2e-4, 2e-4, 2e-4])


def test_window_by_count_rejects_bad_size(geo):
    s = stream_from(geo, [(0, 0, 0, 1)])
    with pytest.raises(DataError):
        window_by_count(s, 0)


def test_window_smaller_stream_gives_nothing(geo):
    s = stream_from(geo, [(0, 0, 0, 1), (1, 1, 1, -1)])
    assert window_by_count(s, 3) == []
