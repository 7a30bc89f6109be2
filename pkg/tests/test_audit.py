import pytest
from hypothesis import given, strategies as st

from gaensim.audit import (
    CaptureRecord,
    audit_report,
    check_sync,
    interval_stats,
    parse_capture,
    parse_capture_detailed,
)
from gaensim.errors import EmptyInputError, InsufficientDataError
from gaensim.radio import World


def test_sample_first_and_last(sample_capture):
    recs = parse_capture(sample_capture)
    assert recs[0].address == bytes.fromhex("13ac57353cea")
    assert recs[0].payload.hex() == "59c62b86cdace1fe40446bc80689ccbd323588b8"
    assert recs[-1].address == bytes.fromhex("042c4db19340")
    assert len(recs) == 5


def test_sample_report(sample_capture):
    rep = audit_report(sample_capture)
    assert (rep.record_count, rep.distinct_pairs, len(rep.violations)) == (5, 5, 0)
    assert rep.bounds_ok is None and rep.ok


def test_short_payload_skipped_with_line_number(sample_capture):
    lines = sample_capture + ["aa:bb:cc:dd:ee:ff " + "ab" * 19]
    res = parse_capture_detailed(lines)
    assert len(res.records) == 5 and res.skipped == [6]


def test_empty_input():
    with pytest.raises(EmptyInputError):
        parse_capture([])
    with pytest.raises(EmptyInputError):
        audit_report(["", "# nothing here"])


def test_shared_address_conflict():
    recs = parse_capture([
        "aa:aa:aa:aa:aa:aa " + "11" * 20,
        "aa:aa:aa:aa:aa:aa " + "22" * 20,
    ])
    v = check_sync(recs)
    assert len(v) == 1 and v[0].kind == "address"


def test_shared_payload_conflict():
    recs = parse_capture([
        "aa:aa:aa:aa:aa:aa " + "11" * 20,
        "bb:bb:bb:bb:bb:bb " + "11" * 20,
    ])
    assert [x.kind for x in check_sync(recs)] == ["payload"]


def test_long_gap_breaks_bounds():
    recs = parse_capture([
        "0 aa:aa:aa:aa:aa:aa " + "11" * 20,
        "900 bb:bb:bb:bb:bb:bb " + "22" * 20,
        "2400 cc:cc:cc:cc:cc:cc " + "33" * 20,
    ])
    st_ = interval_stats(recs)
    assert st_.max_gap == 1500 and not st_.bounds_ok


def test_two_rotations_one_gap():
    recs = parse_capture(["0 aa:aa:aa:aa:aa:aa " + "11" * 20, "700 bb:bb:bb:bb:bb:bb " + "22" * 20])
    assert interval_stats(recs).gaps == [700]


def test_insufficient_data():
    recs = parse_capture(["5 aa:aa:aa:aa:aa:aa " + "11" * 20])
    with pytest.raises(InsufficientDataError):
        interval_stats(recs)
    with pytest.raises(InsufficientDataError):
        interval_stats(parse_capture(["aa:aa:aa:aa:aa:aa " + "11" * 20] * 2))


def _world(async_fault=False, hours=24):
    w = World(seed=2)
    w.add_device("a", (0, 0), async_fault=async_fault)
    w.add_device("b", (1, 0))
    w.run_until(hours * 3600)
    return w


def test_simulated_day_rotation_bounds():
    rep = audit_report(_world().trace.rotation_lines())
    assert rep.ok and rep.bounds_ok and rep.interval_stats.min_gap >= 600


def test_fault_injected_capture_flags_violations():
    w = _world(async_fault=True, hours=6)
    rep = audit_report(w.trace.capture_lines(dst="b"))
    assert rep.violations


def test_honest_capture_is_bijective():
    rep = audit_report(_world(hours=6).trace.capture_lines(with_source=True))
    assert not rep.violations


def test_report_renderings(sample_capture):
    rep = audit_report(sample_capture)
    assert '"record_count": 5' in rep.to_json()
    assert "violations:      0" in rep.to_text()


hexbyte = st.binary(min_size=6, max_size=6)
payloads = st.binary(min_size=20, max_size=20)


@given(st.lists(st.tuples(hexbyte, payloads, st.one_of(st.none(), st.floats(0, 1e6))),
                min_size=1, max_size=20))
def test_format_parse_identity(items):
    recs = [CaptureRecord(a, p, t) for a, p, t in items]
    assert parse_capture([r.to_line() for r in recs]) == recs


@given(st.lists(st.tuples(st.sampled_from([b"\x01" * 6, b"\x02" * 6, b"\x03" * 6]),
                          st.sampled_from([b"\x0a" * 20, b"\x0b" * 20, b"\x0c" * 20])),
                min_size=1, max_size=12), st.randoms())
def test_check_sync_brute_force_and_order_independent(items, rnd):
    recs = [CaptureRecord(a, p) for a, p in items]
    shuffled = recs[:]
    rnd.shuffle(shuffled)
    assert check_sync(recs) == check_sync(shuffled)
    bijective = all(
        len({q.payload for q in recs if q.address == r.address}) == 1
        and len({q.address for q in recs if q.payload == r.payload}) == 1
        for r in recs
    )
    assert (not check_sync(recs)) == bijective
