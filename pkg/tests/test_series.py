import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resilient_forecast.series import (
    Dataset,
    DatasetError,
    TimeSeriesRecord,
    dumps_record,
    load_dataset,
    missing_fraction,
    save_dataset,
    slice_record,
)

from conftest import make_record


def write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def test_load_example_line(tmp_path):
    p = write_lines(tmp_path / "d.jsonl",
                    ['{"series_id":"fc1-day","start":0,"weight":10.0,"group":0,"values":[0.9,null,0.85]}'])
    ds = load_dataset(p)
    r = ds["fc1-day"]
    assert r.start == 0 and r.weight == 10.0 and r.group == 0
    assert r.value_at(0) == 0.9 and r.value_at(1) is None and r.value_at(2) == 0.85
    assert list(r.observed) == [True, False, True]


def test_empty_file_rejected(tmp_path):
    p = write_lines(tmp_path / "d.jsonl", [])
    with pytest.raises(DatasetError, match="empty dataset"):
        load_dataset(p)


def test_out_of_range_value_cites_series_and_position(tmp_path):
    p = write_lines(tmp_path / "d.jsonl", ['{"series_id":"a","start":0,"values":[0.5,1.3]}'])
    with pytest.raises(DatasetError, match=r"'a'.*position 1"):
        load_dataset(p)


def test_bad_line_fails_whole_load_with_line_number(tmp_path):
    p = write_lines(tmp_path / "d.jsonl", ['{"series_id":"a","start":0,"values":[0.5]}', "{not json"])
    with pytest.raises(DatasetError, match="line 2"):
        load_dataset(p)


@pytest.mark.parametrize(
    "line",
    [
        '{"series_id":"a","start":0,"values":[]}',
        '{"series_id":"a","start":-1,"values":[0.5]}',
        '{"series_id":"a","start":0,"weight":0,"values":[0.5]}',
        '{"series_id":"a","start":0,"values":[0.5],"extra":1}',
        '{"series_id":"a","start":0,"values":["x"]}',
        '{"series_id":"a","start":0.5,"values":[0.5]}',
        '{"start":0,"values":[0.5]}',
    ],
)
def test_invalid_records_rejected(tmp_path, line):
    with pytest.raises(DatasetError):
        load_dataset(write_lines(tmp_path / "d.jsonl", [line]))


def test_weight_and_group_default(tmp_path):
    r = load_dataset(write_lines(tmp_path / "d.jsonl", ['{"series_id":"a","start":3,"values":[0.5]}']))["a"]
    assert r.weight == 1.0 and r.group == 0 and r.start == 3


def test_duplicate_ids_rejected():
    with pytest.raises(DatasetError, match="duplicate"):
        Dataset((make_record([0.1], "a"), make_record([0.2], "a")))


def test_values_are_read_only():
    r = make_record([0.1, 0.2])
    with pytest.raises(ValueError):
        r.values[0] = 0.5


def test_slice_examples():
    r = make_record([i / 10 for i in range(10)])
    s = slice_record(r, 2, 5)
    assert s.start == 2 and list(s.values) == [0.2, 0.3, 0.4]
    tail = slice_record(r, 8, 12)
    assert tail.values[:2].tolist() == [0.8, 0.9] and np.isnan(tail.values[2:]).all()
    with pytest.raises(ValueError):
        slice_record(r, 0, 0)
    with pytest.raises(ValueError):
        slice_record(r, 5, 2)
    assert slice_record(r, r.start, r.end) == r


def test_missing_fraction_examples():
    assert missing_fraction(make_record([0.9, None, 0.8, None])) == 0.5
    assert missing_fraction(make_record([0.9, 0.8])) == 0.0
    assert missing_fraction(make_record([None, None])) == 1.0


def test_truncate_is_inclusive_and_drops_late_records():
    ds = Dataset((make_record([0.1] * 10, "a"), make_record([0.2] * 3, "b", start=6)))
    cut = ds.truncate(4)
    assert cut.ids == ["a"] and cut["a"].end == 5


def test_canonical_serialisation_format():
    r = make_record([0.1, None], "x", weight=2.0, group=1)
    assert dumps_record(r) == '{"series_id":"x","start":0,"weight":2,"group":1,"values":[0.10000000000000001,null]}'
    assert json.loads(dumps_record(r))["values"] == [0.1, None]


values_st = st.lists(st.one_of(st.none(), st.floats(0.0, 1.0)), min_size=1, max_size=30)


@settings(max_examples=60, deadline=None)
@given(values=values_st, start=st.integers(0, 500), weight=st.floats(0.01, 100.0), group=st.integers(0, 7))
def test_round_trip_is_byte_identical(tmp_path_factory, values, start, weight, group):
    d = tmp_path_factory.mktemp("rt")
    ds = Dataset((TimeSeriesRecord("r", start, values, weight, group),))
    save_dataset(ds, d / "a.jsonl")
    loaded = load_dataset(d / "a.jsonl")
    assert loaded.records[0] == ds.records[0]
    save_dataset(loaded, d / "b.jsonl")
    assert (d / "a.jsonl").read_bytes() == (d / "b.jsonl").read_bytes()


@settings(max_examples=60, deadline=None)
@given(values=values_st, start=st.integers(0, 50), lo=st.integers(0, 80), width=st.integers(1, 40))
def test_slice_matches_elementwise_lookup(values, start, lo, width):
    r = TimeSeriesRecord("r", start, values)
    s = slice_record(r, lo, lo + width)
    for k, w in enumerate(range(lo, lo + width)):
        expect = r.value_at(w)
        got = s.values[k]
        assert (expect is None and np.isnan(got)) or got == expect
