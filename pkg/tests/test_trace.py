"""Trace ingestion and cleaning against hand-built files and oracles."""

import numpy as np
import pytest

from fedcast.trace import (ClientTrace, ColumnMapping, TraceError, TraceRecord,
                           clean_and_resample, export_mapping_for, export_trace,
                           load_trace)


def _write(tmp_path, text, name="trace.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _mini_mapping():
    return ColumnMapping(columns={"timestamp": "ts", "throughput": "tput"})


def test_load_three_rows_identity(tmp_path):
    p = _write(tmp_path, "ts,tput\n0,10.0\n1,12.5\n2,11.0\n")
    tr = load_trace(p, _mini_mapping())
    assert len(tr) == 3
    assert [r.throughput for r in tr.records] == [10.0, 12.5, 11.0]
    assert [r.timestamp for r in tr.records] == [0.0, 1.0, 2.0]


def test_sentinel_row_dropped(tmp_path):
    p = _write(tmp_path, "ts,tput\n0,10.0\n1,-\n2,11.0\n")
    tr = load_trace(p, _mini_mapping())
    assert len(tr) == 2
    assert tr.dropped_rows == 1


def test_synthetic_120_rows_field_by_field(tmp_path):
    rng = np.random.default_rng(0)
    tput = rng.uniform(1, 50, 120)
    rsrp = rng.uniform(-120, -70, 120)
    lines = ["ts,tput,rsrp,radio"]
    for i in range(120):
        lines.append(f"{i},{float(tput[i])!r},{float(rsrp[i])!r},LTE")
    p = _write(tmp_path, "\n".join(lines) + "\n")
    mapping = ColumnMapping(columns={"timestamp": "ts", "throughput": "tput",
                                     "rsrp": "rsrp", "radio_type": "radio"})
    tr = load_trace(p, mapping, client_id="c0", dataset_tag="synthetic")
    assert tr.sample_period == 1.0
    assert len(tr) == 120
    for i, rec in enumerate(tr.records):
        assert rec.timestamp == float(i)
        assert rec.throughput == tput[i]
        assert rec.rsrp == rsrp[i]
        assert rec.radio_type == "LTE"
        assert rec.latitude == 0.0  # default fill for unmapped field


def test_missing_mandatory_column(tmp_path):
    p = _write(tmp_path, "ts,x\n0,1\n")
    with pytest.raises(TraceError):
        load_trace(p, _mini_mapping())


def test_empty_file(tmp_path):
    p = _write(tmp_path, "")
    with pytest.raises(TraceError):
        load_trace(p, _mini_mapping())


def test_non_numeric_value_is_an_error(tmp_path):
    p = _write(tmp_path, "ts,tput\n0,banana\n")
    with pytest.raises(TraceError):
        load_trace(p, _mini_mapping())


def test_unit_conversion(tmp_path):
    p = _write(tmp_path, "ts,tput\n0,1000\n1,2000\n")
    mapping = ColumnMapping(columns={"timestamp": "ts", "throughput": "tput"},
                            units={"throughput": 1e-3})  # Kbps -> Mbps
    tr = load_trace(p, mapping)
    assert [r.throughput for r in tr.records] == [1.0, 2.0]


def test_tab_delimited(tmp_path):
    p = _write(tmp_path, "ts\ttput\n0\t10\n1\t20\n")
    tr = load_trace(p, _mini_mapping())
    assert [r.throughput for r in tr.records] == [10.0, 20.0]


def test_mapping_rejects_double_mapping():
    with pytest.raises(TraceError):
        ColumnMapping(columns={"timestamp": "ts", "throughput": "t"},
                      constants={"throughput": 1.0})


def _trace_from_arrays(ts, tput):
    recs = [TraceRecord(timestamp=float(t), latitude=0.0, longitude=0.0,
                        speed=0.0, rsrp=-100.0, sinr=5.0, throughput=float(v),
                        radio_type="LTE") for t, v in zip(ts, tput)]
    return ClientTrace(client_id="c", dataset_tag="d", records=recs,
                       sample_period=1.0)


def test_duplicate_timestamps_collapse_by_mean():
    tr = _trace_from_arrays([4, 5, 5, 6], [1.0, 4.0, 6.0, 2.0])
    out = clean_and_resample(tr)
    assert [r.timestamp for r in out.records] == [0.0, 1.0, 2.0]
    assert out.records[1].throughput == 5.0


def test_gap_linear_interpolation():
    tr = _trace_from_arrays([0, 1, 2, 6, 7], [0.0, 1.0, 2.0, 6.0, 7.0])
    out = clean_and_resample(tr)
    assert [r.timestamp for r in out.records] == [0.0, 1, 2, 3, 4, 5, 6, 7]
    assert [r.throughput for r in out.records] == [0, 1, 2, 3, 4, 5, 6, 7]


def test_large_gap_keeps_longest_run():
    # 100 rows with a 10-sample hole; oracle: brute-force longest-run scan
    ts = list(range(0, 45)) + list(range(55, 110))
    tput = list(np.linspace(1, 9, len(ts)))
    tr = _trace_from_arrays(ts, tput)

    runs, cur = [], [ts[0]]
    for a, b in zip(ts, ts[1:]):
        if b - a - 1 > 3:
            runs.append(cur)
            cur = []
        cur.append(b)
    runs.append(cur)
    expected = max(len(r) for r in runs)
    assert expected >= 45

    out = clean_and_resample(tr)
    assert len(out) == expected
    assert out.records[0].timestamp == 0.0


def test_clean_is_idempotent():
    tr = _trace_from_arrays([0, 1, 1, 2, 3, 9, 10], [1, 2, 4, 3, 5, 7, 8])
    once = clean_and_resample(tr)
    twice = clean_and_resample(once)
    assert [r.timestamp for r in once.records] == \
        [r.timestamp for r in twice.records]
    assert [r.throughput for r in once.records] == \
        [r.throughput for r in twice.records]


def test_clean_output_strictly_increasing_constant_step():
    rng = np.random.default_rng(2)
    ts = np.arange(50, dtype=float)
    tr = _trace_from_arrays(ts, rng.uniform(1, 10, 50))
    out = clean_and_resample(tr)
    diffs = np.diff([r.timestamp for r in out.records])
    assert (diffs > 0).all()
    assert np.allclose(diffs, out.sample_period)


def test_clean_rejects_tiny_trace():
    tr = _trace_from_arrays([0], [1.0])
    with pytest.raises(TraceError):
        clean_and_resample(tr)


def test_export_load_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    recs = [TraceRecord(timestamp=float(i), latitude=rng.uniform(-90, 90),
                        longitude=rng.uniform(-180, 180),
                        speed=rng.uniform(0, 30), rsrp=rng.uniform(-120, -60),
                        sinr=rng.uniform(-5, 25), throughput=rng.uniform(0, 900),
                        radio_type="NR-SA", extras={"cqi": rng.uniform(0, 15)})
            for i in range(40)]
    tr = ClientTrace(client_id="c9", dataset_tag="d", records=recs,
                     sample_period=1.0)
    path = tmp_path / "out.csv"
    export_trace(tr, path)
    back = load_trace(path, export_mapping_for(tr), client_id="c9",
                      dataset_tag="d")
    assert back == tr
