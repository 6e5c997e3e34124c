"""Trace ingestion: heterogeneous throughput logs -> canonical per-client schema.

Canonical fields are the intersection available across the public 5G
datasets: timestamp, latitude, longitude, speed, rsrp, sinr, throughput
(Mbps), radio_type. Anything else rides along in `extras`.
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MANDATORY_FIELDS = ("timestamp", "latitude", "longitude", "speed",
                    "rsrp", "sinr", "throughput", "radio_type")
NUMERIC_FIELDS = ("timestamp", "latitude", "longitude", "speed",
                  "rsrp", "sinr", "throughput")
# feature rows of the input matrix; throughput is handled separately
CONTINUOUS_FEATURES = ("latitude", "longitude", "speed", "rsrp", "sinr")

DEFAULT_SENTINELS = ("", "-", "NA", "NaN", "nan", "null")

_FIELD_DEFAULTS = {"latitude": 0.0, "longitude": 0.0, "speed": 0.0,
                   "rsrp": 0.0, "sinr": 0.0, "radio_type": "unknown"}


class TraceError(ValueError):
    pass


@dataclass
class TraceRecord:
    timestamp: float
    latitude: float
    longitude: float
    speed: float
    rsrp: float
    sinr: float
    throughput: float
    radio_type: str
    extras: dict = field(default_factory=dict)


@dataclass
class ClientTrace:
    client_id: str
    dataset_tag: str
    records: list
    sample_period: float = 1.0
    dropped_rows: int = 0

    def __len__(self):
        return len(self.records)

    def extra_names(self):
        return sorted(self.records[0].extras) if self.records else []

    def feature_names(self):
        return list(CONTINUOUS_FEATURES) + self.extra_names()

    def feature_matrix(self):
        """All continuous features (rows) over time (columns)."""
        names = self.feature_names()
        out = np.empty((len(names), len(self.records)))
        for j, rec in enumerate(self.records):
            for i, name in enumerate(names):
                out[i, j] = rec.extras[name] if name in rec.extras else getattr(rec, name)
        return out

    def throughput(self):
        return np.array([r.throughput for r in self.records])

    def timestamps(self):
        return np.array([r.timestamp for r in self.records])


@dataclass
class ColumnMapping:
    """source-column names, constant fills, unit factors and sentinels."""
    columns: dict
    constants: dict = field(default_factory=dict)
    units: dict = field(default_factory=dict)
    sentinels: tuple = DEFAULT_SENTINELS
    extras: dict = field(default_factory=dict)  # canonical extra -> source col

    def __post_init__(self):
        for name in MANDATORY_FIELDS:
            in_cols = name in self.columns
            in_consts = name in self.constants
            if in_cols and in_consts:
                raise TraceError(f"field {name!r} mapped twice")
            if not in_cols and not in_consts:
                if name in _FIELD_DEFAULTS:
                    self.constants[name] = _FIELD_DEFAULTS[name]
                else:
                    raise TraceError(f"mandatory field {name!r} not mapped")

    @classmethod
    def identity(cls, fields=None, **kwargs):
        fields = MANDATORY_FIELDS if fields is None else fields
        return cls(columns={f: f for f in fields}, **kwargs)


def load_trace(path, mapping, client_id=None, dataset_tag=""):
    """Parse a delimited text table into a canonical ClientTrace.

    Rows whose mandatory values are sentinels are dropped and counted;
    a non-numeric, non-sentinel value in a numeric column is an error.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.strip():
            raise TraceError(f"{path}: empty file")
        delim = "\t" if "\t" in first else ","
        fh.seek(0)
        reader = csv.reader(fh, delimiter=delim)
        header = [h.strip() for h in next(reader)]
        col_index = {h: i for i, h in enumerate(header)}

        for canon, src in list(mapping.columns.items()) + list(mapping.extras.items()):
            if src not in col_index:
                raise TraceError(f"{path}: missing column {src!r} for field {canon!r}")

        sentinels = set(mapping.sentinels)
        records = []
        dropped = 0
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            vals = {}
            bad = False
            for canon in MANDATORY_FIELDS:
                if canon in mapping.constants:
                    vals[canon] = mapping.constants[canon]
                    continue
                raw = row[col_index[mapping.columns[canon]]].strip()
                if raw in sentinels:
                    bad = True
                    break
                if canon == "radio_type":
                    vals[canon] = raw
                else:
                    try:
                        v = float(raw)
                    except ValueError:
                        raise TraceError(
                            f"{path}: non-numeric value {raw!r} in column "
                            f"{mapping.columns[canon]!r}") from None
                    if not math.isfinite(v):
                        bad = True
                        break
                    vals[canon] = v * mapping.units.get(canon, 1.0)
            if not bad:
                extras = {}
                for canon, src in mapping.extras.items():
                    raw = row[col_index[src]].strip()
                    if raw in sentinels:
                        bad = True
                        break
                    try:
                        v = float(raw)
                    except ValueError:
                        raise TraceError(
                            f"{path}: non-numeric value {raw!r} in column {src!r}"
                        ) from None
                    if not math.isfinite(v):
                        bad = True
                        break
                    extras[canon] = v * mapping.units.get(canon, 1.0)
                vals["extras"] = extras
            if bad:
                dropped += 1
                continue
            if vals["throughput"] < 0:
                dropped += 1
                continue
            records.append(TraceRecord(**vals))

    if not records:
        raise TraceError(f"{path}: no usable rows")
    records.sort(key=lambda r: r.timestamp)
    t0 = records[0].timestamp
    for rec in records:
        rec.timestamp -= t0
    period = _infer_period(records)
    cid = client_id if client_id is not None else path.stem
    return ClientTrace(client_id=cid, dataset_tag=dataset_tag, records=records,
                       sample_period=period, dropped_rows=dropped)


def _infer_period(records):
    if len(records) < 2:
        return 1.0
    diffs = np.diff([r.timestamp for r in records])
    diffs = diffs[diffs > 0]
    if diffs.size == 0:
        return 1.0
    return float(round(np.median(diffs), 6))


def clean_and_resample(trace):
    """Collapse duplicate timestamps, fill small gaps, keep the longest run.

    Duplicates (same grid slot) are averaged; interior gaps of at most 3
    samples are linearly interpolated; larger gaps split the trace and the
    longest contiguous run wins. Output timestamps are 0, p, 2p, ...
    """
    if not trace.records:
        raise TraceError("empty trace")
    period = trace.sample_period
    extra_names = trace.extra_names()

    slots = {}
    order = []
    for rec in trace.records:
        k = int(round(rec.timestamp / period))
        if k not in slots:
            slots[k] = []
            order.append(k)
        slots[k].append(rec)
    order.sort()

    merged = []
    for k in order:
        group = slots[k]
        if len(group) == 1:
            src = group[0]
            rec = TraceRecord(timestamp=k * period, latitude=src.latitude,
                              longitude=src.longitude, speed=src.speed,
                              rsrp=src.rsrp, sinr=src.sinr,
                              throughput=src.throughput,
                              radio_type=src.radio_type,
                              extras=dict(src.extras))
        else:
            rec = TraceRecord(
                timestamp=k * period,
                latitude=float(np.mean([g.latitude for g in group])),
                longitude=float(np.mean([g.longitude for g in group])),
                speed=float(np.mean([g.speed for g in group])),
                rsrp=float(np.mean([g.rsrp for g in group])),
                sinr=float(np.mean([g.sinr for g in group])),
                throughput=float(np.mean([g.throughput for g in group])),
                radio_type=group[0].radio_type,
                extras={n: float(np.mean([g.extras[n] for g in group]))
                        for n in extra_names},
            )
        merged.append((k, rec))

    # fill gaps of <= 3 missing slots, split on larger ones
    runs = [[merged[0]]]
    for (k_prev, prev), (k, rec) in zip(merged, merged[1:]):
        missing = k - k_prev - 1
        if missing == 0:
            runs[-1].append((k, rec))
        elif missing <= 3:
            for j in range(1, missing + 1):
                f = j / (missing + 1)
                runs[-1].append((k_prev + j, _lerp(prev, rec, f, k_prev + j,
                                                   period, extra_names)))
            runs[-1].append((k, rec))
        else:
            runs.append([(k, rec)])

    best = max(runs, key=len)
    if len(best) < 2:
        raise TraceError("trace shorter than 2 records after cleaning")
    records = []
    k0 = best[0][0]
    for k, rec in best:
        rec.timestamp = (k - k0) * period
        records.append(rec)
    return ClientTrace(client_id=trace.client_id, dataset_tag=trace.dataset_tag,
                       records=records, sample_period=period,
                       dropped_rows=trace.dropped_rows)


def _lerp(a, b, f, k, period, extra_names):
    def mix(x, y):
        return float(x + f * (y - x))

    return TraceRecord(
        timestamp=k * period,
        latitude=mix(a.latitude, b.latitude),
        longitude=mix(a.longitude, b.longitude),
        speed=mix(a.speed, b.speed),
        rsrp=mix(a.rsrp, b.rsrp),
        sinr=mix(a.sinr, b.sinr),
        throughput=mix(a.throughput, b.throughput),
        radio_type=a.radio_type,
        extras={n: mix(a.extras[n], b.extras[n]) for n in extra_names},
    )


def export_trace(trace, path):
    """Write the canonical column order (plus sorted extras) as CSV."""
    extra_names = trace.extra_names()
    header = list(MANDATORY_FIELDS) + extra_names
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for rec in trace.records:
            row = [repr(float(getattr(rec, f))) for f in NUMERIC_FIELDS]
            row.append(rec.radio_type)
            row.extend(repr(float(rec.extras[n])) for n in extra_names)
            writer.writerow(row)


def export_mapping_for(trace):
    """Mapping that reloads a file produced by export_trace."""
    return ColumnMapping.identity(extras={n: n for n in trace.extra_names()})
