"""Noise filtering, scaling and sliding-window sample construction."""

from dataclasses import dataclass, field, replace

import numpy as np

from .trace import ClientTrace, TraceRecord


class PreprocessError(ValueError):
    pass


@dataclass
class PreprocessConfig:
    filter_window: int = 3
    scaler_kind: str = "minmax"          # minmax | standard
    scaling_scope: str = "per_client"    # per_client | per_dataset

    def __post_init__(self):
        if self.filter_window < 1:
            raise PreprocessError("filter_window must be >= 1")
        if self.scaler_kind not in ("minmax", "standard"):
            raise PreprocessError(f"unknown scaler {self.scaler_kind!r}")
        if self.scaling_scope not in ("per_client", "per_dataset"):
            raise PreprocessError(f"unknown scope {self.scaling_scope!r}")


@dataclass
class WindowConfig:
    history: int
    horizon: int
    train_stride: int = 1
    eval_stride: int = 0  # 0 -> horizon

    def __post_init__(self):
        if self.history < 1 or self.horizon < 1:
            raise PreprocessError("history and horizon must be >= 1")
        if self.eval_stride == 0:
            self.eval_stride = self.horizon


@dataclass(eq=False)
class WindowSample:
    """One training sample: feature matrix and throughput history over the
    window [n-H, n], plus the F future throughput targets."""
    features: np.ndarray      # (|F|, H+1), column j is time n-H+j
    thpt_history: np.ndarray  # (H+1,)
    target: np.ndarray        # (F,), throughput at n+1 .. n+F
    anchor: int


@dataclass
class ScalerState:
    kind: str
    params: dict = field(default_factory=dict)  # name -> (offset, scale)
    constant: set = field(default_factory=set)

    def transform(self, name, values):
        if name in self.constant:
            return np.asarray(values, dtype=float)
        if name not in self.params:
            raise PreprocessError(f"scaler was not fitted on feature {name!r}")
        off, scale = self.params[name]
        return (np.asarray(values, dtype=float) - off) / scale

    def inverse_throughput(self, values):
        if "throughput" in self.constant:
            return np.asarray(values, dtype=float)
        off, scale = self.params["throughput"]
        return np.asarray(values, dtype=float) * scale + off


def moving_average(series, window):
    """Trailing mean over the last `window` samples (shorter at the head)."""
    if window < 1:
        raise PreprocessError("window must be >= 1")
    series = np.asarray(series, dtype=float)
    if series.size == 0:
        raise PreprocessError("empty series")
    n = series.size
    c = np.cumsum(series)
    out = np.empty(n)
    head = min(window, n)
    out[:head] = c[:head] / np.arange(1, head + 1)
    if n > window:
        out[window:] = (c[window:] - c[:-window]) / window
    return out


def filter_trace(trace, cfg):
    """Moving-average filter on throughput and every continuous feature."""
    w = cfg.filter_window
    names = trace.feature_names()
    cols = {name: moving_average(
        [rec.extras[name] if name in rec.extras else getattr(rec, name)
         for rec in trace.records], w) for name in names}
    tput = moving_average(trace.throughput(), w)
    extra_names = trace.extra_names()
    records = []
    for j, rec in enumerate(trace.records):
        records.append(TraceRecord(
            timestamp=rec.timestamp,
            latitude=cols["latitude"][j], longitude=cols["longitude"][j],
            speed=cols["speed"][j], rsrp=cols["rsrp"][j], sinr=cols["sinr"][j],
            throughput=tput[j], radio_type=rec.radio_type,
            extras={n: cols[n][j] for n in extra_names}))
    return replace(trace, records=records)


def _collect(traces, name, limit=None):
    vals = []
    for tr in traces:
        recs = tr.records if limit is None else tr.records[:limit]
        for rec in recs:
            vals.append(rec.extras[name] if name in rec.extras else getattr(rec, name))
    return np.asarray(vals, dtype=float)


def fit_scaler(traces, cfg, fit_rows=None):
    """Fit min-max or standard scaling per feature (throughput included).

    `fit_rows` limits fitting to a trace prefix so test data never leaks
    into the scaler. Constant features are flagged and passed through.
    """
    if isinstance(traces, ClientTrace):
        traces = [traces]
    if not traces:
        raise PreprocessError("no traces to fit on")
    names = traces[0].feature_names() + ["throughput"]
    state = ScalerState(kind=cfg.scaler_kind)
    for name in names:
        vals = _collect(traces, name, fit_rows)
        if cfg.scaler_kind == "minmax":
            lo, hi = float(vals.min()), float(vals.max())
            if hi - lo == 0.0:
                state.constant.add(name)
            else:
                state.params[name] = (lo, hi - lo)
        else:
            mean, std = float(vals.mean()), float(vals.std())
            if std == 0.0:
                state.constant.add(name)
            else:
                state.params[name] = (mean, std)
    return state


def apply_scaler(trace, state):
    """Return a copy of the trace with every continuous feature scaled."""
    names = trace.feature_names() + ["throughput"]
    for name in names:
        if name not in state.constant and name not in state.params:
            raise PreprocessError(f"scaler missing feature {name!r}")
    cols = {name: state.transform(name, _collect([trace], name))
            for name in names}
    extra_names = trace.extra_names()
    records = []
    for j, rec in enumerate(trace.records):
        records.append(TraceRecord(
            timestamp=rec.timestamp,
            latitude=cols["latitude"][j], longitude=cols["longitude"][j],
            speed=cols["speed"][j], rsrp=cols["rsrp"][j], sinr=cols["sinr"][j],
            throughput=cols["throughput"][j], radio_type=rec.radio_type,
            extras={n: cols[n][j] for n in extra_names}))
    return replace(trace, records=records)


def build_windows(trace, wc, stride=None):
    """Slide the (H+1)-step window over the trace.

    Anchors run n = H, H+s, ... while the F-step target still fits; every
    sample's feature column j corresponds to time n-H+j.
    """
    if stride is None:
        stride = wc.train_stride
    n_rec = len(trace.records)
    h, f = wc.history, wc.horizon
    if n_rec < h + f + 1:
        raise PreprocessError(
            f"trace of length {n_rec} too short for H={h}, F={f}")
    feats = trace.feature_matrix()
    tput = trace.throughput()
    samples = []
    for n in range(h, n_rec - f, stride):
        samples.append(WindowSample(
            features=feats[:, n - h:n + 1].copy(),
            thpt_history=tput[n - h:n + 1].copy(),
            target=tput[n + 1:n + 1 + f].copy(),
            anchor=n))
    return samples


def split_train_test(samples, ratio):
    """Chronological split: first floor(ratio*N) samples train, rest test."""
    if not 0.0 < ratio < 1.0:
        raise PreprocessError("ratio must be in (0, 1)")
    if len(samples) < 2:
        raise PreprocessError("need at least 2 samples to split")
    n_train = int(len(samples) * ratio)
    return samples[:n_train], samples[n_train:]


def stack_samples(samples):
    """(B, |F|, H+1) features, (B, H+1) histories, (B, F) targets."""
    if not samples:
        raise PreprocessError("empty sample batch")
    x = np.stack([s.features for s in samples])
    hist = np.stack([s.thpt_history for s in samples])
    y = np.stack([s.target for s in samples])
    return x, hist, y


def dump_windows(samples, path):
    """Debug dump: one CSV row per window cell, replayable by eye."""
    with open(path, "w") as fh:
        fh.write("anchor,kind,row,col,value\n")
        for s in samples:
            for i in range(s.features.shape[0]):
                for j in range(s.features.shape[1]):
                    fh.write(f"{s.anchor},feature,{i},{j},"
                             f"{float(s.features[i, j])!r}\n")
            for j, v in enumerate(s.thpt_history):
                fh.write(f"{s.anchor},thpt_history,0,{j},{float(v)!r}\n")
            for j, v in enumerate(s.target):
                fh.write(f"{s.anchor},target,0,{j},{float(v)!r}\n")
