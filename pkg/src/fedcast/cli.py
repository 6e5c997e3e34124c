"""Config-driven experiment runner: federate / analyze / stream / all.

Configs are flat INI files; every run directory gets a config echo and the
master seed so any stage can be replayed exactly. All randomness flows
from the master seed through named substreams.
"""

import argparse
import configparser
import json
import math
import os
import sys
import tempfile
import traceback
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import analysis, fl, models, stream
from .preprocess import PreprocessConfig, WindowConfig, PreprocessError
from .trace import ClientTrace, ColumnMapping, TraceRecord, clean_and_resample, \
    load_trace


class ConfigError(ValueError):
    pass


@dataclass
class SyntheticSpec:
    n_clients: int = 8
    length: int = 300
    offset_min: float = 10.0
    offset_max: float = 100.0
    ar_min: float = 0.6
    ar_max: float = 0.9
    amp_frac: float = 0.25
    period_min: float = 40.0
    period_max: float = 80.0
    noise_frac: float = 0.04
    n_datasets: int = 1   # clients are grouped into this many dataset tags

    def __post_init__(self):
        if not (-1.0 < self.ar_min < 1.0 and -1.0 < self.ar_max < 1.0):
            raise ConfigError("AR coefficients must lie in (-1, 1)")
        if self.n_clients < 1 or self.length < 4:
            raise ConfigError("bad synthetic size")
        if not 1 <= self.n_datasets <= self.n_clients:
            raise ConfigError("n_datasets must be in [1, n_clients]")


def generate_synthetic(spec, seed):
    """Non-IID per-client traces: offset + sinusoid + AR(1) noise.

    rsrp and sinr are noisy monotone functions of throughput so the
    horizon correlations are non-trivial.
    """
    traces = []
    n = spec.n_clients
    for i in range(n):
        f = i / max(n - 1, 1)
        offset = spec.offset_min + f * (spec.offset_max - spec.offset_min)
        phi = spec.ar_min + f * (spec.ar_max - spec.ar_min)
        period = spec.period_min + f * (spec.period_max - spec.period_min)
        amp = spec.amp_frac * offset
        sigma = spec.noise_frac * offset
        phase = 2.0 * math.pi * i / n
        rng = np.random.default_rng((seed, 4001, i))

        t = np.arange(spec.length, dtype=float)
        ar = np.zeros(spec.length)
        innov = rng.normal(0.0, 1.0, spec.length) * sigma
        for k in range(1, spec.length):
            ar[k] = phi * ar[k - 1] + innov[k]
        tput = np.maximum(
            offset + amp * np.sin(2.0 * math.pi * t / period + phase) + ar, 0.0)

        rsrp = -120.0 + 0.35 * tput + rng.normal(0.0, 1.0, spec.length)
        sinr = 2.0 + 0.18 * tput + rng.normal(0.0, 0.8, spec.length)
        speed = np.abs(4.0 + np.cumsum(rng.normal(0.0, 0.15, spec.length)))
        lat0 = 44.9 + 0.01 * i
        lon0 = -93.2 - 0.01 * i
        lat = lat0 + np.cumsum(rng.normal(0.0, 1e-5, spec.length))
        lon = lon0 + np.cumsum(rng.normal(0.0, 1e-5, spec.length))

        records = [TraceRecord(timestamp=float(k), latitude=float(lat[k]),
                               longitude=float(lon[k]), speed=float(speed[k]),
                               rsrp=float(rsrp[k]), sinr=float(sinr[k]),
                               throughput=float(tput[k]), radio_type="NR-SA")
                   for k in range(spec.length)]
        group = min(i * spec.n_datasets // n, spec.n_datasets - 1)
        traces.append(ClientTrace(client_id=f"syn{i:02d}",
                                  dataset_tag=f"synth{group}",
                                  records=records, sample_period=1.0))
    return traces


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------


_STRATEGIES = ("FEDAVG", "FEDPROX", "FEDBN")
_PREDICTORS = ("model", "harmonic", "oracle", "constant")


@dataclass
class ExperimentConfig:
    seed: int
    out_dir: str
    workers: int
    source: str                 # synthetic | files
    synthetic: SyntheticSpec
    files: list
    mapping_path: str
    dataset_tag: str
    preprocess: PreprocessConfig
    window: WindowConfig
    model_kwargs: dict
    train_kwargs: dict
    rounds_kwargs: dict
    stream_kwargs: dict
    qoe_kwargs: dict
    predictor: str
    constant_mbps: float
    train_ratio: float
    raw_echo: str


def _parse_config(path, overrides):
    cp = configparser.ConfigParser()
    cp.optionxform = str
    read = cp.read(path)
    errors = []
    if not read:
        raise ConfigError(f"cannot read config file {path}")

    def get(section, key, cast, default=None, required=False):
        if cp.has_option(section, key):
            raw = cp.get(section, key)
            try:
                if cast is bool:
                    return raw.strip().lower() in ("1", "true", "yes", "on")
                return cast(raw)
            except ValueError:
                errors.append(f"[{section}] {key}: cannot parse {raw!r}")
                return default
        if required and default is None:
            errors.append(f"[{section}] {key}: missing required field")
        return default

    seed = overrides.get("seed")
    if seed is None:
        seed = get("experiment", "seed", int, required=True)
    out_dir = overrides.get("out") or get("experiment", "out_dir", str,
                                          default="runs/out")
    workers = overrides.get("workers") or get("experiment", "workers", int,
                                              default=1)

    source = get("data", "source", str, default="synthetic")
    if source not in ("synthetic", "files"):
        errors.append(f"[data] source: must be synthetic or files, got {source!r}")

    syn = SyntheticSpec()
    if cp.has_section("synthetic"):
        kwargs = {}
        for key, cast in (("n_clients", int), ("length", int),
                          ("offset_min", float), ("offset_max", float),
                          ("ar_min", float), ("ar_max", float),
                          ("amp_frac", float), ("period_min", float),
                          ("period_max", float), ("noise_frac", float),
                          ("n_datasets", int)):
            val = get("synthetic", key, cast)
            if val is not None:
                kwargs[key] = val
        try:
            syn = SyntheticSpec(**kwargs)
        except ConfigError as exc:
            errors.append(f"[synthetic] {exc}")

    files = []
    mapping_path = get("data", "mapping", str, default="")
    dataset_tag = get("data", "dataset_tag", str, default="files")
    if source == "files":
        raw = get("data", "files", str, default="")
        files = [p.strip() for p in raw.split(",") if p.strip()]
        if not files:
            errors.append("[data] files: no trace files listed")
        for p in files:
            if not Path(p).exists():
                errors.append(f"[data] files: {p} does not exist")
        if mapping_path and not Path(mapping_path).exists():
            errors.append(f"[data] mapping: {mapping_path} does not exist")

    try:
        pre = PreprocessConfig(
            filter_window=get("preprocess", "filter_window", int, default=3),
            scaler_kind=get("preprocess", "scaler", str, default="minmax"),
            scaling_scope=get("preprocess", "scope", str, default="per_client"))
    except PreprocessError as exc:
        errors.append(f"[preprocess] {exc}")
        pre = PreprocessConfig()

    try:
        win = WindowConfig(
            history=get("window", "history", int, default=15),
            horizon=get("window", "horizon", int, default=1),
            train_stride=get("window", "train_stride", int, default=1),
            eval_stride=get("window", "eval_stride", int, default=0))
    except PreprocessError as exc:
        errors.append(f"[window] {exc}")
        win = WindowConfig(history=15, horizon=1)

    arch = get("model", "arch", str, default="LSTM")
    if arch not in models.ARCHS:
        errors.append(f"[model] arch: unknown architecture {arch!r}")
        arch = "LSTM"
    conv_raw = get("model", "conv_channels", str, default="8,8")
    try:
        conv_channels = tuple(int(c) for c in conv_raw.split(","))
    except ValueError:
        errors.append(f"[model] conv_channels: cannot parse {conv_raw!r}")
        conv_channels = (8, 8)
    model_kwargs = dict(
        arch=arch,
        hidden=get("model", "hidden", int, default=32),
        num_layers=get("model", "num_layers", int, default=1),
        num_heads=get("model", "num_heads", int, default=2),
        conv_channels=conv_channels,
        ff_dim=get("model", "ff_dim", int, default=0),
        use_batchnorm=get("model", "use_batchnorm", bool, default=True),
        use_positional=get("model", "use_positional", bool, default=True))

    train_kwargs = dict(
        learning_rate=get("train", "learning_rate", float,
                          default=models._TABLE_LR[arch]),
        batch_size=get("train", "batch_size", int, default=32),
        local_epochs=get("train", "local_epochs", int,
                         default=models._DEFAULT_EPOCHS[arch]),
        optimizer=get("train", "optimizer", str, default="adam"),
        include_bn_in_prox=get("train", "include_bn_in_prox", bool,
                               default=False))

    strategy = get("rounds", "strategy", str, default="FEDBN")
    if strategy not in _STRATEGIES:
        errors.append(f"[rounds] strategy: unknown strategy {strategy!r}")
        strategy = "FEDBN"
    mu = get("rounds", "mu", float, default=0.0)
    if strategy == "FEDPROX" and mu <= 0:
        errors.append("[rounds] mu: FEDPROX requires mu > 0")
        mu = 0.1
    rounds_kwargs = dict(
        strategy=strategy, mu=mu,
        total_rounds=get("rounds", "total_rounds", int, default=100),
        participation=get("rounds", "participation", float, default=0.85),
        aggregate_running_stats=get("rounds", "aggregate_running_stats", bool,
                                    default=True))
    if not 0 < rounds_kwargs["participation"] <= 1:
        errors.append("[rounds] participation: must be in (0, 1]")
        rounds_kwargs["participation"] = 0.85
    if rounds_kwargs["total_rounds"] < 0:
        errors.append("[rounds] total_rounds: must be >= 0")
        rounds_kwargs["total_rounds"] = 0

    ladder_raw = get("stream", "ladder_kbps", str,
                     default="300,500,1000,2000,3000,6000")
    try:
        ladder = tuple(float(x) for x in ladder_raw.split(","))
    except ValueError:
        errors.append(f"[stream] ladder_kbps: cannot parse {ladder_raw!r}")
        ladder = (300.0, 500.0, 1000.0, 2000.0, 3000.0, 6000.0)
    stream_kwargs = dict(
        ladder_kbps=ladder,
        session_len=get("stream", "session_len", int, default=110),
        rtt_overhead=get("stream", "rtt_overhead", float, default=0.08),
        mpc_horizon=get("stream", "mpc_horizon", int, default=5),
        playback_threshold=get("stream", "playback_threshold", float, default=2.0),
        max_latency=get("stream", "max_latency", float, default=5.0),
        join_prefetch_max=get("stream", "join_prefetch_max", int, default=3),
        start_after=get("stream", "start_after", int, default=2))
    qoe_kwargs = dict(
        mu1=get("qoe", "mu1", float, default=0.2),
        mu2=get("qoe", "mu2", float, default=6.0),
        mu3=get("qoe", "mu3", float, default=1.0),
        mu4=get("qoe", "mu4", float, default=0.8),
        mu5=get("qoe", "mu5", float, default=1.2),
        omega=get("qoe", "omega", float, default=4.0),
        r_min_kbps=get("qoe", "r_min_kbps", float, default=min(ladder)))

    predictor = get("stream", "predictor", str, default="model")
    if predictor not in _PREDICTORS:
        errors.append(f"[stream] predictor: unknown predictor {predictor!r}")
        predictor = "model"
    constant_mbps = get("stream", "constant_mbps", float, default=0.3)
    train_ratio = get("window", "train_ratio", float, default=0.8)
    if not 0 < train_ratio < 1:
        errors.append("[window] train_ratio: must be in (0, 1)")
        train_ratio = 0.8

    if seed is None:
        errors.append("[experiment] seed: a master seed is mandatory")
        seed = 0

    if errors:
        raise ConfigError("\n".join(errors))

    with open(path) as fh:
        raw_echo = fh.read()
    return ExperimentConfig(
        seed=int(seed), out_dir=str(out_dir), workers=int(workers),
        source=source, synthetic=syn, files=files, mapping_path=mapping_path,
        dataset_tag=dataset_tag, preprocess=pre, window=win,
        model_kwargs=model_kwargs, train_kwargs=train_kwargs,
        rounds_kwargs=rounds_kwargs, stream_kwargs=stream_kwargs,
        qoe_kwargs=qoe_kwargs, predictor=predictor,
        constant_mbps=constant_mbps, train_ratio=train_ratio,
        raw_echo=raw_echo)


def load_mapping(path):
    cp = configparser.ConfigParser()
    cp.optionxform = str
    if not cp.read(path):
        raise ConfigError(f"cannot read mapping file {path}")
    columns = dict(cp.items("columns")) if cp.has_section("columns") else {}
    constants = {}
    if cp.has_section("constants"):
        for key, val in cp.items("constants"):
            constants[key] = val if key == "radio_type" else float(val)
    units = {}
    if cp.has_section("units"):
        units = {k: float(v) for k, v in cp.items("units")}
    sentinels = ColumnMapping.__dataclass_fields__["sentinels"].default
    if cp.has_option("sentinels", "values"):
        sentinels = tuple(s.strip() for s in cp.get("sentinels", "values").split(","))
    extras = dict(cp.items("extras")) if cp.has_section("extras") else {}
    return ColumnMapping(columns=columns, constants=constants, units=units,
                         sentinels=sentinels, extras=extras)


# ---------------------------------------------------------------------------
# artifact helpers
# ---------------------------------------------------------------------------


def _atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp_")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_bytes(path, blob):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp_")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x):
    return repr(float(x))


# ---------------------------------------------------------------------------
# pipeline stages
# ---------------------------------------------------------------------------


def _load_traces(cfg):
    if cfg.source == "synthetic":
        return generate_synthetic(cfg.synthetic, cfg.seed)
    mapping = load_mapping(cfg.mapping_path) if cfg.mapping_path \
        else ColumnMapping.identity()
    traces = []
    for p in cfg.files:
        raw = load_trace(p, mapping, dataset_tag=cfg.dataset_tag)
        traces.append(clean_and_resample(raw))
    return traces


def build_client_set(traces, pre_cfg, window_cfg, train_ratio=0.8):
    """ClientHandles for a cohort; per_dataset scope shares one scaler per
    dataset tag (fitted on whole traces, as the scaling is dataset-global)."""
    if pre_cfg.scaling_scope == "per_dataset":
        from .preprocess import fit_scaler, filter_trace
        by_tag = {}
        for tr in traces:
            by_tag.setdefault(tr.dataset_tag, []).append(tr)
        scalers = {tag: fit_scaler([filter_trace(t, pre_cfg) for t in group],
                                   pre_cfg)
                   for tag, group in by_tag.items()}
        return [fl.build_client(tr, pre_cfg, window_cfg, train_ratio,
                                scaler=scalers[tr.dataset_tag])
                for tr in traces]
    return [fl.build_client(tr, pre_cfg, window_cfg, train_ratio)
            for tr in traces]


def _build_clients(cfg, traces):
    return build_client_set(traces, cfg.preprocess, cfg.window,
                            cfg.train_ratio)


def _model_spec(cfg, traces):
    in_features = len(traces[0].feature_names()) + 1
    return models.ModelSpec(in_features=in_features, history=cfg.window.history,
                            horizon=cfg.window.horizon, **cfg.model_kwargs)


def _round_config(cfg):
    rk = cfg.rounds_kwargs
    strategy = fl.StrategyKind(rk["strategy"], mu=rk["mu"])
    return fl.RoundConfig(strategy=strategy, total_rounds=rk["total_rounds"],
                          participation_fraction=rk["participation"],
                          seed=cfg.seed,
                          aggregate_running_stats=rk["aggregate_running_stats"])


def _train_config(cfg):
    return models.TrainConfig(**cfg.train_kwargs)


def _echo_config(cfg, out):
    _atomic_write(out / "config_echo.ini",
                  cfg.raw_echo + f"\n; resolved_seed = {cfg.seed}\n")


def cmd_federate(cfg):
    out = Path(cfg.out_dir)
    traces = _load_traces(cfg)
    clients = _build_clients(cfg, traces)
    spec = _model_spec(cfg, traces)
    rc = _round_config(cfg)
    tc = _train_config(cfg)

    rows = ["round,client_id,r2,mse,participated"]

    def sink(report):
        for rnd, cid, r2, m, part in report.rows():
            rows.append(f"{rnd},{cid},{_fmt(r2)},{_fmt(m)},{part}")

    reports, global_params = fl.run_experiment(clients, rc, tc, spec,
                                               report_sink=sink)
    _echo_config(cfg, out)
    _atomic_write(out / "rounds.csv", "\n".join(rows) + "\n")

    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    _save_checkpoint_atomic(ckpt_dir / "global.ckpt", spec, global_params)
    for client in clients:
        _save_checkpoint_atomic(ckpt_dir / f"client_{client.client_id}.ckpt",
                                spec, client.params)

    summary = {
        "seed": cfg.seed,
        "config": {
            "model": cfg.model_kwargs,
            "train": cfg.train_kwargs,
            "rounds": cfg.rounds_kwargs,
            "window": {"history": cfg.window.history,
                       "horizon": cfg.window.horizon,
                       "train_stride": cfg.window.train_stride,
                       "eval_stride": cfg.window.eval_stride},
            "preprocess": {"filter_window": cfg.preprocess.filter_window,
                           "scaler": cfg.preprocess.scaler_kind,
                           "scope": cfg.preprocess.scaling_scope},
        },
        "strategy": cfg.rounds_kwargs["strategy"],
        "arch": cfg.model_kwargs["arch"],
        "rounds": len(reports),
        "clients": [c.client_id for c in clients],
        "final_mean_r2": reports[-1].mean_r2 if reports else None,
        "final_var_r2": reports[-1].var_r2 if reports else None,
        "per_client_r2": {cid: reports[-1].metrics[cid][0]
                          for cid in sorted(reports[-1].metrics)} if reports else {},
    }
    _atomic_write(out / "summary.json",
                  json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return 0


def _save_checkpoint_atomic(path, spec, params):
    header = json.dumps(asdict(spec), sort_keys=True).encode("utf-8")
    _atomic_write_bytes(path, header + b"\n" + params.to_bytes())


def cmd_analyze(cfg):
    out = Path(cfg.out_dir)
    traces = _load_traces(cfg)
    _echo_config(cfg, out)

    # KDE of min-max normalized throughput, pooled normalization
    all_tput = np.concatenate([tr.throughput() for tr in traces])
    lo, hi = all_tput.min(), all_tput.max()
    span = max(hi - lo, 1e-12)
    grid = np.linspace(0.0, 1.0, 101)
    kde_rows = ["client_id,x,density"]
    for tr in traces:
        norm = (tr.throughput() - lo) / span
        _, dens = analysis.gaussian_kde(norm, bandwidth=1.0, grid=grid)
        for x, d in zip(grid, dens):
            kde_rows.append(f"{tr.client_id},{_fmt(x)},{_fmt(d)}")
    _atomic_write(out / "kde.csv", "\n".join(kde_rows) + "\n")

    corr_rows = ["client_id,feature,horizon,rho"]
    features = traces[0].feature_names() + ["throughput"]
    for tr in traces:
        table = analysis.CorrelationTable()
        for feature in features:
            for horizon in (1, 3, 5):
                try:
                    rho = analysis.horizon_correlation(tr, feature, horizon)
                except analysis.AnalysisError:
                    continue
                table.add(feature, horizon, rho)
        for feature, horizon, rho in table.rows():
            corr_rows.append(f"{tr.client_id},{feature},{horizon},{_fmt(rho)}")
    _atomic_write(out / "correlations.csv", "\n".join(corr_rows) + "\n")
    return 0


def _stream_predictor(cfg, kind, client_trace, session_tput, spec, params):
    if kind == "constant":
        return stream.ConstantPredictor(cfg.constant_mbps)
    if kind == "harmonic":
        return stream.HarmonicMeanPredictor()
    if kind == "oracle":
        return stream.OraclePredictor(session_tput)
    # model predictor over the scaled feature history of the session window
    from .preprocess import filter_trace, fit_scaler, apply_scaler
    filtered = filter_trace(client_trace, cfg.preprocess)
    scaler = fit_scaler(filtered, cfg.preprocess)
    scaled = apply_scaler(filtered, scaler)
    feats = scaled.feature_matrix()
    tput_scaled = scaled.throughput()
    start = len(client_trace.records) - len(session_tput)
    return stream.ModelPredictor(spec, params, feats[:, start:],
                                 tput_scaled[start:], scaler)


def cmd_stream(cfg):
    out = Path(cfg.out_dir)
    traces = _load_traces(cfg)
    _echo_config(cfg, out)
    scfg = stream.StreamConfig(**cfg.stream_kwargs)
    coeffs = stream.QoECoefficients(**cfg.qoe_kwargs)

    spec = params_by_client = None
    if cfg.predictor == "model":
        ckpt_dir = Path(cfg.out_dir) / "checkpoints"
        if not ckpt_dir.exists():
            raise ConfigError(
                "stream with the model predictor needs checkpoints; "
                "run `federate` into the same out_dir first")
        params_by_client = {}
        for tr in traces:
            path = ckpt_dir / f"client_{tr.client_id}.ckpt"
            if not path.exists():
                path = ckpt_dir / "global.ckpt"
            spec, params = models.load_checkpoint(path)
            params_by_client[tr.client_id] = params

    qoe_rows = ["client_id,qoe,quality,stall,switch,latency,skip,truncated"]
    breakdowns = {}
    for tr in traces:
        tput = tr.throughput()
        if tput.size < scfg.session_len:
            raise ConfigError(
                f"client {tr.client_id}: trace shorter than session_len")
        session_tput = tput[-scfg.session_len:]
        params = params_by_client[tr.client_id] if params_by_client else None
        predictor = _stream_predictor(cfg, cfg.predictor, tr, session_tput,
                                      spec, params)
        result = stream.simulate_session(session_tput, predictor, scfg, coeffs)
        b = result.breakdown
        qoe_rows.append(
            f"{tr.client_id},{_fmt(b.qoe)},{_fmt(b.quality)},{_fmt(b.stall)},"
            f"{_fmt(b.switch)},{_fmt(b.latency)},{_fmt(b.skip)},"
            f"{1 if result.truncated else 0}")
        breakdowns[tr.client_id] = {
            "qoe": b.qoe, "quality": b.quality, "stall": b.stall,
            "switch": b.switch, "latency": b.latency, "skip": b.skip,
            "n_segments": b.n_segments, "truncated": result.truncated,
            "played_time": result.played_time,
            "stall_time": result.stall_time,
            "skip_wait_time": result.skip_wait_time}
        ev_rows = ["time,kind,chunk,rate_kbps,buffer,latency"]
        for t, kind, chunk, rate, buf, lat in result.events:
            ev_rows.append(f"{_fmt(t)},{kind},{chunk},{_fmt(rate)},"
                           f"{_fmt(buf)},{_fmt(lat)}")
        _atomic_write(out / "events" / f"{tr.client_id}.csv",
                      "\n".join(ev_rows) + "\n")
    _atomic_write(out / "qoe.csv", "\n".join(qoe_rows) + "\n")
    _atomic_write(out / "qoe.json",
                  json.dumps({"predictor": cfg.predictor,
                              "sessions": breakdowns},
                             sort_keys=True, indent=2) + "\n")
    return 0


def run(config_path, subcommand, out=None, seed=None, workers=None):
    """Entry shared by the CLI and tests; returns a process exit code."""
    overrides = {"out": out, "seed": seed, "workers": workers}
    try:
        cfg = _parse_config(config_path, overrides)
    except ConfigError as exc:
        print(f"config validation failed:\n{exc}", file=sys.stderr)
        return 1
    try:
        if subcommand == "federate":
            return cmd_federate(cfg)
        if subcommand == "analyze":
            return cmd_analyze(cfg)
        if subcommand == "stream":
            return cmd_stream(cfg)
        if subcommand == "all":
            code = cmd_federate(cfg)
            if code == 0:
                code = cmd_analyze(cfg)
            if code == 0:
                code = cmd_stream(cfg)
            return code
        print(f"unknown subcommand {subcommand!r}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config validation failed:\n{exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="fedcast",
        description="Federated throughput forecasting and live-streaming QoE")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in ("federate", "analyze", "stream", "all"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
    args = parser.parse_args(argv)
    return run(args.config, args.subcommand, out=args.out, seed=args.seed,
               workers=args.workers)


if __name__ == "__main__":
    sys.exit(main())
