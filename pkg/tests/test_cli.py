"""Config parsing, synthetic generation and the subcommand pipeline."""

import numpy as np
import pytest

from fedcast import cli
from fedcast.analysis import gaussian_kde


BASE_CONFIG = """\
[experiment]
seed = 11
out_dir = {out}

[data]
source = synthetic

[synthetic]
n_clients = 3
length = 160
offset_min = 10
offset_max = 60
period_min = 20
period_max = 40
n_datasets = 1

[preprocess]
filter_window = 3
scaler = minmax
scope = per_client

[window]
history = 5
horizon = 1

[model]
arch = LSTM
hidden = 8

[train]
learning_rate = 0.01
batch_size = 16
local_epochs = 1

[rounds]
strategy = FEDAVG
total_rounds = {rounds}
participation = 1.0

[stream]
session_len = 30
predictor = harmonic
mpc_horizon = 3
"""


def _config(tmp_path, rounds=1, extra=""):
    out = tmp_path / "run"
    cfg = tmp_path / "exp.ini"
    cfg.write_text(BASE_CONFIG.format(out=out, rounds=rounds) + extra)
    return cfg, out


# --- synthetic generator -------------------------------------------------


def test_synthetic_degenerate_constant():
    spec = cli.SyntheticSpec(n_clients=1, length=50, offset_min=20,
                             offset_max=20, amp_frac=0.0, noise_frac=0.0)
    tr = cli.generate_synthetic(spec, seed=0)[0]
    assert np.allclose(tr.throughput(), 20.0)


def test_synthetic_deterministic():
    spec = cli.SyntheticSpec(n_clients=2, length=40)
    a = cli.generate_synthetic(spec, seed=5)
    b = cli.generate_synthetic(spec, seed=5)
    for ta, tb in zip(a, b):
        assert np.array_equal(ta.throughput(), tb.throughput())
        assert np.array_equal(ta.feature_matrix(), tb.feature_matrix())


def test_synthetic_offsets_separate_kde_modes():
    spec = cli.SyntheticSpec(n_clients=2, length=200, offset_min=10,
                             offset_max=100, noise_frac=0.02, amp_frac=0.1)
    traces = cli.generate_synthetic(spec, seed=1)
    pooled = np.concatenate([tr.throughput() for tr in traces])
    lo, hi = pooled.min(), pooled.max()
    grid = np.linspace(0, 1, 201)
    modes = []
    for tr in traces:
        norm = (tr.throughput() - lo) / (hi - lo)
        _, dens = gaussian_kde(norm, bandwidth=1.0, grid=grid)
        modes.append(grid[np.argmax(dens)])
    assert abs(modes[0] - modes[1]) > 0.3


def test_synthetic_validation():
    with pytest.raises(cli.ConfigError):
        cli.SyntheticSpec(ar_min=1.5)
    with pytest.raises(cli.ConfigError):
        cli.SyntheticSpec(n_datasets=9, n_clients=8)


def test_synthetic_dataset_grouping():
    spec = cli.SyntheticSpec(n_clients=8, length=40, n_datasets=4)
    tags = [tr.dataset_tag for tr in cli.generate_synthetic(spec, seed=0)]
    assert tags == ["synth0", "synth0", "synth1", "synth1",
                    "synth2", "synth2", "synth3", "synth3"]


# --- config validation ----------------------------------------------------


def test_bad_config_lists_every_offending_field(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("""\
[experiment]
seed = 7
[data]
source = nonsense
[model]
arch = GPT
[rounds]
strategy = FEDLOL
participation = 3.0
""")
    code = cli.run(cfg, "federate")
    err = capsys.readouterr().err
    assert code == 1
    assert "source" in err and "arch" in err
    assert "strategy" in err and "participation" in err


def test_missing_config_file(tmp_path):
    assert cli.run(tmp_path / "nope.ini", "federate") == 1


def test_mapping_file_roundtrip(tmp_path):
    mpath = tmp_path / "map.ini"
    mpath.write_text("""\
[columns]
timestamp = ts
throughput = tput
rsrp = signal

[units]
throughput = 0.001

[sentinels]
values = -,NA

[extras]
cqi = cqi_col
""")
    mapping = cli.load_mapping(mpath)
    assert mapping.columns["throughput"] == "tput"
    assert mapping.units["throughput"] == 0.001
    assert mapping.sentinels == ("-", "NA")
    assert mapping.extras == {"cqi": "cqi_col"}


# --- subcommands -----------------------------------------------------------


def test_federate_writes_artifacts(tmp_path):
    cfg, out = _config(tmp_path, rounds=1)
    assert cli.run(cfg, "federate") == 0
    rounds_csv = (out / "rounds.csv").read_text().strip().splitlines()
    assert rounds_csv[0] == "round,client_id,r2,mse,participated"
    assert len(rounds_csv) == 1 + 3  # one round, three clients
    assert (out / "checkpoints" / "global.ckpt").exists()
    assert (out / "checkpoints" / "client_syn00.ckpt").exists()
    assert (out / "summary.json").exists()
    assert (out / "config_echo.ini").exists()


def test_federate_zero_rounds(tmp_path):
    cfg, out = _config(tmp_path, rounds=0)
    assert cli.run(cfg, "federate") == 0
    rounds_csv = (out / "rounds.csv").read_text().strip().splitlines()
    assert rounds_csv == ["round,client_id,r2,mse,participated"]
    import json
    summary = json.loads((out / "summary.json").read_text())
    assert summary["rounds"] == 0
    assert (out / "checkpoints" / "global.ckpt").exists()


def test_analyze_outputs_parse(tmp_path):
    cfg, out = _config(tmp_path)
    assert cli.run(cfg, "analyze") == 0
    kde = (out / "kde.csv").read_text().strip().splitlines()
    assert kde[0] == "client_id,x,density"
    assert len(kde) > 100
    for line in kde[1:5]:
        cid, x, d = line.split(",")
        float(x), float(d)
    corr = (out / "correlations.csv").read_text().strip().splitlines()
    assert corr[0] == "client_id,feature,horizon,rho"
    rows = [l.split(",") for l in corr[1:]]
    assert all(-1.0 <= float(r[3]) <= 1.0 for r in rows)
    # throughput autocorrelation rows exist for each horizon
    assert sum(1 for r in rows if r[1] == "throughput") == 3 * 3


def test_analyze_tolerates_tiny_traces(tmp_path):
    cfg, out = _config(tmp_path)
    text = cfg.read_text().replace("length = 160", "length = 6")
    cfg.write_text(text)
    assert cli.run(cfg, "analyze") == 0
    assert (out / "kde.csv").exists()
    # horizons that do not fit are skipped, the file still parses
    corr = (out / "correlations.csv").read_text().strip().splitlines()
    assert corr[0] == "client_id,feature,horizon,rho"


def test_stream_writes_structured_breakdowns(tmp_path):
    import json
    cfg, out = _config(tmp_path)
    assert cli.run(cfg, "stream") == 0
    doc = json.loads((out / "qoe.json").read_text())
    assert doc["predictor"] == "harmonic"
    assert set(doc["sessions"]) == {"syn00", "syn01", "syn02"}
    sess = doc["sessions"]["syn00"]
    recomputed = (0.2 * sess["quality"] - 6.0 * sess["stall"]
                  - 1.0 * sess["switch"] - 0.8 * sess["latency"]
                  - 1.2 * sess["skip"])
    assert abs(recomputed - sess["qoe"]) < 1e-9


def test_stream_with_harmonic_predictor(tmp_path):
    cfg, out = _config(tmp_path)
    assert cli.run(cfg, "stream") == 0
    qoe = (out / "qoe.csv").read_text().strip().splitlines()
    assert qoe[0] == "client_id,qoe,quality,stall,switch,latency,skip,truncated"
    assert len(qoe) == 4
    events = (out / "events" / "syn00.csv").read_text().strip().splitlines()
    assert events[0] == "time,kind,chunk,rate_kbps,buffer,latency"
    kinds = {l.split(",")[1] for l in events[1:]}
    assert "rate_select" in kinds and "download_done" in kinds


def test_stream_model_predictor_requires_checkpoints(tmp_path):
    cfg, out = _config(tmp_path, extra="\n[stream_override]\n")
    text = cfg.read_text().replace("predictor = harmonic", "predictor = model")
    cfg.write_text(text)
    assert cli.run(cfg, "stream") == 1


def test_all_chains_stages(tmp_path):
    cfg, out = _config(tmp_path, rounds=1)
    assert cli.run(cfg, "all") == 0
    for name in ("rounds.csv", "kde.csv", "correlations.csv", "qoe.csv"):
        assert (out / name).exists()


def test_seed_override(tmp_path):
    cfg, out = _config(tmp_path)
    assert cli.run(cfg, "analyze", seed=99) == 0
    echo = (out / "config_echo.ini").read_text()
    assert "resolved_seed = 99" in echo


def test_main_entry_point(tmp_path):
    cfg, out = _config(tmp_path)
    assert cli.main(["analyze", "--config", str(cfg)]) == 0
