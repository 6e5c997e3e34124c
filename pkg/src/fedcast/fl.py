"""Federated orchestration: sampling, local training dispatch, aggregation.

FedAvg averages everything (batch-norm state included) weighted by client
sample counts; FedProx is FedAvg plus the client-side proximal objective;
FedBN averages everything except parameters tagged is_batchnorm, which
never leave their client.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .analysis import EvalPair, r2_score, mse
from .models import ParamSet, TrainingDiverged, init_model, local_train, \
    predict_trace
from .preprocess import build_windows, filter_trace, fit_scaler, apply_scaler, \
    split_train_test

FEDAVG = "FEDAVG"
FEDPROX = "FEDPROX"
FEDBN = "FEDBN"


class FLError(ValueError):
    pass


@dataclass
class StrategyKind:
    kind: str
    mu: float = 0.0

    def __post_init__(self):
        if self.kind not in (FEDAVG, FEDPROX, FEDBN):
            raise FLError(f"unknown strategy {self.kind!r}")
        if self.kind == FEDPROX and self.mu <= 0:
            raise FLError("FEDPROX requires mu > 0")
        if self.kind != FEDPROX and self.mu != 0:
            raise FLError("mu is only meaningful for FEDPROX")


@dataclass
class RoundConfig:
    strategy: StrategyKind
    total_rounds: int = 100
    participation_fraction: float = 0.85
    seed: int = 0
    aggregate_running_stats: bool = True

    def __post_init__(self):
        if not 0 < self.participation_fraction <= 1:
            raise FLError("participation_fraction must be in (0, 1]")
        if self.total_rounds < 0:
            raise FLError("total_rounds must be >= 0")


@dataclass(eq=False)
class ClientHandle:
    client_id: str
    train: list
    test: list                  # eval windows, stride = eval_stride
    params: ParamSet = None
    scaler: object = None       # maps scaled throughput back to Mbps
    dataset_tag: str = ""

    @property
    def n_samples(self):
        return len(self.train)


@dataclass
class RoundReport:
    round_index: int
    participants: list
    diverged: list
    metrics: dict               # client_id -> (r2, mse)
    mean_r2: float
    var_r2: float

    def rows(self):
        for cid in sorted(self.metrics):
            r2, m = self.metrics[cid]
            yield (self.round_index, cid, r2, m,
                   1 if cid in self.participants else 0)


def build_client(trace, pre_cfg, wc, train_ratio=0.8, scaler=None):
    """Filter, scale (fit on the train prefix only) and window one trace."""
    filtered = filter_trace(trace, pre_cfg)
    probe = build_windows(filtered, wc, stride=wc.train_stride)
    if len(probe) < 2:
        raise FLError(f"client {trace.client_id}: too few windows")
    n_train = int(len(probe) * train_ratio)
    if n_train < 1 or n_train >= len(probe):
        raise FLError(f"client {trace.client_id}: degenerate split")
    boundary_anchor = probe[n_train - 1].anchor
    if scaler is None:
        scaler = fit_scaler(filtered, pre_cfg,
                            fit_rows=boundary_anchor + wc.horizon + 1)
    scaled = apply_scaler(filtered, scaler)
    windows = build_windows(scaled, wc, stride=wc.train_stride)
    train, test = split_train_test(windows, train_ratio)
    first_test_anchor = test[0].anchor
    eval_windows = [s for s in build_windows(scaled, wc, stride=wc.eval_stride)
                    if s.anchor >= first_test_anchor] or test
    return ClientHandle(client_id=trace.client_id, train=train,
                        test=eval_windows, scaler=scaler,
                        dataset_tag=trace.dataset_tag)


def sample_clients(clients, fraction, rng):
    """ceil(fraction * K) distinct clients, uniform without replacement."""
    if not clients:
        raise FLError("no clients to sample from")
    if not 0 < fraction <= 1:
        raise FLError("fraction must be in (0, 1]")
    k = math.ceil(fraction * len(clients) - 1e-9)
    k = min(max(k, 1), len(clients))
    idx = rng.choice(len(clients), size=k, replace=False)
    return [clients[i] for i in sorted(idx)]


def _check_structures(paramsets):
    first = paramsets[0]
    for other in paramsets[1:]:
        if not first.same_structure(other):
            raise FLError("structural mismatch between client parameters")


def aggregate_fedavg(updates):
    """Sample-count-weighted mean of every parameter, BN state included."""
    if not updates:
        raise FLError("no updates to aggregate")
    paramsets = [p for p, _ in updates]
    _check_structures(paramsets)
    total = float(sum(n for _, n in updates))
    if total <= 0:
        raise FLError("total sample count must be positive")
    out = paramsets[0].copy()
    for i, (name, t, _) in enumerate(out.entries):
        acc = np.zeros_like(t.data)
        for ps, n in updates:
            acc += (n / total) * ps.entries[i][1].data
        t.data = acc
    return out


def aggregate_fedbn(updates):
    """FedAvg on non-BN parameters; BN blocks return to their owners.

    Returns (per_client ParamSets, shared ParamSet holding only the
    aggregated non-BN entries).
    """
    if not updates:
        raise FLError("no updates to aggregate")
    paramsets = [p for p, _ in updates]
    _check_structures(paramsets)
    averaged = aggregate_fedavg(updates)
    shared = ParamSet([(n, t, b) for n, t, b in averaged.entries if not b])

    per_client = []
    for ps, _ in updates:
        merged = ps.copy()
        for i, (name, t, is_bn) in enumerate(merged.entries):
            if not is_bn:
                t.data = averaged.entries[i][1].data.copy()
        per_client.append(merged)
    return per_client, shared


def _broadcast_for(client, global_params, strategy):
    out = global_params.copy()
    if strategy.kind == FEDBN and client.params is not None:
        for i, (name, t, is_bn) in enumerate(out.entries):
            if is_bn:
                t.data = client.params.entries[i][1].data.copy()
    return out


def evaluate_client(spec, client):
    yhat, y = predict_trace(spec, client.params, client.test)
    if client.scaler is not None:
        yhat = client.scaler.inverse_throughput(yhat)
        y = client.scaler.inverse_throughput(y)
    pair = EvalPair(y_true=y, y_pred=yhat)
    return r2_score(pair), mse(pair)


def run_round(clients, global_params, rc, tc, spec, round_index=0):
    """One federated round: broadcast, local training, aggregate, evaluate."""
    strategy = rc.strategy
    rng = np.random.default_rng((rc.seed, 7701, round_index))
    participants = sample_clients(clients, rc.participation_fraction, rng)
    part_ids = [c.client_id for c in participants]

    index_of = {id(c): i for i, c in enumerate(clients)}
    updates = []
    trained_bn = {}
    diverged = []
    for client in participants:
        broadcast = _broadcast_for(client, global_params, strategy)
        anchor = broadcast.copy() if strategy.kind == FEDPROX else None
        cfg = tc
        if strategy.kind == FEDPROX:
            cfg = replace(tc, prox_mu=strategy.mu)
        train_rng = np.random.default_rng((rc.seed, 7702, round_index,
                                           index_of[id(client)]))
        try:
            new_params, _ = local_train(spec, broadcast, client.train, cfg,
                                        global_anchor=anchor, rng=train_rng)
        except TrainingDiverged:
            diverged.append(client.client_id)
            continue
        updates.append((new_params, client.n_samples))
        trained_bn[client.client_id] = new_params

    if not updates:
        raise FLError(f"round {round_index}: every participant diverged")

    if strategy.kind == FEDBN or not rc.aggregate_running_stats:
        local_tags = _local_entry_mask(global_params, strategy, rc)
        new_global = aggregate_fedavg(updates)
        # restore global entries that must not be averaged
        for i, (name, t, _) in enumerate(new_global.entries):
            if local_tags[i]:
                t.data = global_params.entries[i][1].data.copy()
        for client in clients:
            merged = new_global.copy()
            source = trained_bn.get(client.client_id, client.params)
            if source is not None:
                for i, keep_local in enumerate(local_tags):
                    if keep_local:
                        merged.entries[i][1].data = \
                            source.entries[i][1].data.copy()
            client.params = merged
    else:
        new_global = aggregate_fedavg(updates)
        for client in clients:
            client.params = new_global.copy()

    metrics = {}
    r2s = []
    for client in clients:
        r2, m = evaluate_client(spec, client)
        metrics[client.client_id] = (r2, m)
        r2s.append(r2)
    report = RoundReport(round_index=round_index, participants=part_ids,
                         diverged=diverged, metrics=metrics,
                         mean_r2=float(np.mean(r2s)),
                         var_r2=float(np.var(r2s)))
    return new_global, report


def _local_entry_mask(params, strategy, rc):
    """True for entries that stay client-local instead of being averaged."""
    mask = []
    for name, t, is_bn in params.entries:
        if strategy.kind == FEDBN:
            mask.append(is_bn)
        elif not rc.aggregate_running_stats:
            mask.append(is_bn and not t.requires_grad)
        else:
            mask.append(False)
    return mask


def run_experiment(clients, rc, tc, spec, report_sink=None):
    """rc.total_rounds sequential rounds from a fresh seeded global model."""
    if not clients:
        raise FLError("need at least one client")
    global_params = init_model(spec, seed=(rc.seed, 7700))
    for client in clients:
        client.params = global_params.copy()
    reports = []
    for r in range(rc.total_rounds):
        global_params, report = run_round(clients, global_params, rc, tc,
                                          spec, round_index=r)
        reports.append(report)
        if report_sink is not None:
            report_sink(report)
    return reports, global_params
