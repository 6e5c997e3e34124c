"""Discrete-event live-streaming simulator with MPC-chunk bitrate control.

Timeline model: the client joins a broadcast that already has
`join_prefetch_max` segments of encoded backlog; it fetches the newest
`start_after` of them and starts playing at their beginning, so steady
latency sits near the playback threshold. Chunks become downloadable only
once encoded (the encoder is real-time), downloads are sequential, and the
download rate at wall time t is the trace throughput at floor(t).

time accounting after playback start: every wall second is exactly one of
played / stalled / skip-recovery. A skip fires when latency exceeds
max_latency; playback jumps forward to restore latency = playback
threshold and the jumped media seconds accrue to the skip penalty eta.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import accel
from . import models


class StreamError(ValueError):
    pass


@dataclass
class StreamConfig:
    ladder_kbps: tuple = (300.0, 500.0, 1000.0, 2000.0, 3000.0, 6000.0)
    segment_len: float = 1.0
    chunks_per_segment: int = 5
    playback_threshold: float = 2.0
    max_latency: float = 5.0
    join_prefetch_max: int = 3
    start_after: int = 2
    rtt_overhead: float = 0.08
    mpc_horizon: int = 5
    session_len: int = 110

    def __post_init__(self):
        self.ladder_kbps = tuple(float(r) for r in self.ladder_kbps)
        if not self.ladder_kbps:
            raise StreamError("empty bitrate ladder")
        if any(b <= a for a, b in zip(self.ladder_kbps, self.ladder_kbps[1:])):
            raise StreamError("ladder must be strictly increasing")
        if self.chunks_per_segment < 1 or self.segment_len <= 0:
            raise StreamError("bad segment/chunk configuration")
        if self.start_after > self.join_prefetch_max:
            raise StreamError("start_after cannot exceed join_prefetch_max")
        if self.start_after < 1 or self.session_len < 1:
            raise StreamError("start_after and session_len must be >= 1")
        if self.max_latency <= self.playback_threshold:
            raise StreamError("max_latency must exceed playback_threshold")
        if self.mpc_horizon < 1:
            raise StreamError("mpc_horizon must be >= 1")

    @property
    def chunk_dur(self):
        return self.segment_len / self.chunks_per_segment


@dataclass
class QoECoefficients:
    mu1: float = 0.2    # perceptible quality
    mu2: float = 6.0    # stall seconds
    mu3: float = 1.0    # quality switches
    mu4: float = 0.8    # latency penalty psi(l)
    mu5: float = 1.2    # skipped media seconds
    omega: float = 4.0  # latency sensitivity midpoint
    r_min_kbps: float = 300.0

    def __post_init__(self):
        if min(self.mu1, self.mu2, self.mu3, self.mu4, self.mu5) < 0:
            raise StreamError("QoE coefficients must be non-negative")
        if self.r_min_kbps <= 0:
            raise StreamError("R_min must be positive")


def perceptible_quality(rate_kbps, r_min_kbps):
    """Q(r) = ln(r / R_min)."""
    if rate_kbps < r_min_kbps:
        raise StreamError(f"rate {rate_kbps} below R_min {r_min_kbps}")
    return math.log(rate_kbps / r_min_kbps)


def latency_penalty(latency_s, omega):
    """Logistic growth, zeroed at l=0: 1/(1+e^(w-l)) - 1/(1+e^w)."""
    if latency_s < 0:
        raise StreamError("latency must be non-negative")
    return 1.0 / (1.0 + math.exp(omega - latency_s)) - 1.0 / (1.0 + math.exp(omega))


@dataclass
class SessionState:
    wall: float = 0.0
    buffer: float = 0.0
    position: float = 0.0
    latency: float = 0.0
    stall_total: float = 0.0
    next_chunk: int = 0


@dataclass
class SegmentRecord:
    index: int
    quality: float      # mean Q over fully played chunks (0 if none played)
    played_chunks: int
    stall: float        # rebuffer seconds charged to this segment
    latency: float      # latency when the segment began playing / was skipped
    skipped: float      # eta_i: media seconds never played


@dataclass
class QoEBreakdown:
    """Per-segment means of the five components and the scalar score."""
    quality: float
    stall: float
    switch: float
    latency: float
    skip: float
    qoe: float
    n_segments: int


def compute_qoe(records, coeffs):
    """Aggregate per-segment records into the five components + scalar."""
    if not records:
        raise StreamError("empty session")
    n = len(records)
    quality = sum(r.quality for r in records) / n
    stall = sum(r.stall for r in records) / n
    skip = sum(r.skipped for r in records) / n
    latency = sum(latency_penalty(r.latency, coeffs.omega) for r in records) / n
    switch = 0.0
    prev_q = None
    for r in records:
        if r.played_chunks == 0:
            continue
        if prev_q is not None:
            switch += abs(r.quality - prev_q)
        prev_q = r.quality
    switch /= n
    qoe = (coeffs.mu1 * quality - coeffs.mu2 * stall - coeffs.mu3 * switch
           - coeffs.mu4 * latency - coeffs.mu5 * skip)
    return QoEBreakdown(quality=quality, stall=stall, switch=switch,
                        latency=latency, skip=skip, qoe=qoe, n_segments=n)


def mpc_select_bitrate(state, pred_chunk_kbps, cfg, coeffs, prev_rate_idx=-1):
    """Exhaustively score every rate sequence over the horizon.

    Returns the ladder index of the first rate of the argmax sequence;
    ties break toward the lower rate.
    """
    ladder = np.asarray(cfg.ladder_kbps)
    if ladder.size == 0:
        raise StreamError("empty bitrate ladder")
    pred = np.asarray(pred_chunk_kbps, dtype=float)
    if pred.size < cfg.mpc_horizon:
        raise StreamError("predictor output shorter than the MPC horizon")
    if ladder[0] < coeffs.r_min_kbps:
        raise StreamError("ladder bottom below R_min")
    q_table = np.log(ladder / coeffs.r_min_kbps)
    scores = accel.mpc_rollout_scores(
        pred[:cfg.mpc_horizon], ladder, q_table,
        state.buffer, state.latency, prev_rate_idx,
        cfg.rtt_overhead, cfg.chunk_dur, cfg.chunks_per_segment,
        coeffs.mu1, coeffs.mu2, coeffs.mu3, coeffs.mu4, coeffs.omega)
    # sequences are encoded most-significant-digit-first, so the integer
    # division recovers the first chunk's rate; ties already broke low
    best_seq = int(np.argmax(scores))
    return best_seq // len(ladder) ** (cfg.mpc_horizon - 1)


# ---------------------------------------------------------------------------
# predictors
# ---------------------------------------------------------------------------


class ConstantPredictor:
    def __init__(self, mbps):
        self.mbps = float(mbps)

    def __call__(self, observed, horizon):
        return np.full(horizon, self.mbps)


class HarmonicMeanPredictor:
    """Harmonic mean of the most recent positive observations."""

    def __init__(self, window=5):
        self.window = window

    def __call__(self, observed, horizon):
        recent = np.asarray(observed, dtype=float)[-self.window:]
        recent = recent[recent > 0]
        if recent.size == 0:
            return np.zeros(horizon)
        hm = recent.size / np.sum(1.0 / recent)
        return np.full(horizon, hm)


class OraclePredictor:
    """Reads the future of the trace it will be evaluated on."""

    def __init__(self, trace_mbps):
        self.trace = np.asarray(trace_mbps, dtype=float)

    def __call__(self, observed, horizon):
        now = len(observed) - 1
        future = self.trace[now + 1:now + 1 + horizon]
        if future.size < horizon:
            pad = self.trace[-1] if self.trace.size else 0.0
            future = np.concatenate([future, np.full(horizon - future.size, pad)])
        return np.maximum(future, 0.0)


class ModelPredictor:
    """Federated forecaster over the client's scaled feature history."""

    def __init__(self, spec, params, features_scaled, tput_scaled, scaler):
        self.spec = spec
        self.params = params
        self.features = np.asarray(features_scaled, dtype=float)
        self.tput_scaled = np.asarray(tput_scaled, dtype=float)
        self.scaler = scaler
        self.fallback = HarmonicMeanPredictor()

    def __call__(self, observed, horizon):
        now = len(observed) - 1
        h = self.spec.history
        if now < h or now >= self.tput_scaled.size:
            return self.fallback(observed, horizon)
        x = np.concatenate([
            self.features[:, now - h:now + 1],
            self.tput_scaled[None, now - h:now + 1]], axis=0)
        pred_scaled = models.forward(self.spec, self.params, x[None], training=False)[0]
        pred = self.scaler.inverse_throughput(pred_scaled)
        pred = np.maximum(pred, 0.0)
        if pred.size < horizon:
            pred = np.concatenate([pred, np.full(horizon - pred.size, pred[-1])])
        return pred[:horizon]


# ---------------------------------------------------------------------------
# the session loop
# ---------------------------------------------------------------------------

_EPS = 1e-9


@dataclass
class SessionResult:
    breakdown: QoEBreakdown
    records: list
    events: list                # (time, kind, chunk, rate_kbps, buffer, latency)
    played_time: float
    stall_time: float
    skip_wait_time: float
    startup_wall: float
    end_wall: float
    chunk_rates: dict           # chunk index -> ladder index
    truncated: bool


class _Session:
    def __init__(self, trace_mbps, predictor, cfg, coeffs):
        self.trace = np.asarray(trace_mbps, dtype=float)
        if self.trace.size < cfg.session_len:
            raise StreamError(
                f"trace of {self.trace.size}s shorter than session "
                f"{cfg.session_len}s")
        self.predictor = predictor
        self.cfg = cfg
        self.coeffs = coeffs
        self.cd = cfg.chunk_dur
        self.cps = cfg.chunks_per_segment
        self.n_seg = cfg.session_len
        self.media_end = self.n_seg * cfg.segment_len
        self.n_chunks = self.n_seg * self.cps
        self.frontier0 = cfg.join_prefetch_max * cfg.segment_len
        self.position = self.frontier0 - cfg.start_after * cfg.segment_len
        self.next_ci = int(round(self.position / self.cd))
        self.wall = 0.0
        self.free_at = 0.0
        self.started = False
        self.startup_wall = 0.0
        self.in_skip_recovery = False
        self.stalling = False
        self.done = False
        self.truncated = False
        self.prev_rate = -1
        self.played_t = 0.0
        self.stall_t = 0.0
        self.skip_wait_t = 0.0
        self.events = []
        self.chunk_rates = {}
        self.seg_q_sum = np.zeros(self.n_seg)
        self.seg_q_n = np.zeros(self.n_seg, dtype=int)
        self.seg_stall = np.zeros(self.n_seg)
        self.seg_eta = np.zeros(self.n_seg)
        self.seg_latency = np.full(self.n_seg, np.nan)
        self.q_table = np.log(np.asarray(cfg.ladder_kbps) / coeffs.r_min_kbps)

    # --- geometry helpers ---------------------------------------------

    def frontier(self, t=None):
        t = self.wall if t is None else t
        return min(self.frontier0 + t, self.media_end)

    @property
    def buffer(self):
        return max(0.0, self.next_ci * self.cd - self.position)

    @property
    def latency(self):
        return self.frontier() - self.position

    def chunk_avail(self, ci):
        return max(0.0, (ci + 1) * self.cd - self.frontier0)

    def _log(self, kind, chunk=-1, rate=0.0):
        self.events.append((self.wall, kind, chunk, rate, self.buffer,
                            self.latency))

    # --- per-segment bookkeeping ----------------------------------------

    def _seg_of(self, media_pos):
        return min(int(media_pos / self.cfg.segment_len + _EPS), self.n_seg - 1)

    def _sample_latency_here(self):
        seg = self._seg_of(self.position)
        if math.isnan(self.seg_latency[seg]):
            self.seg_latency[seg] = self.latency

    def _mark_played(self, p1, p2):
        # chunks whose media end falls in (p1, p2]
        k1 = int(math.floor(p1 / self.cd + _EPS))
        k2 = int(math.floor(p2 / self.cd + _EPS))
        for k in range(k1 + 1, k2 + 1):
            ci = k - 1
            if ci in self.chunk_rates:
                seg = min(ci // self.cps, self.n_seg - 1)
                self.seg_q_sum[seg] += self.q_table[self.chunk_rates[ci]]
                self.seg_q_n[seg] += 1
        # segments beginning inside (p1, p2] get their latency sample
        s1 = int(math.floor(p1 / self.cfg.segment_len + _EPS))
        s2 = int(math.floor(p2 / self.cfg.segment_len + _EPS))
        for s in range(s1 + 1, s2 + 1):
            if s < self.n_seg and math.isnan(self.seg_latency[s]):
                t_cross = self.wall - (p2 - s * self.cfg.segment_len)
                self.seg_latency[s] = self.frontier(t_cross) - s * self.cfg.segment_len

    # --- state machine ----------------------------------------------------

    def advance_to(self, target):
        """Advance the player clock; returns True if a skip fired."""
        while self.wall < target - _EPS and not self.done:
            if not self.started:
                self.wall = target
                return False
            if self.buffer > _EPS:
                if self.stalling:
                    self.stalling = False
                    self.in_skip_recovery = False
                    self._log("stall_end")
                    self._sample_latency_here()
                t_next = min(target,
                             self.wall + self.buffer,
                             self.wall + (self.media_end - self.position))
                dt = t_next - self.wall
                p1 = self.position
                self.wall = t_next
                self.position += dt
                self.played_t += dt
                self._mark_played(p1, self.position)
                if self.position >= self.media_end - _EPS:
                    self.position = self.media_end
                    self.done = True
                    return False
            else:
                if not self.stalling:
                    self.stalling = True
                    self._log("stall_begin")
                frontier_moving = self.frontier0 + self.wall < self.media_end - _EPS
                if frontier_moving and self.latency >= self.cfg.max_latency - _EPS:
                    self._fire_skip()
                    return True
                if frontier_moving:
                    t_next = min(target, self.wall +
                                 (self.cfg.max_latency - self.latency))
                else:
                    t_next = target
                dt = t_next - self.wall
                if self.in_skip_recovery:
                    self.skip_wait_t += dt
                else:
                    self.stall_t += dt
                    self.seg_stall[self._seg_of(self.position)] += dt
                self.wall = t_next
        return False

    def _fire_skip(self):
        lat_before = self.latency
        raw = self.frontier() - self.cfg.playback_threshold
        new_pos = math.floor(raw / self.cd + _EPS) * self.cd
        if new_pos <= self.position + _EPS:
            return
        # attribute the jumped media (and its latency) per overlapped segment
        s = self._seg_of(self.position)
        while s * self.cfg.segment_len < new_pos - _EPS and s < self.n_seg:
            lo = max(self.position, s * self.cfg.segment_len)
            hi = min(new_pos, (s + 1) * self.cfg.segment_len)
            if hi > lo:
                self.seg_eta[s] += hi - lo
                if math.isnan(self.seg_latency[s]):
                    self.seg_latency[s] = lat_before
            s += 1
        self.position = new_pos
        if self.next_ci * self.cd < new_pos + _EPS:
            self.next_ci = int(round(new_pos / self.cd))
            self.in_skip_recovery = True
        self._log("skip")
        if self.buffer > _EPS:
            self.in_skip_recovery = False
            self._sample_latency_here()

    # --- downloads ---------------------------------------------------------

    def _throughput_at(self, t):
        idx = min(int(t), self.trace.size - 1)
        return self.trace[idx]

    def _download_finish(self, t_start, mbits):
        t = t_start + self.cfg.rtt_overhead
        remaining = mbits
        while remaining > 1e-12:
            sec = int(t)
            tp = self._throughput_at(t)
            if tp <= 0.0:
                if sec >= self.trace.size - 1:
                    return None  # zero throughput through the end of the trace
                t = float(sec + 1)
                continue
            boundary = float(sec + 1)
            span = boundary - t
            need = remaining / tp
            if need <= span + 1e-12:
                return t + need
            remaining -= tp * span
            t = boundary
        return t

    def _predict_chunks(self, t):
        horizon_sec = max(1, int(math.ceil(self.cfg.mpc_horizon * self.cd)))
        now = min(int(t), self.trace.size - 1)
        observed = self.trace[:now + 1]
        pred_sec = np.asarray(self.predictor(observed, horizon_sec), dtype=float)
        if pred_sec.size < horizon_sec:
            raise StreamError("predictor returned too few values")
        if (pred_sec < 0).any():
            raise StreamError("negative predicted throughput")
        idx = np.minimum((np.arange(self.cfg.mpc_horizon) * self.cd).astype(int),
                         horizon_sec - 1)
        return pred_sec[idx] * 1000.0  # Mbps -> Kbps

    def _maybe_start(self):
        if self.started or self.done:
            return
        need = self.cfg.start_after * self.cfg.segment_len
        if self.buffer >= need - _EPS or self.next_ci >= self.n_chunks:
            self.started = True
            self.startup_wall = self.wall
            self._sample_latency_here()
            frontier_moving = self.frontier0 + self.wall < self.media_end - _EPS
            if frontier_moving and self.latency >= self.cfg.max_latency - _EPS:
                self._fire_skip()

    def _terminate(self):
        """Trace exhausted with zero capacity: cut the session here."""
        while self.advance_to(float(self.trace.size)):
            pass
        self.done = True
        self.truncated = True
        pos = self.position
        s = self._seg_of(pos)
        while s < self.n_seg:
            lo = max(pos, s * self.cfg.segment_len)
            hi = (s + 1) * self.cfg.segment_len
            if hi > lo:
                self.seg_eta[s] += hi - lo
                if math.isnan(self.seg_latency[s]):
                    self.seg_latency[s] = self.latency
            s += 1

    def run(self):
        state = SessionState()
        while not self.done:
            if self.next_ci >= self.n_chunks:
                self._maybe_start()
                if self.advance_to(self.wall + (self.media_end - self.position)):
                    continue
                if not self.done and self.position >= self.media_end - _EPS:
                    self.done = True
                continue
            t_req = max(self.free_at, self.chunk_avail(self.next_ci), self.wall)
            ci = self.next_ci
            if self.advance_to(t_req):
                continue
            if self.done:
                break
            pred = self._predict_chunks(t_req)
            state.wall = self.wall
            state.buffer = self.buffer
            state.position = self.position
            state.latency = self.latency
            state.next_chunk = self.next_ci
            rate = mpc_select_bitrate(state, pred, self.cfg, self.coeffs,
                                      self.prev_rate)
            rate_kbps = self.cfg.ladder_kbps[rate]
            self._log("rate_select", chunk=ci, rate=rate_kbps)
            self._log("download_start", chunk=ci, rate=rate_kbps)
            finish = self._download_finish(t_req, rate_kbps * self.cd / 1000.0)
            if finish is None:
                self._terminate()
                break
            interrupted = self.advance_to(finish)
            while interrupted and self.next_ci == ci:
                interrupted = self.advance_to(finish)
            if self.next_ci != ci:
                self.free_at = self.wall  # in-flight chunk abandoned by a skip
                continue
            if self.done:
                break
            self.chunk_rates[ci] = rate
            self.next_ci = ci + 1
            self.free_at = finish
            self.prev_rate = rate
            self._log("download_done", chunk=ci, rate=rate_kbps)
            if self.stalling and self.buffer > _EPS:
                self.stalling = False
                self.in_skip_recovery = False
                self._log("stall_end")
                self._sample_latency_here()
            self._maybe_start()
        return self._result()

    def _result(self):
        # media before the playback start position belongs to the pre-join
        # backlog and is not part of the scored session
        start_seg = int(round((self.frontier0 - self.cfg.start_after
                               * self.cfg.segment_len) / self.cfg.segment_len))
        records = []
        for i in range(start_seg, self.n_seg):
            n = int(self.seg_q_n[i])
            q = self.seg_q_sum[i] / n if n else 0.0
            lat = self.seg_latency[i]
            records.append(SegmentRecord(
                index=i, quality=q, played_chunks=n,
                stall=float(self.seg_stall[i]),
                latency=0.0 if math.isnan(lat) else float(lat),
                skipped=float(self.seg_eta[i])))
        breakdown = compute_qoe(records, self.coeffs)
        return SessionResult(
            breakdown=breakdown, records=records, events=self.events,
            played_time=self.played_t, stall_time=self.stall_t,
            skip_wait_time=self.skip_wait_t,
            startup_wall=self.startup_wall if self.started else self.wall,
            end_wall=self.wall, chunk_rates=self.chunk_rates,
            truncated=self.truncated)


def simulate_session(trace_mbps, predictor, cfg, coeffs):
    """Stream one session over the trace; returns the scored SessionResult."""
    return _Session(trace_mbps, predictor, cfg, coeffs).run()
