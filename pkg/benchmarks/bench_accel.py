#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallbacks.

Run: python benchmarks/bench_accel.py
The numpy path is what you get with FEDCAST_NO_NUMBA=1.
"""

import time

import numpy as np

from fedcast import accel


def _time(fn, *args, repeat=5, **kwargs):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args, **kwargs)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_mpc():
    rng = np.random.default_rng(0)
    ladder = np.array([300.0, 500.0, 1000.0, 2000.0, 3000.0, 6000.0])
    q_table = np.log(ladder / ladder[0])
    case = dict(ladder_kbps=ladder, q_table=q_table, buffer0=1.5,
                latency0=2.2, prev_idx=3, rtt=0.08, chunk_dur=0.2,
                chunks_per_seg=5, mu1=0.2, mu2=6.0, mu3=1.0, mu4=0.8,
                omega=4.0)
    print("mpc_rollout_scores (6 rungs):")
    for horizon in (4, 5, 6):
        pred = rng.uniform(200, 8000, horizon)
        n_seq = len(ladder) ** horizon
        t_np = _time(accel.mpc_rollout_scores_numpy, pred_kbps=pred, **case)
        if accel.NUMBA_ENABLED:
            accel.mpc_rollout_scores(pred_kbps=pred, **case)  # compile once
            t_nb = _time(accel.mpc_rollout_scores, pred_kbps=pred, **case)
            print(f"  horizon {horizon} ({n_seq:6d} sequences): "
                  f"numpy {t_np * 1e3:7.2f} ms | numba {t_nb * 1e3:7.2f} ms "
                  f"| speedup {t_np / t_nb:5.1f}x")
        else:
            print(f"  horizon {horizon} ({n_seq:6d} sequences): "
                  f"numpy {t_np * 1e3:7.2f} ms | numba disabled")


def bench_conv():
    rng = np.random.default_rng(1)
    print("conv2d 3x3 same-padding:")
    for shape in ((32, 1, 6, 16), (32, 8, 6, 16), (128, 8, 16, 24)):
        x = rng.normal(size=shape)
        w = rng.normal(size=(8, shape[1], 3, 3))
        dout = rng.normal(size=(shape[0], 8, shape[2], shape[3]))
        t_np = _time(accel.conv2d_forward_numpy, x, w)
        t_gw_np = _time(accel.conv2d_grad_weight_numpy, x, dout)
        if accel.NUMBA_ENABLED:
            accel.conv2d_forward(x, w)
            accel.conv2d_grad_weight(x, dout)
            t_nb = _time(accel.conv2d_forward, x, w)
            t_gw_nb = _time(accel.conv2d_grad_weight, x, dout)
            print(f"  x{shape}: fwd numpy {t_np * 1e3:6.2f} ms | numba "
                  f"{t_nb * 1e3:6.2f} ms | grad_w numpy {t_gw_np * 1e3:6.2f} "
                  f"ms | numba {t_gw_nb * 1e3:6.2f} ms")
        else:
            print(f"  x{shape}: fwd numpy {t_np * 1e3:6.2f} ms | "
                  f"grad_w numpy {t_gw_np * 1e3:6.2f} ms | numba disabled")


def bench_session():
    from fedcast import stream

    rng = np.random.default_rng(2)
    trace = np.clip(6 + 4 * np.sin(np.arange(130) / 6) +
                    rng.normal(0, 1.5, 130), 0.1, None)
    cfg = stream.StreamConfig(session_len=110)
    co = stream.QoECoefficients()
    t = _time(stream.simulate_session, trace, stream.HarmonicMeanPredictor(),
              cfg, co, repeat=3)
    backend = "numba" if accel.NUMBA_ENABLED else "numpy"
    print(f"full 110 s session with MPC ({backend} kernels): {t:.2f} s")


if __name__ == "__main__":
    print(f"numba enabled: {accel.NUMBA_ENABLED} "
          f"(set FEDCAST_NO_NUMBA=1 to force the numpy path)")
    bench_mpc()
    bench_conv()
    bench_session()
