"""Time the numpy and numba versions of the per-step kernels.

Run with ``python3 benchmarks/bench_kernels.py [--reps N] [--landmarks K]``.
Also times one full default run under the active backend.
"""

import argparse
import time

import numpy as np

from iekf_slam import kernels
from iekf_slam.sim import SimConfig, run_once


def make_inputs(K, rng):
    n = 3 + 2 * K
    A = rng.standard_normal((n, n))
    P = A @ A.T + np.eye(n)
    landmarks = rng.uniform(-5, 5, (K, 2))
    slots = np.arange(min(K, 5), dtype=np.int64)
    H, _ = kernels.numpy_impl.measurement_jacobian(0.3, np.zeros(2), landmarks, slots, 0, True)
    G = rng.standard_normal((n, 3))
    return {
        "retract2": (0.3, np.vstack((np.zeros((1, 2)), landmarks)), rng.standard_normal(n) * 0.1),
        "predicted_measurements": (0.3, np.zeros(2), landmarks, slots, 0),
        "measurement_jacobian": (0.3, np.zeros(2), landmarks, slots, 0, True),
        "add_process_noise": (P, G, np.diag([3e-3, 2e-4, 0.0])),
        "ekf_covariance_predict": (P, np.array([0.1, -0.2])),
        "kalman_update": (P, H, 0.01 * np.eye(H.shape[0]), rng.standard_normal(H.shape[0])),
        "shift_information": (P, rng.standard_normal((3, n))),
    }


def time_call(fn, args, reps):
    fn(*args)  # warm up / compile
    t = time.perf_counter()
    for _ in range(reps):
        fn(*args)
    return (time.perf_counter() - t) / reps


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--reps", type=int, default=2000)
    p.add_argument("--landmarks", type=int, default=20)
    p.add_argument("--skip-run", action="store_true")
    args = p.parse_args()
    inputs = make_inputs(args.landmarks, np.random.default_rng(0))
    print(f"{'kernel':<24}{'numpy (us)':>12}{'numba (us)':>12}{'speedup':>9}")
    for name, a in inputs.items():
        t_np = time_call(getattr(kernels.numpy_impl, name), a, args.reps)
        t_nb = time_call(getattr(kernels.numba_impl, name), a, args.reps)
        print(f"{name:<24}{t_np * 1e6:>12.2f}{t_nb * 1e6:>12.2f}{t_np / t_nb:>9.2f}")
    if not args.skip_run:
        cfg = SimConfig()
        run_once(cfg, seed=0)
        t = time.perf_counter()
        run_once(cfg, seed=1)
        print(f"one default run, three filters, backend={kernels.BACKEND}: {time.perf_counter() - t:.3f} s")


if __name__ == "__main__":
    main()
