"""Benchmark the numba kernels against the pure-numpy fallbacks.

Usage: python benchmarks/bench_kernels.py [--frames N] [--repeat K]

The same comparison can be forced package-wide by setting
SKELTRAJ_DISABLE_NUMBA=1, which selects the numpy path everywhere.
"""

import argparse
import time

import numpy as np

from skeltraj import kernels
from skeltraj.skeleton import default_model
from skeltraj.synth import synthetic_rig


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--frames", type=int, default=500)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")

    model = default_model()
    rig = synthetic_rig()
    cam = rig.cameras[0]
    rng = np.random.default_rng(0)

    q = np.ascontiguousarray(rng.uniform(-0.3, 0.3, (args.frames, model.n_pose)))
    q[:, 0:3] = rng.uniform([2, 2, 0.3], [9, 4, 1.0], (args.frames, 3))
    pts = np.ascontiguousarray(rng.uniform([0, 0, 0], [12, 6, 1.5],
                                           (args.frames * 20, 3)))
    e = np.ascontiguousarray(rng.uniform(-40, 40, args.frames * 240))
    k1, k2, k3, k4 = cam.dist
    cam_args = (cam.fx, cam.fy, cam.cx, cam.cy, k1, k2, k3, k4,
                np.ascontiguousarray(cam.rotation),
                np.ascontiguousarray(cam.translation))

    cases = [
        ("fk_positions", lambda f: f(q, *model.packed),
         kernels.fk_positions_numba, kernels.fk_positions_numpy),
        ("fk_jacobian", lambda f: f(q, *model.packed),
         kernels.fk_jacobian_numba, kernels.fk_jacobian_numpy),
        ("project_points", lambda f: f(pts, *cam_args),
         kernels.project_points_numba, kernels.project_points_numpy),
        ("project_jacobian", lambda f: f(pts, *cam_args),
         kernels.project_jacobian_numba, kernels.project_jacobian_numpy),
        ("redescending", lambda f: f(e, 3.0, 10.0, 20.0),
         kernels.redescending_numba, kernels.redescending_numpy),
    ]

    print(f"{args.frames} frames, best of {args.repeat}")
    print(f"{'kernel':<18}{'numba':>12}{'numpy':>12}{'speedup':>10}")
    for name, call, f_nb, f_np in cases:
        call(f_nb)  # JIT warm-up
        t_nb = best_of(lambda: call(f_nb), args.repeat)
        t_np = best_of(lambda: call(f_np), args.repeat)
        print(f"{name:<18}{t_nb * 1e3:>10.2f}ms{t_np * 1e3:>10.2f}ms"
              f"{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
