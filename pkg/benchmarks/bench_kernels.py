"""Compare the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints per-call times for each kernel on representative inputs, then the
wall time of generating one two-facade scene under each backend.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from mmwpose import _kernels_py as py

try:
    from mmwpose import _kernels as cy
except ImportError:
    sys.exit("compiled kernels are not built; reinstall with Cython available")


def cases(rng):
    bs, ue = np.array([10.0, 10.0, 5.0]), np.array([20.0, 0.0, 8.0])
    normal = np.array([0.0, 0.0, 1.0])
    pts = np.column_stack([rng.uniform(-10, 10, (2000, 2)), np.zeros(2000)])
    chain = (np.array([0.5, -0.2]), bs, np.array([-1.0, 0.0, 0.0]), normal, np.array([10.0, 5.0]),
             np.array([0.0, 1.0, 0.0]), ue, np.array([0.0, 0.0, 2.0]), 10, 0.8,
             rng.standard_normal((4000, 2)), np.log(rng.random(4000)))
    e = rng.standard_normal((3, 3))
    nu, v = rng.standard_normal((200, 2)), rng.standard_normal((200, 2))
    rot = np.linalg.qr(rng.standard_normal((3, 3)))[0]
    rot *= np.sign(np.linalg.det(rot))
    t = rng.standard_normal(3)
    return {
        "fbeta (beta=10)": lambda m: m.fbeta(10, 0.6),
        "pattern_density x2000": lambda m: m.pattern_density_batch(pts, bs, ue, normal, 10),
        "metropolis_chain 4000 steps": lambda m: m.metropolis_chain(*chain),
        "sampson_batch x200": lambda m: m.sampson_batch(e, nu, v),
        "two_view_depths x200": lambda m: m.two_view_depths(rot, t, nu, v),
    }


SCENE = ("import time; from mmwpose.scene import two_facade_scene; t = time.perf_counter(); "
         "two_facade_scene(0, beta=10, count=100); print(time.perf_counter() - t)")


def scene_time(backend: str) -> float:
    env = dict(os.environ, MMWPOSE_KERNELS=backend)
    out = subprocess.run([sys.executable, "-c", SCENE], env=env, capture_output=True, text=True,
                         check=True)
    return float(out.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    print(f"{'kernel':30s} {'cython':>12s} {'python':>12s} {'speedup':>9s}")
    for name, call in cases(np.random.default_rng(0)).items():
        times = []
        for mod in (cy, py):
            timer = timeit.Timer(lambda: call(mod))
            n, _ = timer.autorange()
            times.append(min(timer.repeat(args.repeat, n)) / n)
        print(f"{name:30s} {times[0] * 1e6:10.1f}us {times[1] * 1e6:10.1f}us {times[1] / times[0]:8.1f}x")

    c, p = scene_time("cython"), scene_time("python")
    print(f"{'two-facade scene (count=100)':30s} {c * 1e3:10.1f}ms {p * 1e3:10.1f}ms {p / c:8.1f}x")


if __name__ == "__main__":
    main()
