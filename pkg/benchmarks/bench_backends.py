"""Compare the compiled and pure-Python kernel backends.

Usage::

    python benchmarks/bench_backends.py [--repeat 5] [--solve]

Each kernel is timed on identical inputs with both backends and the maximum
absolute difference of the outputs is reported next to the speed-up.  With
``--solve`` a full level-0 scattering solve of the unit cube is also timed in
two subprocesses, one of them with ``IGAUQ_PURE=1``.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from igauq import kernels
from igauq.geometry import cube


def _inputs(rng, n_t=400, n_s=2000, n_pair=20000, n_tensor=(64, 36)):
    def pts(n):
        return rng.normal(size=(n, 3))

    def nrm(n):
        v = rng.normal(size=(n, 3))
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    B, Q = n_tensor
    return {
        "potential": (pts(n_t) * 5, nrm(n_t), pts(n_s), nrm(n_s)),
        "pair": (pts(n_pair), nrm(n_pair), pts(n_pair) + 3.0, nrm(n_pair)),
        "tensor": (
            rng.normal(size=(B, Q, 3)), nrm(B * Q).reshape(B, Q, 3),
            rng.normal(size=(B, Q, 3)) + 3.0, nrm(B * Q).reshape(B, Q, 3),
        ),
    }


def _cases(data, patch):
    U, V, hom = patch.ku.knots, patch.kv.knots, patch.homogeneous
    pu, pv = patch.degrees
    u = np.linspace(0.0, 1.0, 20000)
    c = kernels._c
    return {
        "potential_matrix (400 x 2000, dlp)": lambda impl: kernels.potential_matrix(
            *data["potential"], 1.0, 1, impl=impl),
        "pair_kernels (20000 pairs)": lambda impl: impl.pair_kernels(
            *(c(a) for a in data["pair"]), 1.0),
        "tensor_kernels (64 x 36 x 36)": lambda impl: impl.tensor_kernels(
            *(c(a) for a in data["tensor"]), 1.0),
        "nurbs_eval (20000 points)": lambda impl: kernels.nurbs_eval(
            U, V, pu, pv, hom, u, u[::-1], impl=impl),
    }


def _max_diff(a, b):
    if isinstance(a, tuple):
        return max(_max_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def bench_kernels(repeat):
    impls = kernels.backends()
    if "compiled" not in impls:
        print("compiled backend not available; only the Python backend is timed")
    data = _inputs(np.random.default_rng(0))
    patch = cube().patches[0]
    rows = []
    for name, fn in _cases(data, patch).items():
        times = {k: min(timeit.repeat(lambda: fn(m), number=1, repeat=repeat)) for k, m in impls.items()}
        diff = _max_diff(fn(impls["python"]), fn(impls["compiled"])) if "compiled" in impls else float("nan")
        rows.append((name, times.get("python"), times.get("compiled"), diff))
    print(f"{'kernel':38s} {'python [s]':>11s} {'compiled [s]':>13s} {'speed-up':>9s} {'max diff':>10s}")
    for name, tp, tc, diff in rows:
        speed = tp / tc if tc else float("nan")
        tc_s = f"{tc:13.4f}" if tc is not None else f"{'-':>13s}"
        print(f"{name:38s} {tp:11.4f} {tc_s} {speed:9.1f} {diff:10.2e}")


_SOLVE = (
    "import time; from igauq import kernels; from igauq.geometry import cube;"
    "from igauq.bem import WaveContext, solve;"
    "g = cube(); ctx = WaveContext(1.0, (0, 0, 1)); t = time.perf_counter();"
    "solve(g, ctx, 2, 0); print(kernels.BACKEND, time.perf_counter() - t)"
)


def bench_solve():
    for pure in ("0", "1"):
        env = dict(os.environ, IGAUQ_PURE=pure)
        out = subprocess.run([sys.executable, "-c", _SOLVE], env=env, capture_output=True, text=True, check=True)
        backend, seconds = out.stdout.split()
        print(f"cube level-0 solve with {backend:8s} backend: {float(seconds):.3f} s")


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--solve", action="store_true", help="also time a full level-0 solve")
    args = parser.parse_args(argv)
    bench_kernels(args.repeat)
    if args.solve:
        bench_solve()


if __name__ == "__main__":
    main()
