"""numba vs numpy timings of the hot kernels.

    python benchmarks/bench_kernels.py [--nx 96] [--repeat 5]

Both variants are called directly, so the env switch is not needed here; a
final row times a full batched solve in two subprocesses, one with
WAVEDN_DISABLE_NUMBA=1.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from wavedn import kernels
from wavedn._accel import HAVE_NUMBA


def best_of(fn, repeat):
    fn()  # warm up (jit compile)
    ts = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t)
    return min(ts)


def leapfrog_case(nx, K=8, steps=20):
    rng = np.random.default_rng(0)
    up, uc = (rng.standard_normal((K, nx, nx)) + 0j for _ in range(2))
    un = np.zeros_like(uc)
    B0, B1, C = (rng.standard_normal((nx, nx)) + 0j for _ in range(3))
    F = np.zeros((1, 1, 1), complex)
    dx = 1.0 / (nx - 1)
    args = (B0, B1, C, F, (0.5 * dx) ** 2, 1 / dx ** 2, 0.5 / dx, True, False)

    def run(f):
        def go():
            for _ in range(steps):
                f(up, uc, un, *args)
        return go
    return run(kernels._leapfrog_nb), run(kernels._leapfrog_np)


def line_case(nx, P=4000):
    rng = np.random.default_rng(1)
    vals = rng.standard_normal((nx, nx, 64)) + 0j
    lo = np.array([-1.0, -1.0, 0.0])
    d = np.array([2 / (nx - 1), 2 / (nx - 1), 3 / 63])
    z = rng.uniform(-0.5, 0.5, (P, 2))
    om = np.broadcast_to(np.array([0.6, 0.8]), (P, 2)).copy()
    sa, sb = np.zeros(P), np.full(P, 3.0)
    out = np.zeros(P, complex)
    return (lambda: kernels._line_nb(vals, lo, d, z, om, sa, sb, 0.01, out),
            lambda: kernels._line_np(vals, lo, d, z, om, sa, sb, 0.01, out))


def cumline_case(nx, P=2000):
    rng = np.random.default_rng(2)
    vals = rng.standard_normal((nx, nx, 64)) + 0j
    lo = np.array([-1.0, -1.0, 0.0])
    d = np.array([2 / (nx - 1), 2 / (nx - 1), 3 / 63])
    z = rng.uniform(-0.5, 0.5, (P, 2))
    om = np.broadcast_to(np.array([0.6, 0.8]), (P, 2)).copy()
    lv = np.linspace(0, 3, 61)
    out = np.zeros((P, lv.size), complex)
    return (lambda: kernels._cumline_nb(vals, lo, d, z, om, lv, 4, out),
            lambda: kernels._cumline_np(vals, lo, d, z, om, lv, 4, out))


SOLVE = """
import time, numpy as np
from wavedn.experiments import experiment_config
from wavedn.wave_solver import default_dictionary, response_differences
from wavedn.experiments import PerturbationFamily, zero_background
from wavedn.fields import Grid
cfg = experiment_config({nx})
g = Grid.from_config(cfg, nt=60)
cp = PerturbationFamily('lambda').coefficients(g, 1.0)
d = default_dictionary(cfg, 'lambda', 16)
response_differences(cfg, 'lambda', cp, zero_background(g), d[:1])
t = time.perf_counter()
response_differences(cfg, 'lambda', cp, zero_background(g), d)
print(time.perf_counter() - t)
"""


def solve_time(nx, disable):
    env = dict(os.environ)
    if disable:
        env["WAVEDN_DISABLE_NUMBA"] = "1"
    else:
        env.pop("WAVEDN_DISABLE_NUMBA", None)
    out = subprocess.run([sys.executable, "-c", SOLVE.format(nx=nx)], env=env,
                         capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--nx", type=int, default=96)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--no-solve", action="store_true")
    a = ap.parse_args(argv)
    if not HAVE_NUMBA:
        print("numba not installed; nothing to compare")
        return 0
    print(f"{'kernel':<28}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}")
    for name, case in (("leapfrog x20 (K=8)", leapfrog_case),
                       ("line_integrals (4000)", line_case),
                       ("cumulative_lines (2000)", cumline_case)):
        fnb, fnp = case(a.nx)
        tnb, tnp = best_of(fnb, a.repeat), best_of(fnp, a.repeat)
        print(f"{name:<28}{tnb:12.4f}{tnp:12.4f}{tnp / tnb:10.1f}")
    if not a.no_solve:
        tnb, tnp = solve_time(48, False), solve_time(48, True)
        print(f"{'16 solves + 16 (nx=48)':<28}{tnb:12.4f}{tnp:12.4f}{tnp / tnb:10.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
