"""Compare the numba and numpy paths of the pointwise kernels, then a full flow step.

Usage::

    python benchmarks/bench_kernels.py [--sizes 16 32] [--repeat 7]

Kernel timings run in-process against both kernel tables.  The flow-step
timing runs once per backend in a subprocess, because the backend is chosen
at import time from ``TORUSMAF_BACKEND``.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from torusmaf import _kernels

STEP_SNIPPET = """
import timeit
from torusmaf import _kernels
from torusmaf.scenario import load_scenario
from torusmaf.flow import initial_state, step_etdrk4, step_rk4
sc = load_scenario("kahler-n2").with_overrides(N={N})
p = sc.pencil()
cfg = sc.flow_config(p)
st = initial_state(cfg)
step_rk4(st, cfg.dt0, cfg); step_etdrk4(st, cfg.dt0, cfg)   # warm caches / JIT
rk = min(timeit.repeat(lambda: step_rk4(st, cfg.dt0, cfg), number=3, repeat={R})) / 3
etd = min(timeit.repeat(lambda: step_etdrk4(st, cfg.dt0, cfg), number=3, repeat={R})) / 3
print(_kernels.BACKEND, rk, etd)
"""


def kernel_args(name, shape, rng):
    g11 = 1 + 0.3 * rng.random(shape)
    g22 = 1 + 0.3 * rng.random(shape)
    g12 = 0.2 * (rng.normal(size=shape) + 1j * rng.normal(size=shape))
    if name == "gradform2":
        v = lambda: rng.normal(size=shape) + 1j * rng.normal(size=shape)
        return (g11, g22, g12, v(), v())
    if name == "logratio":
        return (g11, g22)
    return (g11, g22, g12)


def bench(fn, args, repeat):
    fn(*args)  # compile / warm up
    number = 20
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[16, 32])
    ap.add_argument("--repeat", type=int, default=7)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)

    if not _kernels.HAVE_NUMBA:
        print("numba is not available (or TORUSMAF_BACKEND=numpy); only the numpy path can be timed")
    print(f"{'kernel':<10} {'N':>4} {'samples':>9} {'numpy us':>10} {'numba us':>10} {'speedup':>8}")
    for N in args.sizes:
        shape = (N,) * 4
        for name, f_np in _kernels.NUMPY_KERNELS.items():
            a = kernel_args(name, shape, rng)
            t_np = bench(f_np, a, args.repeat)
            if name in _kernels.NUMBA_KERNELS:
                t_nb = bench(_kernels.NUMBA_KERNELS[name], a, args.repeat)
                print(f"{name:<10} {N:>4} {N ** 4:>9} {t_np * 1e6:>10.1f} {t_nb * 1e6:>10.1f} {t_np / t_nb:>8.2f}")
            else:
                print(f"{name:<10} {N:>4} {N ** 4:>9} {t_np * 1e6:>10.1f} {'-':>10} {'-':>8}")

    print()
    print(f"{'backend':<8} {'N':>4} {'rk4 step ms':>12} {'etdrk4 step ms':>15}")
    for N in args.sizes:
        for backend in ("numpy", "numba"):
            env = dict(os.environ, TORUSMAF_BACKEND=backend)
            out = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(N=N, R=max(3, args.repeat // 2))],
                                 env=env, capture_output=True, text=True, check=True).stdout.split()
            got, rk, etd = out[0], float(out[1]), float(out[2])
            label = backend if got == backend else f"{backend}->{got}"
            print(f"{label:<8} {N:>4} {rk * 1e3:>12.2f} {etd * 1e3:>15.2f}")


if __name__ == "__main__":
    main()
