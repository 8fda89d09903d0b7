"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]

Kernel timings call the ``*_nb`` and ``*_np`` functions directly. The full
fit is timed in two subprocesses, one with ``UNDERREPORT_NUMBA=0``, because
the switch is read once at import.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from underreport import _accel, kernels

FIT_SNIPPET = """
import time, warnings
from underreport import _accel
from underreport.estimation import FitOptions, fit
from underreport.model import TABLE2_PARAMS
from underreport.simulate import SimScenario, simulate
warnings.simplefilter("ignore")
data = simulate(SimScenario(TABLE2_PARAMS, t_max=96, seed=1)).series
fit(data, FitOptions(restarts=0))  # warm-up and JIT
t0 = time.perf_counter()
for s in range(3):
    fit(data, FitOptions(seed=s))
print(_accel.USE_NUMBA, (time.perf_counter() - t0) / 3)
"""


def best_of(fn, repeat):
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-7)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def kernel_cases(rng):
    n = 384
    y = rng.uniform(0, 25, n)
    mu1 = rng.uniform(5, 25, n)
    omega = rng.uniform(0.1, 0.9, n)
    ys = np.concatenate([rng.normal(0, 1, 1000), rng.normal(6, 1, 1000)])
    x = rng.standard_normal(2000)
    rho = kernels.acf_np(x, 40)
    return {
        "mixture_loglik (n=384)": lambda k: k["mixture_loglik"](y, mu1, omega, 0.75, 2.0, True),
        "posterior (n=384)": lambda k: k["posterior"](y, mu1, omega, 0.75, 2.0, True),
        "em_two (n=2000, 200 it)": lambda k: k["em_two"](ys, 5.0, 1.0, 2.0, 2.0, 0.5, 1e-300, 200, 1e-6),
        "acf (n=2000, L=40)": lambda k: k["acf"](x, 40),
        "durbin_levinson (L=40)": lambda k: k["durbin_levinson"](rho),
    }


def variant(suffix):
    names = ("mixture_loglik", "posterior", "em_two", "acf", "durbin_levinson")
    return {n: getattr(kernels, f"{n}_{suffix}") for n in names}


def fit_time(numba_on):
    env = dict(os.environ, UNDERREPORT_NUMBA="1" if numba_on else "0")
    out = subprocess.run([sys.executable, "-c", FIT_SNIPPET], env=env, capture_output=True, text=True, check=True)
    used, secs = out.stdout.split()
    return used == "True", float(secs)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-fit", action="store_true")
    args = ap.parse_args()
    if not _accel.HAS_NUMBA:
        sys.exit("numba is not installed; nothing to compare")

    nb, npy = variant("nb"), variant("np")
    print(f"{'kernel':28s} {'numba':>12s} {'numpy':>12s} {'speedup':>8s}")
    for name, call in kernel_cases(np.random.default_rng(0)).items():
        call(nb)  # compile outside the timing
        t_nb = best_of(lambda: call(nb), args.repeat)
        t_np = best_of(lambda: call(npy), args.repeat)
        print(f"{name:28s} {t_nb * 1e6:10.1f}us {t_np * 1e6:10.1f}us {t_np / t_nb:7.1f}x")

    if not args.skip_fit:
        on, t_on = fit_time(True)
        off, t_off = fit_time(False)
        assert on and not off, "environment switch did not take effect"
        print(f"{'full fit (T=96, 4 strata)':28s} {t_on:11.2f}s {t_off:11.2f}s {t_off / t_on:7.1f}x")


if __name__ == "__main__":
    main()
