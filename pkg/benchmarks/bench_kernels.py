"""Compare numba-compiled kernels against the plain-Python fallback.

Usage: python benchmarks/bench_kernels.py [--episodes N] [--budget N]

Part 1 times whole-task training episodes through the compiled kernel and
through its ``py_func``.  Part 2 runs one LSTS trial end to end in two
subprocesses, with and without LSTS_DISABLE_NUMBA=1.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

import lsts.baselines as B
from lsts import kernels as K
from lsts._jit import USING_NUMBA, py_func
from lsts.envs_grid import make_env
from lsts.graph import compile_spec
from lsts.spec_lang import parse_spec

SPEC = "((achieve k1 or achieve k2) ; achieve d ; achieve g) ensuring !l"

TRIAL = """
import time
from lsts.envs_grid import make_env
from lsts.graph import compile_spec
from lsts.spec_lang import parse_spec
from lsts.teacher import TeacherParams, lsts_run
g = compile_spec(parse_spec({spec!r}))
env = make_env("doorkey")
lsts_run(g, env, TeacherParams(), 5000, 0)  # warm-up and compilation
t = time.perf_counter()
r = lsts_run(g, env, TeacherParams(), {budget}, 0)
print(time.perf_counter() - t, r.total_interactions)
"""


def time_episodes(kind: str, fn, episodes: int) -> float:
    B._FLAT_KERNELS[kind] = fn
    learner = B.FlatLearner(kind, compile_spec(parse_spec(SPEC)), make_env("doorkey"), B.BaselineParams())
    rng = np.array([12345, 67890], dtype=np.int64)
    learner.episode(learner.horizon, True, rng)  # compile outside the timed region
    t = time.perf_counter()
    for _ in range(episodes):
        learner.episode(learner.horizon, True, rng)
    return time.perf_counter() - t


def time_trial(budget: int, disable: bool) -> tuple[float, int]:
    env = dict(os.environ)
    env.pop("LSTS_DISABLE_NUMBA", None)
    if disable:
        env["LSTS_DISABLE_NUMBA"] = "1"
    out = subprocess.run([sys.executable, "-c", TRIAL.format(spec=SPEC, budget=budget)],
                         env=env, capture_output=True, text=True, check=True).stdout.split()
    return float(out[0]), int(out[1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--episodes", type=int, default=200)
    ap.add_argument("--budget", type=int, default=100_000)
    args = ap.parse_args()
    if not USING_NUMBA:
        sys.exit("numba is disabled or missing; nothing to compare")

    print(f"{'kernel':<10} {'jit s':>9} {'python s':>9} {'speed-up':>9}   ({args.episodes} episodes)")
    for kind in ("lfs", "gsrs", "qrm"):
        jit_fn = getattr(K, f"{kind}_episode")
        tj = time_episodes(kind, jit_fn, args.episodes)
        tp = time_episodes(kind, py_func(jit_fn), args.episodes)
        B._FLAT_KERNELS[kind] = jit_fn
        print(f"{kind:<10} {tj:>9.3f} {tp:>9.3f} {tp / tj:>8.1f}x")

    tj, nj = time_trial(args.budget, False)
    tp, np_ = time_trial(args.budget, True)
    assert nj == np_, "fallback diverged from the compiled kernels"
    print(f"lsts trial, budget {args.budget}: jit {tj:.2f}s, python {tp:.2f}s, {tp / tj:.1f}x "
          f"({nj} interactions in both)")


if __name__ == "__main__":
    main()
