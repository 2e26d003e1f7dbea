import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lsts import kernels as K
from lsts._jit import USING_NUMBA, py_func
from lsts.env_core import dag_arrays
from lsts.student import subtask_outcomes


def _rng(seed):
    return K.rng_state(np.random.SeedSequence(seed).generate_state(2))


# ---------------------------------------------------------------- generator


def test_rng_uniform_range_and_repeatability():
    a, b = _rng(3), _rng(3)
    xs = [K.rng_uniform(a) for _ in range(10_000)]
    assert xs == [K.rng_uniform(b) for _ in range(10_000)]
    assert 0.0 < min(xs) and max(xs) < 1.0
    assert abs(np.mean(xs) - 0.5) < 0.01


def test_rng_below_uniform():
    r = _rng(4)
    counts = np.bincount([K.rng_below(r, 6) for _ in range(60_000)], minlength=6)
    assert counts.min() > 9_500 and counts.max() < 10_500


def test_rng_state_never_zero():
    for words in [(0, 0), (2**32 - 1, 2**32 - 1), (2147483562, 2147483398)]:
        s = K.rng_state(words)
        assert 1 <= s[0] < 2147483563 and 1 <= s[1] < 2147483399


# ---------------------------------------------------------------- hash table


@settings(max_examples=100, deadline=None)
@given(st.sets(st.integers(0, 2**62), min_size=1, max_size=200))
def test_hash_table_insert_find_rehash(codes):
    keys = np.full(512, K.EMPTY, dtype=np.int64)
    q = np.zeros((512, 2))
    fill = np.zeros(1, dtype=np.int64)
    slots = {c: K.ht_insert(keys, fill, c) for c in codes}
    assert fill[0] == len(codes)
    for c, i in slots.items():
        q[i] = (c % 97, 1.0)
        assert K.ht_find(keys, c) == i
        assert K.ht_insert(keys, fill, c) == i
    assert fill[0] == len(codes)
    keys2 = np.full(1024, K.EMPTY, dtype=np.int64)
    q2 = np.zeros((1024, 2))
    K.ht_rehash(keys, q, keys2, q2, fill)
    assert fill[0] == len(codes)
    for c in codes:
        assert q2[K.ht_find(keys2, c)].tolist() == [c % 97, 1.0]


def test_encode_decode_round_trip(doorkey):
    n_items = 2
    locs = np.empty(2, dtype=np.int64)
    for pos, facing, l0, l1, flags in [(11, 0, 3, 100, 0), (88, 3, 100, 55, 1), (0, 2, 0, 0, 0)]:
        code = K.encode(pos, facing, np.array([l0, l1]), flags, 100, n_items)
        assert K.decode(code, 100, n_items, locs) == (pos, facing, flags)
        assert locs.tolist() == [l0, l1]


# ---------------------------------------------------------------- JIT vs Python


def _policy_arrays(n_actions, cap=1 << 16):
    return np.full(cap, K.EMPTY, dtype=np.int64), np.zeros((cap, n_actions)), np.zeros(1, dtype=np.int64)


@pytest.mark.skipif(not USING_NUMBA, reason="numba disabled")
def test_subtask_kernel_jit_matches_python(fig1b, doorkey):
    out = subtask_outcomes(doorkey, fig1b, fig1b.edge(0, 2))
    runs = []
    for fn in (K.subtask_episode, py_func(K.subtask_episode)):
        keys, q, fill = _policy_arrays(6)
        rng = _rng(9)
        results = []
        for _ in range(40):
            trace = np.zeros(101, dtype=np.int64)
            r = fn(doorkey.kernel_env, out, keys, q, fill, doorkey.start_code, True, 100, 100,
                   0.1, 0.95, 0.3, True, rng, trace)
            results.append((int(r[0]), int(r[1]), bool(r[2]), float(r[3]), trace.tolist()))
        runs.append((results, keys.copy(), q.copy(), rng.copy()))
    (r1, k1, q1, g1), (r2, k2, q2, g2) = runs
    assert r1 == r2
    assert np.array_equal(k1, k2) and np.array_equal(q1, q2) and np.array_equal(g1, g2)


@pytest.mark.skipif(not USING_NUMBA, reason="numba disabled")
@pytest.mark.parametrize("kind", ["lfs", "gsrs", "qrm"])
def test_flat_kernels_jit_match_python(fig1b, doorkey, kind):
    dag = dag_arrays(fig1b, doorkey.atoms)
    fn = {"lfs": K.lfs_episode, "gsrs": K.gsrs_episode, "qrm": K.qrm_episode}[kind]
    runs = []
    for f in (fn, py_func(fn)):
        keys, q, fill = _policy_arrays(6, 1 << 17)
        rng = _rng(2)
        results = []
        for _ in range(5):
            trace = np.zeros(401, dtype=np.int64)
            args = (doorkey.kernel_env, dag.as_tuple(), keys, q, fill, doorkey.start_code, 400, 400,
                    0.1, 0.95, 0.1, True, rng, trace)
            if kind == "lfs":
                args = args + (dag.scratch(),)
            r = f(*args)
            results.append((int(r[0]), bool(r[1]), float(r[2]), trace.tolist()))
        runs.append((results, q.copy()))
    assert runs[0][0] == runs[1][0]
    assert np.array_equal(runs[0][1], runs[1][1])




def _fingerprint_script():
    return (
        "import json\n"
        "from lsts.envs_grid import make_env, data_path\n"
        "from lsts.graph import compile_spec\n"
        "from lsts.spec_lang import parse_spec\n"
        "from lsts.teacher import lsts_run\n"
        "from lsts._jit import USING_NUMBA\n"
        "env = make_env('doorkey')\n"
        "g = compile_spec(parse_spec(data_path('doorkey.spec').read_text()))\n"
        "r = lsts_run(g, env, budget=15000, seed_seq=7)\n"
        "print(json.dumps({'numba': USING_NUMBA, 'total': r.total_interactions,"
        " 'bursts': [[str(b.edge), b.stamp, b.g, b.rate] for b in r.bursts]}))\n"
    )


def _run_fingerprint(disable):
    env = dict(os.environ)
    env.pop("LSTS_DISABLE_NUMBA", None)
    if disable:
        env["LSTS_DISABLE_NUMBA"] = "1"
    out = subprocess.run([sys.executable, "-c", _fingerprint_script()], env=env, capture_output=True,
                         text=True, check=True, timeout=600)
    return json.loads(out.stdout.strip().splitlines()[-1])


def test_fallback_run_is_bit_identical_to_jit():
    jit = _run_fingerprint(disable=False)
    plain = _run_fingerprint(disable=True)
    assert plain["numba"] is False and jit["numba"] is USING_NUMBA
    assert jit["total"] == plain["total"] and jit["bursts"] == plain["bursts"]
