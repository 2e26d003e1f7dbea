import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lsts import kernels as K
from lsts.env_core import (
    DagTracker,
    SubTaskEnv,
    dag_arrays,
    make_subtask_env,
    outcome_table,
    run_episode,
    scale_bonus,
    subtask_reward,
    track,
)
from lsts.envs_grid import GridEnv, parse_layout
from lsts.graph import AbstractGraph, compile_spec, subtask_of
from lsts.spec_lang import Lit, parse_spec

from oracles import grid_oracle_step, random_policy_success

OPEN3 = """\
#####
#A..#
#...#
#..G#
#####
A@E
"""


def open_grid():
    return GridEnv(parse_layout(OPEN3), ("g",), ("forward", "left", "right"), {}, {},
                   (None, "g", None, None, None, None), name="open3")


def goal_task(env, budget=20):
    g = compile_spec(parse_spec("achieve g"))
    return SubTaskEnv(env, subtask_of(g, g.edges[0]), budget)


# ---------------------------------------------------------------- tracking


def test_track_moves_along_guard(fig1b):
    t = DagTracker(fig1b)
    assert track(t, {"k2"}) == 2
    assert t.history == [0, 2]


def test_track_stays_without_guard(fig1b):
    t = DagTracker(fig1b)
    assert track(t, set()) == 0
    assert track(t, {"k2", "l"}) == 0


def test_track_overlap_takes_lowest_dst():
    g = AbstractGraph.build(3, [(0, 2, Lit("a")), (0, 1, Lit("a"))], [1, 2])
    t = DagTracker(g)
    assert track(t, {"a"}) == 1


# ---------------------------------------------------------------- reward


def test_subtask_reward_values():
    assert subtask_reward(True, 100, 100) == pytest.approx(0.1)
    assert subtask_reward(True, 0, 100) == 1.0
    assert subtask_reward(False, 37, 100) == 0.0
    with pytest.raises(ValueError):
        subtask_reward(True, 101, 100)


@given(st.booleans(), st.integers(0, 100))
def test_subtask_reward_range(ok, steps):
    r = subtask_reward(ok, steps, 100)
    assert (0.1 <= r <= 1.0) if ok else r == 0.0


# ---------------------------------------------------------------- episodes


def test_scripted_one_step_goal():
    env = open_grid()
    # agent one cell west of the goal, facing east
    code = env.encode(env.decode(env.start_code).__class__(2, 3, "E", None, False, (), False, (False, False)))
    ep = run_episode(goal_task(env), lambda s: 0, start=code)
    assert (ep.ret, ep.success, ep.steps) == (pytest.approx(1 - 0.9 / 20), True, 1)


def test_avoid_region_fails(fig1b, doorkey):
    # Task(q0,q1) avoids !l&k2: picking up key 2 ends the episode with 0
    env = make_subtask_env(doorkey, fig1b, fig1b.edge(0, 1))
    lay = doorkey.layout
    kx, ky = lay.xy(lay.item_cell("key2"))
    s = doorkey.decode(doorkey.start_code)
    start = doorkey.encode(s.__class__(kx, ky + 1, "N", None, False, s.item_cells))
    ep = run_episode(env, lambda _: 3, start=start)
    assert (ep.ret, ep.success, ep.steps) == (0.0, False, 1)


def test_budget_exhaustion_fails():
    env = goal_task(open_grid(), budget=7)
    ep = run_episode(env, lambda s: 1)  # spin in place
    assert (ep.success, ep.steps, ep.ret) == (False, 7, 0.0)
    assert len(ep.trace) == 8


def test_base_terminal_without_success_fails(fig1b, doorkey):
    env = make_subtask_env(doorkey, fig1b, fig1b.edge(0, 2))
    lay = doorkey.layout
    lx, ly = lay.xy(lay.cells_of(K.CELL_LAVA)[0])
    s = doorkey.decode(doorkey.start_code)
    start = doorkey.encode(s.__class__(lx + 1, ly, "W", None, False, s.item_cells))
    ep = run_episode(env, lambda _: 0, start=start)
    assert not ep.success and ep.steps == 1 and "l" in ep.trace[-1]


def _oracle_open3():
    rows = OPEN3.splitlines()[:-1]
    cells = {(x, y): ("." if ch == "A" else ch) for y, r in enumerate(rows) for x, ch in enumerate(r)}
    start = (1, 1, 0, None, (), False, False, False, False)
    step = lambda s, a: grid_oracle_step(5, cells, {}, s, a)[0]
    return start, step, lambda s: cells[(s[0], s[1])] == "G"


def test_random_policy_matches_markov_chain():
    start, step, is_goal = _oracle_open3()
    exact = random_policy_success(step, start, is_goal, lambda s: False, 3, 20)
    env = goal_task(open_grid(), 20)
    rng = np.random.default_rng(0)
    n = 4000
    wins = sum(run_episode(env, lambda s: int(rng.integers(3))).success for _ in range(n))
    assert abs(wins / n - exact) < 0.02
    assert 0.1 < exact < 0.95  # a non-trivial check


def test_kernel_episode_agrees_with_reference_driver():
    """The kernel and the pure-Python driver classify identical action streams the same way."""
    env = open_grid()
    task = goal_task(env, 20)
    for seed in range(30):
        rng = np.random.default_rng(seed)
        actions = rng.integers(3, size=20)
        it = iter(actions)
        ep = run_episode(task, lambda s: int(next(it)))
        s, ok, steps = env.start_code, False, 0
        for a in actions:
            s, reason = env.transition(s, int(a))
            steps += 1
            o = task.outcome[env.label_mask(s)]
            if o != K.OUT_CONTINUE or reason:
                ok = o == K.OUT_SUCCESS
                break
        assert (ep.success, ep.steps) == (ok, steps)


def test_successful_episode_moves_tracker_one_edge(fig1b, doorkey):
    # a successful Task(q0,q2) trace moves the tracker q0 -> q2 and nowhere else
    env = make_subtask_env(doorkey, fig1b, fig1b.edge(0, 2))
    lay = doorkey.layout
    kx, ky = lay.xy(lay.item_cell("key2"))
    s = doorkey.decode(doorkey.start_code)
    start = doorkey.encode(s.__class__(kx, ky + 1, "N", None, False, s.item_cells))
    ep = run_episode(env, lambda _: 3, start=start)
    assert ep.success
    t = DagTracker(fig1b)
    for labels in ep.trace:
        track(t, labels)
    assert t.history == [0, 2]


def test_determinism_same_seed():
    env = goal_task(open_grid(), 20)
    def go(seed):
        rng = np.random.default_rng(seed)
        ep = run_episode(env, lambda s: int(rng.integers(3)), seed=seed)
        return ep.ret, ep.success, ep.steps
    assert go(5) == go(5)


# ---------------------------------------------------------------- compiled forms


def test_outcome_table_classes(fig1b, doorkey):
    tab = outcome_table(subtask_of(fig1b, fig1b.edge(0, 1)), doorkey.atoms)
    bit = {a: 1 << i for i, a in enumerate(doorkey.atoms)}
    assert tab[bit["k1"]] == K.OUT_SUCCESS
    assert tab[bit["k2"]] == K.OUT_FAIL
    assert tab[bit["k1"] | bit["l"]] == K.OUT_FAIL
    assert tab[0] == K.OUT_CONTINUE


def test_dag_arrays_layout(fig1b, doorkey):
    d = dag_arrays(fig1b, doorkey.atoms)
    assert d.out_start.tolist() == [0, 2, 3, 4, 5, 5]
    assert d.bonus.tolist() == pytest.approx([1 / 4, 1 / 3, 1 / 3, 1 / 2, 1.0])
    assert d.is_final.tolist() == [False, False, False, False, True]


def test_scale_bonus():
    assert scale_bonus(2) == pytest.approx(1 / 3)
    assert scale_bonus(0) == 1.0
    assert scale_bonus(float("inf")) == 0.0
