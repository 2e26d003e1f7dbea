import numpy as np
import pytest

from lsts.baselines import (
    ALGOS,
    RUNNERS,
    BaselineConfig,
    BaselineParams,
    FlatLearner,
    progress_slope,
    run_dirl,
    run_dirl_c,
    run_gsrs,
    run_lfs,
    run_qrm,
    run_tscl,
)
from lsts.env_core import dag_arrays, scale_bonus
from lsts.envs_grid import GridEnv, parse_layout
from lsts.graph import compile_spec
from lsts.spec_lang import parse_spec

from conftest import DOORKEY_SPEC


@pytest.fixture(scope="module")
def spec():
    return parse_spec(DOORKEY_SPEC)


def _row_env():
    return GridEnv(parse_layout("#####\n#A.G#\n#####\nA@E\n"), ("g",), ("forward", "left", "right"), {}, {},
                   (None, "g", None, None, None, None))


# ---------------------------------------------------------------- config


def test_config_validation():
    BaselineConfig("dirl", BaselineParams())
    with pytest.raises(ValueError):
        BaselineConfig("nope", BaselineParams())
    with pytest.raises(ValueError):
        BaselineConfig("dirl", BaselineParams(per_edge_budget=0))
    assert set(RUNNERS) == set(ALGOS)


# ---------------------------------------------------------------- shaping and tracker


def test_progress_bonus_by_distance(fig1b, doorkey):
    assert scale_bonus(2) == pytest.approx(1 / 3)
    assert scale_bonus(0) == 1.0
    assert scale_bonus(float("inf")) == 0.0
    bonus = dag_arrays(fig1b, doorkey.atoms).bonus
    assert list(fig1b.distance_to_finals()) == [3, 2, 2, 1, 0]
    assert bonus[1] == pytest.approx(1 / 3) and bonus[4] == 1.0


def test_qrm_keeps_one_q_function_per_node(fig1b, doorkey):
    assert FlatLearner("qrm", fig1b, doorkey, BaselineParams()).q_function_count == 5
    assert FlatLearner("lfs", fig1b, doorkey, BaselineParams()).q_function_count == 1


def test_progress_slope():
    assert progress_slope([0.1, 0.2, 0.3, 0.4]) == pytest.approx(0.1)
    assert progress_slope([0.5, 0.5, 0.5]) == 0.0
    assert progress_slope([0.3]) == 0.0
    rng = np.random.default_rng(0)
    y = rng.uniform(size=12)
    assert progress_slope(y) == pytest.approx(np.polyfit(np.arange(12), y, 1)[0])


# ---------------------------------------------------------------- flat learners


@pytest.mark.parametrize("runner", [run_lfs, run_gsrs, run_qrm])
def test_flat_learner_accounting(runner, fig1b, doorkey, spec):
    r = runner(doorkey, spec, fig1b, budget=30_000, seed_seq=0)
    assert r.total_interactions == 30_000
    assert r.policy_table.ordered is None and r.success_fn is not None
    stamps = [s for _, s, _ in r.per_edge_curves]
    assert stamps == sorted(stamps) and stamps[-1] == 30_000
    assert all(b.edge is None for b in r.bursts)


@pytest.mark.parametrize("runner", [run_lfs, run_gsrs, run_qrm])
def test_flat_learners_solve_trivial_reach(runner):
    g = compile_spec(parse_spec("achieve g"))
    r = runner(_row_env(), parse_spec("achieve g"), g, budget=5_000, seed_seq=3)
    assert r.converged and r.success_fn(3) == 1.0


@pytest.mark.parametrize("runner", [run_lfs, run_qrm])
def test_flat_learners_deterministic(runner, fig1b, doorkey, spec):
    a = runner(doorkey, spec, fig1b, budget=20_000, seed_seq=9)
    b = runner(doorkey, spec, fig1b, budget=20_000, seed_seq=9)
    assert a.per_edge_curves == b.per_edge_curves


# ---------------------------------------------------------------- graph-based baselines


def test_dirl_fixed_per_edge_budget(fig1b, doorkey, spec):
    r = run_dirl(doorkey, spec, fig1b, seed_seq=0)
    assert r.converged
    assert set(r.edge_interactions.values()) == {50_000}
    assert r.total_interactions == 50_000 * len(r.edge_interactions)
    # every edge reachable before the final node is popped gets trained
    assert len(r.edge_interactions) <= len(fig1b.edges)
    assert r.learned_path[0] == 0 and r.learned_path[-1] in fig1b.finals


def test_dirl_c_trains_until_convergence(fig1b, doorkey, spec):
    plain = run_dirl(doorkey, spec, fig1b, seed_seq=0)
    conv = run_dirl_c(doorkey, spec, fig1b, seed_seq=0)
    assert conv.converged and conv.total_interactions <= plain.total_interactions
    assert conv.total_interactions == sum(conv.edge_interactions.values())
    # an edge off the eventual route is still trained to convergence
    assert fig1b.edge(1, 3) in conv.edge_interactions
    assert set(conv.policy_table.ordered) <= conv.policy_table.converged


def test_dirl_respects_total_budget(fig1b, doorkey, spec):
    r = run_dirl(doorkey, spec, fig1b, budget=70_000, seed_seq=0)
    assert r.total_interactions == 70_000 and not r.converged


def test_tscl_from_start_fails_doorkey(fig1b, doorkey, spec):
    r = run_tscl(doorkey, spec, fig1b, budget=100_000, seed_seq=0)
    assert r.total_interactions == 100_000
    assert r.success_fn(5) < 0.2
    assert sum(r.edge_interactions.values()) == r.total_interactions


def test_tscl_solves_single_edge():
    g = compile_spec(parse_spec("achieve g"))
    r = run_tscl(_row_env(), parse_spec("achieve g"), g, budget=20_000, seed_seq=1)
    assert r.success_fn(3) == 1.0
