"""Labeled-MDP interface, DAG tracking, and the sub-task environment wrapper."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from . import kernels as K
from .graph import AbstractGraph, GuardedEdge, SubTask, subtask_of
from .spec_lang import eval_pred, pred_table

DEFAULT_STEP_BUDGET = 100


class LabeledMdp(Protocol):
    atoms: tuple[str, ...]
    action_count: int
    max_episode_steps: int

    def reset(self, seed=None): ...

    def step(self, action: int): ...

    def labels(self, state) -> frozenset[str]: ...


# ---------------------------------------------------------------- tracking


@dataclass
class DagTracker:
    graph: AbstractGraph
    current: int = -1
    history: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.current < 0:
            self.current = self.graph.q0
        if not self.history:
            self.history = [self.current]


def track(t: DagTracker, labels) -> int:
    """Advance the tracker by one labelled step.

    Takes the out-edge whose guard holds; when several hold, the one with the
    lowest destination index wins; when none holds the tracker stays put.
    """
    labels = frozenset(labels)
    for e in t.graph.out_edges[t.current]:  # sorted by dst
        if eval_pred(e.guard, labels):
            t.current = e.dst
            t.history.append(e.dst)
            break
    return t.current


def subtask_reward(success: bool, steps_taken: int, budget: int) -> float:
    if not 0 <= steps_taken <= budget:
        raise ValueError("steps_taken must lie in [0, budget]")
    return (budget - 0.9 * steps_taken) / budget if success else 0.0


# ---------------------------------------------------------------- compiled forms for the kernels


def outcome_table(task: SubTask, atoms: Sequence[str]) -> np.ndarray:
    """Per-label-mask classification: 0 continue, 1 success, 2 failure.

    Success needs the achieve guard and the edge's safety constraint with no
    avoid guard true; any avoid guard or a safety violation is a failure.
    """
    ok = pred_table(task.safe, atoms)
    bad = np.zeros_like(ok)
    for b in task.avoid:
        bad |= pred_table(b, atoms)
    hit = pred_table(task.achieve, atoms)
    out = np.zeros(ok.shape, dtype=np.int8)
    out[~ok | bad] = K.OUT_FAIL
    out[ok & ~bad & hit] = K.OUT_SUCCESS
    return out


@dataclass(frozen=True)
class DagArrays:
    """Array form of a graph for the whole-task kernels."""

    out_start: np.ndarray
    e_src: np.ndarray
    e_dst: np.ndarray
    guard_tab: np.ndarray
    safe_tab: np.ndarray
    is_final: np.ndarray
    bonus: np.ndarray
    q0: int

    def as_tuple(self):
        return (self.out_start, self.e_src, self.e_dst, self.guard_tab, self.safe_tab,
                self.is_final, self.bonus, self.q0)

    def scratch(self):
        n, m = len(self.is_final), len(self.e_src)
        return (np.zeros(n, bool), np.zeros(m, bool), np.zeros(m, bool), np.zeros(n, bool))


def dag_arrays(g: AbstractGraph, atoms: Sequence[str], bonus_scale: float = 1.0) -> DagArrays:
    # edges ordered by (src, dst) so a node's out-edges form a contiguous run
    edges = sorted(g.edges, key=lambda e: (e.src, e.dst, e.index))
    out_start = np.zeros(g.node_count + 1, dtype=np.int64)
    for e in edges:
        out_start[e.src + 1] += 1
    out_start = np.cumsum(out_start)
    dist = g.distance_to_finals()
    bonus = np.array([scale_bonus(d, bonus_scale) for d in dist], dtype=np.float64)
    return DagArrays(
        out_start,
        np.array([e.src for e in edges], dtype=np.int64),
        np.array([e.dst for e in edges], dtype=np.int64),
        np.array([pred_table(e.guard, atoms) for e in edges]).reshape(len(edges), 1 << len(atoms)),
        np.array([pred_table(e.safe, atoms) for e in edges]).reshape(len(edges), 1 << len(atoms)),
        np.array([v in g.finals for v in range(g.node_count)], dtype=np.bool_),
        bonus,
        g.q0,
    )


def scale_bonus(dist: float, scale: float = 1.0) -> float:
    """Progress bonus for entering a node ``dist`` edges away from acceptance."""
    if dist == float("inf"):
        return 0.0
    return scale / (1.0 + dist)


# ---------------------------------------------------------------- sub-task environment


@dataclass
class SubTaskEnv:
    """Reach-avoid episode around a base environment.

    ``check_start`` controls whether the labels of the start state already
    count (true for tasks leaving q0, whose episodes begin at the initial
    state; false after a prefix has just delivered the agent to the source
    node, where the source guard is still true).
    """

    base: object
    task: SubTask
    step_budget: int = DEFAULT_STEP_BUDGET
    steps_taken: int = 0
    check_start: bool = True

    def __post_init__(self):
        self.outcome = outcome_table(self.task, self.base.atoms)

    @property
    def edge(self) -> GuardedEdge:
        return self.task.edge

    def classify(self, labels) -> int:
        labels = frozenset(labels)
        if self.task.safe is not None and not eval_pred(self.task.safe, labels):
            return K.OUT_FAIL
        if any(eval_pred(b, labels) for b in self.task.avoid):
            return K.OUT_FAIL
        return K.OUT_SUCCESS if eval_pred(self.task.achieve, labels) else K.OUT_CONTINUE


def make_subtask_env(base, g: AbstractGraph, e: GuardedEdge, step_budget: int = DEFAULT_STEP_BUDGET) -> SubTaskEnv:
    return SubTaskEnv(base, subtask_of(g, e), step_budget, check_start=e.src == g.q0)


@dataclass
class Episode:
    ret: float
    success: bool
    steps: int
    trace: list[frozenset[str]]


def run_episode(env: SubTaskEnv, policy: Callable, seed=None, start=None) -> Episode:
    """Reference episode driver over the LabeledMdp interface.

    ``policy(state) -> action``.  The base environment is reset unless a
    ``start`` state is supplied (in which case the base must expose
    ``transition(state, action)``).
    """
    base = env.base
    env.steps_taken = 0
    if start is None:
        s = base.reset(seed)
        stepper = lambda s, a: base.step(a)
    else:
        s = start
        stepper = lambda s, a: _pure_step(base, s, a)
    trace = [base.labels(s)]
    if env.check_start:
        o = env.classify(trace[0])
        if o != K.OUT_CONTINUE:
            ok = o == K.OUT_SUCCESS
            return Episode(subtask_reward(ok, 0, env.step_budget), ok, 0, trace)
    while env.steps_taken < env.step_budget:
        s, terminal, _ = stepper(s, policy(s))
        env.steps_taken += 1
        trace.append(base.labels(s))
        o = env.classify(trace[-1])
        if o == K.OUT_CONTINUE and terminal:
            o = K.OUT_FAIL
        if o != K.OUT_CONTINUE:
            ok = o == K.OUT_SUCCESS
            return Episode(subtask_reward(ok, env.steps_taken, env.step_budget), ok, env.steps_taken, trace)
    return Episode(0.0, False, env.steps_taken, trace)


def _pure_step(base, s, a):
    t, reason = base.transition(s, a)
    return t, reason is not None, reason
