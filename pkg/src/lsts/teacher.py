"""Bandit Teacher that schedules sub-task training over the task DAG."""
from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels as K
from .env_core import SubTaskEnv
from .errors import EmptyActiveSetError, InsufficientHistoryError, UnknownEdgeError
from .graph import (
    AbstractGraph,
    GuardedEdge,
    discarded_edges,
    initial_tasks,
    next_tasks,
    shortest_path,
    subtask_of,
)
from .seeding import named_stream
from .student import (
    BurstStats,
    InteractionCounter,
    PolicyTable,
    TabularPolicy,
    execute_prefix,
    run_subtask,
    subtask_outcomes,
    success_rate,
    train_burst,
)


@dataclass
class TeacherParams:
    x: int = 500
    alpha: float = 0.1
    epsilon: float = 0.2
    eta: float = 0.95
    tau: float = 0.01
    window: int = 20
    step_budget: int = 100
    learning_rate: float = 0.1
    discount: float = 0.95
    student_epsilon: float = 0.1
    soft_discard_bias: float = 0.0  # >0 keeps discarded edges sampleable at this relative weight


@dataclass
class TeacherState:
    alpha: float = 0.1
    epsilon: float = 0.2
    eta: float = 0.95
    tau: float = 0.01
    x: int = 500
    window_size: int = 20
    soft_discard_bias: float = 0.0
    q: dict = field(default_factory=dict)
    at: set = field(default_factory=set)
    lt: set = field(default_factory=set)
    dt: set = field(default_factory=set)
    recent_g: dict = field(default_factory=dict)
    window: dict = field(default_factory=dict)

    @classmethod
    def from_params(cls, p: TeacherParams) -> "TeacherState":
        return cls(p.alpha, p.epsilon, p.eta, p.tau, p.x, p.window, p.soft_discard_bias)

    def activate(self, e: GuardedEdge) -> None:
        self.at.add(e)
        self.q.setdefault(e, 0.0)
        self.recent_g.setdefault(e, deque(maxlen=2))
        self.window.setdefault(e, deque(maxlen=self.window_size))

    def window_rate(self, e: GuardedEdge) -> float:
        """Success fraction over the last ``window_size`` evaluations; missing ones count as failures."""
        return sum(self.window.get(e, ())) / self.window_size


def sample_task(ts: TeacherState, rng: np.random.Generator) -> GuardedEdge:
    """Epsilon-greedy choice over the active set (argmax ties -> lowest edge index)."""
    if not ts.at:
        raise EmptyActiveSetError("no active tasks")
    active = sorted(ts.at, key=lambda e: e.index)
    if rng.random() < ts.epsilon:
        if ts.soft_discard_bias > 0 and ts.dt:
            pool = active + sorted(ts.dt, key=lambda e: e.index)
            w = np.array([1.0] * len(active) + [ts.soft_discard_bias] * len(ts.dt))
            return pool[int(rng.choice(len(pool), p=w / w.sum()))]
        return active[int(rng.integers(len(active)))]
    return max(active, key=lambda e: (ts.q[e], -e.index))


def update_teacher(ts: TeacherState, e: GuardedEdge, g_t: float) -> None:
    if e not in ts.at and not (ts.soft_discard_bias > 0 and e in ts.dt):
        raise UnknownEdgeError(e)
    ts.q[e] = ts.alpha * g_t + (1 - ts.alpha) * ts.q.get(e, 0.0)
    ts.recent_g.setdefault(e, deque(maxlen=2)).append(g_t)


def check_convergence(ts: TeacherState, e: GuardedEdge, rate: float) -> bool:
    hist = ts.recent_g.get(e, ())
    if len(hist) < 2:
        raise InsufficientHistoryError(f"{e} has {len(hist)} recorded returns, need 2")
    return rate >= ts.eta and abs(hist[-1] - hist[-2]) < ts.tau


@dataclass(frozen=True)
class BurstRecord:
    edge: GuardedEdge
    stamp: int  # interaction counter after the burst
    g: float
    rate: float
    event: str = ""  # "converged" on the burst that converged the edge


@dataclass
class RunResult:
    policy_table: PolicyTable
    total_interactions: int
    per_edge_curves: list  # (edge, interaction_stamp, success_rate)
    converged: bool
    bursts: list = field(default_factory=list)
    discarded: set = field(default_factory=set)
    edge_interactions: dict = field(default_factory=dict)
    discard_stamps: dict = field(default_factory=dict)  # edge -> bursts completed when discarded
    success_fn: Callable | None = None  # n_episodes -> success rate, for learners without an ordered list
    extras: dict = field(default_factory=dict)

    @property
    def learned_path(self) -> list[int]:
        o = self.policy_table.ordered
        if not o:
            return []
        return [o[0].src] + [e.dst for e in o]


def ordered_list(g: AbstractGraph, learned) -> list[GuardedEdge] | None:
    """Shortest (by edge count) q0 -> finals path over learned edges."""
    return shortest_path(g, learned, g.q0, g.finals)


def policy_factory(base, p: TeacherParams) -> Callable[[], TabularPolicy]:
    return lambda: TabularPolicy(base.action_count, p.learning_rate, p.discount, p.student_epsilon)


def student_rng(seed_seq: np.random.SeedSequence) -> np.ndarray:
    return K.rng_state(seed_seq.generate_state(2, dtype=np.uint32))


class _Run:
    """Shared bookkeeping of the Teacher loop."""

    def __init__(self, graph, base, params, budget, seed_seq):
        if budget <= 0:
            raise ValueError("budget must be positive")
        t_seq, s_seq = named_stream(seed_seq, "teacher"), named_stream(seed_seq, "student")
        self.g, self.base, self.p, self.budget = graph, base, params, budget
        self.trng = np.random.default_rng(t_seq)
        self.srng = student_rng(s_seq)
        self.ts = TeacherState.from_params(params)
        self.table = PolicyTable(graph)
        self.counter = InteractionCounter()
        self.factory = policy_factory(base, params)
        self.bursts: list[BurstRecord] = []
        self.edge_steps = defaultdict(int)
        self.discard_stamps = {}
        for t in initial_tasks(graph):
            self.ts.activate(t.edge)

    def env_for(self, e):
        return SubTaskEnv(self.base, subtask_of(self.g, e), self.p.step_budget, check_start=e.src == self.g.q0)

    def prefix_for(self, e):
        return shortest_path(self.g, self.ts.lt, self.g.q0, e.src) or []

    def after_burst(self, e, env, prefix, stats: BurstStats) -> bool:
        """Teacher update, evaluation and set maintenance; True when a final node is learned."""
        ts = self.ts
        update_teacher(ts, e, stats.g)
        ok = success_rate(self.table.by_edge[e], env, prefix, 1, self.table)
        ts.window[e].append(ok >= 1.0)
        rate = ts.window_rate(e)
        conv = len(ts.recent_g[e]) >= 2 and e in ts.at and check_convergence(ts, e, rate)
        self.bursts.append(BurstRecord(e, self.counter.total, stats.g, rate, "converged" if conv else ""))
        if not conv:
            return False
        ts.at.discard(e)
        ts.lt.add(e)
        self.table.converged.add(e)
        for d in discarded_edges(self.g, e.dst, ts.lt):
            if d not in ts.dt:
                ts.dt.add(d)
                ts.at.discard(d)
                self.discard_stamps[d] = len(self.bursts)
                if ts.soft_discard_bias <= 0:
                    ts.q.pop(d, None)
        if e.dst in self.g.finals:
            self.table.ordered = ordered_list(self.g, ts.lt)
            return True
        for t in next_tasks(self.g, e.dst, ts.dt):
            if t.edge not in ts.at and t.edge not in ts.lt:
                ts.activate(t.edge)
        return False

    def result(self, converged: bool) -> RunResult:
        if converged and self.table.ordered is None:
            converged = False
        curves = [(b.edge, b.stamp, b.rate) for b in self.bursts]
        return RunResult(self.table, self.counter.total, curves, converged, self.bursts,
                         set(self.ts.dt), dict(self.edge_steps), self.discard_stamps)


def lsts_run(graph: AbstractGraph, env, params: TeacherParams | None = None, budget: int = 2_000_000,
             seed_seq: np.random.SeedSequence | int = 0) -> RunResult:
    """Sample, train, update, and grow the active set until a final node is learned."""
    return _loop(graph, env, params or TeacherParams(), budget, _seq(seed_seq), continuation=False)


def lsts_ct_run(graph: AbstractGraph, env, params: TeacherParams | None = None, budget: int = 2_000_000,
                seed_seq: np.random.SeedSequence | int = 0) -> RunResult:
    """As :func:`lsts_run`, but successful episodes continue into a follow-on sub-task."""
    return _loop(graph, env, params or TeacherParams(), budget, _seq(seed_seq), continuation=True)


def _seq(s):
    return s if isinstance(s, np.random.SeedSequence) else np.random.SeedSequence(int(s))


def _loop(graph, env, params, budget, seed_seq, continuation):
    run = _Run(graph, env, params, budget, seed_seq)
    ts = run.ts
    while run.counter.total < budget:
        if not ts.at:
            return run.result(False)
        e = sample_task(ts, run.trng)
        pi = run.table.policy(e, run.factory)
        senv = run.env_for(e)
        prefix = run.prefix_for(e)
        before = run.counter.total
        if continuation:
            stats = _ct_burst(run, e, pi, senv, prefix)
        else:
            stats = train_burst(pi, senv, params.x, prefix, run.table, run.counter, run.srng)
            run.edge_steps[e] += run.counter.total - before
        if run.after_burst(e, senv, prefix, stats):
            return run.result(True)
    return run.result(False)


def _ct_burst(run: _Run, e, pi, senv, prefix) -> BurstStats:
    """Burst where each successful episode chains into Teacher-chosen follow-on tasks.

    Only the primary phase contributes to g_t; all phases count toward the
    interaction budget of the burst and the run.
    """
    g, base, p, ts = run.g, run.base, run.p, run.ts
    if prefix:
        pre = execute_prefix(base, run.table, prefix, p.step_budget)
        start, check = pre.end, False
    else:
        pre = None
        start, check = base.start_code, senv.check_start
    pre_steps = pre.steps if pre else 0
    used = 0
    returns, successes, failures = [], 0, 0
    while used < ts.x:
        used += pre_steps
        run.counter.add(pre_steps)
        run.edge_steps[e] += pre_steps
        if pre is not None and not pre.ok:
            returns.append(0.0)
            failures += 1
            continue
        s, steps, ok, ret, _ = run_subtask(pi, base, senv.outcome, start, check, p.step_budget, True, run.srng)
        used += steps
        run.counter.add(steps)
        run.edge_steps[e] += steps
        returns.append(ret)
        successes += ok
        node = e.dst
        while ok and node not in g.finals:
            cands = [f for f in g.out_edges[node] if f not in ts.dt]
            if not cands:
                break
            if run.trng.random() < ts.epsilon:
                f = cands[int(run.trng.integers(len(cands)))]
            else:
                f = max(cands, key=lambda c: (ts.q.get(c, 0.0), -c.index))
            pol = run.table.policy(f, run.factory)
            s, st, ok, _, _ = run_subtask(pol, base, subtask_outcomes(base, g, f), s, False, p.step_budget,
                                          f not in ts.lt, run.srng)
            used += st
            run.counter.add(st)
            run.edge_steps[f] += st
            node = f.dst
        if steps == 0 and pre_steps == 0:
            break
    g_t = float(np.mean(returns)) if returns else 0.0
    return BurstStats(g_t, len(returns), successes, used, failures)
