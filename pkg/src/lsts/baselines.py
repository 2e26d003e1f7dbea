"""Comparison learners sharing the Student, environments and step accounting.

* ``lfs``    one flat policy rewarded only for satisfying the whole task
* ``gsrs``   flat policy over (state, tracker node) with a distance-shaped bonus
* ``qrm``    one Q-function per DAG node, updated counterfactually
* ``dirl``   Dijkstra over the DAG, every explored edge trained for a fixed budget
* ``dirl_c`` as ``dirl`` but each edge stops once it meets the convergence test
* ``tscl``   slope-driven bandit over all sub-tasks, every episode from the start state
"""
from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .env_core import SubTaskEnv, dag_arrays
from .graph import AbstractGraph, subtask_of
from .seeding import named_stream
from .spec_lang import SpecAst, sat_spec
from .student import (
    InteractionCounter,
    PolicyTable,
    TabularPolicy,
    run_subtask,
    subtask_outcomes,
    success_rate,
    train_burst,
)
from .teacher import (
    BurstRecord,
    RunResult,
    TeacherParams,
    TeacherState,
    check_convergence,
    policy_factory,
    student_rng,
    update_teacher,
)

ALGOS = ("lfs", "gsrs", "qrm", "dirl", "dirl_c", "tscl")


@dataclass
class BaselineParams(TeacherParams):
    per_edge_budget: int = 50_000
    shaping_scale: float = 1.0
    slope_window: int = 10
    eval_every: int = 20_000  # interactions between learning-curve samples of flat learners


@dataclass
class BaselineConfig:
    algo: str
    params: BaselineParams

    def __post_init__(self):
        if self.algo not in ALGOS:
            raise ValueError(f"unknown baseline {self.algo!r}")
        if self.params.per_edge_budget <= 0:
            raise ValueError("per_edge_budget must be positive")


def _seq(s):
    return s if isinstance(s, np.random.SeedSequence) else np.random.SeedSequence(int(s))


# ---------------------------------------------------------------- flat learners


_FLAT_KERNELS = {"lfs": K.lfs_episode, "gsrs": K.gsrs_episode, "qrm": K.qrm_episode}


class FlatLearner:
    """Single Q-table acting on the whole task (LFS, GSRS, QRM)."""

    def __init__(self, kind: str, graph: AbstractGraph, env, params: BaselineParams):
        self.kind, self.graph, self.env, self.params = kind, graph, env, params
        self.dag = dag_arrays(graph, env.atoms, params.shaping_scale)
        self.pi = TabularPolicy(env.action_count, params.learning_rate, params.discount, params.student_epsilon,
                                capacity=1 << 14)
        self.horizon = env.max_episode_steps
        self.scratch = self.dag.scratch()

    @property
    def q_function_count(self) -> int:
        return self.graph.node_count if self.kind == "qrm" else 1

    def episode(self, cap: int, train: bool, rng, record: bool = False):
        n = self.graph.node_count
        if train:
            self.pi.reserve((2 * n if self.kind == "qrm" else 1) * (cap + 1) + 1)
        trace = np.zeros(self.horizon + 1, dtype=np.int64) if record else np.zeros(0, dtype=np.int64)
        args = (self.env.kernel_env, self.dag.as_tuple(), self.pi.keys, self.pi.q, self.pi.fill,
                self.env.start_code, self.horizon, cap, self.pi.learning_rate, self.pi.discount,
                self.pi.epsilon, train, rng, trace)
        if self.kind == "lfs":
            args = args + (self.scratch,)
        steps, sat, ret = _FLAT_KERNELS[self.kind](*args)
        return int(steps), bool(sat), float(ret), trace[: steps + 1]

    def greedy_trace(self) -> list:
        rng = np.ones(2, dtype=np.int64)
        _, _, _, tr = self.episode(self.horizon, False, rng, record=True)
        return [self.env.mask_to_labels(int(m)) for m in tr]


def _flat_run(kind, graph, env, spec, params, budget, seed_seq) -> RunResult:
    learner = FlatLearner(kind, graph, env, params)
    rng = student_rng(named_stream(_seq(seed_seq), "student"))
    counter = InteractionCounter()
    curves, bursts = [], []
    next_eval = params.eval_every

    def evaluate(n_episodes: int = 1) -> float:
        wins = sum(sat_spec(spec, learner.greedy_trace()) for _ in range(n_episodes))
        return wins / n_episodes

    while counter.total < budget:
        steps, _, _, _ = learner.episode(min(learner.horizon, budget - counter.total), True, rng)
        counter.add(steps)
        if steps == 0:
            break  # the start state already satisfies the task
        if counter.total >= next_eval or counter.total >= budget:
            rate = evaluate()
            curves.append(("composed", counter.total, rate))
            bursts.append(BurstRecord(None, counter.total, 0.0, rate))
            next_eval += params.eval_every
    final = evaluate()
    return RunResult(PolicyTable(graph), counter.total, curves, final >= params.eta, bursts,
                     success_fn=evaluate, extras={"learner": learner})


def run_lfs(env, spec: SpecAst, graph: AbstractGraph, params: BaselineParams | None = None,
            budget: int = 2_000_000, seed_seq=0) -> RunResult:
    return _flat_run("lfs", graph, env, spec, params or BaselineParams(), budget, seed_seq)


def run_gsrs(env, spec: SpecAst, graph: AbstractGraph, params: BaselineParams | None = None,
             budget: int = 2_000_000, seed_seq=0) -> RunResult:
    return _flat_run("gsrs", graph, env, spec, params or BaselineParams(), budget, seed_seq)


def run_qrm(env, spec: SpecAst, graph: AbstractGraph, params: BaselineParams | None = None,
            budget: int = 2_000_000, seed_seq=0) -> RunResult:
    return _flat_run("qrm", graph, env, spec, params or BaselineParams(), budget, seed_seq)


# ---------------------------------------------------------------- Dijkstra over the DAG


def _dirl(graph, env, spec, params: BaselineParams, budget, seed_seq, until_converged) -> RunResult:
    s_seq = named_stream(_seq(seed_seq), "student")
    srng = student_rng(s_seq)
    table = PolicyTable(graph)
    counter = InteractionCounter()
    factory = policy_factory(env, params)
    ts = TeacherState.from_params(params)
    bursts, curves = [], []
    edge_steps, rates = {}, {}
    dist = {graph.q0: 0.0}
    parent = {graph.q0: None}
    heap = [(0.0, graph.q0)]
    done = set()

    def path_to(v):
        out = []
        while parent[v] is not None:
            out.append(parent[v])
            v = parent[v].src
        return out[::-1]

    while heap and counter.total < budget:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u in graph.finals:
            break
        prefix = path_to(u)
        for e in graph.out_edges[u]:
            if counter.total >= budget:
                break
            pi = table.policy(e, factory)
            senv = SubTaskEnv(env, subtask_of(graph, e), params.step_budget, check_start=e.src == graph.q0)
            ts.activate(e)
            start = counter.total
            conv = False
            while counter.total < budget:
                if until_converged:
                    x = min(params.x, budget - counter.total)
                else:
                    x = min(params.x, params.per_edge_budget - (counter.total - start), budget - counter.total)
                    if x <= 0:
                        break
                stats = train_burst(pi, senv, x, prefix, table, counter, srng, exact=True, check_prefix=False)
                update_teacher(ts, e, stats.g)
                ok = success_rate(pi, senv, prefix, 1, table)
                ts.window[e].append(ok >= 1.0)
                rate = ts.window_rate(e)
                conv = len(ts.recent_g[e]) >= 2 and check_convergence(ts, e, rate)
                bursts.append(BurstRecord(e, counter.total, stats.g, rate, "converged" if conv else ""))
                curves.append((e, counter.total, rate))
                if until_converged and conv:
                    break
            edge_steps[e] = counter.total - start
            rates[e] = success_rate(pi, senv, prefix, 1, table)
            if (conv if until_converged else rates[e] >= params.eta):
                table.converged.add(e)
            cost = d + (1.0 - rates[e])
            if cost < dist.get(e.dst, float("inf")):
                dist[e.dst] = cost
                parent[e.dst] = e
                heapq.heappush(heap, (cost, e.dst))
    reached = [f for f in graph.finals if f in dist]
    if reached:
        best = min(reached, key=lambda f: (dist[f], f))
        table.ordered = path_to(best)
    ok = table.ordered is not None and all(e in table.converged for e in table.ordered)
    return RunResult(table, counter.total, curves, ok, bursts, set(), edge_steps, extras={"edge_rates": rates})


def run_dirl(env, spec: SpecAst, graph: AbstractGraph, params: BaselineParams | None = None,
             budget: int = 10_000_000, seed_seq=0) -> RunResult:
    return _dirl(graph, env, spec, params or BaselineParams(), budget, seed_seq, until_converged=False)


def run_dirl_c(env, spec: SpecAst, graph: AbstractGraph, params: BaselineParams | None = None,
               budget: int = 10_000_000, seed_seq=0) -> RunResult:
    return _dirl(graph, env, spec, params or BaselineParams(), budget, seed_seq, until_converged=True)


# ---------------------------------------------------------------- slope-driven curriculum


def progress_slope(points) -> float:
    """Least-squares slope of g against burst number."""
    if len(points) < 2:
        return 0.0
    t = np.arange(len(points), dtype=np.float64)
    y = np.asarray(points, dtype=np.float64)
    t -= t.mean()
    return float((t * (y - y.mean())).sum() / (t * t).sum())


def run_tscl(env, spec: SpecAst, graph: AbstractGraph, params: BaselineParams | None = None,
             budget: int = 2_000_000, seed_seq=0) -> RunResult:
    p = params or BaselineParams()
    t_seq, s_seq = named_stream(_seq(seed_seq), "teacher"), named_stream(_seq(seed_seq), "student")
    trng = np.random.default_rng(t_seq)
    srng = student_rng(s_seq)
    table = PolicyTable(graph)
    counter = InteractionCounter()
    factory = policy_factory(env, p)
    edges = list(graph.edges)
    # every sub-task is posed from the start state: no prefixes, no ordering
    envs = {e: SubTaskEnv(env, subtask_of(graph, e), p.step_budget, check_start=True) for e in edges}
    hist = {e: deque(maxlen=p.slope_window) for e in edges}
    evals = {e: deque(maxlen=p.window) for e in edges}
    bursts, curves, edge_steps = [], [], {e: 0 for e in edges}

    def score(e):
        # untried tasks first so every slope has two points before comparison
        return float("inf") if len(hist[e]) < 2 else abs(progress_slope(hist[e]))

    while counter.total < budget:
        if trng.random() < p.epsilon:
            e = edges[int(trng.integers(len(edges)))]
        else:
            e = max(edges, key=lambda c: (score(c), -c.index))
        pi = table.policy(e, factory)
        before = counter.total
        stats = train_burst(pi, envs[e], min(p.x, budget - counter.total), [], table, counter, srng, exact=True)
        edge_steps[e] += counter.total - before
        hist[e].append(stats.g)
        evals[e].append(success_rate(pi, envs[e], [], 1, table) >= 1.0)
        rate = sum(evals[e]) / p.window
        bursts.append(BurstRecord(e, counter.total, stats.g, rate))
        curves.append((e, counter.total, rate))
        if stats.steps == 0:
            break

    measured = {e: sum(evals[e]) / p.window for e in edges}

    def rollout():
        """Tracker-driven composition: at each node follow the best-measured out-edge."""
        s, node = env.start_code, graph.q0
        masks = [env.label_mask(s)]
        rng = np.ones(2, dtype=np.int64)
        first = True
        while node not in graph.finals:
            outs = [e for e in graph.out_edges[node] if e in table.by_edge]
            if not outs:
                break
            e = max(outs, key=lambda c: (measured[c], -c.index))
            s, _, ok, _, tr = run_subtask(table.by_edge[e], env, subtask_outcomes(env, graph, e), s, first,
                                          p.step_budget, False, rng, record=True)
            masks.extend(int(m) for m in tr[1:])
            first = False
            if not ok:
                break
            node = e.dst
        return [env.mask_to_labels(m) for m in masks]

    def evaluate(n_episodes: int = 1) -> float:
        return sum(sat_spec(spec, rollout()) for _ in range(n_episodes)) / n_episodes

    final = evaluate()
    return RunResult(table, counter.total, curves, final >= p.eta, bursts, set(), edge_steps, success_fn=evaluate)


RUNNERS = {
    "lfs": run_lfs, "gsrs": run_gsrs, "qrm": run_qrm,
    "dirl": run_dirl, "dirl_c": run_dirl_c, "tscl": run_tscl,
}
