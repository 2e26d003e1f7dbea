"""Tabular Q-learning Student: edge policies, training bursts, evaluation."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels as K
from .env_core import DagTracker, SubTaskEnv, outcome_table, track
from .errors import MissingOrderedListError
from .graph import AbstractGraph, GuardedEdge, dag_accepts, subtask_of
from .spec_lang import SpecAst, sat_spec

CHECKPOINT_HEADER = "# lsts-policy v1"
_NO_TRACE = np.zeros(0, dtype=np.int64)


class TabularPolicy:
    """Q-table keyed by integer state codes; unseen entries read as 0.

    Storage is an open-addressing table (``keys`` with -1 for empty slots and
    a parallel ``q`` matrix) that the kernels read and write in place.
    """

    def __init__(self, n_actions: int, learning_rate: float = 0.1, discount: float = 0.95,
                 epsilon: float = 0.1, capacity: int = 1024):
        if not 0 < learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if not 0 <= discount <= 1 or not 0 <= epsilon <= 1:
            raise ValueError("discount and epsilon must lie in [0, 1]")
        cap = 1 << max(4, int(capacity - 1).bit_length())
        self.n_actions = n_actions
        self.learning_rate = learning_rate
        self.discount = discount
        self.epsilon = epsilon
        self.keys = np.full(cap, K.EMPTY, dtype=np.int64)
        self.q = np.zeros((cap, n_actions), dtype=np.float64)
        self.fill = np.zeros(1, dtype=np.int64)

    def __len__(self):
        return int(self.fill[0])

    def reserve(self, n_new: int) -> None:
        """Grow so ``n_new`` more states fit below half occupancy."""
        cap = self.keys.shape[0]
        need = int(self.fill[0]) + n_new
        if 2 * need <= cap:
            return
        while 2 * need > cap:
            cap *= 2
        keys = np.full(cap, K.EMPTY, dtype=np.int64)
        q = np.zeros((cap, self.n_actions), dtype=np.float64)
        K.ht_rehash(self.keys, self.q, keys, q, self.fill)
        self.keys, self.q = keys, q

    def row(self, key: int) -> np.ndarray:
        i = K.ht_find(self.keys, int(key))
        return np.zeros(self.n_actions) if i < 0 else self.q[i].copy()

    def value(self, key: int, action: int) -> float:
        return float(self.row(key)[action])

    def set_value(self, key: int, action: int, v: float) -> None:
        self.reserve(1)
        i = K.ht_insert(self.keys, self.fill, int(key))
        self.q[i, action] = v

    def greedy(self, key: int) -> int:
        return int(K.greedy_action(self.q, K.ht_find(self.keys, int(key))))

    def items(self):
        """(state_key, action, q) triples for every stored state, sorted by key."""
        slots = np.flatnonzero(self.keys != K.EMPTY)
        for i in slots[np.argsort(self.keys[slots], kind="stable")]:
            for a in range(self.n_actions):
                yield int(self.keys[i]), a, float(self.q[i, a])

    def copy(self) -> "TabularPolicy":
        p = TabularPolicy(self.n_actions, self.learning_rate, self.discount, self.epsilon, 16)
        p.keys, p.q, p.fill = self.keys.copy(), self.q.copy(), self.fill.copy()
        return p


@dataclass
class PolicyTable:
    graph: AbstractGraph
    by_edge: dict = field(default_factory=dict)
    converged: set = field(default_factory=set)
    ordered: list | None = None

    def policy(self, e: GuardedEdge, factory) -> TabularPolicy:
        if e not in self.by_edge:
            self.by_edge[e] = factory()
        return self.by_edge[e]


@dataclass
class InteractionCounter:
    total: int = 0

    def add(self, n: int) -> None:
        self.total += int(n)


@dataclass
class BurstStats:
    g: float
    episodes: int
    successes: int
    steps: int
    prefix_failures: int


@dataclass(frozen=True)
class PrefixResult:
    end: int
    steps: int
    ok: bool
    trace: np.ndarray  # label masks, start state first


# ---------------------------------------------------------------- episodes


def subtask_outcomes(base, g: AbstractGraph, e: GuardedEdge) -> np.ndarray:
    return outcome_table(subtask_of(g, e), base.atoms)


def run_subtask(pi: TabularPolicy, base, outcome: np.ndarray, start: int, check_start: bool,
                budget: int, train: bool, rng: np.ndarray, record: bool = False, cap: int | None = None):
    """One sub-task episode via the kernel; returns (end, steps, success, ret, trace)."""
    cap = budget if cap is None else min(cap, budget)
    if train:
        pi.reserve(budget + 2)
    trace = np.zeros(budget + 1, dtype=np.int64) if record else _NO_TRACE
    end, steps, ok, ret = K.subtask_episode(
        base.kernel_env, outcome, pi.keys, pi.q, pi.fill, int(start), check_start, budget, cap,
        pi.learning_rate, pi.discount, pi.epsilon, train, rng, trace,
    )
    return int(end), int(steps), bool(ok), float(ret), trace[: steps + 1] if record else None


def execute_prefix(base, table: PolicyTable, prefix: Sequence[GuardedEdge], budget: int,
                   record: bool = False) -> PrefixResult:
    """Greedily run the prefix policies from the initial state."""
    g = table.graph
    s = base.start_code
    total = 0
    parts = []
    rng = np.ones(2, dtype=np.int64)  # greedy execution never draws
    for e in prefix:
        pi = table.by_edge[e]
        s, steps, ok, _, tr = run_subtask(
            pi, base, subtask_outcomes(base, g, e), s, e.src == g.q0, budget, False, rng, record
        )
        total += steps
        if record:
            parts.append(tr if not parts else tr[1:])
        if not ok:
            return PrefixResult(s, total, False, _join(parts, record))
    return PrefixResult(s, total, True, _join(parts, record))


def _join(parts, record):
    if not record:
        return _NO_TRACE
    return np.concatenate(parts) if parts else _NO_TRACE


def train_burst(pi: TabularPolicy, env: SubTaskEnv, x: int, prefix: Sequence[GuardedEdge],
                table: PolicyTable, counter: InteractionCounter, rng: np.ndarray,
                exact: bool = False, check_prefix: bool = True) -> BurstStats:
    """Train ``pi`` on ``env`` for at least ``x`` base-environment interactions.

    Each episode first replays the (greedy, frozen) prefix policies; since the
    environment and those policies are deterministic the prefix outcome is
    computed once and its step count charged to every episode.  Episodes whose
    prefix fails count as failures and perform no updates.  With ``exact`` the
    last episode (or prefix replay) is cut short so exactly ``x`` steps are used.
    """
    if check_prefix:
        for e in prefix:
            if e not in table.converged:
                raise ValueError(f"prefix edge {e} has not converged")
    base = env.base
    if prefix:
        pre = execute_prefix(base, table, prefix, env.step_budget)
        start, check_start = pre.end, False
    else:
        pre = PrefixResult(base.start_code, 0, True, _NO_TRACE)
        start, check_start = base.start_code, env.check_start
    used = 0
    returns = []
    successes = failures = 0
    while used < x:
        p_steps = min(pre.steps, x - used) if exact else pre.steps
        used += p_steps
        counter.add(p_steps)
        if p_steps < pre.steps:
            break  # allowance ran out during the prefix replay
        if not pre.ok:
            returns.append(0.0)
            failures += 1
            continue
        cap = x - used if exact else None
        if cap == 0:
            break
        _, steps, ok, ret, _ = run_subtask(pi, base, env.outcome, start, check_start,
                                           env.step_budget, True, rng, cap=cap)
        used += steps
        counter.add(steps)
        returns.append(ret)
        successes += ok
        if steps == 0 and pre.steps == 0:
            break  # start state already decides the task; nothing left to learn
    g = float(np.mean(returns)) if returns else 0.0
    return BurstStats(g, len(returns), successes, used, failures)


def success_rate(pi: TabularPolicy, env: SubTaskEnv, prefix: Sequence[GuardedEdge], n_episodes: int,
                 table: PolicyTable | None = None) -> float:
    """Fraction of greedy episodes (after the greedy prefix) that succeed."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    base = env.base
    rng = np.ones(2, dtype=np.int64)
    wins = 0
    for _ in range(n_episodes):
        if prefix:
            pre = execute_prefix(base, table, prefix, env.step_budget)
            if not pre.ok:
                continue
            start, check = pre.end, False
        else:
            start, check = base.start_code, env.check_start
        wins += run_subtask(pi, base, env.outcome, start, check, env.step_budget, False, rng)[2]
    return wins / n_episodes


# ---------------------------------------------------------------- composed evaluation


@dataclass(frozen=True)
class ComposedRollout:
    trace: list  # label sets, initial state first
    tracker_success: bool


def compose_rollout(table: PolicyTable, base, step_budget: int = 100) -> ComposedRollout:
    """Run the ordered policies back to back, switching on each sub-task outcome."""
    if table.ordered is None:
        raise MissingOrderedListError("policy table has no ordered list")
    g = table.graph
    masks = [base.label_mask(base.start_code)]
    s = base.start_code
    rng = np.ones(2, dtype=np.int64)
    for e in table.ordered:
        s, steps, ok, _, tr = run_subtask(
            table.by_edge[e], base, subtask_outcomes(base, g, e), s, e.src == g.q0,
            step_budget, False, rng, record=True,
        )
        masks.extend(int(m) for m in tr[1:])
        if not ok:
            break
    trace = [base.mask_to_labels(m) for m in masks]
    t = DagTracker(g)
    for labels in trace:
        track(t, labels)
        if t.current in g.finals:
            break
    return ComposedRollout(trace, t.current in g.finals)


def compose_eval(table: PolicyTable, base, graph: AbstractGraph, n_episodes: int,
                 spec: SpecAst | None = None, step_budget: int = 100) -> float:
    """Fraction of composed rollouts whose raw label trace satisfies the task.

    Satisfaction is checked with ``sat_spec`` against ``spec`` when given and
    with the graph acceptor otherwise; the tracker is not consulted.
    """
    if table.ordered is None:
        raise MissingOrderedListError("policy table has no ordered list")
    wins = 0
    for _ in range(n_episodes):
        r = compose_rollout(table, base, step_budget)
        wins += sat_spec(spec, r.trace) if spec is not None else dag_accepts(graph, r.trace)
    return wins / n_episodes


# ---------------------------------------------------------------- checkpoints


def _write_policy(lines: list, pi: TabularPolicy) -> None:
    lines.append(f"actions {pi.n_actions} lr {pi.learning_rate!r} discount {pi.discount!r} "
                 f"epsilon {pi.epsilon!r} states {len(pi)}")
    for key, a, v in pi.items():
        lines.append(f"{key} {a} {v!r}")


def save_policy(pi: TabularPolicy, path) -> None:
    lines = [CHECKPOINT_HEADER]
    _write_policy(lines, pi)
    Path(path).write_text("\n".join(lines) + "\n")


def _read_policy(lines: list, i: int) -> tuple[TabularPolicy, int]:
    f = lines[i].split()
    meta = dict(zip(f[0::2], f[1::2]))
    n_actions, n_states = int(meta["actions"]), int(meta["states"])
    pi = TabularPolicy(n_actions, float(meta["lr"]), float(meta["discount"]), float(meta["epsilon"]),
                       capacity=2 * n_states + 2)
    for line in lines[i + 1: i + 1 + n_states * n_actions]:
        key, a, v = line.split()
        slot = K.ht_insert(pi.keys, pi.fill, int(key))
        pi.q[slot, int(a)] = float(v)
    return pi, i + 1 + n_states * n_actions


def load_policy(path) -> TabularPolicy:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CHECKPOINT_HEADER:
        raise ValueError("not a policy checkpoint")
    return _read_policy(lines, 1)[0]


def save_policy_table(table: PolicyTable, path) -> None:
    """Text checkpoint: every edge policy, plus converged and ordered lists."""
    lines = [CHECKPOINT_HEADER]
    order = lambda e: e.index
    lines.append("converged " + " ".join(f"{e.src}-{e.dst}" for e in sorted(table.converged, key=order)))
    if table.ordered is not None:
        lines.append("ordered " + " ".join(f"{e.src}-{e.dst}" for e in table.ordered))
    for e in sorted(table.by_edge, key=order):
        lines.append(f"edge {e.src}-{e.dst}")
        _write_policy(lines, table.by_edge[e])
    Path(path).write_text("\n".join(lines) + "\n")


def load_policy_table(path, graph: AbstractGraph) -> PolicyTable:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CHECKPOINT_HEADER:
        raise ValueError("not a policy checkpoint")
    edge = lambda tok: graph.edge(*map(int, tok.split("-")))
    table = PolicyTable(graph)
    i = 1
    while i < len(lines):
        head, *rest = lines[i].split()
        if head == "converged":
            table.converged = {edge(t) for t in rest}
            i += 1
        elif head == "ordered":
            table.ordered = [edge(t) for t in rest]
            i += 1
        elif head == "edge":
            table.by_edge[edge(rest[0])], i = _read_policy(lines, i + 1)
        else:
            raise ValueError(f"unexpected line {lines[i]!r}")
    return table
