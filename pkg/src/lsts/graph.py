"""Abstract-graph compilation and the DAG analytics the task sampler needs."""
from __future__ import annotations

import heapq
import itertools
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyGraphError, PathExplosionError, UnknownEdgeError
from .spec_lang import (
    Achieve,
    And,
    Choice,
    Ensuring,
    Predicate,
    Seq,
    SpecAst,
    conj,
    pred_atoms,
    pred_table,
    print_pred,
    trace_to_masks,
)


@dataclass(frozen=True)
class GuardedEdge:
    """A DAG edge ``src -> dst`` taken when ``guard`` holds.

    ``safe`` is the conjunction of the ensuring predicates in scope; it must
    hold on every step spent travelling along the edge (``None`` = no
    constraint).  ``index`` is the edge's position in ``AbstractGraph.edges``.
    """

    src: int
    dst: int
    guard: Predicate
    safe: Predicate | None = None
    index: int = -1

    def __post_init__(self):
        if self.src == self.dst:
            raise ValueError("self-loops are not allowed")

    @property
    def key(self) -> tuple[int, int]:
        return (self.src, self.dst)

    def __repr__(self):
        return f"(q{self.src},q{self.dst})"


@dataclass(frozen=True)
class SubTask:
    edge: GuardedEdge
    achieve: Predicate
    avoid: tuple[Predicate, ...]
    safe: Predicate | None = None


@dataclass(frozen=True)
class AbstractGraph:
    node_count: int
    edges: tuple[GuardedEdge, ...]
    finals: frozenset[int]
    q0: int = 0

    @classmethod
    def build(cls, node_count: int, edges: Iterable, finals: Iterable[int], q0: int = 0) -> "AbstractGraph":
        """Construct from ``(src, dst, guard[, safe])`` tuples; assigns edge indices."""
        raw = []
        for e in edges:
            if isinstance(e, GuardedEdge):
                raw.append((e.src, e.dst, e.guard, e.safe))
            else:
                src, dst, guard, *rest = e
                raw.append((src, dst, guard, rest[0] if rest else None))
        raw.sort(key=lambda t: (t[0], t[1], print_pred(t[2]), print_pred(t[3]) if t[3] else ""))
        out = tuple(GuardedEdge(s, d, g, sf, i) for i, (s, d, g, sf) in enumerate(raw))
        finals = frozenset(finals)
        if not finals:
            raise EmptyGraphError("graph has no final nodes")
        return cls(node_count, out, finals, q0)

    @cached_property
    def out_edges(self) -> tuple[tuple[GuardedEdge, ...], ...]:
        buckets = [[] for _ in range(self.node_count)]
        for e in self.edges:
            buckets[e.src].append(e)
        return tuple(tuple(sorted(b, key=lambda e: (e.dst, e.index))) for b in buckets)

    @cached_property
    def in_edges(self) -> tuple[tuple[GuardedEdge, ...], ...]:
        buckets = [[] for _ in range(self.node_count)]
        for e in self.edges:
            buckets[e.dst].append(e)
        return tuple(tuple(b) for b in buckets)

    @cached_property
    def atoms(self) -> tuple[str, ...]:
        names = set()
        for e in self.edges:
            names |= pred_atoms(e.guard)
            if e.safe is not None:
                names |= pred_atoms(e.safe)
        return tuple(sorted(names))

    def edge(self, src: int, dst: int) -> GuardedEdge:
        for e in self.out_edges[src] if 0 <= src < self.node_count else ():
            if e.dst == dst:
                return e
        raise UnknownEdgeError((src, dst))

    def descendants(self, u: int) -> set[int]:
        seen, stack = set(), [u]
        while stack:
            for e in self.out_edges[stack.pop()]:
                if e.dst not in seen:
                    seen.add(e.dst)
                    stack.append(e.dst)
        return seen

    def distance_to_finals(self) -> list[float]:
        """Edge-count distance from every node to the nearest final node."""
        dist = [float("inf")] * self.node_count
        queue = deque()
        for f in self.finals:
            dist[f] = 0
            queue.append(f)
        while queue:
            v = queue.popleft()
            for e in self.in_edges[v]:
                if dist[e.src] == float("inf"):
                    dist[e.src] = dist[v] + 1
                    queue.append(e.src)
        return dist

    def longest_path_edges(self) -> int:
        best = [0] * self.node_count
        for u in reversed(self.topological_order()):
            for e in self.out_edges[u]:
                best[u] = max(best[u], best[e.dst] + 1)
        return best[self.q0]

    def topological_order(self) -> list[int]:
        indeg = [len(self.in_edges[v]) for v in range(self.node_count)]
        heap = [v for v in range(self.node_count) if indeg[v] == 0]
        heapq.heapify(heap)
        order = []
        while heap:
            u = heapq.heappop(heap)
            order.append(u)
            for e in self.out_edges[u]:
                indeg[e.dst] -= 1
                if indeg[e.dst] == 0:
                    heapq.heappush(heap, e.dst)
        if len(order) != self.node_count:
            raise ValueError("graph has a cycle")
        return order


# --------------------------------------------------------------------------
# compilation


@dataclass
class _Frag:
    q0: int
    nodes: list[int]
    edges: list[tuple[int, int, Predicate, Predicate | None]]
    finals: set[int] = field(default_factory=set)


def compile_spec(phi: SpecAst) -> AbstractGraph:
    """Build the abstract graph of ``phi``.

    achieve b      -> one edge guarded by b
    phi ; psi      -> every final of phi takes over psi's initial out-edges
    phi or psi     -> initial nodes identified, finals united
    phi ensuring c -> c conjoined onto every guard and every safety constraint
    """
    counter = itertools.count()
    frag = _compile(phi, counter)
    # reaching a final already satisfies the spec, so out-edges of finals are dead
    frag.edges = [e for e in frag.edges if e[0] not in frag.finals]
    frag.edges = list(dict.fromkeys(frag.edges))
    return _freeze(frag)


def _compile(phi, counter) -> _Frag:
    if isinstance(phi, Achieve):
        q0, f = next(counter), next(counter)
        return _Frag(q0, [q0, f], [(q0, f, phi.pred, None)], {f})
    if isinstance(phi, Ensuring):
        g = _compile(phi.spec, counter)
        c = phi.pred
        g.edges = [(s, d, And(c, b), conj(c, sf)) for s, d, b, sf in g.edges]
        return g
    if isinstance(phi, Seq):
        g1, g2 = _compile(phi.first, counter), _compile(phi.second, counter)
        edges = list(g1.edges)
        starts = [e for e in g2.edges if e[0] == g2.q0]
        for f in sorted(g1.finals):
            edges += [(f, d, b, sf) for _, d, b, sf in starts]
        edges += [e for e in g2.edges if e[0] != g2.q0]
        nodes = g1.nodes + [v for v in g2.nodes if v != g2.q0]
        return _Frag(g1.q0, nodes, edges, set(g2.finals))
    if isinstance(phi, Choice):
        g1, g2 = _compile(phi.left, counter), _compile(phi.right, counter)
        ren = lambda v: g1.q0 if v == g2.q0 else v
        edges = g1.edges + [(ren(s), ren(d), b, sf) for s, d, b, sf in g2.edges]
        nodes = g1.nodes + [v for v in g2.nodes if v != g2.q0]
        frag = _Frag(g1.q0, nodes, edges, g1.finals | g2.finals)
        _merge_siblings(frag, frag.q0)
        return frag
    raise TypeError(f"not a spec node: {phi!r}")


def _merge_siblings(frag: _Frag, u: int) -> None:
    """Merge children of ``u`` reached by identical (guard, safe) labels.

    Only children whose sole in-edge comes from ``u`` and that agree on
    finality are merged; that keeps the accepted language unchanged.
    """
    frag.edges = list(dict.fromkeys(frag.edges))
    groups: dict = {}
    for e in frag.edges:
        if e[0] == u:
            groups.setdefault((e[2], e[3]), []).append(e[1])
    for targets in groups.values():
        if len(targets) < 2:
            continue
        indeg = {v: sum(1 for e in frag.edges if e[1] == v) for v in targets}
        keep = None
        for v in targets:
            if indeg[v] != 1:
                continue
            if keep is None:
                keep = v
                continue
            if (v in frag.finals) != (keep in frag.finals):
                continue
            frag.edges = [e for e in frag.edges if not (e[0] == u and e[1] == v)]
            frag.edges = [(keep if s == v else s, d, b, sf) for s, d, b, sf in frag.edges]
            frag.nodes.remove(v)
            frag.finals.discard(v)
        if keep is not None:
            _merge_siblings(frag, keep)


def _freeze(frag: _Frag) -> AbstractGraph:
    # prune, then renumber in topological order with creation order as tie-break
    fwd = {v: set() for v in frag.nodes}
    bwd = {v: set() for v in frag.nodes}
    for s, d, _, _ in frag.edges:
        fwd[s].add(d)
        bwd[d].add(s)
    reach = _closure(fwd, [frag.q0])
    coreach = _closure(bwd, frag.finals)
    keep = reach & coreach
    if frag.q0 not in keep:
        raise EmptyGraphError("no path from the initial node to a final node")
    edges = [e for e in frag.edges if e[0] in keep and e[1] in keep]
    indeg = {v: 0 for v in keep}
    succ = {v: [] for v in keep}
    for s, d, _, _ in edges:
        indeg[d] += 1
        succ[s].append(d)
    heap = [v for v in keep if indeg[v] == 0]
    heapq.heapify(heap)
    rank = {}
    while heap:
        v = heapq.heappop(heap)
        rank[v] = len(rank)
        for d in succ[v]:
            indeg[d] -= 1
            if indeg[d] == 0:
                heapq.heappush(heap, d)
    return AbstractGraph.build(
        len(rank),
        [(rank[s], rank[d], b, sf) for s, d, b, sf in edges],
        [rank[f] for f in frag.finals if f in keep],
        q0=rank[frag.q0],
    )


def _closure(adj, roots) -> set:
    seen = set(roots)
    stack = list(roots)
    while stack:
        for w in adj[stack.pop()]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return seen


def prune_unreachable(g: AbstractGraph) -> AbstractGraph:
    """Keep exactly the edges lying on some q0 -> finals path."""
    fwd = {v: set() for v in range(g.node_count)}
    bwd = {v: set() for v in range(g.node_count)}
    for e in g.edges:
        fwd[e.src].add(e.dst)
        bwd[e.dst].add(e.src)
    keep = _closure(fwd, [g.q0]) & _closure(bwd, g.finals)
    if g.q0 not in keep:
        raise EmptyGraphError("no path from the initial node to a final node")
    order = sorted(keep)
    rank = {v: i for i, v in enumerate(order)}
    edges = [(rank[e.src], rank[e.dst], e.guard, e.safe) for e in g.edges if e.src in keep and e.dst in keep]
    return AbstractGraph.build(len(order), edges, [rank[f] for f in g.finals if f in keep], rank[g.q0])


# --------------------------------------------------------------------------
# acceptance


def dag_end_mask(g: AbstractGraph, masks: np.ndarray, atoms: Sequence[str]) -> np.ndarray:
    """``out[k, p]`` is True iff trace ``k`` can reach a final node at step ``p``.

    Runs the graph as a nondeterministic automaton.  A run splits the trace
    into consecutive non-empty blocks, one per edge of a q0 -> finals path;
    each block must satisfy the edge's safety constraint throughout and its
    guard at least once.  Configurations are tracked as subsets.
    """
    masks = np.atleast_2d(np.asarray(masks, dtype=np.int64))
    batch, horizon = masks.shape
    steps = np.ascontiguousarray(masks.T)
    guard = [pred_table(e.guard, atoms) for e in g.edges]
    safe = [pred_table(e.safe, atoms) for e in g.edges]
    finals = sorted(g.finals)

    pending = np.zeros((g.node_count, batch), dtype=bool)
    pending[g.q0] = True
    waiting = np.zeros((len(g.edges), batch), dtype=bool)  # block open, guard not seen yet
    hit = np.zeros((len(g.edges), batch), dtype=bool)  # block open, guard seen
    out = np.zeros((horizon, batch), dtype=bool)
    for p in range(horizon):
        m = steps[p]
        nxt = np.zeros_like(pending)
        for j, e in enumerate(g.edges):
            ok = safe[j][m]
            fresh = waiting[j] | pending[e.src]
            hit[j] = ok & (hit[j] | (fresh & guard[j][m]))
            waiting[j] = ok & fresh & ~hit[j]
            nxt[e.dst] |= hit[j]
        pending = nxt
        out[p] = pending[finals].any(axis=0)
    return out.T


def dag_accepts(g: AbstractGraph, trace: Sequence[Iterable[str]]) -> bool:
    if len(trace) == 0:
        return False
    atoms = g.atoms
    return bool(dag_end_mask(g, trace_to_masks(trace, atoms)[None, :], atoms)[0].any())


# --------------------------------------------------------------------------
# sub-tasks and the sampler's graph queries


def subtask_of(g: AbstractGraph, e: GuardedEdge) -> SubTask:
    if e not in g.edges:
        raise UnknownEdgeError(e)
    avoid = tuple(s.guard for s in g.out_edges[e.src] if s != e and s.guard != e.guard)
    return SubTask(e, e.guard, avoid, e.safe)


def initial_tasks(g: AbstractGraph) -> list[SubTask]:
    return [subtask_of(g, e) for e in g.out_edges[g.q0]]


def next_tasks(g: AbstractGraph, reached: int, dt: Iterable[GuardedEdge]) -> list[SubTask]:
    dt = set(dt)
    return [subtask_of(g, e) for e in g.out_edges[reached] if e not in dt]


def discarded_edges(g: AbstractGraph, p: int, learned: Iterable[GuardedEdge]) -> set[GuardedEdge]:
    """Edges made redundant once node ``p`` can be reached reliably.

    An edge ``(u, v)`` is discarded when it is not learned, ``u`` is not ``p``
    or a descendant of ``p``, and every route from ``v`` to a final node goes
    through ``p`` (trivially so when ``v == p``).
    """
    learned = set(learned)
    after = g.descendants(p) | {p}
    # nodes that still reach a final node when p is deleted
    escapes = set(f for f in g.finals if f != p)
    stack = list(escapes)
    while stack:
        v = stack.pop()
        for e in g.in_edges[v]:
            if e.src != p and e.src not in escapes:
                escapes.add(e.src)
                stack.append(e.src)
    return {
        e
        for e in g.edges
        if e not in learned and e.src not in after and (e.dst == p or e.dst not in escapes)
    }


def enumerate_paths(g: AbstractGraph, cap: int = 10_000) -> list[tuple[int, ...]]:
    """All simple q0 -> finals node sequences in lexicographic order."""
    paths: list[tuple[int, ...]] = []

    def walk(v, prefix):
        if v in g.finals:
            paths.append(prefix)
            if len(paths) > cap:
                raise PathExplosionError(f"more than {cap} paths")
            return
        for d in sorted({e.dst for e in g.out_edges[v]}):
            walk(d, prefix + (d,))

    walk(g.q0, (g.q0,))
    return paths


def shortest_path(g: AbstractGraph, edges: Iterable[GuardedEdge], start: int, targets) -> list[GuardedEdge] | None:
    """Fewest-edge path from ``start`` to any node in ``targets`` using only ``edges``."""
    targets = {targets} if isinstance(targets, int) else set(targets)
    usable = sorted(set(edges), key=lambda e: e.index)
    parent: dict[int, GuardedEdge | None] = {start: None}
    queue = deque([start])
    while queue:
        v = queue.popleft()
        if v in targets:
            path = []
            while parent[v] is not None:
                path.append(parent[v])
                v = parent[v].src
            return path[::-1]
        for e in usable:
            if e.src == v and e.dst not in parent:
                parent[e.dst] = e
                queue.append(e.dst)
    return None


# --------------------------------------------------------------------------
# export


def _edge_label(e: GuardedEdge) -> str:
    s = print_pred(e.guard)
    return s if e.safe is None else f"{s} ensuring {print_pred(e.safe)}"


def to_plain(g: AbstractGraph) -> str:
    lines = [f"EDGE {e.src} {e.dst} {_edge_label(e)}" for e in g.edges]
    lines += [f"FINAL {f}" for f in sorted(g.finals)]
    return "\n".join(lines) + "\n"


def to_dot(g: AbstractGraph, name: str = "G") -> str:
    lines = [f"digraph {name} {{", "  rankdir=LR;"]
    for v in range(g.node_count):
        shape = "doublecircle" if v in g.finals else "circle"
        lines.append(f'  q{v} [shape={shape}];')
    for e in g.edges:
        lines.append(f'  q{e.src} -> q{e.dst} [label="{print_pred(e.guard)}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
