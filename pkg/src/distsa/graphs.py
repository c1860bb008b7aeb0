"""Time-varying directed neighbor graphs with self-arcs.

Arcs are ordered pairs ``(j, i)`` meaning agent ``j`` is an in-neighbor of
agent ``i``.  Agents are numbered ``1..N`` at the public surface (config
files, edge-list dumps, arc sets); adjacency arrays are 0-based with
``adj[i, j]`` true iff ``(j+1, i+1)`` is an arc, which is the zero pattern of
a row-stochastic consensus matrix.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "DirectedGraph",
    "GraphSequence",
    "ConstantSchedule",
    "PeriodicSchedule",
    "TemplateSchedule",
    "SwitchSchedule",
    "GraphError",
    "union_graph",
    "is_strongly_connected",
    "diameter",
    "verify_uniform_strong_connectivity",
    "delta_max",
    "complete_graph",
    "ring_graph",
    "bidirectional_ring_graph",
    "path_graph",
    "self_loop_graph",
    "dump_edge_list",
]

_BLOCK = 4096


class GraphError(ValueError):
    """Raised for malformed graphs or connectivity-dependent domain errors."""


@dataclass(frozen=True)
class DirectedGraph:
    n_agents: int
    arcs: frozenset

    def __post_init__(self):
        if self.n_agents < 1:
            raise GraphError(f"n_agents must be positive, got {self.n_agents}")
        arcs = frozenset((int(j), int(i)) for j, i in self.arcs)
        object.__setattr__(self, "arcs", arcs)
        for j, i in arcs:
            if not (1 <= j <= self.n_agents and 1 <= i <= self.n_agents):
                raise GraphError(f"arc ({j},{i}) outside 1..{self.n_agents}")
        missing = [i for i in range(1, self.n_agents + 1) if (i, i) not in arcs]
        if missing:
            raise GraphError(f"missing self-arcs at agents {missing}")

    @classmethod
    def from_arcs(cls, n_agents: int, arcs: Iterable, add_self_loops: bool = True):
        arcs = set((int(j), int(i)) for j, i in arcs)
        if add_self_loops:
            arcs.update((i, i) for i in range(1, n_agents + 1))
        return cls(n_agents, frozenset(arcs))

    @classmethod
    def from_adjacency(cls, adj: np.ndarray) -> "DirectedGraph":
        adj = np.asarray(adj, dtype=bool)
        rows, cols = np.nonzero(adj)
        return cls(adj.shape[0], frozenset((int(j) + 1, int(i) + 1) for i, j in zip(rows, cols)))

    def adjacency(self) -> np.ndarray:
        """Boolean ``(N, N)`` array with ``adj[i, j]`` true iff j -> i."""
        adj = np.zeros((self.n_agents, self.n_agents), dtype=bool)
        for j, i in self.arcs:
            adj[i - 1, j - 1] = True
        return adj

    def in_neighbors(self, i: int) -> set:
        return {j for j, k in self.arcs if k == i}

    def out_neighbors(self, j: int) -> set:
        return {i for k, i in self.arcs if k == j}


def complete_graph(n: int) -> DirectedGraph:
    return DirectedGraph(n, frozenset((j, i) for j in range(1, n + 1) for i in range(1, n + 1)))


def self_loop_graph(n: int) -> DirectedGraph:
    return DirectedGraph.from_arcs(n, [])


def ring_graph(n: int) -> DirectedGraph:
    """Directed ring 1 -> 2 -> ... -> n -> 1 with self-arcs."""
    return DirectedGraph.from_arcs(n, [(k, k % n + 1) for k in range(1, n + 1)] if n > 1 else [])


def bidirectional_ring_graph(n: int) -> DirectedGraph:
    arcs = []
    for k in range(1, n + 1):
        arcs += [(k, k % n + 1), (k % n + 1, k)]
    return DirectedGraph.from_arcs(n, arcs if n > 1 else [])


def path_graph(n: int, bidirectional: bool = True) -> DirectedGraph:
    arcs = [(k, k + 1) for k in range(1, n)]
    if bidirectional:
        arcs += [(k + 1, k) for k in range(1, n)]
    return DirectedGraph.from_arcs(n, arcs)


def union_graph(graphs: Sequence[DirectedGraph]) -> DirectedGraph:
    if not graphs:
        raise GraphError("union of an empty list of graphs")
    n = graphs[0].n_agents
    if any(g.n_agents != n for g in graphs):
        raise GraphError("dimension mismatch: graphs have different n_agents")
    arcs = frozenset().union(*(g.arcs for g in graphs))
    return DirectedGraph(n, arcs)


def _bfs_distances(adj_out: np.ndarray, source: int) -> np.ndarray:
    n = adj_out.shape[0]
    dist = np.full(n, -1, dtype=np.int64)
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(adj_out[u]):
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def _distance_matrix(adj: np.ndarray) -> np.ndarray:
    # adj[i, j] means j -> i, so successors of u are the rows i with adj[i, u]
    adj_out = np.asarray(adj, dtype=bool).T
    return np.stack([_bfs_distances(adj_out, s) for s in range(adj_out.shape[0])])


def is_strongly_connected(g) -> bool:
    adj = g.adjacency() if isinstance(g, DirectedGraph) else np.asarray(g, dtype=bool)
    return bool(np.all(_distance_matrix(adj) >= 0))


def diameter(g) -> int:
    """Longest shortest directed path over ordered pairs of distinct agents.

    A single agent is reported with diameter 1 so that it can divide
    quantities that assume a positive diameter.
    """
    adj = g.adjacency() if isinstance(g, DirectedGraph) else np.asarray(g, dtype=bool)
    dist = _distance_matrix(adj)
    if np.any(dist < 0):
        raise GraphError("diameter undefined: graph is not strongly connected")
    return max(int(dist.max()), 1)


class GraphSequence:
    """Base class for deterministic graph schedules ``t -> G_t``.

    Subclasses implement :meth:`adjacency_stack`, the vectorised emitter used
    by the simulation engines; :meth:`graph_at` wraps it.
    """

    n_agents: int
    declared_L: int

    def adjacency_stack(self, t0: int, t1: int) -> np.ndarray:
        raise NotImplementedError

    def graph_at(self, t: int) -> DirectedGraph:
        if t < 0:
            raise GraphError(f"time index must be nonnegative, got {t}")
        return DirectedGraph.from_adjacency(self.adjacency_stack(t, t + 1)[0])

    def certification_horizon(self) -> int | None:
        """Number of window starts that certifies all t, or None if unknown."""
        return None


@dataclass(frozen=True)
class ConstantSchedule(GraphSequence):
    graph: DirectedGraph
    declared_L: int = 1

    @property
    def n_agents(self) -> int:
        return self.graph.n_agents

    def adjacency_stack(self, t0, t1):
        return np.broadcast_to(self.graph.adjacency(), (t1 - t0, self.n_agents, self.n_agents)).copy()

    def certification_horizon(self):
        return 1


@dataclass(frozen=True)
class PeriodicSchedule(GraphSequence):
    graphs: tuple
    declared_L: int = 1

    def __post_init__(self):
        if not self.graphs:
            raise GraphError("periodic schedule needs at least one graph")
        object.__setattr__(self, "graphs", tuple(self.graphs))
        union_graph(list(self.graphs))  # dimension check

    @property
    def n_agents(self) -> int:
        return self.graphs[0].n_agents

    @property
    def period(self) -> int:
        return len(self.graphs)

    def adjacency_stack(self, t0, t1):
        bank = np.stack([g.adjacency() for g in self.graphs])
        return bank[np.arange(t0, t1) % self.period]

    def certification_horizon(self):
        return self.period


@dataclass(frozen=True)
class TemplateSchedule(GraphSequence):
    """Seeded random graphs that are uniformly strongly connected by construction.

    A random directed Hamiltonian cycle is drawn once from ``seed`` and its arcs
    are split into ``declared_L`` residue classes; the graph at time ``t``
    carries the class ``t mod L`` plus extra arcs drawn independently with
    probability ``p_extra``.  Every window of ``L`` consecutive graphs contains
    the whole cycle, so its union is strongly connected.
    """

    n_agents: int
    declared_L: int = 1
    p_extra: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.declared_L < 1:
            raise GraphError("declared_L must be >= 1")
        if not 0.0 <= self.p_extra <= 1.0:
            raise GraphError("p_extra must lie in [0, 1]")

    def _cycle_slots(self) -> np.ndarray:
        n, L = self.n_agents, self.declared_L
        rng = np.random.default_rng([self.seed, 0x5EED])
        order = rng.permutation(n)
        slots = np.full((n, n), -1, dtype=np.int64)
        if n > 1:
            # spread the n cycle arcs over the L residue classes, each class nonempty when n >= L
            classes = rng.permutation(np.arange(n) % L)
            for k in range(n):
                src, dst = order[k], order[(k + 1) % n]
                slots[dst, src] = classes[k]
        return slots

    def adjacency_stack(self, t0, t1):
        n = self.n_agents
        slots = self._cycle_slots()
        out = np.empty((t1 - t0, n, n), dtype=bool)
        eye = np.eye(n, dtype=bool)
        b0, b1 = t0 // _BLOCK, (t1 - 1) // _BLOCK if t1 > t0 else t0 // _BLOCK - 1
        for b in range(b0, b1 + 1):
            draws = np.random.default_rng([self.seed, b]).random((_BLOCK, n, n)) < self.p_extra
            lo, hi = max(t0, b * _BLOCK), min(t1, (b + 1) * _BLOCK)
            ts = np.arange(lo, hi)
            adj = draws[ts - b * _BLOCK] | eye
            adj |= slots[None, :, :] == (ts % self.declared_L)[:, None, None]
            out[lo - t0:hi - t0] = adj
        return out


@dataclass(frozen=True)
class SwitchSchedule(GraphSequence):
    """``before`` for t < ``switch_time``, then ``after`` (re-indexed from 0)."""

    before: GraphSequence
    after: GraphSequence
    switch_time: int
    declared_L: int = 1

    def __post_init__(self):
        if self.before.n_agents != self.after.n_agents:
            raise GraphError("dimension mismatch between switch phases")

    @property
    def n_agents(self) -> int:
        return self.before.n_agents

    def adjacency_stack(self, t0, t1):
        parts = []
        s = self.switch_time
        if t0 < s:
            parts.append(self.before.adjacency_stack(t0, min(t1, s)))
        if t1 > s:
            parts.append(self.after.adjacency_stack(max(t0, s) - s, t1 - s))
        return np.concatenate(parts) if parts else np.empty((0, self.n_agents, self.n_agents), bool)

    def certification_horizon(self):
        h = self.after.certification_horizon()
        return None if h is None else self.switch_time + h


def _window_unions(adj: np.ndarray, L: int) -> np.ndarray:
    """Boolean unions over every length-L window of an adjacency stack."""
    T = adj.shape[0]
    counts = np.cumsum(np.concatenate([np.zeros((1,) + adj.shape[1:], np.int32), adj.astype(np.int32)]), axis=0)
    return (counts[L:T + 1] - counts[:T + 1 - L]) > 0


def _distinct_window_unions(seq: GraphSequence, L: int, horizon: int, chunk: int = 1 << 15) -> np.ndarray:
    """Distinct window unions over the checked range, built chunk by chunk."""
    if L < 1:
        raise GraphError("window length L must be >= 1")
    if horizon < L:
        raise GraphError(f"horizon {horizon} shorter than window {L}")
    cert = seq.certification_horizon()
    # windows starting in [0, T-L]; for eventually periodic schedules one extra period of starts covers all t
    n_starts = horizon - L + 1 if cert is None else cert + L
    found = []
    for s0 in range(0, n_starts, chunk):
        s1 = min(n_starts, s0 + chunk)
        found.append(_unique(_window_unions(seq.adjacency_stack(s0, s1 + L - 1), L)))
    return _unique(np.concatenate(found))


def verify_uniform_strong_connectivity(seq: GraphSequence, L: int, horizon: int) -> bool:
    """True iff every length-L window union within the checked range is strongly connected.

    For constant, periodic and switch-to-periodic schedules the checked range
    covers one full period of window offsets past any transient, which
    certifies the property for all t.
    """
    return all(is_strongly_connected(u) for u in _distinct_window_unions(seq, L, horizon))


def delta_max(seq: GraphSequence, L: int, horizon: int) -> int:
    best = 0
    for u in _distinct_window_unions(seq, L, horizon):
        if not is_strongly_connected(u):
            raise GraphError("window union not strongly connected; delta_max undefined")
        best = max(best, diameter(u))
    return best


def _unique(stack: np.ndarray) -> np.ndarray:
    flat = np.packbits(stack.reshape(stack.shape[0], -1), axis=1)
    _, first = np.unique(flat, axis=0, return_index=True)
    return stack[np.sort(first)]


def dump_edge_list(g: DirectedGraph, path) -> Path:
    """Write one ``j i`` pair per line, sorted."""
    path = Path(path)
    path.write_text("".join(f"{j} {i}\n" for j, i in sorted(g.arcs)))
    return path
