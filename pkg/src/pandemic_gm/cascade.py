"""Independent Cascade Model over an undirected graph.

Synchronous updates: during a step every Infected node tries once to infect
each Susceptible neighbour with the edge's probability, then becomes Removed.
Random draws are consumed in canonical edge order, one per (I, S) edge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Graph, as_seed_set

S, I, R = 0, 1, 2


@dataclass(frozen=True, eq=False)
class CascadeModel:
    graph: Graph
    transmit_prob: np.ndarray

    def __post_init__(self):
        p = np.array(self.transmit_prob, dtype=float).reshape(-1)
        if p.size == 1 and self.graph.edge_count != 1:
            p = np.full(self.graph.edge_count, p[0])
        if p.size != self.graph.edge_count:
            raise ValueError(f"{p.size} probabilities for {self.graph.edge_count} edges")
        if np.any(~np.isfinite(p)) or np.any((p < 0) | (p > 1)):
            raise ValueError("transmission probabilities must lie in [0, 1]")
        p.setflags(write=False)
        object.__setattr__(self, "transmit_prob", p)


@dataclass(frozen=True, eq=False)
class CascadeTrace:
    """``states[t]`` is the S/I/R code of every node after ``t`` steps."""

    states: np.ndarray

    @property
    def steps(self) -> int:
        return self.states.shape[0] - 1

    @property
    def removed(self) -> frozenset[int]:
        return frozenset(int(a) for a in np.flatnonzero(self.states[-1] == R))


def icm_run(model: CascadeModel, seeds, rng: np.random.Generator) -> CascadeTrace:
    g = model.graph
    seeds = as_seed_set(seeds, g.node_count)
    state = np.full(g.node_count, S, dtype=np.int8)
    state[list(seeds)] = I
    u, v = g.edge_array.T
    p = model.transmit_prob
    history = [state.copy()]
    while np.any(state == I):
        su, sv = state[u], state[v]
        # edges with exactly one Infected and one Susceptible endpoint
        live = np.flatnonzero(((su == I) & (sv == S)) | ((su == S) & (sv == I)))
        hit = rng.random(live.size) < p[live]
        targets = np.where(state[u[live]] == S, u[live], v[live])[hit]
        state[state == I] = R
        state[targets] = I
        history.append(state.copy())
    return CascadeTrace(np.array(history))


def reachable(graph: Graph, seeds) -> frozenset[int]:
    seen = set(as_seed_set(seeds, graph.node_count))
    stack = list(seen)
    while stack:
        a = stack.pop()
        for b in graph.adjacency[a]:
            if b not in seen:
                seen.add(b)
                stack.append(b)
    return frozenset(seen)
