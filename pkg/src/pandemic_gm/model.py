"""Graph and Ising-model types, energy evaluation and seed catalogs.

Spins are stored as numpy int8 arrays with values in {-1, +1}; -1 is the
Susceptible state and +1 the Removed (ever infected) state.

The energy convention used throughout the package is

    E(x) = - sum_a h_a x_a - sum_{(a,b) in E} J_ab x_a x_b

so a negative field favours the Susceptible state and J >= 0 favours
aligned neighbours.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import combinations
from math import comb
from typing import Iterable, Iterator, Sequence

import numpy as np

SUSCEPTIBLE = -1
REMOVED = 1


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Graph:
    """Simple undirected graph on nodes 0..node_count-1.

    Edges are stored canonically as (u, v) with u < v, in the order given.
    Duplicate edges and self-loops are rejected.
    """

    node_count: int
    edges: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        n = int(self.node_count)
        if n <= 0:
            raise ValueError(f"node_count must be positive, got {self.node_count}")
        canon = []
        seen = set()
        for e in self.edges:
            u, v = (int(e[0]), int(e[1]))
            if u == v:
                raise ValueError(f"self-loop at node {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"edge ({u}, {v}) has a node outside 0..{n - 1}")
            key = (u, v) if u < v else (v, u)
            if key in seen:
                raise ValueError(f"duplicate edge {key}")
            seen.add(key)
            canon.append(key)
        object.__setattr__(self, "node_count", n)
        object.__setattr__(self, "edges", tuple(canon))

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @cached_property
    def edge_array(self) -> np.ndarray:
        """(M, 2) int array of canonical edges."""
        a = np.array(self.edges, dtype=np.int64).reshape(-1, 2)
        return _frozen(a)

    @cached_property
    def edge_index(self) -> dict[tuple[int, int], int]:
        return {e: i for i, e in enumerate(self.edges)}

    @cached_property
    def adjacency(self) -> tuple[tuple[int, ...], ...]:
        nbrs: list[list[int]] = [[] for _ in range(self.node_count)]
        for u, v in self.edges:
            nbrs[u].append(v)
            nbrs[v].append(u)
        return tuple(tuple(sorted(x)) for x in nbrs)

    def index_of(self, u: int, v: int) -> int:
        key = (u, v) if u < v else (v, u)
        try:
            return self.edge_index[key]
        except KeyError:
            raise KeyError(f"({u}, {v}) is not an edge") from None

    def degree(self) -> np.ndarray:
        return np.array([len(a) for a in self.adjacency], dtype=np.int64)

    @classmethod
    def complete(cls, n: int) -> "Graph":
        return cls(n, tuple(combinations(range(n), 2)))

    @classmethod
    def path(cls, n: int) -> "Graph":
        return cls(n, tuple((i, i + 1) for i in range(n - 1)))

    @classmethod
    def grid(cls, rows: int, cols: int) -> "Graph":
        edges = []
        for r in range(rows):
            for c in range(cols):
                a = r * cols + c
                if c + 1 < cols:
                    edges.append((a, a + 1))
                if r + 1 < rows:
                    edges.append((a, a + cols))
        return cls(rows * cols, tuple(edges))


@dataclass(frozen=True, eq=False)
class IsingModel:
    """Attractive Ising model: couplings aligned with ``graph.edges``, fields per node."""

    graph: Graph
    coupling: np.ndarray
    field: np.ndarray

    def __post_init__(self):
        J = np.array(self.coupling, dtype=float).reshape(-1)
        h = np.array(self.field, dtype=float).reshape(-1)
        if J.shape[0] != self.graph.edge_count:
            raise ValueError(
                f"coupling has {J.shape[0]} entries for {self.graph.edge_count} edges"
            )
        if h.shape[0] != self.graph.node_count:
            raise ValueError(
                f"field has {h.shape[0]} entries for {self.graph.node_count} nodes"
            )
        if not np.all(np.isfinite(J)):
            raise ValueError("coupling values must be finite")
        if np.any(J < 0):
            bad = int(np.flatnonzero(J < 0)[0])
            raise ValueError(
                f"coupling on edge {self.graph.edges[bad]} is {J[bad]}; "
                "attractive models need J >= 0"
            )
        if not np.all(np.isfinite(h)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "coupling", _frozen(J))
        object.__setattr__(self, "field", _frozen(h))

    @property
    def node_count(self) -> int:
        return self.graph.node_count

    def coupling_of(self, u: int, v: int) -> float:
        return float(self.coupling[self.graph.index_of(u, v)])

    def with_parameters(self, coupling=None, field=None) -> "IsingModel":
        return IsingModel(
            self.graph,
            self.coupling if coupling is None else coupling,
            self.field if field is None else field,
        )

    def scaled(self, lam: float) -> "IsingModel":
        return IsingModel(self.graph, self.coupling * lam, self.field * lam)

    def __eq__(self, other):
        if not isinstance(other, IsingModel):
            return NotImplemented
        return (
            self.graph == other.graph
            and np.array_equal(self.coupling, other.coupling)
            and np.array_equal(self.field, other.field)
        )

    __hash__ = None


def as_spins(x: Sequence[int] | np.ndarray, n: int | None = None) -> np.ndarray:
    """Validate and convert to an int8 spin vector."""
    a = np.asarray(x)
    if a.ndim != 1:
        raise ValueError("spin state must be one-dimensional")
    if n is not None and a.shape[0] != n:
        raise ValueError(f"spin state has length {a.shape[0]}, expected {n}")
    if not np.all((a == 1) | (a == -1)):
        raise ValueError("spin entries must be exactly -1 or +1")
    return a.astype(np.int8)


def as_seed_set(nodes: Iterable[int], n: int) -> frozenset[int]:
    """Validate a set of initially infected nodes for a graph with ``n`` nodes."""
    s = frozenset(int(a) for a in nodes)
    if not s:
        raise ValueError("seed set must be non-empty")
    bad = sorted(a for a in s if not 0 <= a < n)
    if bad:
        raise ValueError(f"seed nodes {bad} outside 0..{n - 1}")
    return s


def energy(model: IsingModel, state) -> float:
    x = as_spins(state, model.node_count).astype(float)
    return float(_energies(model, x[None, :])[0])


def _energies(model: IsingModel, X: np.ndarray) -> np.ndarray:
    """Energies of a batch of states, rows of ``X`` (float or int)."""
    X = np.asarray(X, dtype=float)
    e = -X @ model.field
    if model.graph.edge_count:
        u, v = model.graph.edge_array.T
        e -= (X[:, u] * X[:, v]) @ model.coupling
    return e


def energies(model: IsingModel, states) -> np.ndarray:
    """Vectorised energy of each row of ``states``."""
    X = np.atleast_2d(np.asarray(states))
    if X.shape[1] != model.node_count:
        raise ValueError(f"states have {X.shape[1]} columns, expected {model.node_count}")
    return _energies(model, X)


def field_sign(h: np.ndarray) -> np.ndarray:
    """Preferred spin of each node under its field alone; h == 0 maps to -1."""
    return np.where(np.asarray(h) > 0, 1, -1).astype(np.int8)


def disagreement_constant(model: IsingModel) -> float:
    return float(-np.abs(model.field).sum() - model.coupling.sum())


def disagreement_energy(model: IsingModel, state) -> float:
    """Energy written as C0 plus nonnegative penalties for disagreements.

    Each cut edge costs 2 J_ab and each node opposing its field costs 2 |h_a|.
    Equal to :func:`energy` for every state.
    """
    x = as_spins(state, model.node_count)
    u, v = model.graph.edge_array.T
    cut = x[u] != x[v]
    opposed = x != field_sign(model.field)
    return float(
        disagreement_constant(model)
        + 2.0 * model.coupling[cut].sum()
        + 2.0 * np.abs(model.field)[opposed].sum()
    )


def energy_tolerance(model: IsingModel) -> float:
    """Absolute tolerance under which two energies count as tied."""
    return 1e-9 * max(1.0, float(np.abs(model.field).sum() + model.coupling.sum()))


def infected_set(state) -> frozenset[int]:
    x = np.asarray(state)
    return frozenset(int(a) for a in np.flatnonzero(x == REMOVED))


def state_from_infected(infected: Iterable[int], n: int) -> np.ndarray:
    x = np.full(n, SUSCEPTIBLE, dtype=np.int8)
    x[list(infected)] = REMOVED
    return x


@dataclass(frozen=True)
class SeedCatalog:
    """Ordered list of distinct seed sets (initial infection patterns)."""

    seed_sets: tuple[frozenset[int], ...]
    node_count: int

    def __post_init__(self):
        sets = []
        seen = set()
        for s in self.seed_sets:
            fs = as_seed_set(s, self.node_count)
            if fs in seen:
                raise ValueError(f"duplicate seed set {sorted(fs)}")
            seen.add(fs)
            sets.append(fs)
        object.__setattr__(self, "seed_sets", tuple(sets))

    def __len__(self) -> int:
        return len(self.seed_sets)

    def __iter__(self) -> Iterator[frozenset[int]]:
        return iter(self.seed_sets)

    def __getitem__(self, i):
        return self.seed_sets[i]

    @property
    def max_size(self) -> int:
        return max((len(s) for s in self.seed_sets), default=0)

    def membership(self) -> np.ndarray:
        """(len, node_count) boolean matrix; row i marks the nodes of seed set i."""
        S = np.zeros((len(self), self.node_count), dtype=bool)
        for i, s in enumerate(self.seed_sets):
            S[i, list(s)] = True
        return S


def catalog_size(n: int, k_max: int) -> int:
    return sum(comb(n, k) for k in range(1, k_max + 1))


def enumerate_seed_catalog(graph: Graph, k_max: int) -> SeedCatalog:
    """All node subsets of size 1..k_max, by size then lexicographically."""
    n = graph.node_count
    if not 1 <= k_max <= n:
        raise ValueError(f"k_max must be in 1..{n}, got {k_max}")
    sets = tuple(
        frozenset(c) for k in range(1, k_max + 1) for c in combinations(range(n), k)
    )
    return SeedCatalog(sets, n)
