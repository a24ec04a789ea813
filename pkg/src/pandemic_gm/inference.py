"""Exact MAP inference with clamped infection seeds.

Two solvers return the same answer on attractive models:

* :func:`map_bruteforce` enumerates every completion of the unclamped nodes.
* :func:`map_mincut` solves the problem as a minimum s-t cut.

Ties are broken the same way in both: the fewest infected nodes, then the
lexicographically smallest spin vector (-1 < +1). For the min cut this is the
cut with the smallest source side, which is the unique smallest minimiser
because minimisers of a submodular energy form a lattice.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .maxflow import FlowNetwork
from .model import (
    IsingModel,
    _energies,
    as_seed_set,
    disagreement_constant,
    energy,
    energy_tolerance,
    infected_set,
)

BRUTEFORCE_MAX_FREE = 25
_CHUNK_BITS = 16


class CapacityError(ValueError):
    """Raised when an exhaustive method is asked for a too-large instance."""


class MapClass(str, enum.Enum):
    POLARIZED_SAFE = "polarized-safe"
    POLARIZED_INFECTED = "polarized-infected"
    MIXED = "mixed"


@dataclass(frozen=True, eq=False)
class MapResult:
    state: np.ndarray
    energy: float
    method: str
    tie_broken: bool = False

    @property
    def infected(self) -> frozenset[int]:
        return infected_set(self.state)


@lru_cache(maxsize=32)
def _completions(free: int, start: int, stop: int) -> np.ndarray:
    """Rows start..stop-1 of all ±1 vectors of length ``free`` in lexicographic order."""
    idx = np.arange(start, stop, dtype=np.int64)
    shifts = np.arange(free - 1, -1, -1, dtype=np.int64)
    bits = (idx[:, None] >> shifts[None, :]) & 1
    out = (2 * bits - 1).astype(np.int8)
    out.setflags(write=False)
    return out


def map_bruteforce(model: IsingModel, seeds, max_free: int = BRUTEFORCE_MAX_FREE) -> MapResult:
    """Global minimum-energy state with ``seeds`` clamped to +1, by enumeration."""
    n = model.node_count
    seeds = as_seed_set(seeds, n)
    free = np.array([a for a in range(n) if a not in seeds], dtype=np.int64)
    f = free.size
    if f > max_free:
        raise CapacityError(
            f"{f} unclamped nodes exceed the brute-force cap of {max_free}; use map_mincut"
        )
    tol = energy_tolerance(model)
    base = np.full(n, -1, dtype=np.int8)
    base[list(seeds)] = 1
    total = 1 << f
    step = 1 << min(f, _CHUNK_BITS)

    best = np.inf
    cand_states: list[np.ndarray] = []
    cand_e: list[np.ndarray] = []
    for start in range(0, total, step):
        X = np.tile(base, (min(step, total - start), 1))
        if f:
            X[:, free] = _completions(f, start, min(start + step, total))
        e = _energies(model, X)
        m = e.min()
        if m < best:
            best = m
        keep = e <= best + tol
        cand_states.append(X[keep])
        cand_e.append(e[keep])

    X = np.concatenate(cand_states)
    e = np.concatenate(cand_e)
    keep = e <= best + tol
    X = X[keep]
    # lexsort sorts by the last key first: count of +1, then columns left to right
    order = np.lexsort(tuple(X[:, j] for j in range(n - 1, -1, -1)) + ((X == 1).sum(1),))
    x = X[order[0]].copy()
    x.setflags(write=False)
    return MapResult(x, energy(model, x), "brute-force", bool(len(X) > 1))


def _build_network(model: IsingModel, seeds: frozenset[int]):
    n = model.node_count
    s, t = n, n + 1
    net = FlowNetwork(n + 2)
    h = model.field
    J = model.coupling
    finite = 2.0 * (np.abs(h).sum() + J.sum())
    clamp = finite + 1.0
    for a in range(n):
        # source side is +1; cutting s->a puts a at -1, cutting a->t puts a at +1
        src = 2.0 * h[a] if h[a] > 0 else 0.0
        snk = -2.0 * h[a] if h[a] <= 0 else 0.0
        if a in seeds:
            src = clamp
        if src > 0:
            net.add_edge(s, a, src)
        if snk > 0:
            net.add_edge(a, t, snk)
    for (u, v), j in zip(model.graph.edges, J):
        if j > 0:
            net.add_edge(u, v, 2.0 * j, 2.0 * j)
    return net, s, t, finite


def map_mincut(model: IsingModel, seeds) -> MapResult:
    """Exact MAP with ``seeds`` clamped to +1 via a minimum s-t cut."""
    n = model.node_count
    seeds = as_seed_set(seeds, n)
    net, s, t, finite = _build_network(model, seeds)
    eps = 1e-12 * max(1.0, finite)
    flow = net.max_flow(s, t, eps)
    src_side = net.reachable_from(s)
    x = np.where(np.array(src_side[:n]), 1, -1).astype(np.int8)
    x.setflags(write=False)
    e = energy(model, x)
    if abs(e - (disagreement_constant(model) + flow)) > 1e3 * energy_tolerance(model):
        raise RuntimeError(f"cut energy {e} disagrees with flow value {flow}")
    to_sink = net.reaching(t)
    ambiguous = any(not src_side[a] and not to_sink[a] for a in range(n))
    return MapResult(x, e, "min-cut", ambiguous)


def classify_map(result: MapResult, seeds) -> MapClass:
    x = np.asarray(result.state)
    seeds = as_seed_set(seeds, x.size)
    infected = infected_set(x)
    if infected == seeds:
        return MapClass.POLARIZED_SAFE
    if len(infected) == x.size:
        return MapClass.POLARIZED_INFECTED
    return MapClass.MIXED


def map_state(model: IsingModel, seeds, method: str = "min-cut") -> MapResult:
    if method in ("min-cut", "mincut"):
        return map_mincut(model, seeds)
    if method in ("brute-force", "bruteforce"):
        return map_bruteforce(model, seeds)
    raise ValueError(f"unknown MAP method {method!r}")
