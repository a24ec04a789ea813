"""Safety checks and linear descriptions of the safe region in (J, h) space.

A constraint reads ``edge_coeffs . J + node_coeffs . h <= rhs``. Its residual
is ``lhs - rhs``; positive residual means violated.

For a seed set I the two-mode constraint compares the all-infected state with
the state where only I is infected. Under the package energy convention,

    E(all +1) - E(x^I) = -2 * (sum_{b not in I} h_b + sum_{(a,b) cut by I} J_ab)

so E(all +1) >= E(x^I) exactly when the bracket is <= 0.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from ._parallel import ordered_map
from .inference import CapacityError, MapClass, classify_map, map_mincut
from .model import (
    Graph,
    IsingModel,
    SeedCatalog,
    _energies,
    as_seed_set,
    state_from_infected,
)

EXACT_FACETS_MAX_NODES = 4


@dataclass(frozen=True, eq=False)
class SafetyConstraint:
    """One linear inequality over couplings and fields, stored sparsely."""

    edge_index: np.ndarray
    edge_value: np.ndarray
    node_index: np.ndarray
    node_value: np.ndarray
    rhs: float
    origin: frozenset[int]
    competitor: tuple[int, ...] | None = None
    sense: str = "<="

    def lhs(self, coupling, field) -> float:
        J = np.asarray(coupling, dtype=float)
        h = np.asarray(field, dtype=float)
        return float(J[self.edge_index] @ self.edge_value + h[self.node_index] @ self.node_value)

    def residual(self, model: IsingModel) -> float:
        return self.lhs(model.coupling, model.field) - self.rhs

    def edge_coeffs(self, edge_count: int) -> np.ndarray:
        a = np.zeros(edge_count)
        a[self.edge_index] = self.edge_value
        return a

    def node_coeffs(self, node_count: int) -> np.ndarray:
        a = np.zeros(node_count)
        a[self.node_index] = self.node_value
        return a


class ConstraintSet(Sequence):
    """Sequence of :class:`SafetyConstraint` backed by sparse matrices.

    Row i is ``edge_matrix[i] . J + node_matrix[i] . h <= rhs[i]``.
    """

    def __init__(self, graph: Graph, edge_matrix, node_matrix, rhs, origins, competitors=None):
        self.graph = graph
        self.edge_matrix = sp.csr_matrix(edge_matrix, shape=(len(origins), graph.edge_count))
        self.node_matrix = sp.csr_matrix(node_matrix, shape=(len(origins), graph.node_count))
        self.rhs = np.asarray(rhs, dtype=float).reshape(-1)
        self.origins = tuple(origins)
        self.competitors = tuple(competitors) if competitors is not None else None
        if not (self.edge_matrix.shape[0] == self.node_matrix.shape[0] == self.rhs.size):
            raise ValueError("constraint matrices and rhs disagree in row count")

    def __len__(self) -> int:
        return self.rhs.size

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        if i < 0:
            i += len(self)
        er = self.edge_matrix.getrow(i)
        nr = self.node_matrix.getrow(i)
        return SafetyConstraint(
            edge_index=er.indices.copy(),
            edge_value=er.data.copy(),
            node_index=nr.indices.copy(),
            node_value=nr.data.copy(),
            rhs=float(self.rhs[i]),
            origin=self.origins[i],
            competitor=None if self.competitors is None else self.competitors[i],
        )

    def lhs(self, coupling, field) -> np.ndarray:
        return self.edge_matrix @ np.asarray(coupling, float) + self.node_matrix @ np.asarray(
            field, float
        )

    def residuals(self, model: IsingModel) -> np.ndarray:
        return self.lhs(model.coupling, model.field) - self.rhs

    def contains(self, model: IsingModel, tol: float = 0.0) -> bool:
        return bool(np.all(self.residuals(model) <= tol))

    @classmethod
    def from_constraints(cls, graph: Graph, constraints: Iterable[SafetyConstraint]):
        cons = list(constraints)
        rows_e, cols_e, vals_e, rows_n, cols_n, vals_n = [], [], [], [], [], []
        for i, c in enumerate(cons):
            rows_e.append(np.full(c.edge_index.size, i))
            cols_e.append(c.edge_index)
            vals_e.append(c.edge_value)
            rows_n.append(np.full(c.node_index.size, i))
            cols_n.append(c.node_index)
            vals_n.append(c.node_value)
        m = len(cons)

        def coo(r, c, v, width):
            if not r:
                return sp.csr_matrix((m, width))
            return sp.csr_matrix(
                (np.concatenate(v), (np.concatenate(r), np.concatenate(c))), shape=(m, width)
            )

        return cls(
            graph,
            coo(rows_e, cols_e, vals_e, graph.edge_count),
            coo(rows_n, cols_n, vals_n, graph.node_count),
            [c.rhs for c in cons],
            [c.origin for c in cons],
            [c.competitor for c in cons] if any(c.competitor for c in cons) else None,
        )


def two_mode_constraint(graph: Graph, seeds) -> SafetyConstraint:
    """sum_{b not in I} h_b + sum_{edges cut by I} J_ab <= 0."""
    seeds = as_seed_set(seeds, graph.node_count)
    cut = [i for i, (u, v) in enumerate(graph.edges) if (u in seeds) != (v in seeds)]
    rest = [b for b in range(graph.node_count) if b not in seeds]
    return SafetyConstraint(
        edge_index=np.array(cut, dtype=np.int64),
        edge_value=np.ones(len(cut)),
        node_index=np.array(rest, dtype=np.int64),
        node_value=np.ones(len(rest)),
        rhs=0.0,
        origin=seeds,
    )


def build_two_mode_polytope(graph: Graph, catalog: SeedCatalog, margin: float = 0.0) -> ConstraintSet:
    """One two-mode constraint per seed set, in catalog order.

    With ``margin`` > 0 each row demands E(all +1) - E(x^I) >= margin, i.e.
    the right-hand side becomes -margin/2.
    """
    if len(catalog) == 0:
        raise ValueError("seed catalog is empty")
    if margin < 0:
        raise ValueError("margin must be nonnegative")
    S = np.zeros((len(catalog), graph.node_count), dtype=bool)
    for i, s in enumerate(catalog):
        S[i, list(as_seed_set(s, graph.node_count))] = True
    if graph.edge_count:
        u, v = graph.edge_array.T
        A_J = sp.csr_matrix((S[:, u] != S[:, v]).astype(float))
    else:
        A_J = sp.csr_matrix((len(catalog), 0))
    A_h = sp.csr_matrix((~S).astype(float))
    return ConstraintSet(graph, A_J, A_h, np.full(len(catalog), 0.0 - margin / 2.0), list(catalog))


def two_mode_margins(model: IsingModel, catalog: SeedCatalog) -> np.ndarray:
    """E(all +1) - E(x^I) for every seed set in the catalog."""
    return -2.0 * build_two_mode_polytope(model.graph, catalog).residuals(model)


@dataclass(frozen=True)
class SeedOutcome:
    seeds: frozenset[int]
    infected_count: int
    map_class: MapClass
    margin: float


@dataclass(frozen=True)
class SafetyReport:
    """Per-seed exact MAP outcomes against an infection threshold ``k``.

    ``required_margin`` > 0 additionally demands E(all +1) - E(x^I) >= margin
    for every seed; :attr:`certified` combines both tests.
    """

    k: int
    per_seed: tuple[SeedOutcome, ...]
    required_margin: float = 0.0

    @property
    def safe(self) -> bool:
        return all(o.infected_count <= self.k for o in self.per_seed)

    @property
    def violations(self) -> list[SeedOutcome]:
        return [o for o in self.per_seed if o.infected_count > self.k]

    @property
    def margin_violations(self) -> list[SeedOutcome]:
        if self.required_margin <= 0:
            return []
        return [o for o in self.per_seed if o.margin < self.required_margin]

    @property
    def certified(self) -> bool:
        return self.safe and not self.margin_violations

    @property
    def worst(self) -> SeedOutcome | None:
        if not self.per_seed:
            return None
        # first seed (catalog order) attaining the largest infected count
        return max(self.per_seed, key=lambda o: o.infected_count)

    @property
    def worst_seed(self) -> frozenset[int] | None:
        w = self.worst
        return None if w is None else w.seeds

    @property
    def worst_infected_count(self) -> int:
        w = self.worst
        return 0 if w is None else w.infected_count

    @property
    def min_margin(self) -> float:
        return min((o.margin for o in self.per_seed), default=float("inf"))


def _seed_outcome(args):
    model, seeds = args
    r = map_mincut(model, seeds)
    return len(r.infected), classify_map(r, seeds)


def is_k_safe_exact(
    model: IsingModel,
    catalog: SeedCatalog,
    k: int,
    margin: float = 0.0,
    workers: int = 1,
) -> SafetyReport:
    """Exact k-safety: every seed's MAP infects at most ``k`` nodes."""
    if len(catalog) == 0:
        raise ValueError("seed catalog is empty")
    if k < catalog.max_size:
        raise ValueError(f"k={k} is below the largest seed set size {catalog.max_size}")
    margins = two_mode_margins(model, catalog)
    results = ordered_map(_seed_outcome, [(model, s) for s in catalog], workers)
    per_seed = tuple(
        SeedOutcome(s, cnt, cls, float(m))
        for s, (cnt, cls), m in zip(catalog, results, margins)
    )
    return SafetyReport(k, per_seed, margin)


def _competitors(n: int, R: frozenset[int]):
    free = [a for a in range(n) if a not in R]
    for r in range(1, len(free) + 1):
        for extra in combinations(free, r):
            yield state_from_infected(R | set(extra), n)


def exact_sp_facets_tiny(
    graph: Graph,
    k: int,
    field,
    prune: bool = False,
    max_nodes: int = EXACT_FACETS_MAX_NODES,
) -> ConstraintSet:
    """All inequalities E(x^R) <= E(x) for |R| <= k and x a strict superset state of R.

    Constraints live in J-space with the field held fixed (folded into rhs).
    With ``prune`` duplicate rows and rows satisfied by every J >= 0 are dropped.
    """
    n = graph.node_count
    if n > max_nodes:
        raise CapacityError(f"exact facet enumeration supports at most {max_nodes} nodes, got {n}")
    if not 1 <= k <= n:
        raise ValueError(f"k must be in 1..{n}, got {k}")
    h = np.asarray(field, dtype=float)
    if h.shape != (n,):
        raise ValueError(f"field must have {n} entries")
    u, v = graph.edge_array.T
    rows, rhs, origins, comps = [], [], [], []
    seen = set()
    for size in range(1, k + 1):
        for R in combinations(range(n), size):
            R = frozenset(R)
            xR = state_from_infected(R, n).astype(float)
            sR = xR[u] * xR[v]
            for x in _competitors(n, R):
                xf = x.astype(float)
                coef = xf[u] * xf[v] - sR
                b = float(h @ (xR - xf))
                if prune:
                    if np.all(coef <= 0) and b >= 0:
                        continue
                    key = (tuple(coef), b)
                    if key in seen:
                        continue
                    seen.add(key)
                rows.append(coef)
                rhs.append(b)
                origins.append(R)
                comps.append(tuple(int(a) for a in x))
    A_J = np.array(rows).reshape(len(rows), graph.edge_count)
    return ConstraintSet(graph, A_J, sp.csr_matrix((len(rows), n)), rhs, origins, comps)


def exact_sp_energy_check(model: IsingModel, constraints: ConstraintSet) -> np.ndarray:
    """Direct energy differences E(x^R) - E(x) for each facet, for cross-checking."""
    out = np.empty(len(constraints))
    n = model.node_count
    for i, (R, comp) in enumerate(zip(constraints.origins, constraints.competitors)):
        xR = state_from_infected(R, n)
        out[i] = np.diff(_energies(model, np.array([comp, xR])))[0]
    return out
