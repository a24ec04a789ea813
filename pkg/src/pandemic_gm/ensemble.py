"""Random-graph ensembles of attractive models and the K3 geometry scan.

Randomness is drawn from Philox streams keyed by (rng_seed, sweep point,
sample), so results do not depend on evaluation order or worker count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from math import comb

import numpy as np
from scipy import stats

from ._parallel import ordered_map
from .inference import MapClass, classify_map, map_bruteforce, map_mincut
from .model import Graph, IsingModel, as_seed_set, enumerate_seed_catalog
from .polytope import build_two_mode_polytope, exact_sp_facets_tiny

_GRAPH_STREAM = 2**31 - 1


def stream(rng_seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for one (point, sample) cell."""
    ss = np.random.SeedSequence(int(rng_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def gen_gnm(n: int, m: int, rng: np.random.Generator) -> Graph:
    """Uniform simple graph with exactly ``m`` edges."""
    total = comb(n, 2)
    if not 0 <= m <= total:
        raise ValueError(f"M must be in 0..{total} for N={n}, got {m}")
    iu, ju = np.triu_indices(n, k=1)
    pick = np.sort(rng.choice(total, size=m, replace=False))
    return Graph(n, tuple(zip(iu[pick].tolist(), ju[pick].tolist())))


def _pairing(n: int, d: int, rng: np.random.Generator, max_restarts: int) -> list[tuple[int, int]]:
    # pair stubs only among suitable partners; restart when stuck
    for _ in range(max_restarts):
        edges: set[tuple[int, int]] = set()
        stubs = np.repeat(np.arange(n), d)
        ok = True
        while stubs.size:
            rng.shuffle(stubs)
            left = []
            it = iter(stubs.tolist())
            for a, b in zip(it, it):
                e = (a, b) if a < b else (b, a)
                if a != b and e not in edges:
                    edges.add(e)
                else:
                    left += [a, b]
            if len(left) == stubs.size:
                ok = False
                break
            stubs = np.array(left, dtype=np.int64)
        if ok:
            return sorted(edges)
    raise RuntimeError(f"could not build a {d}-regular graph on {n} nodes")


def gen_regular(n: int, d: int, rng: np.random.Generator, max_restarts: int = 1000) -> Graph:
    """Random simple d-regular graph (pairing model with restarts)."""
    if not 0 <= d < n:
        raise ValueError(f"degree must satisfy 0 <= d < N, got d={d}, N={n}")
    if (d * n) % 2:
        raise ValueError(f"d*N must be even, got d={d}, N={n}")
    if d > (n - 1) // 2:
        # dense case: build the sparse complement instead
        comp = set(_pairing(n, n - 1 - d, rng, max_restarts)) if n - 1 - d else set()
        return Graph(n, tuple(e for e in zip(*np.triu_indices(n, 1)) if (int(e[0]), int(e[1])) not in comp))
    return Graph(n, tuple(_pairing(n, d, rng, max_restarts)) if d else ())


@dataclass(frozen=True)
class EnsembleSpec:
    """Ensemble of random attractive models.

    ``h_mode`` is ``("constant", h0)`` or ``("uniform", lo, hi)``.
    ``seeds`` is None for one uniformly random seed node per sample, or an
    explicit seed set. ``graph_mode`` is ``"fixed"`` (one graph per sweep
    point) or ``"per-sample"``; the default follows the family.
    """

    family: str = "gnm"
    n: int = 20
    samples: int = 500
    j_max: float = 2.0
    h_mode: tuple = ("constant", -1.0)
    seeds: frozenset[int] | None = None
    rng_seed: int = 0
    graph_mode: str | None = None

    def __post_init__(self):
        if self.family not in ("gnm", "regular"):
            raise ValueError(f"unknown graph family {self.family!r}")
        if self.samples <= 0:
            raise ValueError("samples must be positive")
        if not self.j_max > 0:
            raise ValueError("j_max must be positive")
        if self.h_mode[0] not in ("constant", "uniform"):
            raise ValueError(f"unknown h_mode {self.h_mode!r}")
        if self.graph_mode is None:
            object.__setattr__(self, "graph_mode", "fixed" if self.family == "gnm" else "per-sample")
        if self.graph_mode not in ("fixed", "per-sample"):
            raise ValueError(f"unknown graph_mode {self.graph_mode!r}")
        if self.seeds is not None:
            object.__setattr__(self, "seeds", as_seed_set(self.seeds, self.n))

    def check_point(self, param: int) -> None:
        if self.family == "gnm":
            if not 0 <= param <= comb(self.n, 2):
                raise ValueError(f"M={param} out of range for N={self.n}")
        elif (param * self.n) % 2 or not 0 <= param < self.n:
            raise ValueError(f"invalid degree d={param} for N={self.n}")

    def graph(self, param: int, rng: np.random.Generator) -> Graph:
        if self.family == "gnm":
            return gen_gnm(self.n, param, rng)
        return gen_regular(self.n, param, rng)

    def sample_model(self, graph: Graph, rng: np.random.Generator) -> IsingModel:
        J = rng.uniform(0.0, self.j_max, graph.edge_count)
        if self.h_mode[0] == "constant":
            h = np.full(self.n, float(self.h_mode[1]))
        else:
            h = rng.uniform(float(self.h_mode[1]), float(self.h_mode[2]), self.n)
        return IsingModel(graph, J, h)


@dataclass
class EnsemblePoint:
    param: int
    samples: int
    mixed: int
    polarized_safe: int
    polarized_infected: int

    @property
    def mixed_fraction(self) -> float:
        return self.mixed / self.samples

    @property
    def safe_fraction(self) -> float:
        return self.polarized_safe / self.samples

    @property
    def infected_fraction(self) -> float:
        return self.polarized_infected / self.samples


@dataclass
class EnsembleResult:
    spec: EnsembleSpec
    points: list[EnsemblePoint] = field(default_factory=list)

    @property
    def rng_seed(self) -> int:
        return self.spec.rng_seed

    def params(self) -> np.ndarray:
        return np.array([p.param for p in self.points])

    def mixed_fractions(self) -> np.ndarray:
        return np.array([p.mixed_fraction for p in self.points])

    def trend(self):
        """Spearman rank correlation of (sweep parameter, mixed fraction)."""
        res = stats.spearmanr(self.params(), self.mixed_fractions())
        return float(res.statistic), float(res.pvalue)


def _run_cell(args) -> str:
    spec, point, param, sample, graph = args
    rng = stream(spec.rng_seed, point, sample)
    if graph is None:
        graph = spec.graph(param, rng)
    model = spec.sample_model(graph, rng)
    seeds = spec.seeds if spec.seeds is not None else frozenset({int(rng.integers(spec.n))})
    return classify_map(map_mincut(model, seeds), seeds).value


def run_mixed_fraction(spec: EnsembleSpec, sweep, workers: int = 1) -> EnsembleResult:
    """Fractions of mixed / polarized MAP states at each sweep point."""
    sweep = [int(p) for p in sweep]
    for p in sweep:
        spec.check_point(p)
    cells = []
    for i, p in enumerate(sweep):
        g = spec.graph(p, stream(spec.rng_seed, i, _GRAPH_STREAM)) if spec.graph_mode == "fixed" else None
        cells += [(spec, i, p, j, g) for j in range(spec.samples)]
    labels = ordered_map(_run_cell, cells, workers, chunksize=64)
    result = EnsembleResult(spec)
    for i, p in enumerate(sweep):
        chunk = labels[i * spec.samples : (i + 1) * spec.samples]
        result.points.append(
            EnsemblePoint(
                p,
                spec.samples,
                chunk.count(MapClass.MIXED.value),
                chunk.count(MapClass.POLARIZED_SAFE.value),
                chunk.count(MapClass.POLARIZED_INFECTED.value),
            )
        )
    return result


def grid_axis(lo: float, hi: float, step: float) -> np.ndarray:
    if step <= 0 or hi < lo:
        raise ValueError("grid needs step > 0 and hi >= lo")
    count = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return np.round(lo + step * np.arange(count), 12)


@dataclass
class GeometryScan:
    """MAP labels over a J-grid of the triangle, plus safe-region masks.

    ``labels[i, j, l]`` indexes ``states`` for the point
    (J01, J02, J12) = (axis[i], axis[j], axis[l]).
    """

    axis: np.ndarray
    field: np.ndarray
    seeds: frozenset[int]
    states: list[tuple[int, ...]]
    labels: np.ndarray
    classes: dict[tuple[int, ...], MapClass]
    two_mode_safe: np.ndarray
    exact_safe: np.ndarray

    def counts(self) -> dict[tuple[int, ...], int]:
        return {s: int(np.sum(self.labels == i)) for i, s in enumerate(self.states)}

    def mixed_mask(self) -> np.ndarray:
        mixed = [i for i, s in enumerate(self.states) if self.classes[s] is MapClass.MIXED]
        return np.isin(self.labels, mixed)

    def discrepancies(self) -> np.ndarray:
        """Grid indices inside the two-mode region but outside the exact region."""
        return np.argwhere(self.two_mode_safe & ~self.exact_safe)


K3 = Graph.complete(3)


def k3_geometry_scan(field, grid, seeds=(0,), k: int = 1) -> GeometryScan:
    """Classify the K3 MAP state at every grid point of (J01, J02, J12).

    ``grid`` is ``(lo, hi, step)`` applied to each axis. Safe-region masks use
    the catalog of all seed sets up to size ``k``.
    """
    h = np.asarray(field, dtype=float)
    if h.shape != (3,):
        raise ValueError("K3 needs a field vector of length 3")
    seeds = as_seed_set(seeds, 3)
    axis = grid_axis(*grid)
    n = axis.size
    labels = np.empty((n, n, n), dtype=np.int64)
    index: dict[tuple[int, ...], int] = {}
    classes: dict[tuple[int, ...], MapClass] = {}
    for i, j, l in product(range(n), repeat=3):
        r = map_bruteforce(IsingModel(K3, [axis[i], axis[j], axis[l]], h), seeds)
        key = tuple(int(a) for a in r.state)
        if key not in index:
            index[key] = len(index)
            classes[key] = classify_map(r, seeds)
        labels[i, j, l] = index[key]

    Jg = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    catalog = enumerate_seed_catalog(K3, k)
    tm = build_two_mode_polytope(K3, catalog)
    tm_res = Jg @ tm.edge_matrix.toarray().T + (tm.node_matrix @ h) - tm.rhs
    ex = exact_sp_facets_tiny(K3, k, h)
    ex_res = Jg @ ex.edge_matrix.toarray().T - ex.rhs
    tol = 1e-9 * (1.0 + 3 * axis.max() + np.abs(h).sum())
    return GeometryScan(
        axis=axis,
        field=h,
        seeds=seeds,
        states=list(index),
        labels=labels,
        classes=classes,
        two_mode_safe=np.all(tm_res <= tol, axis=1).reshape(n, n, n),
        exact_safe=np.all(ex_res <= tol, axis=1).reshape(n, n, n),
    )
