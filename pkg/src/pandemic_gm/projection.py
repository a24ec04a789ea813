"""Minimal-cost correction of a model into a polyhedral safe region.

The decision variable is the change ``d`` of the adjustable parameters
(couplings first, then fields). Constraints ``A (z0 + d) <= b`` become
``A d <= r`` with ``r = b - A z0``; bounds become ``L <= d <= U``.

Solver routes:

* pure l1: linear program over split variables d = p - q (HiGHS dual simplex),
* pure l2: quadratic program min 1/2 sum w d^2 (Clarabel),
* mixture: second-order cone program (Clarabel).

Every solve is followed by an independent check of feasibility and an
optimality certificate built from the solver's multipliers: a Lagrangian dual
bound for LP and QP, a KKT residual for the mixture.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .model import IsingModel, SeedCatalog
from .polytope import ConstraintSet, SafetyReport, is_k_safe_exact

log = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-8
OPTIMALITY_TOL = 1e-6


class InfeasibleProblemError(ValueError):
    """The bounds admit no point of the constraint set."""

    def __init__(self, message: str, witness: dict):
        super().__init__(message)
        self.witness = witness


class NonConvergenceError(RuntimeError):
    def __init__(self, message: str, stats: dict):
        super().__init__(message)
        self.stats = stats


def _weight_array(w, size: int, name: str) -> np.ndarray:
    if w is None:
        return np.ones(size)
    if isinstance(w, Mapping):
        a = np.ones(size)
        for i, val in w.items():
            a[int(i)] = float(val)
    else:
        a = np.asarray(w, dtype=float).reshape(-1)
        if a.size != size:
            raise ValueError(f"{name} has {a.size} entries, expected {size}")
    if np.any(~np.isfinite(a)) or np.any(a <= 0):
        raise ValueError(f"{name} must be finite and positive")
    return a


@dataclass(frozen=True)
class NormSpec:
    """Cost l1_weight * sum w|d| + l2_weight * sqrt(sum w d^2).

    ``edge_weights`` / ``node_weights`` may be arrays or ``{index: weight}``
    mappings (unlisted variables get weight 1).
    """

    l1_weight: float = 1.0
    l2_weight: float = 0.0
    edge_weights: object = None
    node_weights: object = None

    def __post_init__(self):
        if self.l1_weight < 0 or self.l2_weight < 0:
            raise ValueError("norm weights must be nonnegative")
        if self.l1_weight + self.l2_weight <= 0:
            raise ValueError("l1_weight + l2_weight must be positive")

    @classmethod
    def l1(cls) -> "NormSpec":
        return cls(1.0, 0.0)

    @classmethod
    def l2(cls) -> "NormSpec":
        return cls(0.0, 1.0)

    @property
    def kind(self) -> str:
        if self.l2_weight == 0:
            return "l1"
        if self.l1_weight == 0:
            return "l2"
        return "mixed"

    def weights(self, model: IsingModel) -> np.ndarray:
        g = model.graph
        return np.concatenate(
            [
                _weight_array(self.edge_weights, g.edge_count, "edge_weights"),
                _weight_array(self.node_weights, g.node_count, "node_weights"),
            ]
        )


def _params(model: IsingModel) -> np.ndarray:
    return np.concatenate([model.coupling, model.field])


def cost(candidate: IsingModel, baseline: IsingModel, norm: NormSpec, adjustable=None) -> float:
    if candidate.graph != baseline.graph:
        raise ValueError("candidate and baseline live on different graphs")
    d = _params(candidate) - _params(baseline)
    w = norm.weights(baseline)
    if adjustable is not None:
        mask = np.asarray(adjustable, dtype=bool)
        d, w = d[mask], w[mask]
    return _norm_value(d, w, norm)


def _norm_value(d: np.ndarray, w: np.ndarray, norm: NormSpec) -> float:
    out = 0.0
    if norm.l1_weight:
        out += norm.l1_weight * float(np.sum(w * np.abs(d)))
    if norm.l2_weight:
        out += norm.l2_weight * float(np.sqrt(np.sum(w * d * d)))
    return out


@dataclass(eq=False)
class PreventionProblem:
    """Baseline model, constraint set, cost and per-variable bounds.

    Variables are ordered couplings then fields. Non-adjustable variables are
    held at their baseline values whatever their bounds say.
    """

    baseline: IsingModel
    constraints: ConstraintSet
    norm: NormSpec
    adjustable: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        n = self.baseline.graph.edge_count + self.baseline.node_count
        self.adjustable = np.asarray(self.adjustable, dtype=bool).reshape(-1)
        self.lower = np.asarray(self.lower, dtype=float).reshape(-1)
        self.upper = np.asarray(self.upper, dtype=float).reshape(-1)
        for name, a in (("adjustable", self.adjustable), ("lower", self.lower), ("upper", self.upper)):
            if a.size != n:
                raise ValueError(f"{name} has {a.size} entries, expected {n}")
        if self.constraints.graph != self.baseline.graph:
            raise ValueError("constraints were built for a different graph")
        m = self.baseline.graph.edge_count
        if np.any(self.lower[:m][self.adjustable[:m]] < 0):
            raise ValueError("coupling lower bounds must be >= 0")

    @classmethod
    def build(
        cls,
        baseline: IsingModel,
        constraints: ConstraintSet,
        norm: NormSpec | None = None,
        adjust_couplings: bool = True,
        adjust_fields: bool = False,
        allow_increase: bool = False,
        coupling_floor: float = 0.0,
        field_bounds: tuple[float, float] | None = None,
    ) -> "PreventionProblem":
        """Defaults: couplings may only decrease to ``coupling_floor``, fields frozen."""
        J0, h0 = baseline.coupling, baseline.field
        m, n = J0.size, h0.size
        j_lo = np.full(m, float(coupling_floor))
        j_hi = np.full(m, np.inf) if allow_increase else J0.copy()
        if field_bounds is None:
            h_lo, h_hi = h0.copy(), h0.copy()
        else:
            h_lo, h_hi = np.full(n, float(field_bounds[0])), np.full(n, float(field_bounds[1]))
        adjustable = np.concatenate([np.full(m, adjust_couplings), np.full(n, adjust_fields)])
        return cls(
            baseline,
            constraints,
            norm or NormSpec.l1(),
            adjustable,
            np.concatenate([j_lo, h_lo]),
            np.concatenate([j_hi, h_hi]),
        )

    @property
    def baseline_in_bounds(self) -> bool:
        z0 = _params(self.baseline)[self.adjustable]
        return bool(
            np.all(self.lower[self.adjustable] <= z0) and np.all(z0 <= self.upper[self.adjustable])
        )


@dataclass(eq=False)
class PreventionSolution:
    baseline: IsingModel
    corrected: IsingModel
    cost: float
    per_constraint_slack: np.ndarray
    solver_stats: dict = field(default_factory=dict)
    certificate: SafetyReport | None = None

    @property
    def coupling_change(self) -> np.ndarray:
        return self.corrected.coupling - self.baseline.coupling

    @property
    def field_change(self) -> np.ndarray:
        return self.corrected.field - self.baseline.field

    def changed_edges(self, threshold: float = 1e-6) -> np.ndarray:
        return np.flatnonzero(np.abs(self.coupling_change) > threshold)


def _reduced(problem: PreventionProblem):
    cs = problem.constraints
    A = sp.hstack([cs.edge_matrix, cs.node_matrix], format="csr")
    z0 = _params(problem.baseline)
    r = cs.rhs - A @ z0
    idx = np.flatnonzero(problem.adjustable)
    A_adj = A[:, idx].tocsr()
    L = problem.lower[idx] - z0[idx]
    U = problem.upper[idx] - z0[idx]
    w = problem.norm.weights(problem.baseline)[idx]
    return A_adj, r, L, U, w, idx, z0


def _infeasibility_witness(problem, A, r, L, U, idx, tol) -> dict | None:
    bad = np.flatnonzero(L > U)
    if bad.size:
        j = int(idx[bad[0]])
        return {"kind": "empty-bounds", "variable": j, "lower": float(L[bad[0]]), "upper": float(U[bad[0]])}
    # smallest attainable lhs of each row over the box
    Lf = np.where(np.isfinite(L), L, -1e300)
    Uf = np.where(np.isfinite(U), U, 1e300)
    Ac = A.tocoo()
    contrib = np.where(Ac.data > 0, Ac.data * Lf[Ac.col], Ac.data * Uf[Ac.col])
    min_lhs = np.bincount(Ac.row, weights=contrib, minlength=A.shape[0])
    gap = min_lhs - r
    i = int(np.argmax(gap)) if gap.size else -1
    if i >= 0 and gap[i] > tol:
        return {
            "kind": "row",
            "constraint": i,
            "seeds": sorted(problem.constraints.origins[i]),
            "min_achievable_residual": float(gap[i]),
        }
    return None


def project_to_safe(
    problem: PreventionProblem,
    feasibility_tol: float = FEASIBILITY_TOL,
    optimality_tol: float = OPTIMALITY_TOL,
    max_iter: int = 10000,
) -> PreventionSolution:
    """Globally optimal correction of the baseline into the constraint set."""
    A, r, L, U, w, idx, z0 = _reduced(problem)
    base = problem.baseline
    n_rows = A.shape[0]

    if problem.baseline_in_bounds and np.all(r >= 0):
        return PreventionSolution(
            base,
            base,
            0.0,
            r.copy(),
            {
                "solver": "none",
                "status": "baseline-feasible",
                "iterations": 0,
                "primal_residual": 0.0,
                "optimality_residual": 0.0,
                "rows": n_rows,
                "solver_constraints": 0,
            },
        )

    witness = _infeasibility_witness(problem, A, r, L, U, idx, feasibility_tol)
    if witness is not None:
        raise InfeasibleProblemError(f"no feasible correction: {witness}", witness)

    kind = problem.norm.kind
    if kind == "l1":
        d, stats = _solve_l1(A, r, L, U, w, problem.norm.l1_weight, max_iter)
    else:
        d, stats = _solve_conic(A, r, L, U, w, problem.norm, max_iter)
    d = np.clip(d, L, U)
    slack = r - A @ d
    stats["primal_residual"] = float(max(0.0, -slack.min())) if slack.size else 0.0
    stats["rows"] = n_rows

    z = z0.copy()
    z[idx] += d
    m = base.graph.edge_count
    J = z[:m]
    # d is clipped to the box, so only roundoff below zero is possible here
    J[J < 0] = 0.0
    corrected = base.with_parameters(coupling=J, field=z[m:])
    value = _norm_value(d, w, problem.norm)
    sol = PreventionSolution(base, corrected, value, slack, stats)

    if stats["primal_residual"] > feasibility_tol or stats["optimality_residual"] > optimality_tol:
        raise NonConvergenceError(
            f"{stats['solver']} stopped at primal residual {stats['primal_residual']:.3g}, "
            f"optimality residual {stats['optimality_residual']:.3g}",
            stats,
        )
    return sol


def _solve_l1(A, r, L, U, w, weight, max_iter):
    n = A.shape[1]
    c = weight * np.concatenate([w, w])
    A_ub = sp.hstack([A, -A], format="csr")
    p_lo, p_hi = np.maximum(0.0, L), np.maximum(0.0, U)
    q_lo, q_hi = np.maximum(0.0, -U), np.maximum(0.0, -L)
    lo = np.concatenate([p_lo, q_lo])
    hi = np.concatenate([p_hi, q_hi])
    bounds = list(zip(lo, [None if not np.isfinite(v) else v for v in hi]))
    res = linprog(
        c,
        A_ub=A_ub,
        b_ub=r,
        bounds=bounds,
        method="highs-ds",
        options={
            "primal_feasibility_tolerance": 1e-10,
            "dual_feasibility_tolerance": 1e-10,
            "maxiter": max_iter,
            "presolve": True,
        },
    )
    stats = {
        "solver": "highs-ds",
        "status": res.message,
        "iterations": int(getattr(res, "nit", 0) or 0),
        "solver_constraints": int(A_ub.shape[0] + np.count_nonzero(hi > lo) * 2),
    }
    if res.status != 0 or res.x is None:
        stats["optimality_residual"] = np.inf
        stats["primal_residual"] = np.inf
        if res.status == 2:
            raise InfeasibleProblemError(f"LP infeasible: {res.message}", {"kind": "solver", "message": res.message})
        raise NonConvergenceError(f"LP solve failed: {res.message}", stats)
    x = res.x
    primal = float(c @ x)
    # dual bound from sensitivities: sum of marginal * rhs over rows and finite bounds
    y = res.ineqlin.marginals
    mu_lo = res.lower.marginals
    mu_hi = res.upper.marginals
    fin = np.isfinite(hi)
    dual = float(y @ r + mu_lo @ lo + mu_hi[fin] @ hi[fin])
    gap = abs(primal - dual) / max(1.0, abs(primal))
    stat = c - A_ub.T @ y - mu_lo - mu_hi
    kkt = float(np.max(np.abs(stat))) / max(1.0, float(np.max(np.abs(c))))
    stats.update(
        objective=primal,
        dual_objective=dual,
        duality_gap=gap,
        kkt_residual=kkt,
        optimality_residual=max(gap, kkt),
    )
    return x[:n] - x[n:], stats


def _solve_conic(A, r, L, U, w, norm: NormSpec, max_iter):
    import cvxpy as cp

    n = A.shape[1]
    d = cp.Variable(n)
    cons = [A @ d <= r]
    lo_fin = np.flatnonzero(np.isfinite(L))
    hi_fin = np.flatnonzero(np.isfinite(U))
    if lo_fin.size:
        cons.append(d[lo_fin] >= L[lo_fin])
    if hi_fin.size:
        cons.append(d[hi_fin] <= U[hi_fin])
    sw = np.sqrt(w)
    if norm.kind == "l2":
        obj = 0.5 * cp.sum_squares(cp.multiply(sw, d))
    else:
        obj = norm.l1_weight * cp.sum(cp.multiply(w, cp.abs(d))) + norm.l2_weight * cp.norm(
            cp.multiply(sw, d), 2
        )
    prob = cp.Problem(cp.Minimize(obj), cons)
    try:
        # "optimal_inaccurate" stays visible in the status; our own
        # certificate below decides whether the point is accepted
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            prob.solve(
                solver=cp.CLARABEL,
                max_iter=max_iter,
                tol_gap_abs=1e-11,
                tol_gap_rel=1e-11,
                tol_feas=1e-11,
                tol_ktratio=1e-9,
            )
    except cp.error.SolverError as exc:
        raise NonConvergenceError(f"conic solve failed: {exc}", {"solver": "clarabel"}) from exc
    stats = {
        "solver": "clarabel",
        "status": prob.status,
        "iterations": int(prob.solver_stats.num_iters or 0),
        "solver_constraints": int(A.shape[0] + lo_fin.size + hi_fin.size),
    }
    if prob.status == cp.INFEASIBLE:
        raise InfeasibleProblemError("conic problem infeasible", {"kind": "solver", "message": prob.status})
    if d.value is None or prob.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        stats.update(primal_residual=np.inf, optimality_residual=np.inf)
        raise NonConvergenceError(f"conic solve ended with status {prob.status}", stats)

    x = np.clip(np.asarray(d.value, dtype=float), L, U)
    y = np.maximum(0.0, np.asarray(cons[0].dual_value, dtype=float).reshape(-1))
    mu_lo = np.zeros(n)
    mu_hi = np.zeros(n)
    k = 1
    if lo_fin.size:
        mu_lo[lo_fin] = np.maximum(0.0, np.asarray(cons[k].dual_value, dtype=float).reshape(-1))
        k += 1
    if hi_fin.size:
        mu_hi[hi_fin] = np.maximum(0.0, np.asarray(cons[k].dual_value, dtype=float).reshape(-1))

    g_lin = A.T @ y
    if norm.kind == "l2":
        primal = 0.5 * float(np.sum(w * x * x))
        # Lagrangian dual of the QP: separable minimisation over the box
        dstar = np.clip(-g_lin / w, L, U)
        dual = 0.5 * float(np.sum(w * dstar * dstar)) + float(y @ (A @ dstar - r))
        gap = abs(primal - dual) / max(1.0, abs(primal))
        stats.update(objective=primal, dual_objective=dual, duality_gap=gap, optimality_residual=gap)
        return x, stats

    kkt = _mixed_kkt(x, w, norm, g_lin, mu_lo, mu_hi, y, r - A @ x, L, U)
    stats.update(objective=float(prob.value), kkt_residual=kkt, optimality_residual=kkt)
    return x, stats


def _mixed_kkt(x, w, norm, g_lin, mu_lo, mu_hi, y, slack, L, U) -> float:
    """Scaled KKT residual for the l1 + l2 mixture."""
    a, b = norm.l1_weight, norm.l2_weight
    nrm = float(np.sqrt(np.sum(w * x * x)))
    smooth = b * w * x / nrm if nrm > 0 else np.zeros_like(x)
    rest = smooth + g_lin - mu_lo + mu_hi
    # interior-point iterates leave ~1e-11 noise on components that are zero
    nz = np.abs(x) > 1e-8 * max(1.0, float(np.max(np.abs(x), initial=0.0)))
    stat = np.empty_like(x)
    stat[nz] = a * w[nz] * np.sign(x[nz]) + rest[nz]
    # at zero the l1 subgradient may be any value in [-a w, a w]
    z = ~nz
    stat[z] = np.sign(rest[z]) * np.maximum(0.0, np.abs(rest[z]) - a * w[z])
    scale = max(1.0, float(np.max(a * w)) + b * float(np.max(np.sqrt(w))))
    comp = np.abs(y * slack)
    fl = np.isfinite(L)
    fu = np.isfinite(U)
    comp_b = np.concatenate([np.abs(mu_lo[fl] * (x[fl] - L[fl])), np.abs(mu_hi[fu] * (U[fu] - x[fu]))])
    worst = max(
        float(np.max(np.abs(stat))) if stat.size else 0.0,
        float(comp.max()) if comp.size else 0.0,
        float(comp_b.max()) if comp_b.size else 0.0,
    )
    return worst / scale


def certify(
    solution: PreventionSolution,
    catalog: SeedCatalog,
    k: int,
    margin: float = 0.0,
    workers: int = 1,
) -> SafetyReport:
    """Exact MAP re-check of the corrected model over the whole catalog."""
    report = is_k_safe_exact(solution.corrected, catalog, k, margin=margin, workers=workers)
    for o in report.violations:
        log.warning("seed %s infects %d > %d nodes after projection", sorted(o.seeds), o.infected_count, k)
    return report


def with_certificate(solution: PreventionSolution, report: SafetyReport) -> PreventionSolution:
    return replace(solution, certificate=report)
