"""File formats: models, mobility tables, seed catalogs and result exports.

See docs/FORMATS.md for the schemas. JSON numbers are written with Python's
shortest round-trip float repr, so save/load is bit exact.
"""

from __future__ import annotations

import csv
import io
import json
import sys
from contextlib import contextmanager
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .cascade import CascadeTrace
from .ensemble import EnsembleResult, GeometryScan
from .inference import MapClass, MapResult
from .model import Graph, IsingModel, SeedCatalog, as_seed_set
from .polytope import ConstraintSet, SafetyReport, SeedOutcome
from .projection import PreventionSolution


class FormatError(ValueError):
    """Malformed input file; the message names the offending line or field."""


def bundled(name: str) -> Path:
    """Path of a fixture shipped in ``pandemic_gm/data``."""
    p = resources.files("pandemic_gm") / "data" / name
    return Path(str(p))


# -- models -----------------------------------------------------------------


def model_to_dict(model: IsingModel) -> dict:
    return {
        "nodes": [{"id": a, "h": float(h)} for a, h in enumerate(model.field)],
        "edges": [
            {"u": u, "v": v, "J": float(j)} for (u, v), j in zip(model.graph.edges, model.coupling)
        ],
    }


def _num(obj, key, where):
    if key not in obj:
        raise FormatError(f"{where}: missing field {key!r}")
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise FormatError(f"{where}.{key}: expected a number, got {val!r}")
    return val


def model_from_dict(data: dict) -> IsingModel:
    if not isinstance(data, dict) or "nodes" not in data or "edges" not in data:
        raise FormatError("model must be an object with 'nodes' and 'edges'")
    nodes = data["nodes"]
    if not isinstance(nodes, list) or not nodes:
        raise FormatError("'nodes' must be a non-empty list")
    ids = []
    fields = {}
    for i, nd in enumerate(nodes):
        where = f"nodes[{i}]"
        if not isinstance(nd, dict):
            raise FormatError(f"{where}: expected an object")
        a = _num(nd, "id", where)
        if int(a) != a:
            raise FormatError(f"{where}.id: expected an integer")
        ids.append(int(a))
        fields[int(a)] = float(_num(nd, "h", where))
    n = len(ids)
    if sorted(ids) != list(range(n)):
        raise FormatError(f"node ids must be exactly 0..{n - 1}")
    edges, J = [], []
    for i, e in enumerate(data["edges"]):
        where = f"edges[{i}]"
        if not isinstance(e, dict):
            raise FormatError(f"{where}: expected an object")
        u, v = _num(e, "u", where), _num(e, "v", where)
        j = float(_num(e, "J", where))
        if j < 0:
            raise FormatError(f"{where}.J: coupling {j} is negative; attractive models need J >= 0")
        edges.append((int(u), int(v)))
        J.append(j)
    try:
        return IsingModel(Graph(n, tuple(edges)), J, [fields[a] for a in range(n)])
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def save_model(model: IsingModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n")


def load_model(path, default_field: float = -1.0) -> IsingModel:
    """Read a JSON model, or a CSV edge list ``u,v,J`` with a uniform field."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".csv":
        return load_edge_csv(io.StringIO(text), default_field)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    try:
        return model_from_dict(data)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


def load_edge_csv(fh, field: float = -1.0, node_count: int | None = None) -> IsingModel:
    reader = csv.DictReader(fh)
    if reader.fieldnames is None or not {"u", "v", "J"} <= set(reader.fieldnames):
        raise FormatError("edge CSV needs header columns u,v,J")
    edges, J = [], []
    for line, row in enumerate(reader, start=2):
        try:
            edges.append((int(row["u"]), int(row["v"])))
            J.append(float(row["J"]))
        except (TypeError, ValueError):
            raise FormatError(f"line {line}: cannot parse {row}") from None
        if J[-1] < 0:
            raise FormatError(f"line {line}: negative coupling {J[-1]}")
    n = node_count or (max(max(e) for e in edges) + 1 if edges else 1)
    try:
        return IsingModel(Graph(n, tuple(edges)), J, np.full(n, float(field)))
    except ValueError as exc:
        raise FormatError(str(exc)) from None


# -- mobility ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MobilityTable:
    """Directed visit counts between regions 0..n_regions-1."""

    origin: np.ndarray
    destination: np.ndarray
    count: np.ndarray
    n_regions: int

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.int64)
        d = np.asarray(self.destination, dtype=np.int64)
        c = np.asarray(self.count, dtype=float)
        if not (o.shape == d.shape == c.shape):
            raise ValueError("origin, destination and count must have equal length")
        if np.any(~np.isfinite(c)) or np.any(c < 0):
            raise ValueError("visit counts must be finite and nonnegative")
        if o.size and (min(o.min(), d.min()) < 0 or max(o.max(), d.max()) >= self.n_regions):
            raise ValueError(f"region ids must lie in 0..{self.n_regions - 1}")
        for name, a in (("origin", o), ("destination", d), ("count", c)):
            object.__setattr__(self, name, a)

    def transpose(self) -> "MobilityTable":
        return MobilityTable(self.destination, self.origin, self.count, self.n_regions)


def load_mobility_csv(path, n_regions: int | None = None) -> MobilityTable:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"origin", "destination", "count"} <= set(reader.fieldnames):
            raise FormatError(f"{path}: header must be origin,destination,count")
        o, d, c = [], [], []
        for line, row in enumerate(reader, start=2):
            try:
                o.append(int(row["origin"]))
                d.append(int(row["destination"]))
                c.append(float(row["count"]))
            except (TypeError, ValueError):
                raise FormatError(f"{path}: line {line}: cannot parse {row}") from None
    n = n_regions if n_regions is not None else (max(o + d) + 1 if o else 0)
    try:
        return MobilityTable(o, d, c, n)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def save_mobility_csv(table: MobilityTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["origin", "destination", "count"])
        for row in zip(table.origin.tolist(), table.destination.tolist(), table.count.tolist()):
            w.writerow([row[0], row[1], repr(row[2]) if row[2] != int(row[2]) else int(row[2])])


def build_model_from_mobility(table: MobilityTable, scale: float = 1.0, h0: float = -1.0) -> IsingModel:
    """Linear proxy: J_ab = scale * (c_ab + c_ba) / max pair total; uniform field h0.

    This is a normalisation stand-in, not an epidemiological calibration.
    Self-visits are ignored and zero-count pairs produce no edge.
    """
    if table.count.size == 0:
        raise ValueError("mobility table is empty")
    if not scale > 0:
        raise ValueError("scale must be positive")
    totals: dict[tuple[int, int], float] = {}
    for a, b, c in zip(table.origin.tolist(), table.destination.tolist(), table.count.tolist()):
        if a == b:
            continue
        key = (a, b) if a < b else (b, a)
        totals[key] = totals.get(key, 0.0) + c
    pairs = sorted(k for k, c in totals.items() if c > 0)
    if not pairs:
        raise ValueError("mobility table has no inter-region visits")
    peak = max(totals[k] for k in pairs)
    J = [scale * totals[k] / peak for k in pairs]
    n = table.n_regions
    return IsingModel(Graph(n, tuple(pairs)), J, np.full(n, float(h0)))


# -- seed catalogs ----------------------------------------------------------


def load_catalog(path, node_count: int) -> SeedCatalog:
    """One seed set per line, nodes separated by commas or spaces; '#' starts a comment."""
    sets = []
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            nodes = [int(t) for t in line.replace(",", " ").split()]
            sets.append(as_seed_set(nodes, node_count))
        except ValueError as exc:
            raise FormatError(f"{path}: line {line_no}: {exc}") from None
    if not sets:
        raise FormatError(f"{path}: no seed sets")
    try:
        return SeedCatalog(tuple(sets), node_count)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def _seeds_str(s) -> str:
    return ";".join(str(a) for a in sorted(s))


def write_constraints_csv(constraints: ConstraintSet, fh) -> None:
    """One row per constraint: id, seeds, edge terms ``u-v:coef``, node terms ``a:coef``, rhs."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["id", "seeds", "edge_terms", "node_terms", "rhs"])
    edges = constraints.graph.edges
    for i, c in enumerate(constraints):
        et = ";".join(f"{edges[j][0]}-{edges[j][1]}:{v!r}" for j, v in zip(c.edge_index.tolist(), c.edge_value.tolist()))
        nt = ";".join(f"{j}:{v!r}" for j, v in zip(c.node_index.tolist(), c.node_value.tolist()))
        w.writerow([i, _seeds_str(c.origin), et, nt, repr(c.rhs)])


# -- result conversion ------------------------------------------------------


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def report_to_dict(report: SafetyReport) -> dict:
    return {
        "k": report.k,
        "required_margin": report.required_margin,
        "safe": report.safe,
        "certified": report.certified,
        "worst_seed": None if report.worst_seed is None else sorted(report.worst_seed),
        "worst_infected_count": report.worst_infected_count,
        "violations": [sorted(o.seeds) for o in report.violations],
        "per_seed": [
            {
                "seeds": sorted(o.seeds),
                "infected_count": o.infected_count,
                "class": o.map_class.value,
                "margin": o.margin,
            }
            for o in report.per_seed
        ],
    }


def report_from_dict(d: dict) -> SafetyReport:
    per = tuple(
        SeedOutcome(frozenset(o["seeds"]), int(o["infected_count"]), MapClass(o["class"]), float(o["margin"]))
        for o in d["per_seed"]
    )
    return SafetyReport(int(d["k"]), per, float(d.get("required_margin", 0.0)))


def solution_to_dict(sol: PreventionSolution) -> dict:
    g = sol.baseline.graph
    return {
        "baseline": model_to_dict(sol.baseline),
        "corrected": model_to_dict(sol.corrected),
        "cost": sol.cost,
        "per_constraint_slack": sol.per_constraint_slack.tolist(),
        "changes": [
            {"u": u, "v": v, "J0": float(a), "J": float(b), "delta": float(b - a)}
            for (u, v), a, b in zip(g.edges, sol.baseline.coupling, sol.corrected.coupling)
            if b != a
        ],
        "solver_stats": _clean(sol.solver_stats),
        "certificate": None if sol.certificate is None else report_to_dict(sol.certificate),
    }


def solution_from_dict(d: dict) -> PreventionSolution:
    cert = d.get("certificate")
    return PreventionSolution(
        model_from_dict(d["baseline"]),
        model_from_dict(d["corrected"]),
        float(d["cost"]),
        np.asarray(d["per_constraint_slack"], dtype=float),
        dict(d.get("solver_stats", {})),
        None if cert is None else report_from_dict(cert),
    )


def load_solution(path) -> PreventionSolution:
    return solution_from_dict(json.loads(Path(path).read_text()))


def map_result_to_dict(r: MapResult, seeds=None) -> dict:
    from .inference import classify_map

    d = {
        "state": [int(a) for a in r.state],
        "energy": r.energy,
        "infected": sorted(r.infected),
        "infected_count": len(r.infected),
        "method": r.method,
        "tie_broken": r.tie_broken,
    }
    if seeds is not None:
        d["seeds"] = sorted(seeds)
        d["class"] = classify_map(r, seeds).value
    return d


ENSEMBLE_COLUMNS = [
    "param",
    "samples",
    "mixed",
    "polarized_safe",
    "polarized_infected",
    "mixed_fraction",
    "safe_fraction",
    "infected_fraction",
]


def ensemble_rows(res: EnsembleResult) -> list[dict]:
    return [
        {
            "param": p.param,
            "samples": p.samples,
            "mixed": p.mixed,
            "polarized_safe": p.polarized_safe,
            "polarized_infected": p.polarized_infected,
            "mixed_fraction": p.mixed_fraction,
            "safe_fraction": p.safe_fraction,
            "infected_fraction": p.infected_fraction,
        }
        for p in res.points
    ]


def ensemble_to_dict(res: EnsembleResult) -> dict:
    s = res.spec
    rho, pval = res.trend() if len(res.points) > 2 else (None, None)
    return {
        "family": s.family,
        "n": s.n,
        "samples": s.samples,
        "j_max": s.j_max,
        "h_mode": list(s.h_mode),
        "seeds": None if s.seeds is None else sorted(s.seeds),
        "graph_mode": s.graph_mode,
        "rng_seed": s.rng_seed,
        "points": ensemble_rows(res),
        "spearman_rho": rho,
        "spearman_p": pval,
    }


def scan_to_dict(scan: GeometryScan) -> dict:
    counts = scan.counts()
    return {
        "field": scan.field.tolist(),
        "seeds": sorted(scan.seeds),
        "axis": scan.axis.tolist(),
        "labels": [
            {"state": list(s), "class": scan.classes[s].value, "cells": counts[s]} for s in scan.states
        ],
        "two_mode_safe_cells": int(scan.two_mode_safe.sum()),
        "exact_safe_cells": int(scan.exact_safe.sum()),
        "discrepancy_cells": int(len(scan.discrepancies())),
    }


def scan_rows(scan: GeometryScan) -> list[dict]:
    a = scan.axis
    rows = []
    for i, j, l in np.ndindex(scan.labels.shape):
        s = scan.states[scan.labels[i, j, l]]
        rows.append(
            {
                "J01": a[i],
                "J02": a[j],
                "J12": a[l],
                "state": " ".join(f"{x:+d}" for x in s),
                "class": scan.classes[s].value,
                "two_mode_safe": int(scan.two_mode_safe[i, j, l]),
                "exact_safe": int(scan.exact_safe[i, j, l]),
            }
        )
    return rows


def trace_to_dict(trace: CascadeTrace) -> dict:
    code = np.array(["S", "I", "R"])
    return {
        "steps": trace.steps,
        "removed": sorted(trace.removed),
        "states": ["".join(code[row]) for row in trace.states],
    }


# -- DOT / GeoJSON ----------------------------------------------------------


def _dot_layer(lines, name, g, values, negative_label=False):
    peak = max(1e-12, float(np.max(np.abs(values)))) if len(values) else 1.0
    lines.append(f"  subgraph cluster_{name} {{")
    lines.append(f'    label="{name}";')
    for a in range(g.node_count):
        lines.append(f'    "{name}_{a}" [label="{a}"];')
    for (u, v), val in zip(g.edges, values):
        if val == 0:
            continue
        width = 0.5 + 4.5 * abs(val) / peak
        label = f"{val:.4g}"
        if negative_label and val < 0:
            label = f"reduce {-val:.4g}"
        lines.append(f'    "{name}_{u}" -- "{name}_{v}" [penwidth={width:.3f}, label="{label}"];')
    lines.append("  }")


def to_dot(obj) -> str:
    """Model, or the baseline / corrected / reduction layers of a solution."""
    lines = ["graph G {"]
    if isinstance(obj, PreventionSolution):
        g = obj.baseline.graph
        _dot_layer(lines, "baseline", g, obj.baseline.coupling)
        _dot_layer(lines, "corrected", g, obj.corrected.coupling)
        _dot_layer(lines, "reduction", g, obj.coupling_change, negative_label=True)
    elif isinstance(obj, IsingModel):
        _dot_layer(lines, "model", obj.graph, obj.coupling)
    else:
        raise TypeError(f"no DOT rendering for {type(obj).__name__}")
    lines.append("}")
    return "\n".join(lines) + "\n"


def to_geojson(obj, geometry: dict | None = None) -> dict:
    """FeatureCollection with one feature per region; geometry is optional."""
    geometry = geometry or {}
    if isinstance(obj, PreventionSolution):
        model = obj.corrected
        base = obj.baseline
    elif isinstance(obj, IsingModel):
        model = base = obj
    else:
        raise TypeError(f"no GeoJSON rendering for {type(obj).__name__}")
    g = model.graph
    strength = np.zeros(g.node_count)
    strength0 = np.zeros(g.node_count)
    for (u, v), j, j0 in zip(g.edges, model.coupling, base.coupling):
        strength[[u, v]] += j
        strength0[[u, v]] += j0
    feats = []
    for a in range(g.node_count):
        feats.append(
            {
                "type": "Feature",
                "id": a,
                "geometry": geometry.get(a, geometry.get(str(a))),
                "properties": {
                    "region": a,
                    "h": float(model.field[a]),
                    "coupling_strength": float(strength[a]),
                    "baseline_coupling_strength": float(strength0[a]),
                    "reduction": float(strength0[a] - strength[a]),
                },
            }
        )
    return {"type": "FeatureCollection", "features": feats}


# -- export -----------------------------------------------------------------

FORMATS = ("json", "csv", "dot", "geojson")


@contextmanager
def _open_out(path):
    if path is None or str(path) == "-":
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _to_json_obj(obj):
    if isinstance(obj, PreventionSolution):
        return solution_to_dict(obj)
    if isinstance(obj, SafetyReport):
        return report_to_dict(obj)
    if isinstance(obj, EnsembleResult):
        return ensemble_to_dict(obj)
    if isinstance(obj, GeometryScan):
        return scan_to_dict(obj)
    if isinstance(obj, CascadeTrace):
        return trace_to_dict(obj)
    if isinstance(obj, IsingModel):
        return model_to_dict(obj)
    if isinstance(obj, MapResult):
        return map_result_to_dict(obj)
    if isinstance(obj, dict):
        return obj
    raise TypeError(f"cannot export {type(obj).__name__} as JSON")


def _csv_rows(obj) -> tuple[list[str], list[dict]]:
    if isinstance(obj, EnsembleResult):
        return ENSEMBLE_COLUMNS, ensemble_rows(obj)
    if isinstance(obj, SafetyReport):
        rows = [
            {"seeds": _seeds_str(o.seeds), "infected_count": o.infected_count, "class": o.map_class.value, "margin": o.margin}
            for o in obj.per_seed
        ]
        return ["seeds", "infected_count", "class", "margin"], rows
    if isinstance(obj, PreventionSolution):
        g = obj.baseline.graph
        rows = [
            {"u": u, "v": v, "J0": a, "J": b, "delta": b - a}
            for (u, v), a, b in zip(g.edges, obj.baseline.coupling.tolist(), obj.corrected.coupling.tolist())
        ]
        return ["u", "v", "J0", "J", "delta"], rows
    if isinstance(obj, GeometryScan):
        rows = scan_rows(obj)
        return list(rows[0]), rows
    if isinstance(obj, IsingModel):
        rows = [{"u": u, "v": v, "J": j} for (u, v), j in zip(obj.graph.edges, obj.coupling.tolist())]
        return ["u", "v", "J"], rows
    raise TypeError(f"cannot export {type(obj).__name__} as CSV")


def export_results(obj, path, fmt: str = "json", geometry: dict | None = None) -> None:
    """Write ``obj`` to ``path`` ('-' or None for stdout) in the given format."""
    if fmt not in FORMATS:
        raise ValueError(f"unsupported format {fmt!r}; choose from {', '.join(FORMATS)}")
    if fmt == "csv" and isinstance(obj, ConstraintSet):
        with _open_out(path) as fh:
            write_constraints_csv(obj, fh)
        return
    if fmt == "json":
        text = json.dumps(_clean(_to_json_obj(obj)), indent=1) + "\n"
    elif fmt == "geojson":
        text = json.dumps(_clean(to_geojson(obj, geometry)), indent=1) + "\n"
    elif fmt == "dot":
        text = to_dot(obj)
    else:
        cols, rows = _csv_rows(obj)
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        text = buf.getvalue()
    with _open_out(path) as fh:
        fh.write(text)
