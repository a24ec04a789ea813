"""Command-line entry point.

Exit codes: 0 success, 2 I/O error (and argparse usage errors), 3 invalid
input, 4 infeasible or non-converged solve, 5 certification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import ingest
from ._parallel import WORKERS_ENV, default_workers
from .cascade import CascadeModel, icm_run, reachable
from .ensemble import EnsembleSpec, k3_geometry_scan, run_mixed_fraction, stream
from .inference import classify_map, map_state
from .model import Graph, SeedCatalog, as_seed_set, enumerate_seed_catalog
from .polytope import build_two_mode_polytope, is_k_safe_exact
from .projection import (
    FEASIBILITY_TOL,
    OPTIMALITY_TOL,
    InfeasibleProblemError,
    NonConvergenceError,
    NormSpec,
    PreventionProblem,
    certify,
    project_to_safe,
    with_certificate,
)

EXIT_OK = 0
EXIT_IO = 2
EXIT_INVALID = 3
EXIT_SOLVER = 4
EXIT_UNCERTIFIED = 5

# options whose values may start with '-' (negative numbers in lists)
_NEGATIVE_VALUE_OPTS = {"--h", "--h-range", "--field-range", "--grid"}

log = logging.getLogger("pandemic_gm")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def parse_sweep(text: str) -> list[int]:
    """``a:b:s`` -> a, a+s, ... up to b, always ending at b; or a comma list."""
    if ":" in text:
        try:
            a, b, s = (int(t) for t in text.split(":"))
        except ValueError:
            raise argparse.ArgumentTypeError(f"sweep must be start:stop:step, got {text!r}")
        if s <= 0 or b < a:
            raise argparse.ArgumentTypeError("sweep needs step > 0 and stop >= start")
        vals = list(range(a, b + 1, s))
        if vals[-1] != b:
            vals.append(b)
        return vals
    return _int_list(text)


def parse_grid(text: str) -> tuple[float, float, float]:
    vals = [float(t) for t in text.split(":")]
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"grid must be lo:hi:step, got {text!r}")
    return vals[0], vals[1], vals[2]


def read_config(path) -> list[str]:
    """``key = value`` lines turned into long options; ``true``/``false`` for flags."""
    tokens: list[str] = []
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}: line {line_no}: expected key = value", EXIT_INVALID)
        key, value = (t.strip() for t in line.split("=", 1))
        opt = "--" + key.replace("_", "-")
        low = value.lower()
        if low in ("true", "yes", "on"):
            tokens.append(opt)
        elif low in ("false", "no", "off"):
            continue
        else:
            tokens.append(f"{opt}={value}")
    return tokens


def _prepare_argv(argv: list[str]) -> list[str]:
    out: list[str] = []
    config = None
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok == "--config" and i + 1 < len(argv):
            config = argv[i + 1]
            i += 2
            continue
        if tok.startswith("--config="):
            config = tok.split("=", 1)[1]
            i += 1
            continue
        if tok in _NEGATIVE_VALUE_OPTS and i + 1 < len(argv):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
            continue
        out.append(tok)
        i += 1
    if config is not None:
        try:
            extra = read_config(config)
        except OSError as exc:
            raise CliError(f"cannot read config: {exc}", EXIT_IO)
        # config values go right after the subcommand so explicit flags win
        pos = next((j for j, t in enumerate(out) if not t.startswith("-")), len(out))
        out = out[: pos + 1] + extra + out[pos + 1 :]
    return out


def _format_for(args, default: str = "json") -> str:
    if args.format:
        return args.format
    if args.out:
        suffix = Path(args.out).suffix.lower().lstrip(".")
        if suffix in ingest.FORMATS:
            return suffix
    return default


def _emit(args, obj, default: str = "json", **kw) -> bool:
    """Write ``obj`` if --out or --format was given; True if stdout was used."""
    if not args.out and not args.format:
        return False
    fmt = _format_for(args, default)
    try:
        ingest.export_results(obj, args.out or "-", fmt, **kw)
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc}", EXIT_IO)
    except TypeError as exc:
        raise CliError(str(exc), EXIT_INVALID)
    return not args.out


def _say(args, text: str) -> None:
    # human-readable lines go to stderr whenever stdout carries machine output
    stream_ = sys.stderr if (args.format and not args.out) else sys.stdout
    print(text, file=stream_)


def _resolve(path: str) -> Path:
    # '@name' refers to a bundled fixture, e.g. @k3 or @seattle20.json
    if path.startswith("@"):
        name = path[1:]
        if not Path(name).suffix:
            name += ".json"
        return ingest.bundled(name)
    return Path(path)


def _load_model(path):
    path = _resolve(path)
    try:
        return ingest.load_model(path)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        raise CliError(f"cannot read model: {exc}", EXIT_IO)
    except ingest.FormatError as exc:
        raise CliError(f"invalid model: {exc}", EXIT_INVALID)


def _seeds(text, n):
    try:
        return as_seed_set(_int_list(text) if isinstance(text, str) else text, n)
    except (ValueError, argparse.ArgumentTypeError) as exc:
        raise CliError(f"invalid seeds: {exc}", EXIT_INVALID)


def _catalog(args, graph) -> tuple[SeedCatalog, int]:
    if args.catalog:
        try:
            cat = ingest.load_catalog(args.catalog, graph.node_count)
        except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
            raise CliError(f"cannot read catalog: {exc}", EXIT_IO)
        except ingest.FormatError as exc:
            raise CliError(f"invalid catalog: {exc}", EXIT_INVALID)
    else:
        try:
            cat = enumerate_seed_catalog(graph, args.k)
        except ValueError as exc:
            raise CliError(str(exc), EXIT_INVALID)
    threshold = args.threshold if args.threshold is not None else cat.max_size
    if threshold < cat.max_size:
        raise CliError(
            f"threshold {threshold} is below the largest seed set size {cat.max_size}", EXIT_INVALID
        )
    return cat, threshold


def _fmt_state(x) -> str:
    return "(" + ", ".join(f"{int(a):+d}" for a in x) + ")"


# -- subcommands ------------------------------------------------------------


def cmd_predict(args) -> int:
    model = _load_model(args.model)
    seeds = _seeds(args.seeds, model.node_count)
    r = map_state(model, seeds, args.method)
    cls = classify_map(r, seeds)
    out = ingest.map_result_to_dict(r, seeds)
    _emit(args, out)
    _say(args, f"state    {_fmt_state(r.state)}")
    _say(args, f"energy   {r.energy!r}")
    _say(args, f"infected {len(r.infected)} {sorted(r.infected)}")
    _say(args, f"class    {cls.value}")
    return EXIT_OK


def cmd_safety(args) -> int:
    model = _load_model(args.model)
    cat, k = _catalog(args, model.graph)
    report = is_k_safe_exact(model, cat, k, margin=args.margin, workers=args.workers)
    _emit(args, report)
    _say(args, f"seed sets {len(cat)}  threshold k={k}")
    _say(args, f"safe      {report.safe}")
    _say(args, f"worst     {sorted(report.worst_seed)} infects {report.worst_infected_count}")
    _say(args, f"min two-mode margin {report.min_margin + 0.0!r}")
    return EXIT_OK if report.certified else EXIT_UNCERTIFIED


def _norm(args, model) -> NormSpec:
    if args.norm == "l1":
        a, b = 1.0, 0.0
    elif args.norm == "l2":
        a, b = 0.0, 1.0
    else:
        a, b = args.l1_weight, args.l2_weight
    edge_w = None
    if args.edge_weights:
        try:
            with open(args.edge_weights, newline="") as fh:
                wm = ingest.load_edge_csv(fh, node_count=model.node_count)
        except ingest.FormatError as exc:
            raise CliError(f"invalid edge weights: {exc}", EXIT_INVALID)
        except OSError as exc:
            raise CliError(f"cannot read edge weights: {exc}", EXIT_IO)
        edge_w = np.ones(model.graph.edge_count)
        for (u, v), w in zip(wm.graph.edges, wm.coupling):
            try:
                edge_w[model.graph.index_of(u, v)] = w
            except (KeyError, ValueError):
                raise CliError(f"edge weight for ({u}, {v}) does not match a model edge", EXIT_INVALID)
    try:
        return NormSpec(a, b, edge_weights=edge_w)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INVALID)


def cmd_prevent(args) -> int:
    model = _load_model(args.model)
    cat, k = _catalog(args, model.graph)
    norm = _norm(args, model)

    t0 = time.perf_counter()
    try:
        polytope = build_two_mode_polytope(model.graph, cat, margin=args.margin)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INVALID)
    t1 = time.perf_counter()
    if args.constraints_out:
        try:
            ingest.export_results(polytope, args.constraints_out, "csv")
        except OSError as exc:
            raise CliError(f"cannot write constraints: {exc}", EXIT_IO)
    try:
        problem = PreventionProblem.build(
            model,
            polytope,
            norm,
            adjust_fields=args.adjust_fields,
            allow_increase=args.allow_increase,
            coupling_floor=args.coupling_floor,
            field_bounds=tuple(args.field_range) if args.field_range else None,
        )
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INVALID)
    if not problem.baseline_in_bounds:
        log.warning("baseline lies outside the requested bounds")
    try:
        sol = project_to_safe(problem, args.feasibility_tol, args.optimality_tol)
    except InfeasibleProblemError as exc:
        print(f"infeasible: {exc.witness}", file=sys.stderr)
        return EXIT_SOLVER
    except NonConvergenceError as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    t2 = time.perf_counter()
    report = certify(sol, cat, k, margin=args.margin, workers=args.workers)
    t3 = time.perf_counter()
    sol = with_certificate(sol, report)

    geometry = None
    if args.geometry:
        try:
            geometry = json.loads(Path(args.geometry).read_text())
        except OSError as exc:
            raise CliError(f"cannot read geometry: {exc}", EXIT_IO)
    _emit(args, sol, geometry=geometry)

    st = sol.solver_stats
    rows = [
        ("seed sets (two-mode constraints)", len(cat)),
        ("solver constraints", st.get("solver_constraints", 0)),
        ("solver", st.get("solver")),
        (f"cost ({norm.kind})", repr(sol.cost)),
        ("edges changed", len(sol.changed_edges())),
        ("primal residual", f"{st.get('primal_residual', 0.0):.3g}"),
        ("optimality residual", f"{st.get('optimality_residual', 0.0):.3g}"),
        (f"certified (k={k})", report.certified),
    ]
    for label, value in rows:
        _say(args, f"{label:<34}{value}")
    for o in report.violations:
        _say(args, f"  violation: seeds {sorted(o.seeds)} infect {o.infected_count} ({o.map_class.value})")
    print(
        f"runtime: constraints {t1 - t0:.3f}s, solve {t2 - t1:.3f}s, certify {t3 - t2:.3f}s",
        file=sys.stderr,
    )
    return EXIT_OK if report.certified else EXIT_UNCERTIFIED


def cmd_ensemble(args) -> int:
    if args.h_range:
        if len(args.h_range) != 2:
            raise CliError("--h-range needs lo,hi", EXIT_INVALID)
        h_mode = ("uniform", args.h_range[0], args.h_range[1])
    else:
        h_mode = ("constant", args.h)
    try:
        spec = EnsembleSpec(
            family=args.family,
            n=args.n,
            samples=args.samples,
            j_max=args.j_max,
            h_mode=h_mode,
            seeds=None if args.seeds is None else _int_list(args.seeds),
            rng_seed=args.seed,
            graph_mode=args.graph_mode,
        )
        res = run_mixed_fraction(spec, args.sweep, workers=args.workers)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INVALID)
    _emit(args, res, default="csv")
    label = "M" if spec.family == "gnm" else "alpha"
    _say(args, f"{label:>6} {'mixed':>8} {'safe':>8} {'infected':>8}")
    for p in res.points:
        _say(args, f"{p.param:>6} {p.mixed_fraction:>8.4f} {p.safe_fraction:>8.4f} {p.infected_fraction:>8.4f}")
    if len(res.points) > 2:
        rho, pval = res.trend()
        _say(args, f"spearman rho {rho:.4f}  p {pval:.3g}")
    return EXIT_OK


def cmd_geometry(args) -> int:
    try:
        scan = k3_geometry_scan(args.h, args.grid, _int_list(args.seeds), k=args.k)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INVALID)
    _emit(args, scan)
    counts = scan.counts()
    _say(args, f"grid points {scan.labels.size}, MAP labels {len(scan.states)}")
    for s in scan.states:
        _say(args, f"  {_fmt_state(s)} {scan.classes[s].value:<19} {counts[s]}")
    _say(args, f"two-mode safe {int(scan.two_mode_safe.sum())}, exact safe {int(scan.exact_safe.sum())}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.grid_graph:
        try:
            r, c = (int(t) for t in args.grid_graph.lower().split("x"))
        except ValueError:
            raise CliError("--grid-graph must look like 3x3", EXIT_INVALID)
        graph = Graph.grid(r, c)
    elif args.model:
        graph = _load_model(args.model).graph
    else:
        raise CliError("simulate needs --model or --grid-graph", EXIT_INVALID)
    seeds = _seeds(args.seeds, graph.node_count)
    try:
        cm = CascadeModel(graph, np.full(graph.edge_count, args.p))
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INVALID)
    if args.runs == 1:
        trace = icm_run(cm, seeds, stream(args.seed, 0))
        _emit(args, trace)
        _say(args, f"steps   {trace.steps}")
        _say(args, f"removed {len(trace.removed)} {sorted(trace.removed)}")
        return EXIT_OK
    freq = np.zeros(graph.node_count)
    steps = []
    for i in range(args.runs):
        tr = icm_run(cm, seeds, stream(args.seed, i))
        freq[list(tr.removed)] += 1
        steps.append(tr.steps)
    out = {
        "runs": args.runs,
        "seeds": sorted(seeds),
        "p": args.p,
        "removed_frequency": (freq / args.runs).tolist(),
        "mean_steps": float(np.mean(steps)),
        "reachable": sorted(reachable(graph, seeds)),
    }
    _emit(args, out)
    _say(args, f"runs {args.runs}, mean steps {np.mean(steps):.3f}")
    _say(args, "P(removed) " + " ".join(f"{v:.3f}" for v in freq / args.runs))
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pandemic-gm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, catalog=False):
        sp.add_argument("--out", help="output file ('-' for stdout)")
        sp.add_argument("--format", choices=ingest.FORMATS)
        sp.add_argument(
            "--workers",
            type=int,
            default=default_workers(),
            help=f"worker processes (default from ${WORKERS_ENV}, else 1)",
        )
        if catalog:
            g = sp.add_mutually_exclusive_group(required=True)
            g.add_argument("--k", type=int, help="catalog of all seed sets of size 1..k")
            g.add_argument("--catalog", help="file with one seed set per line")
            sp.add_argument("--threshold", type=int, help="infection threshold (default: largest seed set)")
            sp.add_argument("--margin", type=float, default=0.0, help="required two-mode energy margin")

    sp = sub.add_parser("predict", help="MAP state for a seed set")
    sp.add_argument("--model", required=True)
    sp.add_argument("--seeds", required=True, help="comma-separated node ids")
    sp.add_argument("--method", choices=["min-cut", "brute-force"], default="min-cut")
    common(sp)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("safety", aliases=["safety-check"], help="exact k-safety check")
    sp.add_argument("--model", required=True)
    common(sp, catalog=True)
    sp.set_defaults(func=cmd_safety)

    sp = sub.add_parser("prevent", help="project into the two-mode safe polytope and certify")
    sp.add_argument("--model", required=True)
    common(sp, catalog=True)
    sp.add_argument("--norm", choices=["l1", "l2", "mixed"], default="l1")
    sp.add_argument("--l1-weight", type=float, default=0.5)
    sp.add_argument("--l2-weight", type=float, default=0.5)
    sp.add_argument("--edge-weights", help="CSV u,v,J giving per-edge cost weights")
    sp.add_argument("--adjust-fields", action="store_true")
    sp.add_argument("--field-range", type=_float_list, help="lo,hi bounds for adjusted fields")
    sp.add_argument("--allow-increase", action="store_true", help="let couplings grow")
    sp.add_argument("--coupling-floor", type=float, default=0.0)
    sp.add_argument("--feasibility-tol", type=float, default=FEASIBILITY_TOL)
    sp.add_argument("--optimality-tol", type=float, default=OPTIMALITY_TOL)
    sp.add_argument("--constraints-out", help="write the constraint set as CSV")
    sp.add_argument("--geometry", help="JSON {region id: GeoJSON geometry} for --format geojson")
    sp.set_defaults(func=cmd_prevent)

    sp = sub.add_parser("ensemble", help="mixed-state fractions over random graphs")
    sp.add_argument("--family", choices=["gnm", "regular"], default="gnm")
    sp.add_argument("--n", type=int, default=20)
    sp.add_argument("--sweep", type=parse_sweep, required=True, help="start:stop:step or a list")
    sp.add_argument("--samples", type=int, default=500)
    sp.add_argument("--seed", type=int, default=0, help="rng seed")
    sp.add_argument("--j-max", type=float, default=2.0)
    sp.add_argument("--h", type=float, default=-1.0, help="constant field")
    sp.add_argument("--h-range", type=_float_list, help="lo,hi for uniform random fields")
    sp.add_argument("--seeds", help="explicit seed set (default: one random node per sample)")
    sp.add_argument("--graph-mode", choices=["fixed", "per-sample"])
    common(sp)
    sp.set_defaults(func=cmd_ensemble)

    sp = sub.add_parser("geometry", help="K3 MAP-state scan over (J01, J02, J12)")
    sp.add_argument("--h", type=_float_list, default=[-1.0, -1.0, -1.0])
    sp.add_argument("--grid", type=parse_grid, default=(0.0, 2.0, 0.05))
    sp.add_argument("--seeds", default="0")
    sp.add_argument("--k", type=int, default=1)
    common(sp)
    sp.set_defaults(func=cmd_geometry)

    sp = sub.add_parser("simulate", help="independent cascade runs")
    sp.add_argument("--model", help="model file providing the graph")
    sp.add_argument("--grid-graph", help="use an RxC grid graph instead, e.g. 3x3")
    sp.add_argument("--p", type=float, default=0.5, help="transmission probability on every edge")
    sp.add_argument("--seeds", required=True)
    sp.add_argument("--seed", type=int, default=0, help="rng seed")
    sp.add_argument("--runs", type=int, default=1)
    common(sp)
    sp.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _prepare_argv(argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
