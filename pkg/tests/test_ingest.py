import csv
import io
import json

import numpy as np
import pytest

from conftest import random_model
from pandemic_gm import ingest
from pandemic_gm.cascade import CascadeModel, icm_run
from pandemic_gm.ensemble import EnsembleSpec, k3_geometry_scan, run_mixed_fraction, stream
from pandemic_gm.inference import map_mincut
from pandemic_gm.model import Graph, IsingModel, enumerate_seed_catalog
from pandemic_gm.polytope import build_two_mode_polytope, is_k_safe_exact
from pandemic_gm.projection import PreventionProblem, certify, project_to_safe, with_certificate


def _solution(model, k=1):
    cat = enumerate_seed_catalog(model.graph, k)
    sol = project_to_safe(PreventionProblem.build(model, build_two_mode_polytope(model.graph, cat)))
    return with_certificate(sol, certify(sol, cat, k))


class TestModelFiles:
    def test_bundled_k3(self):
        m = ingest.load_model(ingest.bundled("k3.json"))
        assert m.graph == Graph.complete(3)
        assert m.coupling.tolist() == [1.0, 1.0, 1.0]
        assert m.field.tolist() == [-1.0, -1.0, -1.0]

    @pytest.mark.parametrize(
        "name", ["k3.json", "path2.json", "chain6_adversarial.json", "grid3x3.json", "seattle20.json"]
    )
    def test_bundled_fixtures_load(self, name):
        m = ingest.load_model(ingest.bundled(name))
        assert np.all(m.coupling >= 0)

    def test_negative_coupling(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text(
            json.dumps({"nodes": [{"id": 0, "h": -1}, {"id": 1, "h": -1}], "edges": [{"u": 0, "v": 1, "J": -0.5}]})
        )
        with pytest.raises(ingest.FormatError, match=r"edges\[0\]\.J"):
            ingest.load_model(p)

    def test_round_trip_bit_exact(self, tmp_path, rng):
        for i in range(20):
            m = random_model(rng, int(rng.integers(1, 12)), h_lo=-3, h_hi=3)
            p = tmp_path / f"m{i}.json"
            ingest.save_model(m, p)
            assert ingest.load_model(p) == m

    def test_syntax_error_has_position(self, tmp_path):
        p = tmp_path / "broken.json"
        p.write_text('{"nodes": [\n  {"id": 0, "h": -1},\n  oops\n]}')
        with pytest.raises(ingest.FormatError, match="line 3"):
            ingest.load_model(p)

    @pytest.mark.parametrize(
        "doc,match",
        [
            ({"nodes": []}, "nodes"),
            ({"nodes": [], "edges": []}, "non-empty"),
            ({"nodes": [{"id": 0}], "edges": []}, r"nodes\[0\].*'h'"),
            ({"nodes": [{"id": 0, "h": "x"}], "edges": []}, r"nodes\[0\]\.h"),
            ({"nodes": [{"id": 1, "h": 0}], "edges": []}, "0..0"),
            ({"nodes": [{"id": 0, "h": 0}, {"id": 1, "h": 0}], "edges": [{"u": 0, "v": 0, "J": 1}]}, "self-loop"),
            ({"nodes": [{"id": 0, "h": 0}, {"id": 1, "h": 0}], "edges": [{"u": 0, "J": 1}]}, "'v'"),
        ],
    )
    def test_schema_errors(self, doc, match):
        with pytest.raises(ingest.FormatError, match=match):
            ingest.model_from_dict(doc)

    def test_edge_csv(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("u,v,J\n0,1,2.5\n2,1,0.5\n")
        m = ingest.load_model(p)
        assert m.graph.edges == ((0, 1), (1, 2))
        assert m.coupling.tolist() == [2.5, 0.5]
        assert m.field.tolist() == [-1.0, -1.0, -1.0]

    def test_edge_csv_errors(self):
        with pytest.raises(ingest.FormatError, match="header"):
            ingest.load_edge_csv(io.StringIO("a,b\n1,2\n"))
        with pytest.raises(ingest.FormatError, match="line 3"):
            ingest.load_edge_csv(io.StringIO("u,v,J\n0,1,1\n1,2,x\n"))
        with pytest.raises(ingest.FormatError, match="negative"):
            ingest.load_edge_csv(io.StringIO("u,v,J\n0,1,-1\n"))


class TestMobility:
    def test_equal_counts(self):
        t = ingest.MobilityTable([0, 1, 1, 2], [1, 0, 2, 1], [5, 5, 5, 5], 3)
        m = ingest.build_model_from_mobility(t)
        assert m.coupling.tolist() == [1.0, 1.0]
        assert m.field.tolist() == [-1.0, -1.0, -1.0]

    def test_linear_proxy(self):
        t = ingest.MobilityTable([0, 1], [1, 2], [20, 10], 3)
        m = ingest.build_model_from_mobility(t, scale=2.0, h0=-0.5)
        assert m.coupling.tolist() == [2.0, 1.0]
        assert m.field.tolist() == [-0.5] * 3

    def test_one_direction_only(self):
        t = ingest.MobilityTable([0], [1], [7], 2)
        m = ingest.build_model_from_mobility(t)
        assert m.graph.edges == ((0, 1),)
        assert m.coupling.tolist() == [1.0]

    def test_self_visits_ignored(self):
        t = ingest.MobilityTable([0, 0, 1], [0, 1, 1], [100, 4, 100], 2)
        assert ingest.build_model_from_mobility(t).coupling.tolist() == [1.0]

    def test_transpose_idempotent(self, rng):
        n = 8
        o = rng.integers(0, n, 40)
        d = rng.integers(0, n, 40)
        c = rng.integers(0, 50, 40).astype(float)
        t = ingest.MobilityTable(o, d, c, n)
        assert ingest.build_model_from_mobility(t) == ingest.build_model_from_mobility(t.transpose())

    def test_validation(self):
        with pytest.raises(ValueError):
            ingest.MobilityTable([0], [3], [1], 2)
        with pytest.raises(ValueError):
            ingest.MobilityTable([0], [1], [-1], 2)
        with pytest.raises(ValueError):
            ingest.build_model_from_mobility(ingest.MobilityTable([0], [0], [3], 2))
        with pytest.raises(ValueError):
            ingest.build_model_from_mobility(ingest.MobilityTable([0], [1], [3], 2), scale=0)

    def test_csv_round_trip(self, tmp_path):
        t = ingest.MobilityTable([0, 2], [1, 0], [3.0, 2.5], 3)
        p = tmp_path / "mob.csv"
        ingest.save_mobility_csv(t, p)
        back = ingest.load_mobility_csv(p, 3)
        assert back.count.tolist() == [3.0, 2.5]
        assert ingest.build_model_from_mobility(back) == ingest.build_model_from_mobility(t)

    def test_bundled_city_matches_model(self):
        t = ingest.load_mobility_csv(ingest.bundled("seattle20_mobility.csv"), 20)
        m = ingest.load_model(ingest.bundled("seattle20.json"))
        built = ingest.build_model_from_mobility(t, scale=6.0)
        assert built == m
        assert m.node_count == 20


class TestCatalogFile:
    def test_parse(self, tmp_path):
        p = tmp_path / "cat.txt"
        p.write_text("# seeds\n0\n1, 2\n\n2 3  # pair\n")
        cat = ingest.load_catalog(p, 4)
        assert [sorted(s) for s in cat] == [[0], [1, 2], [2, 3]]

    @pytest.mark.parametrize("text", ["0\n9\n", "0\nx\n", "# nothing\n", "1\n1\n"])
    def test_errors(self, tmp_path, text):
        p = tmp_path / "cat.txt"
        p.write_text(text)
        with pytest.raises(ingest.FormatError):
            ingest.load_catalog(p, 4)


class TestExport:
    def test_solution_json(self, tmp_path):
        m = ingest.load_model(ingest.bundled("path2.json"))
        sol = _solution(m)
        p = tmp_path / "sol.json"
        ingest.export_results(sol, p, "json")
        d = json.loads(p.read_text())
        assert d["cost"] == pytest.approx(2.0)
        assert d["corrected"]["edges"][0]["J"] == pytest.approx(1.0)
        assert len(d["per_constraint_slack"]) == 2
        assert d["changes"][0]["delta"] == pytest.approx(-2.0)
        assert d["certificate"]["certified"] is True
        back = ingest.load_solution(p)
        assert back.corrected == sol.corrected
        assert back.baseline == sol.baseline
        assert back.cost == sol.cost
        assert back.certificate == sol.certificate
        np.testing.assert_array_equal(back.per_constraint_slack, sol.per_constraint_slack)

    def test_ensemble_csv(self, tmp_path):
        res = run_mixed_fraction(EnsembleSpec(n=8, samples=10), [4, 8, 12])
        p = tmp_path / "ens.csv"
        ingest.export_results(res, p, "csv")
        rows = list(csv.DictReader(p.open()))
        assert [int(r["param"]) for r in rows] == [4, 8, 12]
        assert list(rows[0]) == ingest.ENSEMBLE_COLUMNS

    def test_dot_reduction_layer(self):
        sol = _solution(ingest.load_model(ingest.bundled("path2.json")))
        text = ingest.to_dot(sol)
        assert text.startswith("graph G {")
        for layer in ("baseline", "corrected", "reduction"):
            assert f"cluster_{layer}" in text
        assert 'label="reduce 2"' in text

    def test_geojson(self):
        sol = _solution(ingest.load_model(ingest.bundled("path2.json")))
        shape = {"type": "Point", "coordinates": [0.0, 1.0]}
        gj = ingest.to_geojson(sol, {"0": shape})
        assert gj["type"] == "FeatureCollection"
        assert gj["features"][0]["geometry"] == shape
        assert gj["features"][1]["geometry"] is None
        assert gj["features"][0]["properties"]["reduction"] == pytest.approx(2.0)

    def test_other_objects(self, tmp_path):
        m = ingest.load_model(ingest.bundled("k3.json"))
        cat = enumerate_seed_catalog(m.graph, 1)
        objs = [
            is_k_safe_exact(m, cat, 1),
            k3_geometry_scan([-1, -1, -1], (0, 1, 0.5)),
            icm_run(CascadeModel(Graph.grid(2, 2), 1.0), {0}, stream(0)),
            m,
        ]
        for i, obj in enumerate(objs):
            ingest.export_results(obj, tmp_path / f"o{i}.json", "json")
            json.loads((tmp_path / f"o{i}.json").read_text())
        ingest.export_results(objs[0], tmp_path / "rep.csv", "csv")
        ingest.export_results(objs[1], tmp_path / "scan.csv", "csv")
        assert len((tmp_path / "scan.csv").read_text().splitlines()) == 27 + 1
        trace = json.loads((tmp_path / "o2.json").read_text())
        assert trace["states"][0] == "ISSS"
        assert trace["states"][-1] == "RRRR"

    def test_constraints_csv(self, tmp_path):
        g = Graph.complete(3)
        cs = build_two_mode_polytope(g, enumerate_seed_catalog(g, 1))
        p = tmp_path / "c.csv"
        ingest.export_results(cs, p, "csv")
        rows = list(csv.DictReader(p.open()))
        assert rows[0] == {"id": "0", "seeds": "0", "edge_terms": "0-1:1.0;0-2:1.0", "node_terms": "1:1.0;2:1.0", "rhs": "0.0"}

    def test_map_result(self):
        m = ingest.load_model(ingest.bundled("k3.json"))
        d = ingest.map_result_to_dict(map_mincut(m, {0}), {0})
        assert d["state"] == [1, -1, -1]
        assert d["class"] == "polarized-safe"

    def test_unsupported(self, tmp_path):
        with pytest.raises(ValueError):
            ingest.export_results({}, tmp_path / "x", "xml")
        with pytest.raises(TypeError):
            ingest.export_results(object(), tmp_path / "x", "json")
        with pytest.raises(TypeError):
            ingest.to_dot(object())

    def test_non_finite_values_stay_valid_json(self, tmp_path):
        p = tmp_path / "x.json"
        ingest.export_results({"a": float("inf")}, p, "json")
        assert json.loads(p.read_text()) == {"a": "inf"}
