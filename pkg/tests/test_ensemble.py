import numpy as np
import pytest

from conftest import oracle_map
from pandemic_gm.ensemble import (
    EnsembleSpec,
    gen_gnm,
    gen_regular,
    grid_axis,
    k3_geometry_scan,
    run_mixed_fraction,
    stream,
)
from pandemic_gm.inference import MapClass
from pandemic_gm.model import Graph


class TestGnm:
    def test_complete(self):
        assert gen_gnm(20, 190, stream(0)) == Graph.complete(20)

    def test_empty(self):
        assert gen_gnm(20, 0, stream(0)).edge_count == 0

    def test_deterministic(self):
        assert gen_gnm(20, 50, stream(4, 1)) == gen_gnm(20, 50, stream(4, 1))
        assert gen_gnm(20, 50, stream(4, 1)) != gen_gnm(20, 50, stream(4, 2))

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            gen_gnm(5, 11, stream(0))

    def test_edge_frequencies_roughly_uniform(self):
        counts = np.zeros(10)
        idx = Graph.complete(5).edge_index
        for i in range(2000):
            for e in gen_gnm(5, 3, stream(1, i)).edges:
                counts[idx[e]] += 1
        # each edge appears with probability 3/10
        assert np.all(np.abs(counts / 2000 - 0.3) < 0.04)


class TestRegular:
    def test_forced_complete(self):
        assert gen_regular(4, 3, stream(0)) == Graph.complete(4)

    @pytest.mark.parametrize("n,d", [(6, 2), (10, 3), (20, 4), (20, 15), (11, 8), (7, 0)])
    def test_degrees(self, n, d):
        for i in range(5):
            g = gen_regular(n, d, stream(2, i))
            assert np.all(g.degree() == d)
            assert g.edge_count == n * d // 2

    def test_parity(self):
        with pytest.raises(ValueError, match="even"):
            gen_regular(5, 3, stream(0))

    def test_degree_range(self):
        with pytest.raises(ValueError):
            gen_regular(5, 5, stream(0))


class TestSpec:
    def test_defaults_follow_family(self):
        assert EnsembleSpec("gnm").graph_mode == "fixed"
        assert EnsembleSpec("regular").graph_mode == "per-sample"

    @pytest.mark.parametrize(
        "kw",
        [{"family": "ba"}, {"samples": 0}, {"j_max": 0.0}, {"h_mode": ("normal", 0, 1)}, {"graph_mode": "x"}],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            EnsembleSpec(**kw)

    def test_bad_sweep_point(self):
        with pytest.raises(ValueError):
            run_mixed_fraction(EnsembleSpec(n=6, samples=2), [16])
        with pytest.raises(ValueError):
            run_mixed_fraction(EnsembleSpec("regular", n=5, samples=2), [3])


class TestMixedFraction:
    def test_weak_coupling_all_safe(self):
        spec = EnsembleSpec(n=12, samples=60, j_max=0.01, rng_seed=3)
        res = run_mixed_fraction(spec, [10, 40, 66])
        for p in res.points:
            assert p.mixed == 0
            assert p.safe_fraction == 1.0

    def test_no_edges(self):
        res = run_mixed_fraction(EnsembleSpec(n=10, samples=40), [0])
        assert res.points[0].mixed_fraction == 0.0
        assert res.points[0].safe_fraction == 1.0

    def test_dense_strong_coupling_polarizes(self):
        spec = EnsembleSpec(n=12, samples=100, j_max=20.0, h_mode=("uniform", -2.0, 0.0), rng_seed=1)
        p = run_mixed_fraction(spec, [66]).points[0]
        assert p.mixed_fraction <= 0.02
        assert p.polarized_infected > 0

    def test_partition_and_determinism(self):
        spec = EnsembleSpec(n=10, samples=50, rng_seed=11)
        a = run_mixed_fraction(spec, [5, 15, 30])
        b = run_mixed_fraction(spec, [5, 15, 30])
        assert a.points == b.points
        for p in a.points:
            assert p.mixed + p.polarized_safe + p.polarized_infected == p.samples

    def test_worker_count_does_not_matter(self):
        spec = EnsembleSpec("regular", n=10, samples=30, rng_seed=5)
        a = run_mixed_fraction(spec, [2, 4], workers=1)
        b = run_mixed_fraction(spec, [2, 4], workers=2)
        assert a.points == b.points

    def test_labels_match_bruteforce_oracle(self):
        # recompute every sample independently and classify with the oracle MAP
        spec = EnsembleSpec(n=7, samples=40, rng_seed=9, graph_mode="per-sample")
        sweep = [4, 10, 16]
        res = run_mixed_fraction(spec, sweep)
        for i, param in enumerate(sweep):
            counts = {c: 0 for c in MapClass}
            for j in range(spec.samples):
                rng = stream(spec.rng_seed, i, j)
                g = spec.graph(param, rng)
                m = spec.sample_model(g, rng)
                seed = int(rng.integers(spec.n))
                x, _ = oracle_map(g.edges, m.coupling, m.field, {seed})
                inf = {a for a, v in enumerate(x) if v == 1}
                if inf == {seed}:
                    counts[MapClass.POLARIZED_SAFE] += 1
                elif len(inf) == spec.n:
                    counts[MapClass.POLARIZED_INFECTED] += 1
                else:
                    counts[MapClass.MIXED] += 1
            p = res.points[i]
            assert (p.mixed, p.polarized_safe, p.polarized_infected) == (
                counts[MapClass.MIXED],
                counts[MapClass.POLARIZED_SAFE],
                counts[MapClass.POLARIZED_INFECTED],
            )

    def test_explicit_seeds(self):
        spec = EnsembleSpec(n=8, samples=20, seeds={0, 1})
        res = run_mixed_fraction(spec, [0])
        assert res.points[0].safe_fraction == 1.0

    def test_trend(self):
        res = run_mixed_fraction(EnsembleSpec(n=12, samples=60, rng_seed=2), [6, 20, 40, 66])
        rho, p = res.trend()
        assert -1.0 <= rho <= 1.0
        assert 0.0 <= p <= 1.0


class TestGeometry:
    def test_axis(self):
        np.testing.assert_allclose(grid_axis(0, 2, 0.05)[[0, 1, -1]], [0, 0.05, 2.0])
        assert grid_axis(0, 2, 0.05).size == 41
        with pytest.raises(ValueError):
            grid_axis(0, 1, 0)

    def test_coarse_scan(self):
        scan = k3_geometry_scan([-1, -1, -1], (0, 2, 0.1), seeds=(0,))
        assert len(scan.states) == 4
        assert scan.states[scan.labels[0, 0, 0]] == (1, -1, -1)
        assert scan.states[scan.labels[-1, -1, -1]] == (1, 1, 1)
        c = scan.counts()
        # swapping nodes 1 and 2 exchanges the two mixed regions
        assert c[(1, 1, -1)] == c[(1, -1, 1)]
        assert scan.classes[(1, 1, -1)] is MapClass.MIXED
        assert sum(c.values()) == 21**3
        # exact region sits inside the two-mode region
        assert not np.any(scan.exact_safe & ~scan.two_mode_safe)

    def test_invalid_field(self):
        with pytest.raises(ValueError):
            k3_geometry_scan([-1, -1], (0, 1, 0.5))
