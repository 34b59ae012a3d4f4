import json
import math

import numpy as np
import pytest

from surgegraph.errors import DisconnectedNodeWarning, LengthMismatch, ZeroVariance
from surgegraph.geo import (
    Station,
    StationGraph,
    build_graph,
    degree_report,
    haversine,
    load_stations_csv,
    pairwise_stats,
    pearson,
    save_stations_csv,
    threshold_sweep,
)


def make_stations(coords):
    return [Station(i, f"st{i}", "TEST", lat, lon) for i, (lat, lon) in enumerate(coords)]


class TestPearson:
    def test_self_correlation(self):
        x = np.array([1.0, 2.0, 5.0, 3.0])
        assert pearson(x, x) == pytest.approx(1.0)

    def test_anti_correlation(self):
        x = np.array([1.0, 2.0, 5.0, 3.0])
        assert pearson(x, -x) == pytest.approx(-1.0)

    def test_hand_value(self):
        # direct evaluation of the product-moment formula
        assert pearson([1, 2, 3, 4], [1, 2, 3, 5]) == pytest.approx(0.98270, abs=1e-4)

    def test_constant_series_raises(self):
        with pytest.raises(ZeroVariance):
            pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            pearson([1.0, 2.0], [1.0, 2.0, 3.0])

    def test_symmetry_and_positive_affine_invariance(self):
        rng = np.random.default_rng(42)
        for _ in range(25):
            x = rng.normal(size=50)
            y = rng.normal(size=50)
            r = pearson(x, y)
            assert pearson(y, x) == pytest.approx(r, abs=1e-12)
            a = rng.uniform(0.1, 5.0)
            b = rng.uniform(-3.0, 3.0)
            assert pearson(a * x + b, y) == pytest.approx(r, abs=1e-10)


class TestHaversine:
    def test_identical_points(self):
        assert haversine((29.0, -90.0), (29.0, -90.0)) == 0.0

    def test_quarter_great_circle(self):
        assert haversine((0.0, 0.0), (0.0, 90.0)) == pytest.approx(
            6371.0 * math.pi / 2.0, abs=1e-3)

    def test_one_degree_at_equator(self):
        assert haversine((0.0, 0.0), (0.0, 1.0)) == pytest.approx(
            6371.0 * math.pi / 180.0, abs=1e-3)
        assert haversine((0.0, 0.0), (0.0, 1.0)) == pytest.approx(111.195, abs=1e-3)

    def test_antipodal_clamps(self):
        d = haversine((0.0, 0.0), (0.0, 180.0))
        assert d == pytest.approx(6371.0 * math.pi, rel=1e-9)


def correlated_pair(rho, n, rng):
    z1 = rng.normal(size=n)
    z2 = rng.normal(size=n)
    return z1, rho * z1 + math.sqrt(1 - rho * rho) * z2


class TestBuildGraph:
    def test_two_stations_edge(self):
        rng = np.random.default_rng(0)
        x, y = correlated_pair(0.9, 4000, rng)
        stations = make_stations([(29.0, -90.0), (29.5, -90.5)])  # ~ 75 km apart
        g = build_graph(stations, {0: x, 1: y}, rho_min=0.8, d_max_km=500.0)
        assert len(g.edges) == 1
        i, j, w = g.edges[0]
        assert (i, j) == (0, 1)
        assert g.adjacency[0, 1] == g.adjacency[1, 0] == w
        assert 0.8 < w <= 1.0

    def test_distance_gate_blocks_edge(self):
        rng = np.random.default_rng(0)
        x, y = correlated_pair(0.9, 4000, rng)
        stations = make_stations([(29.0, -90.0), (29.0, -83.0)])  # ~ 680 km
        with pytest.warns(DisconnectedNodeWarning):
            g = build_graph(stations, {0: x, 1: y}, rho_min=0.8, d_max_km=500.0)
        assert len(g.edges) == 0
        assert (g.adjacency == 0).all()

    def test_correlation_gate_is_strict(self):
        # exact rho values via direct construction on 3 nodes
        stats = {"rho": None}
        stations = make_stations([(29.0, -90.0), (29.1, -90.1), (29.2, -90.2)])
        # craft series with known pairwise correlations (0.85, 0.75, 0.95)
        rng = np.random.default_rng(3)
        n = 200000
        z = rng.normal(size=(3, n))
        target = np.array([[1.0, 0.85, 0.75], [0.85, 1.0, 0.95], [0.75, 0.95, 1.0]])
        w, v = np.linalg.eigh(target)
        series = (v @ np.diag(np.sqrt(np.maximum(w, 0))) @ z)
        obs = {i: series[i] for i in range(3)}
        rho, _ = pairwise_stats(stations, obs)
        assert abs(rho[0, 1] - 0.85) < 0.01 and abs(rho[0, 2] - 0.75) < 0.01
        g = build_graph(stations, obs, rho_min=0.8, d_max_km=500.0)
        assert len(g.edges) == 2
        assert {(i, j) for i, j, _ in g.edges} == {(0, 1), (1, 2)}

    def test_pairwise_complete_missing_handling(self):
        rng = np.random.default_rng(5)
        x, y = correlated_pair(0.95, 3000, rng)
        x = x.copy()
        x[100:200] = np.nan
        stations = make_stations([(29.0, -90.0), (29.1, -90.1)])
        g = build_graph(stations, {0: x, 1: y}, rho_min=0.8, d_max_km=500.0)
        assert len(g.edges) == 1

    def test_zero_variance_names_stations(self):
        stations = make_stations([(29.0, -90.0), (29.1, -90.1)])
        obs = {0: np.ones(100), 1: np.arange(100.0)}
        with pytest.raises(ZeroVariance, match="0"):
            build_graph(stations, obs, rho_min=0.8, d_max_km=500.0)

    def test_gate_soundness(self):
        rng = np.random.default_rng(11)
        n_st = 5
        coords = [(28.0 + 0.8 * i, -95.0 + 1.5 * i) for i in range(n_st)]
        stations = make_stations(coords)
        z = rng.normal(size=(n_st, 3000))
        base = rng.normal(size=3000)
        obs = {i: 0.8 * base + 0.6 * z[i] for i in range(n_st)}
        rho, dist = pairwise_stats(stations, obs)
        g = build_graph(stations, obs, rho_min=0.5, d_max_km=300.0)
        for i in range(n_st):
            for j in range(n_st):
                if i == j:
                    assert g.adjacency[i, j] == 0
                elif g.adjacency[i, j] != 0:
                    assert rho[i, j] > 0.5 and dist[i, j] < 300.0
                else:
                    assert rho[i, j] <= 0.5 or dist[i, j] >= 300.0

    def test_byte_identical_output(self, tmp_path):
        rng = np.random.default_rng(0)
        x, y = correlated_pair(0.9, 2000, rng)
        stations = make_stations([(29.0, -90.0), (29.5, -90.5)])
        p1, p2 = tmp_path / "g1.json", tmp_path / "g2.json"
        build_graph(stations, {0: x, 1: y}).save(p1)
        build_graph(stations, {0: x.copy(), 1: y.copy()}).save(p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestDegreeReport:
    def test_empty_edges(self):
        g = StationGraph(stations=make_stations([(29, -90), (29.1, -90.1)]),
                         edges=[], rho_min=0.8, d_max_km=500.0)
        rep = degree_report(g)
        assert rep.degrees == [0, 0]

    def test_triangle(self):
        g = StationGraph(stations=make_stations([(29, -90), (29.1, -90.1), (29.2, -90.2)]),
                         edges=[(0, 1, 0.9), (0, 2, 0.9), (1, 2, 0.9)],
                         rho_min=0.8, d_max_km=500.0)
        assert degree_report(g).degrees == [2, 2, 2]

    def test_path(self):
        g = StationGraph(stations=make_stations([(29, -90), (29.1, -90.1), (29.2, -90.2)]),
                         edges=[(0, 1, 0.9), (1, 2, 0.9)], rho_min=0.8, d_max_km=500.0)
        rep = degree_report(g)
        assert rep.degrees == [1, 2, 1]
        assert rep.max_degree == 2 and rep.argmax_node == 1


class TestThresholdSweep:
    def setup_method(self):
        rng = np.random.default_rng(21)
        self.stations = make_stations([(28.0 + 0.5 * i, -95.0 + 0.5 * i) for i in range(4)])
        base = rng.normal(size=2500)
        self.obs = {i: 0.9 * base + 0.4 * rng.normal(size=2500) for i in range(4)}

    def test_zero_threshold_gives_complete_graph(self):
        rows = threshold_sweep(self.stations, self.obs, [0.0], [1e9])
        assert rows[0][2] == 4 * 3 // 2

    def test_rho_above_one_gives_empty(self):
        rows = threshold_sweep(self.stations, self.obs, [1.01], [1e9])
        assert rows[0][2] == 0 and rows[0][3] == 4

    def test_rows_match_enumerated_edge_sets(self):
        rho, dist = pairwise_stats(self.stations, self.obs)
        grid_r = [0.0, 0.5, 0.8, 0.9]
        grid_d = [50.0, 150.0, 1e4]
        rows = threshold_sweep(self.stations, self.obs, grid_r, grid_d)
        k = 0
        for rmin in grid_r:
            for dmax in grid_d:
                edges = {(i, j) for i in range(4) for j in range(i + 1, 4)
                         if rho[i, j] > rmin and dist[i, j] < dmax}
                assert rows[k][2] == len(edges)
                k += 1

    def test_monotone_no_new_edges(self):
        grid_r = [0.0, 0.3, 0.6, 0.8, 0.95]
        grid_d = [50.0, 100.0, 200.0, 400.0, 1e4]
        rows = threshold_sweep(self.stations, self.obs, grid_r, grid_d)
        table = {}
        k = 0
        for rmin in grid_r:
            for dmax in grid_d:
                table[(rmin, dmax)] = rows[k][2]
                k += 1
        for a in range(len(grid_r) - 1):
            for b in range(len(grid_d)):
                assert table[(grid_r[a + 1], grid_d[b])] <= table[(grid_r[a], grid_d[b])]
        for a in range(len(grid_r)):
            for b in range(len(grid_d) - 1):
                assert table[(grid_r[a], grid_d[b])] <= table[(grid_r[a], grid_d[b + 1])]


class TestGraphIO:
    def test_json_round_trip(self, tmp_path):
        g = StationGraph(
            stations=make_stations([(29.0, -90.0), (29.5, -90.5), (30.0, -91.0)]),
            edges=[(0, 1, 0.92), (1, 2, 0.85)], rho_min=0.8, d_max_km=500.0)
        path = tmp_path / "graph.json"
        g.save(path)
        doc = json.loads(path.read_text())
        assert set(doc) == {"earth_radius_km", "rho_min", "d_max_km", "stations", "edges"}
        g2 = StationGraph.load(path)
        assert g2.edges == g.edges
        np.testing.assert_array_equal(g2.adjacency, g.adjacency)
        assert g2.content_hash() == g.content_hash()

    def test_stations_csv_round_trip(self, tmp_path):
        stations = [Station(0, "Pier 21, Anytown", "NOAA-NOS", 29.31, -94.79),
                    Station(1, "Bay Entrance", "TCOON", 29.36, -94.72)]
        path = tmp_path / "stations.csv"
        save_stations_csv(stations, path)
        assert load_stations_csv(path) == stations

    def test_stations_csv_header_required(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("id,name\n0,x\n")
        with pytest.raises(ValueError, match="header"):
            load_stations_csv(path)
