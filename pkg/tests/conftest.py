import numpy as np
import pytest

from surgegraph.geo import Station, StationGraph


def finite_difference_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar f() w.r.t. array x (mutated in place)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        fp = f()
        flat[k] = orig - h
        fm = f()
        flat[k] = orig
        gf[k] = (fp - fm) / (2.0 * h)
    return g


def max_rel_err(analytic, numeric):
    a = np.asarray(analytic).ravel()
    f = np.asarray(numeric).ravel()
    scale = np.maximum(np.abs(a), np.abs(f))
    err = np.abs(a - f)
    # near-zero gradients: compare absolutely against the same 1e-4 budget
    rel = np.where(scale > 1e-6, err / np.maximum(scale, 1e-300), err / 1e-6)
    return float(rel.max()) if rel.size else 0.0


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def line_graph(n, weight=1.0):
    """Path graph 0-1-...-(n-1) with unit coordinates close together."""
    stations = [Station(i, f"s{i}", "TEST", 29.0 + 0.01 * i, -90.0 + 0.01 * i)
                for i in range(n)]
    edges = [(i, i + 1, weight) for i in range(n - 1)]
    return StationGraph(stations=stations, edges=edges, rho_min=0.0, d_max_km=1e9)


def star_graph(n, weight=1.0):
    """Node 0 joined to every other node."""
    stations = [Station(i, f"s{i}", "TEST", 29.0 + 0.01 * i, -90.0 + 0.01 * i)
                for i in range(n)]
    edges = [(0, i, weight) for i in range(1, n)]
    return StationGraph(stations=stations, edges=edges, rho_min=0.0, d_max_km=1e9)
