"""Station graph construction from water-level correlation and distance.

Stations become nodes; an undirected edge joins two stations exactly when the
Pearson correlation of their observed water levels exceeds ``rho_min`` AND
their great-circle distance is below ``d_max_km`` (both strict). Edge weights
are the correlations themselves; the adjacency matrix is symmetric with a
zero diagonal.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DisconnectedNodeWarning, LengthMismatch, ZeroVariance

EARTH_RADIUS_KM = 6371.0  # mean Earth radius

STATIONS_CSV_HEADER = "node_id,name,agency,lat,lon"


@dataclass(frozen=True)
class Station:
    node_id: int
    name: str
    agency: str
    lat: float
    lon: float

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"station {self.node_id}: latitude {self.lat} out of range")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"station {self.node_id}: longitude {self.lon} out of range")

    @property
    def coords(self):
        return (self.lat, self.lon)


def pearson(x, y):
    """Product-moment correlation of two equal-length, non-constant series."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"pearson: got lengths {x.shape} and {y.shape}")
    if x.size < 2:
        raise LengthMismatch("pearson: need at least 2 samples")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = math.sqrt(float(dx @ dx))
    sy = math.sqrt(float(dy @ dy))
    if sx == 0.0 or sy == 0.0:
        raise ZeroVariance("pearson: constant series")
    r = float(dx @ dy) / (sx * sy)
    return min(1.0, max(-1.0, r))


def haversine(a, b, radius_km=EARTH_RADIUS_KM):
    """Great-circle distance in km between (lat, lon) pairs in degrees."""
    lat1, lon1 = math.radians(a[0]), math.radians(a[1])
    lat2, lon2 = math.radians(b[0]), math.radians(b[1])
    s = (math.sin((lat2 - lat1) / 2.0) ** 2
         + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2.0) ** 2)
    s = min(1.0, max(0.0, s))  # guard asin against rounding
    return 2.0 * radius_km * math.asin(math.sqrt(s))


@dataclass
class StationGraph:
    stations: list[Station]
    edges: list[tuple[int, int, float]]  # (i, j, weight) with i < j, sorted
    rho_min: float
    d_max_km: float
    earth_radius_km: float = EARTH_RADIUS_KM
    adjacency: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = len(self.stations)
        ids = [s.node_id for s in self.stations]
        if ids != list(range(n)):
            raise ValueError("station node_ids must be 0..N-1 in order")
        self.edges = sorted((int(i), int(j), float(w)) for i, j, w in self.edges)
        a = np.zeros((n, n), dtype=np.float64)
        for i, j, w in self.edges:
            if not 0 <= i < j < n:
                raise ValueError(f"edge ({i},{j}) invalid for {n} nodes")
            a[i, j] = a[j, i] = w
        self.adjacency = a

    @property
    def n_nodes(self):
        return len(self.stations)

    def degrees(self):
        return [sum(1 for i, j, _ in self.edges if u in (i, j)) for u in range(self.n_nodes)]

    def neighbor_mask(self, include_self=True):
        """Boolean N x N mask; row i marks the neighborhood of node i."""
        mask = self.adjacency != 0.0
        if include_self:
            mask = mask | np.eye(self.n_nodes, dtype=bool)
        return mask

    def to_json_dict(self):
        return {
            "earth_radius_km": self.earth_radius_km,
            "rho_min": self.rho_min,
            "d_max_km": self.d_max_km,
            "stations": [
                {"id": s.node_id, "name": s.name, "agency": s.agency,
                 "lat": s.lat, "lon": s.lon}
                for s in self.stations
            ],
            "edges": [{"i": i, "j": j, "weight": w} for i, j, w in self.edges],
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_json_dict(cls, doc):
        stations = [
            Station(int(s["id"]), s["name"], s["agency"], float(s["lat"]), float(s["lon"]))
            for s in doc["stations"]
        ]
        edges = [(int(e["i"]), int(e["j"]), float(e["weight"])) for e in doc["edges"]]
        return cls(stations=stations, edges=edges, rho_min=float(doc["rho_min"]),
                   d_max_km=float(doc["d_max_km"]),
                   earth_radius_km=float(doc["earth_radius_km"]))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))

    def content_hash(self):
        blob = json.dumps(self.to_json_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def pairwise_stats(stations, observed):
    """All-pairs correlation and distance matrices.

    ``observed`` maps node_id -> 1-D series (NaN marks missing samples).
    Correlations are pairwise-complete: a timestep is dropped for a pair only
    when either series is missing there. Pairs with fewer than 2 shared
    samples get correlation 0 (no evidence, never an edge at positive
    thresholds).
    """
    n = len(stations)
    series = [np.asarray(observed[s.node_id], dtype=np.float64) for s in stations]
    lengths = {v.size for v in series}
    if len(lengths) != 1:
        raise LengthMismatch(f"observed series lengths differ: {sorted(lengths)}")
    finite = [np.isfinite(v) for v in series]
    rho = np.zeros((n, n))
    dist = np.zeros((n, n))
    for i in range(n):
        rho[i, i] = 1.0
        for j in range(i + 1, n):
            both = finite[i] & finite[j]
            if both.sum() < 2:
                r = 0.0
            else:
                try:
                    r = pearson(series[i][both], series[j][both])
                except ZeroVariance:
                    raise ZeroVariance(
                        f"constant observed series in overlap of stations "
                        f"{stations[i].node_id} and {stations[j].node_id}") from None
            d = haversine(stations[i].coords, stations[j].coords)
            rho[i, j] = rho[j, i] = r
            dist[i, j] = dist[j, i] = d
    return rho, dist


def build_graph(stations, observed, rho_min=0.8, d_max_km=500.0):
    """Gate all station pairs on (rho > rho_min) AND (d < d_max_km).

    Emits a DisconnectedNodeWarning naming any isolated stations instead of
    failing, so threshold sweeps can probe disconnecting settings.
    """
    if len(stations) < 2:
        raise ValueError("build_graph: need at least 2 stations")
    rho, dist = pairwise_stats(stations, observed)
    n = len(stations)
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            if rho[i, j] > rho_min and dist[i, j] < d_max_km:
                edges.append((i, j, rho[i, j]))
    graph = StationGraph(stations=list(stations), edges=edges,
                         rho_min=rho_min, d_max_km=d_max_km)
    isolated = [u for u, d in enumerate(graph.degrees()) if d == 0]
    if isolated:
        warnings.warn(f"isolated stations (no edges): {isolated}", DisconnectedNodeWarning,
                      stacklevel=2)
    return graph


@dataclass
class DegreeReport:
    degrees: list[int]
    min_degree: int
    max_degree: int
    argmax_node: int

    def lines(self):
        out = [f"node {u}: degree {d}" for u, d in enumerate(self.degrees)]
        out.append(f"min degree {self.min_degree}, max degree {self.max_degree} "
                   f"at node {self.argmax_node}")
        return out


def degree_report(graph):
    degs = graph.degrees()
    return DegreeReport(
        degrees=degs,
        min_degree=min(degs) if degs else 0,
        max_degree=max(degs) if degs else 0,
        argmax_node=int(np.argmax(degs)) if degs else -1,
    )


def threshold_sweep(stations, observed, rho_grid, d_grid):
    """Edge/isolation counts for every (rho_min, d_max) grid point.

    Returns rows of (rho_min, d_max_km, n_edges, n_isolated, min_degree),
    iterating rho outer, distance inner.
    """
    if not len(rho_grid) or not len(d_grid):
        raise ValueError("threshold_sweep: grids must be non-empty")
    rho, dist = pairwise_stats(stations, observed)
    n = len(stations)
    iu, ju = np.triu_indices(n, k=1)
    rows = []
    for rmin in rho_grid:
        for dmax in d_grid:
            keep = (rho[iu, ju] > rmin) & (dist[iu, ju] < dmax)
            deg = np.zeros(n, dtype=int)
            np.add.at(deg, iu[keep], 1)
            np.add.at(deg, ju[keep], 1)
            rows.append((float(rmin), float(dmax), int(keep.sum()),
                         int((deg == 0).sum()), int(deg.min()) if n else 0))
    return rows


def load_stations_csv(path):
    """Read the `node_id,name,agency,lat,lon` stations table (header required)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row]
    if not rows or rows[0] != STATIONS_CSV_HEADER.split(","):
        raise ValueError(f"{path}: expected header '{STATIONS_CSV_HEADER}'")
    stations = []
    for row in rows[1:]:
        if len(row) != 5:
            raise ValueError(f"{path}: malformed row {row!r}")
        node_id, name, agency, lat, lon = row
        stations.append(Station(int(node_id), name, agency, float(lat), float(lon)))
    if [s.node_id for s in stations] != list(range(len(stations))):
        raise ValueError(f"{path}: node_ids must be 0..N-1 in order")
    return stations


def save_stations_csv(stations, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(STATIONS_CSV_HEADER.split(","))
        for s in stations:
            writer.writerow([s.node_id, s.name, s.agency, repr(s.lat), repr(s.lon)])
