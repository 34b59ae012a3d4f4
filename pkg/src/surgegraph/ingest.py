"""Loading, cleaning, splitting, scaling, and windowing of station series.

The chain is: per-station observed/modeled series -> offsets (modeled minus
observed) -> 3-sigma outlier repair -> storm-level train/val/test split ->
per-station min-max scaling fitted on the training split -> sliding
(input window, prediction window) tensors that never cross storm boundaries.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    AlignmentError,
    DegenerateDataset,
    EmptyDataset,
    StormTooShortWarning,
    UnknownStorm,
)
from .geo import Station, load_stations_csv, save_stations_csv

HOUR = np.timedelta64(3600, "s")
SERIES_CSV_HEADER = "timestamp,observed_m,modeled_m"
SPLIT_NAMES = ("train", "val", "test")


def format_timestamp(ts):
    return str(np.datetime64(ts, "s")) + "Z"


def parse_timestamp(text):
    return np.datetime64(text.rstrip("Z"), "s")


@dataclass
class StationSeries:
    """Hourly observed and modeled water levels for one (station, storm)."""

    node_id: int
    storm_id: str
    timestamps: np.ndarray  # datetime64[s], strictly increasing, hourly
    observed: np.ndarray    # meters, NaN where missing
    modeled: np.ndarray     # meters, NaN where missing

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[s]")
        self.observed = np.asarray(self.observed, dtype=np.float64)
        self.modeled = np.asarray(self.modeled, dtype=np.float64)
        n = self.timestamps.size
        if self.observed.size != n or self.modeled.size != n:
            raise AlignmentError(
                f"{self.storm_id}/{self.node_id}: array lengths differ")
        if n >= 2:
            steps = np.diff(self.timestamps)
            if not (steps == HOUR).all():
                raise AlignmentError(
                    f"{self.storm_id}/{self.node_id}: timestamps are not hourly")

    def __len__(self):
        return self.timestamps.size

    @property
    def validity(self):
        return np.isfinite(self.observed) & np.isfinite(self.modeled)

    def missing_fraction(self):
        return 1.0 - self.validity.mean() if len(self) else 1.0


@dataclass
class OffsetSeries:
    """Water-level offset (modeled minus observed); NaN where either input is missing."""

    node_id: int
    storm_id: str
    timestamps: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[s]")
        self.offsets = np.asarray(self.offsets, dtype=np.float64)

    @property
    def mask(self):
        return np.isfinite(self.offsets)


def compute_offsets(series):
    """offset(t) = modeled(t) - observed(t); invalid wherever either is missing."""
    off = series.modeled - series.observed
    off = np.where(series.validity, off, np.nan)
    return OffsetSeries(node_id=series.node_id, storm_id=series.storm_id,
                        timestamps=series.timestamps, offsets=off)


@dataclass
class Corpus:
    """All loaded series, keyed by (storm_id, node_id), with stable orderings."""

    stations: list[Station]
    storms: list[str]
    series: dict[tuple[str, int], StationSeries]

    def subset_storms(self, storm_ids):
        keep = set(storm_ids)
        return Corpus(
            stations=list(self.stations),
            storms=[s for s in self.storms if s in keep],
            series={k: v for k, v in self.series.items() if k[0] in keep},
        )


def load_series_csv(path, storm_id, node_id):
    ts, obs, mod = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SERIES_CSV_HEADER.split(","):
            raise ValueError(f"{path}: expected header '{SERIES_CSV_HEADER}'")
        for row in reader:
            if not row:
                continue
            ts.append(parse_timestamp(row[0]))
            obs.append(float(row[1]) if row[1] != "" else np.nan)
            mod.append(float(row[2]) if row[2] != "" else np.nan)
    return StationSeries(node_id=node_id, storm_id=storm_id,
                         timestamps=np.array(ts, dtype="datetime64[s]"),
                         observed=np.array(obs), modeled=np.array(mod))


def save_series_csv(series, path):
    def cell(v):
        return repr(float(v)) if np.isfinite(v) else ""

    with open(path, "w", newline="") as fh:
        fh.write(SERIES_CSV_HEADER + "\n")
        for t, o, m in zip(series.timestamps, series.observed, series.modeled):
            fh.write(f"{format_timestamp(t)},{cell(o)},{cell(m)}\n")


def load_corpus(data_dir, stations, storm_ids):
    data_dir = Path(data_dir)
    series = {}
    for storm in storm_ids:
        for st in stations:
            path = data_dir / storm / f"{st.node_id}.csv"
            series[(storm, st.node_id)] = load_series_csv(path, storm, st.node_id)
    return Corpus(stations=list(stations), storms=list(storm_ids), series=series)


@dataclass
class ExclusionReport:
    excluded: list[tuple[int, str, float]]  # (original node_id, storm, missing frac)
    id_map: dict[int, int]                  # original node_id -> new node_id


def exclude_sparse_stations(corpus, train_storms, max_missing=0.2):
    """Drop stations missing more than ``max_missing`` of any training storm.

    Remaining stations are renumbered 0..N-1 (graph construction requires
    contiguous ids); the report records the mapping.
    """
    bad = {}
    for st in corpus.stations:
        for storm in train_storms:
            frac = corpus.series[(storm, st.node_id)].missing_fraction()
            if frac > max_missing:
                bad.setdefault(st.node_id, (storm, frac))
                break
    kept = [st for st in corpus.stations if st.node_id not in bad]
    if not kept:
        raise DegenerateDataset("all stations excluded by the missing-data rule")
    id_map = {st.node_id: new for new, st in enumerate(kept)}
    new_stations = [replace(st, node_id=id_map[st.node_id]) for st in kept]
    new_series = {}
    for (storm, nid), s in corpus.series.items():
        if nid in id_map:
            new_series[(storm, id_map[nid])] = replace(s, node_id=id_map[nid])
    report = ExclusionReport(
        excluded=[(nid, storm, frac) for nid, (storm, frac) in sorted(bad.items())],
        id_map=id_map)
    return Corpus(stations=new_stations, storms=list(corpus.storms), series=new_series), report


@dataclass
class OutlierReport:
    mu: float
    sigma: float
    n_values: int
    eliminated: dict[int, int]  # node_id -> count

    @property
    def total_eliminated(self):
        return sum(self.eliminated.values())


def remove_outliers(offsets, stats=None, n_sigma=3.0):
    """Flag offsets outside mu +/- n_sigma*sigma, then repair by interpolation.

    mu and the population (1/n) standard deviation are pooled over every valid
    offset in ``offsets`` unless ``stats=(mu, sigma)`` is given (pass the
    training-pass stats when cleaning validation/test data). Flagged values
    are replaced by linear interpolation between the nearest surviving
    neighbors within the same storm; at the ends the nearest surviving value
    extends outward. Originally-missing values stay missing.
    """
    if stats is None:
        values = np.concatenate([s.offsets[s.mask] for s in offsets.values()]) \
            if offsets else np.array([])
        if values.size < 2:
            raise DegenerateDataset("need at least 2 valid offsets to fit the 3-sigma gate")
        mu = float(values.mean())
        sigma = float(values.std())  # population std
        if sigma == 0.0:
            raise DegenerateDataset("offset std is zero; the 3-sigma gate is undefined")
        n_values = int(values.size)
    else:
        mu, sigma = float(stats[0]), float(stats[1])
        if sigma <= 0.0:
            raise DegenerateDataset("frozen sigma must be positive")
        n_values = 0

    lo, hi = mu - n_sigma * sigma, mu + n_sigma * sigma
    cleaned = {}
    eliminated = {}
    for key, s in offsets.items():
        vals = s.offsets.copy()
        valid = np.isfinite(vals)
        flagged = valid & ((vals < lo) | (vals > hi))
        if flagged.any():
            keepers = valid & ~flagged
            if not keepers.any():
                raise DegenerateDataset(
                    f"{s.storm_id}/{s.node_id}: every valid offset was flagged")
            idx = np.arange(vals.size)
            vals[flagged] = np.interp(idx[flagged], idx[keepers], vals[keepers])
            eliminated[s.node_id] = eliminated.get(s.node_id, 0) + int(flagged.sum())
        cleaned[key] = OffsetSeries(node_id=s.node_id, storm_id=s.storm_id,
                                    timestamps=s.timestamps, offsets=vals)
    return cleaned, OutlierReport(mu=mu, sigma=sigma, n_values=n_values,
                                  eliminated=eliminated)


def split_storms(storms, val_storm, test_storm):
    """Partition storm ids into (train, val, test), preserving corpus order."""
    if val_storm == test_storm:
        raise UnknownStorm(
            f"validation and test storm must differ, both are '{val_storm}'")
    for name, sid in (("validation", val_storm), ("test", test_storm)):
        if sid not in storms:
            raise UnknownStorm(f"{name} storm '{sid}' is not in the corpus")
    train = [s for s in storms if s not in (val_storm, test_storm)]
    if not train:
        raise UnknownStorm("no storms left for training after the split")
    return train, [val_storm], [test_storm]


@dataclass
class AlignedStorm:
    """One storm's offsets for every station, on a shared hourly clock."""

    storm_id: str
    timestamps: np.ndarray
    offsets: np.ndarray  # [L, N] in station order

    def __len__(self):
        return self.timestamps.size


def align_storm(offsets, storm_id, station_ids):
    """Stack per-station offsets into an [L, N] matrix; fill residual gaps.

    Any value still missing after outlier repair is linearly interpolated
    within the storm (nearest-value extension at the ends) so every window is
    fully populated.
    """
    cols = []
    times = None
    for nid in station_ids:
        s = offsets[(storm_id, nid)]
        if times is None:
            times = s.timestamps
        elif s.timestamps.size != times.size or not (s.timestamps == times).all():
            raise AlignmentError(f"{storm_id}: station {nid} timestamps differ")
        col = s.offsets.copy()
        valid = np.isfinite(col)
        if not valid.any():
            raise DegenerateDataset(f"{storm_id}/{nid}: no valid offsets")
        if not valid.all():
            idx = np.arange(col.size)
            col[~valid] = np.interp(idx[~valid], idx[valid], col[valid])
        cols.append(col)
    return AlignedStorm(storm_id=storm_id, timestamps=times,
                        offsets=np.stack(cols, axis=1))


@dataclass
class ScalerParams:
    """Per-station min-max map onto [0, 1], fitted on the training split only."""

    station_ids: list[int]
    data_min: np.ndarray
    data_max: np.ndarray

    def __post_init__(self):
        self.data_min = np.asarray(self.data_min, dtype=np.float64)
        self.data_max = np.asarray(self.data_max, dtype=np.float64)

    def apply(self, values):
        return (values - self.data_min) / (self.data_max - self.data_min)

    def invert(self, values):
        return values * (self.data_max - self.data_min) + self.data_min

    def to_json_dict(self):
        return {"stations": {str(nid): {"min": float(mn), "max": float(mx)}
                             for nid, mn, mx in
                             zip(self.station_ids, self.data_min, self.data_max)}}

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_json_dict(cls, doc):
        ids = sorted(int(k) for k in doc["stations"])
        return cls(station_ids=ids,
                   data_min=np.array([doc["stations"][str(i)]["min"] for i in ids]),
                   data_max=np.array([doc["stations"][str(i)]["max"] for i in ids]))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


def fit_scaler(train_storms, station_ids):
    """Per-station min/max over every training storm."""
    if not train_storms:
        raise EmptyDataset("cannot fit a scaler on an empty training split")
    stacked = np.concatenate([a.offsets for a in train_storms], axis=0)
    mn = stacked.min(axis=0)
    mx = stacked.max(axis=0)
    flat = mx == mn
    if flat.any():
        bad = [station_ids[i] for i in np.flatnonzero(flat)]
        raise DegenerateDataset(f"stations with constant training offsets: {bad}")
    return ScalerParams(station_ids=list(station_ids), data_min=mn, data_max=mx)


@dataclass
class WindowedDataset:
    """Aligned (input window, prediction window) pairs over all stations."""

    inputs: np.ndarray   # [num_windows, w_in, N]
    targets: np.ndarray  # [num_windows, w_out, N]
    w_in: int
    w_out: int
    station_ids: list[int]
    provenance: list[tuple[str, np.datetime64]] = field(default_factory=list)

    def __len__(self):
        return self.inputs.shape[0]

    def save(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        np.save(out_dir / "inputs.npy", self.inputs)
        np.save(out_dir / "targets.npy", self.targets)
        doc = {
            "w_in": self.w_in,
            "w_out": self.w_out,
            "station_ids": list(self.station_ids),
            "windows": [{"storm": sid, "start": format_timestamp(ts)}
                        for sid, ts in self.provenance],
        }
        with open(out_dir / "provenance.json", "w") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, out_dir):
        out_dir = Path(out_dir)
        inputs = np.load(out_dir / "inputs.npy")
        targets = np.load(out_dir / "targets.npy")
        with open(out_dir / "provenance.json") as fh:
            doc = json.load(fh)
        prov = [(w["storm"], parse_timestamp(w["start"])) for w in doc["windows"]]
        return cls(inputs=inputs, targets=targets, w_in=int(doc["w_in"]),
                   w_out=int(doc["w_out"]), station_ids=list(doc["station_ids"]),
                   provenance=prov)


def make_windows(aligned_storms, w_in, w_out, station_ids, stride=1):
    """Slide a (w_in, w_out) window through each storm; never cross boundaries.

    A storm shorter than w_in + w_out is skipped with a StormTooShortWarning.
    With stride 1 each storm yields L - w_in - w_out + 1 windows.
    """
    if w_in < 1 or w_out < 1:
        raise ValueError("window lengths must be positive")
    inputs, targets, prov = [], [], []
    n = len(station_ids)
    for storm in aligned_storms:
        length = len(storm)
        if length < w_in + w_out:
            warnings.warn(
                f"storm '{storm.storm_id}' has {length} h < {w_in + w_out} h; skipped",
                StormTooShortWarning, stacklevel=2)
            continue
        for start in range(0, length - w_in - w_out + 1, stride):
            inputs.append(storm.offsets[start:start + w_in])
            targets.append(storm.offsets[start + w_in:start + w_in + w_out])
            prov.append((storm.storm_id, storm.timestamps[start]))
    if inputs:
        x = np.stack(inputs)
        y = np.stack(targets)
    else:
        x = np.zeros((0, w_in, n))
        y = np.zeros((0, w_out, n))
    return WindowedDataset(inputs=x, targets=y, w_in=w_in, w_out=w_out,
                           station_ids=list(station_ids), provenance=prov)


@dataclass
class PreparedSplit:
    storms: list[AlignedStorm]  # scaled offsets
    windows: WindowedDataset


@dataclass
class PreparedData:
    stations: list[Station]
    w_in: int
    w_out: int
    scaler: ScalerParams
    splits: dict[str, PreparedSplit]
    outlier_report: OutlierReport
    exclusion_report: ExclusionReport
    roles: dict[str, list[str]]  # split name -> storm ids
    source_ids: list[int] = field(default_factory=list)  # pre-exclusion node ids

    def save(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_stations_csv(self.stations, out_dir / "stations.csv")
        self.scaler.save(out_dir / "scaler.json")
        storms_doc = []
        for split in SPLIT_NAMES:
            for storm in self.splits[split].storms:
                storms_doc.append({
                    "id": storm.storm_id,
                    "role": split,
                    "hours": len(storm),
                    "start": format_timestamp(storm.timestamps[0]),
                })
        manifest = {
            "stations_file": "stations.csv",
            "station_ids": [s.node_id for s in self.stations],
            "source_node_ids": self.source_ids or [s.node_id for s in self.stations],
            "w_in": self.w_in,
            "w_out": self.w_out,
            "storms": storms_doc,
            "outliers": {
                "mu": self.outlier_report.mu,
                "sigma": self.outlier_report.sigma,
                "eliminated": {str(k): v for k, v in
                               sorted(self.outlier_report.eliminated.items())},
            },
            "excluded_stations": [
                {"node_id": nid, "storm": storm, "missing_fraction": frac}
                for nid, storm, frac in self.exclusion_report.excluded
            ],
        }
        with open(out_dir / "dataset.json", "w") as fh:
            json.dump(manifest, fh, indent=2)
            fh.write("\n")
        for split in SPLIT_NAMES:
            self.splits[split].windows.save(out_dir / split)
            mat_dir = out_dir / "matrices" / split
            mat_dir.mkdir(parents=True, exist_ok=True)
            for storm in self.splits[split].storms:
                np.save(mat_dir / f"{storm.storm_id}.npy", storm.offsets)

    @classmethod
    def load(cls, out_dir):
        out_dir = Path(out_dir)
        stations = load_stations_csv(out_dir / "stations.csv")
        scaler = ScalerParams.load(out_dir / "scaler.json")
        with open(out_dir / "dataset.json") as fh:
            manifest = json.load(fh)
        splits = {}
        roles = {name: [] for name in SPLIT_NAMES}
        by_role = {name: [] for name in SPLIT_NAMES}
        for entry in manifest["storms"]:
            by_role[entry["role"]].append(entry)
            roles[entry["role"]].append(entry["id"])
        for split in SPLIT_NAMES:
            storms = []
            for entry in by_role[split]:
                mat = np.load(out_dir / "matrices" / split / f"{entry['id']}.npy")
                start = parse_timestamp(entry["start"])
                times = start + np.arange(mat.shape[0]) * HOUR
                storms.append(AlignedStorm(storm_id=entry["id"], timestamps=times,
                                           offsets=mat))
            splits[split] = PreparedSplit(
                storms=storms, windows=WindowedDataset.load(out_dir / split))
        report = OutlierReport(
            mu=manifest["outliers"]["mu"], sigma=manifest["outliers"]["sigma"],
            n_values=0,
            eliminated={int(k): v for k, v in manifest["outliers"]["eliminated"].items()})
        exclusion = ExclusionReport(
            excluded=[(e["node_id"], e["storm"], e["missing_fraction"])
                      for e in manifest["excluded_stations"]],
            id_map={})
        return cls(stations=stations, w_in=int(manifest["w_in"]),
                   w_out=int(manifest["w_out"]), scaler=scaler, splits=splits,
                   outlier_report=report, exclusion_report=exclusion, roles=roles,
                   source_ids=[int(v) for v in manifest.get(
                       "source_node_ids", [s.node_id for s in stations])])


def prepare(corpus, val_storm, test_storm, w_in, w_out, max_missing=0.2, stride=1):
    """Run the full preprocessing chain on a loaded corpus."""
    train_ids, val_ids, test_ids = split_storms(corpus.storms, val_storm, test_storm)
    corpus, exclusion = exclude_sparse_stations(corpus, train_ids, max_missing)
    station_ids = [s.node_id for s in corpus.stations]

    offsets = {key: compute_offsets(s) for key, s in corpus.series.items()}
    split_offsets = {}
    for name, ids in zip(SPLIT_NAMES, (train_ids, val_ids, test_ids)):
        split_offsets[name] = {k: v for k, v in offsets.items() if k[0] in ids}

    split_offsets["train"], outlier_report = remove_outliers(split_offsets["train"])
    frozen = (outlier_report.mu, outlier_report.sigma)
    for name in ("val", "test"):
        split_offsets[name], extra = remove_outliers(split_offsets[name], stats=frozen)
        for nid, count in extra.eliminated.items():
            outlier_report.eliminated[nid] = outlier_report.eliminated.get(nid, 0) + count

    aligned = {}
    for name, ids in zip(SPLIT_NAMES, (train_ids, val_ids, test_ids)):
        aligned[name] = [align_storm(split_offsets[name], sid, station_ids)
                         for sid in ids]

    scaler = fit_scaler(aligned["train"], station_ids)
    splits = {}
    for name in SPLIT_NAMES:
        scaled = [AlignedStorm(storm_id=a.storm_id, timestamps=a.timestamps,
                               offsets=scaler.apply(a.offsets))
                  for a in aligned[name]]
        windows = make_windows(scaled, w_in, w_out, station_ids, stride=stride)
        splits[name] = PreparedSplit(storms=scaled, windows=windows)

    roles = {"train": train_ids, "val": val_ids, "test": test_ids}
    source_ids = [orig for orig, _ in
                  sorted(exclusion.id_map.items(), key=lambda kv: kv[1])]
    return PreparedData(stations=corpus.stations, w_in=w_in, w_out=w_out,
                        scaler=scaler, splits=splits, outlier_report=outlier_report,
                        exclusion_report=exclusion, roles=roles, source_ids=source_ids)
