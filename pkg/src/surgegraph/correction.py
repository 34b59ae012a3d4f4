"""Apply predicted offsets to modeled forecasts and evaluate the result.

corrected(t) = modeled(t) - predicted_offset(t); where the predicted offset
equals the true offset the corrected series reproduces the observations
exactly. Reports cover RMSE improvement (full-range or windowed, e.g. two
days around landfall) and flood-threshold exceedance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, EmptyWindow, StationMismatch

# NOAA-derived default flood levels (meters above local datum)
DEFAULT_MINOR = 0.50
DEFAULT_MODERATE = 0.80
DEFAULT_MAJOR = 1.17
# spread metadata only; not applied to the defaults
THRESHOLD_SPREAD = {"minor": 0.19, "moderate": 0.25, "major": 0.39}


@dataclass
class FloodThresholds:
    minor: float = DEFAULT_MINOR
    moderate: float = DEFAULT_MODERATE
    major: float = DEFAULT_MAJOR

    def __post_init__(self):
        if not self.minor < self.moderate < self.major:
            raise ValueError("flood thresholds must satisfy minor < moderate < major")

    def items(self):
        return (("minor", self.minor), ("moderate", self.moderate),
                ("major", self.major))


@dataclass
class CorrectedSeries:
    node_id: int
    timestamps: np.ndarray
    modeled: np.ndarray
    predicted_offset: np.ndarray
    corrected: np.ndarray
    observed: np.ndarray | None = None

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[s]")


def apply_correction(series, predicted_offsets, timestamps=None):
    """Subtract predicted offsets from a modeled series.

    ``series`` is a StationSeries; ``predicted_offsets`` is a 1-D array on
    ``timestamps`` (defaults to the full series clock). Timestamps must be a
    subset of the series clock; modeled/observed values are taken there.
    """
    predicted_offsets = np.asarray(predicted_offsets, dtype=np.float64)
    if timestamps is None:
        if predicted_offsets.size != series.timestamps.size:
            raise AlignmentError(
                f"station {series.node_id}: {predicted_offsets.size} offsets for "
                f"{series.timestamps.size} timestamps")
        timestamps = series.timestamps
        modeled = series.modeled
        observed = series.observed
    else:
        timestamps = np.asarray(timestamps, dtype="datetime64[s]")
        if timestamps.size != predicted_offsets.size:
            raise AlignmentError("timestamps and offsets differ in length")
        pos = np.searchsorted(series.timestamps, timestamps)
        ok = (pos < series.timestamps.size) & \
             (series.timestamps[np.minimum(pos, series.timestamps.size - 1)] == timestamps)
        if not ok.all():
            raise AlignmentError(
                f"station {series.node_id}: prediction timestamps missing from the series")
        modeled = series.modeled[pos]
        observed = series.observed[pos]
    corrected = modeled - predicted_offsets
    return CorrectedSeries(node_id=series.node_id, timestamps=timestamps,
                           modeled=modeled, predicted_offset=predicted_offsets,
                           corrected=corrected, observed=observed)


def landfall_window(landfall_time, days=2.0):
    """Evaluation interval of ``days`` total length centered on landfall."""
    landfall_time = np.datetime64(landfall_time, "s")
    half = int(days * 24 * 3600 / 2)
    return (landfall_time - np.timedelta64(half, "s"),
            landfall_time + np.timedelta64(half, "s"))


def _rmse(err):
    return math.sqrt(float((err * err).mean()))


@dataclass
class ImprovementRow:
    node_id: int
    n: int
    rmse_modeled: float
    rmse_corrected: float

    @property
    def pct_reduction(self):
        return 100.0 * (1.0 - self.rmse_corrected / self.rmse_modeled) \
            if self.rmse_modeled > 0 else 0.0


@dataclass
class ImprovementReport:
    rows: list[ImprovementRow]
    pooled: ImprovementRow

    def rmse_corrected_by_station(self):
        return {r.node_id: r.rmse_corrected for r in self.rows}

    def to_json_dict(self):
        def row(r):
            return {"station": r.node_id, "n": r.n, "rmse_modeled": r.rmse_modeled,
                    "rmse_corrected": r.rmse_corrected,
                    "pct_reduction": r.pct_reduction}
        return {"per_station": [row(r) for r in self.rows], "pooled": row(self.pooled)}

    def save_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)
            fh.write("\n")

    def save_csv(self, path):
        with open(path, "w") as fh:
            fh.write("station,n,rmse_modeled,rmse_corrected,pct_reduction\n")
            for r in self.rows + [self.pooled]:
                label = r.node_id if r is not self.pooled else "pooled"
                fh.write(f"{label},{r.n},{r.rmse_modeled!r},{r.rmse_corrected!r},"
                         f"{r.pct_reduction!r}\n")


def improvement_report(corrected_series, window=None):
    """Per-station RMSE of modeled vs corrected water levels against observations.

    ``window`` is None for the full overlap or an inclusive (t0, t1) pair,
    e.g. from ``landfall_window``. Timesteps without observations are ignored.
    """
    rows = []
    pooled_mod = []
    pooled_corr = []
    for cs in corrected_series:
        if cs.observed is None:
            raise EmptyWindow(f"station {cs.node_id}: no observations to score against")
        sel = np.isfinite(cs.observed) & np.isfinite(cs.corrected)
        if window is not None:
            t0, t1 = (np.datetime64(window[0], "s"), np.datetime64(window[1], "s"))
            sel &= (cs.timestamps >= t0) & (cs.timestamps <= t1)
        if not sel.any():
            raise EmptyWindow(f"station {cs.node_id}: window selects no samples")
        err_mod = cs.modeled[sel] - cs.observed[sel]
        err_corr = cs.corrected[sel] - cs.observed[sel]
        rows.append(ImprovementRow(node_id=cs.node_id, n=int(sel.sum()),
                                   rmse_modeled=_rmse(err_mod),
                                   rmse_corrected=_rmse(err_corr)))
        pooled_mod.append(err_mod)
        pooled_corr.append(err_corr)
    all_mod = np.concatenate(pooled_mod)
    all_corr = np.concatenate(pooled_corr)
    pooled = ImprovementRow(node_id=-1, n=int(all_mod.size),
                            rmse_modeled=_rmse(all_mod),
                            rmse_corrected=_rmse(all_corr))
    return ImprovementReport(rows=rows, pooled=pooled)


def peak_error(cs):
    """Absolute corrected-vs-observed error at the observed-peak timestamp."""
    ok = np.isfinite(cs.observed)
    if not ok.any():
        raise EmptyWindow(f"station {cs.node_id}: no observations")
    idx = np.flatnonzero(ok)[np.argmax(cs.observed[ok])]
    return {
        "peak_time": cs.timestamps[idx],
        "observed_peak": float(cs.observed[idx]),
        "error_modeled": abs(float(cs.modeled[idx] - cs.observed[idx])),
        "error_corrected": abs(float(cs.corrected[idx] - cs.observed[idx])),
    }


@dataclass
class ExceedanceEvent:
    start: np.datetime64
    end: np.datetime64  # inclusive
    peak_time: np.datetime64
    peak_value: float


def threshold_events(values, timestamps, thresholds):
    """Maximal disjoint intervals where the series exceeds each severity level."""
    values = np.asarray(values, dtype=np.float64)
    timestamps = np.asarray(timestamps, dtype="datetime64[s]")
    out = {}
    for name, level in thresholds.items():
        above = np.isfinite(values) & (values > level)
        events = []
        k = 0
        n = values.size
        while k < n:
            if above[k]:
                j = k
                while j + 1 < n and above[j + 1]:
                    j += 1
                seg = values[k:j + 1]
                p = int(np.argmax(seg))
                events.append(ExceedanceEvent(
                    start=timestamps[k], end=timestamps[j],
                    peak_time=timestamps[k + p], peak_value=float(seg[p])))
                k = j + 1
            else:
                k += 1
        out[name] = events
    return out


def exceedance_comparison(observed, corrected, timestamps, thresholds):
    """False negatives/positives of corrected vs observed threshold exceedance."""
    obs_events = threshold_events(observed, timestamps, thresholds)
    corr_events = threshold_events(corrected, timestamps, thresholds)
    out = {}
    for name, _ in thresholds.items():
        obs_hit = bool(obs_events[name])
        corr_hit = bool(corr_events[name])
        out[name] = {
            "observed": obs_hit,
            "corrected": corr_hit,
            "false_negative": obs_hit and not corr_hit,
            "false_positive": corr_hit and not obs_hit,
        }
    return out


def lead_time_agreement(observed, corrected_by_lead, timestamps, thresholds):
    """Longest lead (hours) whose corrected series agrees on every exceedance.

    ``corrected_by_lead`` maps lead hours -> corrected values on the shared
    ``timestamps`` clock. Returns per-severity max agreeing lead (None when
    even the shortest lead disagrees) plus the per-lead comparison table.
    """
    leads = sorted(corrected_by_lead)
    table = {lead: exceedance_comparison(observed, corrected_by_lead[lead],
                                         timestamps, thresholds)
             for lead in leads}
    max_lead = {}
    for name, _ in thresholds.items():
        best = None
        for lead in leads:
            flags = table[lead][name]
            if not flags["false_negative"] and not flags["false_positive"]:
                best = lead
            else:
                break
        max_lead[name] = best
    return {"max_agreeing_lead": max_lead, "by_lead": table}


@dataclass
class ModelComparison:
    winners: dict[int, str]
    counts: dict[str, int]
    mean_rmse: dict[str, float]
    std_rmse: dict[str, float]

    def to_json_dict(self):
        return {"winners": {str(k): v for k, v in sorted(self.winners.items())},
                "counts": self.counts, "mean_rmse": self.mean_rmse,
                "std_rmse": self.std_rmse}


def compare_models(rmse_a, rmse_b, names=("A", "B")):
    """Per-station argmin RMSE between two reports; ties go to the first model."""
    if set(rmse_a) != set(rmse_b):
        raise StationMismatch(
            f"reports cover different stations: {sorted(set(rmse_a) ^ set(rmse_b))}")
    winners = {}
    for nid in sorted(rmse_a):
        winners[nid] = names[0] if rmse_a[nid] <= rmse_b[nid] else names[1]
    counts = {names[0]: sum(1 for w in winners.values() if w == names[0]),
              names[1]: sum(1 for w in winners.values() if w == names[1])}
    va = np.array([rmse_a[k] for k in sorted(rmse_a)])
    vb = np.array([rmse_b[k] for k in sorted(rmse_b)])
    return ModelComparison(
        winners=winners, counts=counts,
        mean_rmse={names[0]: float(va.mean()), names[1]: float(vb.mean())},
        std_rmse={names[0]: float(va.std()), names[1]: float(vb.std())})
