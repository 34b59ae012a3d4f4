"""Mini-batch training with Adam, validation tracking, and metric reporting.

Shuffling draws a fresh generator per epoch from (seed, epoch), so a run
resumed at epoch k consumes exactly the same stream as an uninterrupted run.
Metrics are always reported on unscaled offsets (meters).
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import EmptyDataset, NonFiniteLoss
from .ingest import make_windows
from .model import OffsetForecaster
from .numerics import Adam, Tape, Tensor, backward


@dataclass
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 3e-5
    weight_decay: float = 5e-7
    batch_size: int = 20
    seed: int = 0
    shuffle: bool = True
    patience: int | None = None  # early stop after this many non-improving epochs

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be >= 0")

    def to_json_dict(self):
        doc = {
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "shuffle": self.shuffle,
        }
        if self.patience is not None:
            doc["patience"] = self.patience
        return doc

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls(**json.load(fh))


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = math.inf
    wall_seconds: float = 0.0
    start_epoch: int = 0
    best_state: dict | None = field(default=None, repr=False)

    def to_json_dict(self, include_timing=False):
        doc = {
            "start_epoch": self.start_epoch,
            "epochs_run": len(self.train_loss),
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "best_epoch": self.best_epoch,
            "best_val": self.best_val if math.isfinite(self.best_val) else None,
        }
        if include_timing:
            doc["wall_seconds"] = self.wall_seconds
        return doc

    def save_json(self, path, include_timing=False):
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(include_timing=include_timing), fh, indent=2)
            fh.write("\n")

    def save_csv(self, path):
        with open(path, "w") as fh:
            fh.write("epoch,train_loss,val_loss\n")
            for k, (tr, vl) in enumerate(zip(self.train_loss, self.val_loss)):
                fh.write(f"{self.start_epoch + k},{tr!r},{vl!r}\n")


def mse_loss(pred, target):
    d = pred - Tensor(target)
    return (d * d).mean()


def predict_windows(model, windows, batch_size=256):
    """Scaled predictions for every window, without recording a tape."""
    if len(windows) == 0:
        raise EmptyDataset("no windows to predict")
    outs = []
    for start in range(0, len(windows), batch_size):
        xb = windows.inputs[start:start + batch_size]
        outs.append(model.forward(xb).data)
    return np.concatenate(outs, axis=0)


def _validation_mse(model, windows, batch_size=256):
    preds = predict_windows(model, windows, batch_size)
    return float(((preds - windows.targets) ** 2).mean())


def train(model, train_windows, val_windows, cfg, optimizer=None, start_epoch=0):
    """Run cfg.epochs epochs; returns a TrainReport with the best-validation state.

    The model is updated in place and ends at the *last* epoch's parameters;
    ``report.best_state`` snapshots the lowest-validation-MSE parameters.
    Passing ``optimizer`` and ``start_epoch`` resumes a run: the shuffle
    stream for epoch k depends only on (cfg.seed, k), so training N epochs,
    checkpointing, and training N more reproduces a single 2N-epoch run.
    """
    if len(train_windows) == 0:
        raise EmptyDataset("training split has no windows")
    if len(val_windows) == 0:
        raise EmptyDataset("validation split has no windows")
    params = model.parameters()
    param_list = list(params.values())
    if optimizer is None:
        optimizer = Adam(params, learning_rate=cfg.learning_rate,
                         weight_decay=cfg.weight_decay)
    report = TrainReport(start_epoch=start_epoch)
    x_all = train_windows.inputs
    y_all = train_windows.targets
    n = len(train_windows)
    t0 = time.perf_counter()
    since_best = 0
    # tiny matrices: BLAS worker threads only add sync cost, so pin to one
    with threadpool_limits(limits=1):
        for epoch in range(start_epoch, start_epoch + cfg.epochs):
            rng = np.random.default_rng([cfg.seed, epoch])
            order = rng.permutation(n) if cfg.shuffle else np.arange(n)
            loss_sum = 0.0
            for b0 in range(0, n, cfg.batch_size):  # last partial batch is kept
                idx = order[b0:b0 + cfg.batch_size]
                with Tape() as tape:
                    tape.watch(*param_list)
                    pred = model.forward(x_all[idx], training=True, dropout_rng=rng)
                    loss = mse_loss(pred, y_all[idx])
                value = loss.item()
                if not math.isfinite(value):
                    sid, ts = (train_windows.provenance[idx[0]]
                               if train_windows.provenance else ("?", "?"))
                    raise NonFiniteLoss(
                        f"epoch {epoch}, batch at index {b0}: loss={value} "
                        f"(first window: storm {sid} @ {ts})")
                backward(loss, tape, params=param_list)
                optimizer.step()
                loss_sum += value * len(idx)
            report.train_loss.append(loss_sum / n)
            val = _validation_mse(model, val_windows)
            report.val_loss.append(val)
            if val < report.best_val:
                report.best_val = val
                report.best_epoch = epoch
                report.best_state = {name: p.data.copy() for name, p in params.items()}
                since_best = 0
            else:
                since_best += 1
                if cfg.patience is not None and since_best > cfg.patience:
                    break
    report.wall_seconds = time.perf_counter() - t0
    return report, optimizer


def restore_state(model, state):
    for name, p in model.parameters().items():
        p.data = state[name].copy()


@dataclass
class MetricReport:
    """RMSE/MSE/MAE on unscaled offsets, pooled and per station."""

    station_ids: list[int]
    per_station: dict[int, dict[str, float]]
    pooled: dict[str, float]
    n_samples: int

    def to_json_dict(self):
        return {
            "n_samples": self.n_samples,
            "pooled": self.pooled,
            "per_station": {str(k): v for k, v in sorted(self.per_station.items())},
        }

    def save_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)
            fh.write("\n")

    def save_csv(self, path):
        with open(path, "w") as fh:
            fh.write("station,rmse,mse,mae\n")
            for nid in self.station_ids:
                m = self.per_station[nid]
                fh.write(f"{nid},{m['rmse']!r},{m['mse']!r},{m['mae']!r}\n")
            p = self.pooled
            fh.write(f"pooled,{p['rmse']!r},{p['mse']!r},{p['mae']!r}\n")


def compute_metrics(pred, target, station_ids):
    """Metric table from unscaled prediction/target arrays of shape [..., N]."""
    err = np.asarray(pred) - np.asarray(target)
    if err.size == 0:
        raise EmptyDataset("no samples to score")
    flat = err.reshape(-1, err.shape[-1])

    def table(e):
        mse = float((e * e).mean())
        rmse = math.sqrt(mse)
        mae = float(np.abs(e).mean())
        assert abs(rmse * rmse - mse) < 1e-10
        assert mae <= rmse + 1e-12
        return {"rmse": rmse, "mse": mse, "mae": mae}

    per_station = {nid: table(flat[:, k]) for k, nid in enumerate(station_ids)}
    return MetricReport(station_ids=list(station_ids), per_station=per_station,
                        pooled=table(flat), n_samples=flat.shape[0])


def evaluate(model, windows, scaler, batch_size=256):
    """Score model predictions against window targets in meters."""
    preds = predict_windows(model, windows, batch_size)
    pred_m = scaler.invert(preds)
    target_m = scaler.invert(windows.targets)
    return compute_metrics(pred_m, target_m, windows.station_ids)


def derive_cell_seed(base_seed, w_in, w_out):
    return int(np.random.SeedSequence([base_seed, w_in, w_out]).generate_state(1)[0])


def sweep_windows(train_storms, val_storms, scaler, graph, model_cfg, train_cfg,
                  w_in_grid, w_out_grid):
    """Train one fresh model per (w_in, w_out) cell; rows sorted by val RMSE.

    Each cell re-windows the same scaled storm matrices and draws its own
    seed from (base seed, w_in, w_out), so identical cells give identical rows.
    """
    if not len(w_in_grid) or not len(w_out_grid):
        raise ValueError("sweep grids must be non-empty")
    station_ids = list(scaler.station_ids)
    rows = []
    for w_in in w_in_grid:
        for w_out in w_out_grid:
            tr = make_windows(train_storms, w_in, w_out, station_ids)
            va = make_windows(val_storms, w_in, w_out, station_ids)
            cell_cfg = replace(model_cfg, w_in=int(w_in), w_out=int(w_out),
                               seed=derive_cell_seed(model_cfg.seed, w_in, w_out))
            model = OffsetForecaster(cell_cfg, graph)
            report, _ = train(model, tr, va, train_cfg)
            if report.best_state is not None:
                restore_state(model, report.best_state)
            rmse = evaluate(model, va, scaler).pooled["rmse"]
            rows.append({"w_in": int(w_in), "w_out": int(w_out), "val_rmse": rmse})
    rows.sort(key=lambda r: r["val_rmse"])
    return rows
