"""Model assembly: MLP -> GCN -> GAT -> 2x LSTM -> linear head.

Per input hour, each station carries one scalar (its scaled offset). The MLP
lifts that scalar to a feature vector, the spatial encoders mix features
across the station graph (weights shared across time steps), the two LSTM
layers consume each node's feature sequence (weights shared across nodes),
and a linear head maps the final hidden state to one offset per future hour.
"""

from __future__ import annotations

import base64
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import (
    CorruptCheckpoint,
    GraphMismatch,
    InvalidVariant,
    ShapeMismatch,
    VersionMismatch,
)
from .layers import GatLayer, GcnLayer, LstmLayer, MlpLayer, uniform_init
from .numerics.tensor import Tensor, dropout, matmul, reshape, transpose

CHECKPOINT_FORMAT = "surgegraph-checkpoint"
CHECKPOINT_VERSION = 1

# component subsets supported by the ablation harness (LSTM is always present)
VARIANT_LABELS = {
    "GAT+LSTM": frozenset({"gat", "lstm"}),
    "GCN+LSTM": frozenset({"gcn", "lstm"}),
    "GCN+GAT+LSTM": frozenset({"gcn", "gat", "lstm"}),
    "MLP+GAT+LSTM": frozenset({"mlp", "gat", "lstm"}),
    "MLP+GCN+LSTM": frozenset({"mlp", "gcn", "lstm"}),
    "MLP+GAT+GCN+LSTM": frozenset({"mlp", "gcn", "gat", "lstm"}),
}

DEFAULT_HORIZONS = (6, 9, 12, 15, 18, 24, 36, 48, 72)


@dataclass
class ModelConfig:
    n_stations: int
    w_in: int = 48
    w_out: int = 24
    components: tuple = ("mlp", "gcn", "gat", "lstm")
    mlp_width: int = 16
    gcn_width: int = 64
    gat_width: int = 64          # per head
    gat_heads: int = 4
    gat_merge: str = "concat"
    gcn_normalization: str = "symmetric"
    gcn_edge_weights: bool = True
    gat_edge_weights: bool = False
    lstm_hidden: int = 64
    activation: str = "relu"
    leaky_slope: float = 0.2
    dropout: float = 0.0
    seed: int = 0
    allow_pure_temporal: bool = False

    def __post_init__(self):
        self.components = tuple(self.components)
        known = {"mlp", "gcn", "gat", "lstm"}
        if not set(self.components) <= known:
            raise InvalidVariant(f"unknown components {set(self.components) - known}")
        if "lstm" not in self.components:
            raise InvalidVariant("the temporal LSTM stage is mandatory")
        if not ({"gcn", "gat"} & set(self.components)) and not self.allow_pure_temporal:
            raise InvalidVariant(
                "need at least one spatial component (gcn/gat), or set "
                "allow_pure_temporal=True explicitly")
        if self.n_stations < 1 or self.w_in < 1 or self.w_out < 1:
            raise ValueError("n_stations, w_in, w_out must be positive")

    def to_json_dict(self):
        doc = asdict(self)
        doc["components"] = list(self.components)
        return doc

    @classmethod
    def from_json_dict(cls, doc):
        doc = dict(doc)
        doc["components"] = tuple(doc["components"])
        return cls(**doc)


class OffsetForecaster:
    """Differentiable map [B, w_in, N] -> [B, w_out, N], bound to one graph."""

    def __init__(self, config, graph):
        if graph.n_nodes != config.n_stations:
            raise GraphMismatch(
                f"config expects {config.n_stations} stations, graph has {graph.n_nodes}")
        self.config = config
        self.graph = graph
        self.graph_hash = graph.content_hash()
        rng = np.random.default_rng(config.seed)
        comp = set(config.components)
        act = config.activation

        width = 1
        self.mlp = None
        if "mlp" in comp:
            self.mlp = MlpLayer(width, config.mlp_width, rng, activation=act)
            width = config.mlp_width
        self.gcn = None
        if "gcn" in comp:
            self.gcn = GcnLayer(width, config.gcn_width, rng, activation=act,
                                normalization=config.gcn_normalization,
                                use_edge_weights=config.gcn_edge_weights)
            width = config.gcn_width
        self.gat = None
        if "gat" in comp:
            self.gat = GatLayer(width, config.gat_width, config.gat_heads, rng,
                                merge=config.gat_merge, activation=act,
                                leaky_slope=config.leaky_slope,
                                use_edge_weights=config.gat_edge_weights)
            width = self.gat.output_dim
        self.lstm1 = LstmLayer(width, config.lstm_hidden, rng)
        self.lstm2 = LstmLayer(config.lstm_hidden, config.lstm_hidden, rng)
        self.head_weight = Tensor(
            uniform_init(rng, config.lstm_hidden, (config.lstm_hidden, config.w_out)),
            requires_grad=True)
        self.head_bias = Tensor(uniform_init(rng, config.lstm_hidden, (config.w_out,)),
                                requires_grad=True)

        self._params = {}
        if self.mlp is not None:
            self._register("mlp", self.mlp.params())
        if self.gcn is not None:
            self._register("gcn", self.gcn.params())
        if self.gat is not None:
            self._register("gat", self.gat.params())
        self._register("lstm1", self.lstm1.params())
        self._register("lstm2", self.lstm2.params())
        self._params["head.weight"] = self.head_weight
        self._params["head.bias"] = self.head_bias

    def _register(self, prefix, params):
        for name, tensor in params.items():
            self._params[f"{prefix}.{name}"] = tensor

    def parameters(self):
        """Stable name -> Tensor registry (insertion order fixed by assembly)."""
        return dict(self._params)

    def n_parameters(self):
        return sum(p.data.size for p in self._params.values())

    def forward(self, inputs, training=False, dropout_rng=None, graph=None):
        """Predict scaled offsets for each station over the prediction window."""
        if graph is not None and graph.content_hash() != self.graph_hash:
            raise GraphMismatch("forward called with a different graph than the model was built on")
        x = inputs if isinstance(inputs, Tensor) else Tensor(inputs)
        cfg = self.config
        n = cfg.n_stations
        if x.ndim != 3 or x.shape[1] != cfg.w_in or x.shape[2] != n:
            raise ShapeMismatch(
                f"expected inputs [B, {cfg.w_in}, {n}], got {x.shape}")
        b = x.shape[0]

        h = reshape(x, (b * cfg.w_in * n, 1))
        if self.mlp is not None:
            h = self.mlp.forward(h)
        width = h.shape[-1]
        h = reshape(h, (b * cfg.w_in, n, width))
        if self.gcn is not None:
            h = self.gcn.forward(h, self.graph)
        if self.gat is not None:
            h = self.gat.forward(h, self.graph)
            if training and cfg.dropout > 0.0:
                if dropout_rng is None:
                    dropout_rng = np.random.default_rng(cfg.seed)
                h = dropout(h, cfg.dropout, dropout_rng)
        width = h.shape[-1]

        # fold stations into the batch so temporal weights are shared across nodes
        h = reshape(h, (b, cfg.w_in, n, width))
        h = transpose(h, (0, 2, 1, 3))
        h = reshape(h, (b * n, cfg.w_in, width))
        h = self.lstm1.forward_sequence(h)
        h = self.lstm2.forward_sequence(h)
        last = h[:, -1, :]
        out = matmul(last, self.head_weight) + self.head_bias
        out = reshape(out, (b, n, cfg.w_out))
        return transpose(out, (0, 2, 1))


def make_variant(flags, config):
    """Build a model config restricted to one of the supported component subsets."""
    flags = frozenset(flags)
    if flags not in VARIANT_LABELS.values():
        raise InvalidVariant(
            f"{sorted(flags)} is not a supported variant; choose one of "
            f"{sorted(VARIANT_LABELS)}")
    order = [c for c in ("mlp", "gcn", "gat", "lstm") if c in flags]
    return ModelConfig(**{**config.to_json_dict(), "components": order})


def _encode_array(arr):
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode()


def _decode_array(text, shape):
    raw = base64.b64decode(text.encode())
    expected = int(np.prod(shape)) * 8
    if len(raw) != expected:
        raise CorruptCheckpoint(f"array payload holds {len(raw)} bytes, expected {expected}")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def save_checkpoint(model, path, training_meta=None, optimizer=None):
    """Serialize parameters + config + graph hash as a portable JSON container."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_json_dict(),
        "graph_hash": model.graph_hash,
        "params": {
            name: {"shape": list(p.data.shape), "data": _encode_array(p.data)}
            for name, p in model.parameters().items()
        },
        "training": training_meta or {},
    }
    if optimizer is not None:
        state = optimizer.state_dict()
        doc["optimizer"] = {
            "step": state["step"],
            "m": {k: _encode_array(v) for k, v in state["m"].items()},
            "v": {k: _encode_array(v) for k, v in state["v"].items()},
        }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_checkpoint(path, graph):
    """Rebuild a model from a checkpoint, verifying format, version, and graph."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptCheckpoint(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CorruptCheckpoint(f"{path}: not a model checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatch(
            f"{path}: version {doc.get('version')} unsupported (expected {CHECKPOINT_VERSION})")
    for key in ("config", "graph_hash", "params"):
        if key not in doc:
            raise CorruptCheckpoint(f"{path}: missing '{key}'")
    if doc["graph_hash"] != graph.content_hash():
        raise GraphMismatch(
            f"{path}: checkpoint graph hash {doc['graph_hash'][:12]}... does not match "
            "the supplied graph")
    config = ModelConfig.from_json_dict(doc["config"])
    model = OffsetForecaster(config, graph)
    params = model.parameters()
    if set(params) != set(doc["params"]):
        raise CorruptCheckpoint(f"{path}: parameter names do not match the architecture")
    for name, p in params.items():
        entry = doc["params"][name]
        arr = _decode_array(entry["data"], tuple(entry["shape"]))
        if arr.shape != p.data.shape:
            raise CorruptCheckpoint(
                f"{path}: parameter '{name}' has shape {arr.shape}, expected {p.data.shape}")
        p.data = arr
    optimizer_state = None
    if "optimizer" in doc:
        opt = doc["optimizer"]
        optimizer_state = {
            "step": int(opt["step"]),
            "m": {k: _decode_array(v, params[k].data.shape) for k, v in opt["m"].items()},
            "v": {k: _decode_array(v, params[k].data.shape) for k, v in opt["v"].items()},
        }
    return model, doc.get("training", {}), optimizer_state
