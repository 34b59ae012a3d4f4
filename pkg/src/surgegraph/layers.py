"""Differentiable building blocks: MLP, graph convolution, graph attention, LSTM.

All layers operate on float64 tensors from the numerics module and register
their computations on the active tape. Spatial layers accept inputs of shape
[..., N, F] so a whole batch of time steps can be processed in one call;
the LSTM accepts [M, T, F] sequences.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ShapeMismatch
from .numerics.tensor import (
    Tensor,
    _record,
    add,
    concat,
    leaky_relu,
    matmul,
    relu,
    reshape,
    sigmoid,
    softmax_masked,
    tanh,
)

ACTIVATIONS = {
    "linear": lambda t: t,
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "leaky_relu": leaky_relu,
}


def uniform_init(rng, fan_in, shape):
    """U(-sqrt(1/fan_in), +sqrt(1/fan_in)) initialization."""
    limit = math.sqrt(1.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def _activation(name):
    if name not in ACTIVATIONS:
        raise ValueError(f"unknown activation '{name}'")
    return ACTIVATIONS[name]


class MlpLayer:
    """Single affine map with an activation; lifts scalar node signals to features."""

    def __init__(self, in_dim, out_dim, rng, activation="relu"):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        self.weight = Tensor(uniform_init(rng, in_dim, (in_dim, out_dim)),
                             requires_grad=True)
        self.bias = Tensor(uniform_init(rng, in_dim, (out_dim,)), requires_grad=True)

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x):
        return _activation(self.activation)(add(matmul(x, self.weight), self.bias))


def gcn_message_matrix(graph, normalization="symmetric", use_edge_weights=True):
    """Constant aggregation matrix M with M_ij = w_ij / c_ij over N(i) + self.

    Self-loops carry unit weight. Degrees are counted on the binarized
    adjacency (self-loop included), so c_ij > 0 always. ``normalization``
    picks c_ij in {sqrt(deg_i*deg_j), deg_i, 1}.
    """
    a = graph.adjacency
    w = a.copy() if use_edge_weights else (a != 0.0).astype(np.float64)
    np.fill_diagonal(w, 1.0)
    deg = (a != 0.0).sum(axis=1) + 1.0
    if normalization == "symmetric":
        denom = np.sqrt(np.outer(deg, deg))
    elif normalization == "row":
        denom = np.broadcast_to(deg[:, None], w.shape)
    elif normalization == "none":
        denom = np.ones_like(w)
    else:
        raise ValueError(f"unknown GCN normalization '{normalization}'")
    return w / denom


class GcnLayer:
    """Graph convolution: aggregate normalized neighbor features, then project."""

    def __init__(self, in_dim, out_dim, rng, activation="relu",
                 normalization="symmetric", use_edge_weights=True):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        self.normalization = normalization
        self.use_edge_weights = use_edge_weights
        self.weight = Tensor(uniform_init(rng, in_dim, (in_dim, out_dim)),
                             requires_grad=True)
        self.bias = Tensor(uniform_init(rng, in_dim, (out_dim,)), requires_grad=True)
        self._cache = None  # (graph id, message matrix)

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def message_matrix(self, graph):
        if self._cache is None or self._cache[0] is not graph:
            m = gcn_message_matrix(graph, self.normalization, self.use_edge_weights)
            self._cache = (graph, m)
        return self._cache[1]

    def forward(self, h, graph):
        if h.shape[-2] != graph.n_nodes:
            raise ShapeMismatch(
                f"gcn: input has {h.shape[-2]} nodes, graph has {graph.n_nodes}")
        m = Tensor(self.message_matrix(graph))
        agg = matmul(m, h)  # aggregate first: N^2*F_in then N*F_in*F_out flops
        out = add(matmul(agg, self.weight), self.bias)
        return _activation(self.activation)(out)


class GatLayer:
    """Multi-head graph attention (self-loops included in every neighborhood).

    Scores e_ij = a . [W h_i || W h_j] pass through LeakyReLU and a masked
    softmax over N(i) + self. ``merge="concat"`` activates each head then
    stacks them (output width heads*out_dim); ``merge="average"`` averages the
    pre-activation head outputs and activates once (output width out_dim).
    """

    def __init__(self, in_dim, out_dim, heads, rng, merge="concat",
                 activation="relu", leaky_slope=0.2, use_edge_weights=False):
        if heads < 1:
            raise ValueError("gat: need at least one head")
        if merge not in ("concat", "average"):
            raise ValueError(f"unknown merge mode '{merge}'")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.heads = heads
        self.merge = merge
        self.activation = activation
        self.leaky_slope = leaky_slope
        self.use_edge_weights = use_edge_weights
        self.head_weights = []
        self.head_attn = []
        for _ in range(heads):
            self.head_weights.append(
                Tensor(uniform_init(rng, in_dim, (in_dim, out_dim)), requires_grad=True))
            self.head_attn.append(
                Tensor(uniform_init(rng, in_dim, (2 * out_dim,)), requires_grad=True))

    @property
    def output_dim(self):
        return self.heads * self.out_dim if self.merge == "concat" else self.out_dim

    def params(self):
        out = {}
        for k in range(self.heads):
            out[f"head{k}.weight"] = self.head_weights[k]
            out[f"head{k}.attn"] = self.head_attn[k]
        return out

    def _log_edge_weights(self, graph):
        logw = np.zeros_like(graph.adjacency)
        nz = graph.adjacency > 0.0
        logw[nz] = np.log(graph.adjacency[nz])
        return logw  # self-loops contribute log(1) = 0

    def _head_aggregate(self, k, h, graph, mask):
        """Unactivated per-head output and its attention matrix."""
        wh = matmul(h, self.head_weights[k])          # [..., N, F']
        a = self.head_attn[k]
        f_dst = matmul(wh, a[: self.out_dim])          # [..., N] score part for node i
        f_src = matmul(wh, a[self.out_dim:])           # [..., N] score part for node j
        lead = f_dst.shape[:-1]
        n = graph.n_nodes
        scores = add(reshape(f_dst, (*lead, n, 1)), reshape(f_src, (*lead, 1, n)))
        scores = leaky_relu(scores, slope=self.leaky_slope)
        if self.use_edge_weights:
            scores = add(scores, Tensor(self._log_edge_weights(graph)))
        alpha = softmax_masked(scores, mask, axis=-1)
        return matmul(alpha, wh), alpha

    def head_forward(self, k, h, graph):
        """Single-head output (activated) plus its attention weights."""
        mask = graph.neighbor_mask(include_self=True)
        out, alpha = self._head_aggregate(k, h, graph, mask)
        return _activation(self.activation)(out), alpha

    def forward(self, h, graph, return_attention=False):
        if h.shape[-2] != graph.n_nodes:
            raise ShapeMismatch(
                f"gat: input has {h.shape[-2]} nodes, graph has {graph.n_nodes}")
        mask = graph.neighbor_mask(include_self=True)
        act = _activation(self.activation)
        outs, alphas = [], []
        for k in range(self.heads):
            out, alpha = self._head_aggregate(k, h, graph, mask)
            outs.append(out)
            alphas.append(alpha)
        if self.merge == "concat":
            merged = concat([act(o) for o in outs], axis=-1)
        else:
            total = outs[0]
            for o in outs[1:]:
                total = add(total, o)
            merged = act(total * (1.0 / self.heads))
        if return_attention:
            return merged, alphas
        return merged


class LstmLayer:
    """Standard LSTM cell (gate column order: input, forget, output, candidate;
    the three sigmoid gates are contiguous so one call activates them all).

    ``step`` advances one timestep through primitive taped ops; ``forward_sequence``
    runs a whole [M, T, F] sequence as one fused tape node whose backward is a
    hand-rolled backpropagation through time. Both paths compute the same
    recurrence; state always starts at zero, so windows are independent.
    """

    def __init__(self, in_dim, hidden_dim, rng):
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        self.w_x = Tensor(uniform_init(rng, in_dim, (in_dim, 4 * hidden_dim)),
                          requires_grad=True)
        self.w_h = Tensor(uniform_init(rng, hidden_dim, (hidden_dim, 4 * hidden_dim)),
                          requires_grad=True)
        self.bias = Tensor(uniform_init(rng, hidden_dim, (4 * hidden_dim,)),
                           requires_grad=True)

    def params(self):
        return {"w_x": self.w_x, "w_h": self.w_h, "bias": self.bias}

    def initial_state(self, batch):
        z = np.zeros((batch, self.hidden_dim))
        return Tensor(z), Tensor(z.copy())

    def step(self, x_t, state):
        h_prev, c_prev = state
        hd = self.hidden_dim
        z = add(add(matmul(x_t, self.w_x), self.bias), matmul(h_prev, self.w_h))
        i = sigmoid(z[:, 0 * hd:1 * hd])
        f = sigmoid(z[:, 1 * hd:2 * hd])
        o = sigmoid(z[:, 2 * hd:3 * hd])
        g = tanh(z[:, 3 * hd:4 * hd])
        c = add(f * c_prev, i * g)
        h = o * tanh(c)
        return h, (h, c)

    def forward_sequence(self, x):
        """All hidden states for a batch of sequences, as one fused op."""
        xd = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
        if xd.ndim != 3 or xd.shape[-1] != self.in_dim:
            raise ShapeMismatch(
                f"lstm: expected [M, T, {self.in_dim}] input, got {xd.shape}")
        m, t_len, _ = xd.shape
        hd = self.hidden_dim
        w_x, w_h, b = self.w_x.data, self.w_h.data, self.bias.data

        x_proj = (xd.reshape(m * t_len, self.in_dim) @ w_x + b).reshape(m, t_len, 4 * hd)
        h = np.zeros((m, hd))
        c = np.zeros((m, hd))
        out = np.empty((m, t_len, hd))
        cache = []
        for t in range(t_len):
            z = x_proj[:, t] + h @ w_h
            gates = _sigmoid_np(z[:, : 3 * hd])  # (i, f, o) in one pass
            i = gates[:, 0 * hd:1 * hd]
            f = gates[:, 1 * hd:2 * hd]
            o = gates[:, 2 * hd:3 * hd]
            g = np.tanh(z[:, 3 * hd:4 * hd])
            c_prev, h_prev = c, h
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            out[:, t] = h
            cache.append((i, f, g, o, c_prev, tc, h_prev))

        def grad_fn(g_out, needs):
            dxp = np.empty((m, t_len, 4 * hd))
            d_wh = np.zeros_like(w_h)
            dh = np.zeros((m, hd))
            dc = np.zeros((m, hd))
            for t in range(t_len - 1, -1, -1):
                i, f, g_, o, c_prev, tc, h_prev = cache[t]
                dh = dh + g_out[:, t]
                do = dh * tc
                dc = dc + dh * o * (1.0 - tc * tc)
                dz = dxp[:, t]
                dz[:, 0 * hd:1 * hd] = dc * g_ * i * (1.0 - i)
                dz[:, 1 * hd:2 * hd] = dc * c_prev * f * (1.0 - f)
                dz[:, 2 * hd:3 * hd] = do * o * (1.0 - o)
                dz[:, 3 * hd:4 * hd] = dc * i * (1.0 - g_ * g_)
                d_wh += h_prev.T @ dz
                dh = dz @ w_h.T
                dc = dc * f
            dxp2 = dxp.reshape(m * t_len, 4 * hd)
            dx = d_wx = d_b = None
            if needs[0]:
                dx = (dxp2 @ w_x.T).reshape(m, t_len, self.in_dim)
            if needs[1]:
                d_wx = xd.reshape(m * t_len, self.in_dim).T @ dxp2
            if needs[3]:
                d_b = dxp2.sum(axis=0)
            return (dx, d_wx, d_wh if needs[2] else None, d_b)

        return _record(out, (x, self.w_x, self.w_h, self.bias), grad_fn)


def _sigmoid_np(z):
    e = np.exp(-np.abs(z))  # stable: exponent always <= 0
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


# thin functional wrappers over the layer objects
def mlp_forward(layer, x):
    return layer.forward(x)


def gcn_forward(layer, h, graph):
    return layer.forward(h, graph)


def gat_head_forward(layer, k, h, graph):
    return layer.head_forward(k, h, graph)


def gat_forward(layer, h, graph, return_attention=False):
    return layer.forward(h, graph, return_attention=return_attention)


def lstm_step(layer, x_t, state):
    return layer.step(x_t, state)
