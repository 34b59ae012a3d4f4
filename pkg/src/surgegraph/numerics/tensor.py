"""Dense float64 tensors with taped reverse-mode differentiation.

Every differentiable op records one node on the active ``Tape``; ``backward``
replays the records once, in reverse. Tensors created directly are leaves;
mark them ``requires_grad=True`` to receive gradients. One tape is meant to
cover exactly one forward/backward cycle and is discarded afterwards.
"""

from __future__ import annotations

import numpy as np

from ..errors import DetachedTensor, EmptyNeighborhood, ShapeMismatch

_TAPE_STACK: list["Tape"] = []


class Tape:
    """Append-only record of primitive operations.

    Node inputs always precede the node itself, so a single reverse sweep
    visits every node exactly once with its output adjoint fully accumulated.
    """

    def __init__(self):
        self.nodes = []
        self._leaves = {}

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self, "tapes must unwind in LIFO order"
        return False

    def watch(self, *tensors):
        """Register leaves so backward reports a gradient (possibly zero) for them."""
        for t in tensors:
            self._leaves[id(t)] = t

    @property
    def leaves(self):
        return list(self._leaves.values())

    def __len__(self):
        return len(self.nodes)


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """Multi-dimensional float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "tape")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; python scalars pass through as untracked constants
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported; multiply by a reciprocal")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)


def _data(x):
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)


def _record(out_data, inputs, grad_fn):
    """Wrap an op result, registering it on the active tape when any input is live.

    ``grad_fn(g, needs)`` must return per-input gradients, ``None`` where
    ``needs`` is False.
    """
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is None:
        return out
    needs = tuple(
        isinstance(t, Tensor) and (t.requires_grad or t.tape is tape) for t in inputs
    )
    if not any(needs):
        return out
    for t, live in zip(inputs, needs):
        if live and t.tape is not tape:
            tape._leaves[id(t)] = t
    out.tape = tape
    tape.nodes.append((out, inputs, grad_fn, needs))
    return out


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(ad, bd, op):
    try:
        np.broadcast_shapes(ad.shape, bd.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: shapes {ad.shape} and {bd.shape} do not broadcast") from None


def add(a, b):
    ad, bd = _data(a), _data(b)
    _check_broadcast(ad, bd, "add")

    def grad_fn(g, needs):
        return (
            _unbroadcast(g, ad.shape) if needs[0] else None,
            _unbroadcast(g, bd.shape) if needs[1] else None,
        )

    return _record(ad + bd, (a, b), grad_fn)


def sub(a, b):
    ad, bd = _data(a), _data(b)
    _check_broadcast(ad, bd, "sub")

    def grad_fn(g, needs):
        return (
            _unbroadcast(g, ad.shape) if needs[0] else None,
            _unbroadcast(-g, bd.shape) if needs[1] else None,
        )

    return _record(ad - bd, (a, b), grad_fn)


def mul(a, b):
    ad, bd = _data(a), _data(b)
    _check_broadcast(ad, bd, "mul")

    def grad_fn(g, needs):
        return (
            _unbroadcast(g * bd, ad.shape) if needs[0] else None,
            _unbroadcast(g * ad, bd.shape) if needs[1] else None,
        )

    return _record(ad * bd, (a, b), grad_fn)


def neg(a):
    ad = _data(a)

    def grad_fn(g, needs):
        return (-g,)

    return _record(-ad, (a,), grad_fn)


def matmul(a, b):
    """Matrix product with numpy broadcasting over leading axes.

    ``a`` must be at least 2-D; ``b`` may be 1-D (treated as a column vector,
    producing ``a.shape[:-1]``).
    """
    ad, bd = _data(a), _data(b)
    if ad.ndim < 2:
        raise ShapeMismatch(f"matmul: lhs must be at least 2-D, got shape {ad.shape}")
    if bd.ndim == 0:
        raise ShapeMismatch("matmul: rhs must be at least 1-D")
    k = bd.shape[0] if bd.ndim == 1 else bd.shape[-2]
    if ad.shape[-1] != k:
        raise ShapeMismatch(f"matmul: inner dims differ, {ad.shape} x {bd.shape}")

    if bd.ndim == 1:
        out = ad @ bd

        def grad_fn(g, needs):
            ga = g[..., :, None] * bd if needs[0] else None
            gb = None
            if needs[1]:
                gb = (ad * g[..., :, None]).sum(axis=tuple(range(ad.ndim - 1)))
            return (ga, gb)

        return _record(out, (a, b), grad_fn)

    try:
        out = ad @ bd
    except ValueError:
        raise ShapeMismatch(f"matmul: shapes {ad.shape} x {bd.shape} do not broadcast") from None

    def grad_fn(g, needs):
        ga = gb = None
        if needs[0]:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if needs[1]:
            gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return (ga, gb)

    return _record(out, (a, b), grad_fn)


def relu(a):
    ad = _data(a)
    out = np.maximum(ad, 0.0)

    def grad_fn(g, needs):
        return (g * (ad > 0.0),)

    return _record(out, (a,), grad_fn)


def leaky_relu(a, slope=0.2):
    ad = _data(a)
    out = np.where(ad > 0.0, ad, slope * ad)

    def grad_fn(g, needs):
        return (g * np.where(ad > 0.0, 1.0, slope),)

    return _record(out, (a,), grad_fn)


def sigmoid(a):
    ad = _data(a)
    e = np.exp(-np.abs(ad))  # stable: exponent always <= 0
    out = np.where(ad >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def grad_fn(g, needs):
        return (g * out * (1.0 - out),)

    return _record(out, (a,), grad_fn)


def tanh(a):
    ad = _data(a)
    out = np.tanh(ad)

    def grad_fn(g, needs):
        return (g * (1.0 - out * out),)

    return _record(out, (a,), grad_fn)


def tsum(a, axis=None, keepdims=False):
    ad = _data(a)
    out = ad.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g, needs):
        gg = np.asarray(g)
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        return (np.broadcast_to(gg, ad.shape).copy(),)

    return _record(out, (a,), grad_fn)


def tmean(a, axis=None, keepdims=False):
    ad = _data(a)
    out = ad.mean(axis=axis, keepdims=keepdims)
    count = ad.size if axis is None else np.prod([ad.shape[i] for i in np.atleast_1d(axis)])

    def grad_fn(g, needs):
        gg = np.asarray(g)
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        return (np.broadcast_to(gg, ad.shape) / count,)

    return _record(out, (a,), grad_fn)


def reshape(a, shape):
    ad = _data(a)
    out = ad.reshape(shape)

    def grad_fn(g, needs):
        return (g.reshape(ad.shape),)

    return _record(out, (a,), grad_fn)


def transpose(a, axes):
    ad = _data(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def grad_fn(g, needs):
        return (g.transpose(inv),)

    return _record(ad.transpose(axes), (a,), grad_fn)


def concat(parts, axis=-1):
    datas = [_data(p) for p in parts]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(g, needs):
        pieces = np.split(g, splits, axis=axis)
        return tuple(p if n else None for p, n in zip(pieces, needs))

    return _record(out, tuple(parts), grad_fn)


def getitem(a, key):
    """Basic (slice/int/ellipsis) indexing; gradients scatter back into zeros."""
    ad = _data(a)
    out = ad[key]

    def grad_fn(g, needs):
        z = np.zeros_like(ad)
        z[key] = g
        return (z,)

    return _record(out, (a,), grad_fn)


def softmax_masked(scores, mask, axis=-1):
    """Softmax over unmasked entries; masked entries are exactly zero.

    The row max over unmasked entries is subtracted before exponentiation.
    Raises EmptyNeighborhood when any row along ``axis`` is fully masked.
    """
    sd = _data(scores)
    mask_b = np.broadcast_to(np.asarray(mask, dtype=bool), sd.shape)
    if not mask_b.any(axis=axis).all():
        raise EmptyNeighborhood("softmax_masked: a row has no unmasked entries")
    shifted = np.where(mask_b, sd, -np.inf)
    shifted = shifted - shifted.max(axis=axis, keepdims=True)
    e = np.exp(shifted)  # masked entries: exp(-inf) == 0
    p = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g, needs):
        inner = (g * p).sum(axis=axis, keepdims=True)
        return (p * (g - inner),)

    return _record(p, (scores,), grad_fn)


def dropout(a, rate, rng):
    """Inverted dropout driven by the supplied generator. rate==0 is a no-op."""
    if rate <= 0.0:
        return a if isinstance(a, Tensor) else Tensor(a)
    ad = _data(a)
    keep = (rng.random(ad.shape) >= rate) / (1.0 - rate)

    def grad_fn(g, needs):
        return (g * keep,)

    return _record(ad * keep, (a,), grad_fn)


def backward(loss, tape=None, params=None):
    """Reverse-accumulate d(loss)/d(leaf) over a tape.

    Returns a dict mapping leaf tensors to gradient arrays and stores each
    gradient on the tensor's ``grad`` slot (overwriting, not accumulating, so
    repeated calls on one tape are idempotent). ``params`` restricts/extends
    the reported leaves; absent leaves get zero gradients.
    """
    if tape is None:
        tape = loss.tape
    if tape is None:
        raise DetachedTensor("loss has no tape; wrap the computation in `with Tape():`")
    if loss.data.size != 1:
        raise ShapeMismatch(f"backward: loss must be scalar, got shape {loss.data.shape}")

    adjoints = {id(loss): np.ones_like(loss.data)}
    for out, inputs, grad_fn, needs in reversed(tape.nodes):
        g = adjoints.pop(id(out), None)
        if g is None:
            continue
        for t, gt in zip(inputs, grad_fn(g, needs)):
            if gt is None:
                continue
            prev = adjoints.get(id(t))
            adjoints[id(t)] = gt if prev is None else prev + gt

    targets = list(params) if params is not None else tape.leaves
    grads = {}
    for t in targets:
        g = adjoints.get(id(t))
        if g is None:
            g = np.zeros_like(t.data)
        t.grad = g
        grads[t] = g
    return grads
