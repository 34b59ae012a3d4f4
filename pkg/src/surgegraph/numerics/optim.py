"""Adam optimizer with bias-corrected moments.

Weight decay is applied as a plain L2 term added to the gradient before the
moment updates (classic Adam + L2, not decoupled decay).
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch
from .tensor import Tensor


class Adam:
    def __init__(self, params, learning_rate=3e-5, beta1=0.9, beta2=0.999,
                 epsilon=1e-8, weight_decay=0.0):
        """``params`` is a mapping name -> Tensor; names key the saved state."""
        self.params = dict(params)
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self, grads=None):
        """Apply one update. ``grads`` maps Tensor -> array; defaults to ``p.grad``."""
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            if grads is not None:
                g = grads.get(p)
            else:
                g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            g = np.asarray(g, dtype=np.float64)
            if g.shape != p.data.shape:
                raise ShapeMismatch(
                    f"adam: gradient shape {g.shape} != param '{name}' shape {p.data.shape}")
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = self.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + self.epsilon)
            p.data = p.data - update

    def state_dict(self):
        return {
            "step": self.step_count,
            "m": {name: arr.copy() for name, arr in self.m.items()},
            "v": {name: arr.copy() for name, arr in self.v.items()},
        }

    def load_state_dict(self, state):
        if set(state["m"]) != set(self.params) or set(state["v"]) != set(self.params):
            raise ShapeMismatch("adam: state parameter names do not match")
        for name, p in self.params.items():
            m = np.asarray(state["m"][name], dtype=np.float64)
            v = np.asarray(state["v"][name], dtype=np.float64)
            if m.shape != p.data.shape or v.shape != p.data.shape:
                raise ShapeMismatch(f"adam: state shape mismatch for '{name}'")
            self.m[name] = m.copy()
            self.v[name] = v.copy()
        self.step_count = int(state["step"])
