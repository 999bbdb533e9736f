"""Small fully-connected networks and an AdamW optimizer.

Just enough machinery to train MLP encoder/decoders: dense layers with a
fixed menu of activations (relu / sigmoid / softplus / identity) and Adam
with decoupled weight decay.
"""

from __future__ import annotations

import numpy as np

from .autograd import Tensor
from .errors import NumericError

ACTIVATIONS = ("relu", "sigmoid", "softplus", "identity")


class Layer:
    def __init__(self, weight: Tensor, bias: Tensor, activation: str):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.weight = weight
        self.bias = bias
        self.activation = activation


class Mlp:
    """A chain of dense layers; consecutive dimensions must agree."""

    def __init__(self, layers):
        self.layers = list(layers)
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.weight.shape[1] != nxt.weight.shape[0]:
                raise ValueError(
                    f"layer dimensions do not chain: {prev.weight.shape} -> {nxt.weight.shape}")

    @property
    def in_dim(self):
        return self.layers[0].weight.shape[0]

    @property
    def out_dim(self):
        return self.layers[-1].weight.shape[1]

    def parameters(self):
        params = []
        for layer in self.layers:
            params.append(layer.weight)
            params.append(layer.bias)
        return params

    def forward(self, x: Tensor) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if x.data.ndim != 2:
            raise ValueError(f"expected a batch matrix, got shape {x.shape}")
        if x.shape[1] != self.in_dim:
            raise ValueError(
                f"input feature dimension {x.shape[1]} does not match first layer "
                f"({self.in_dim})")
        h = x
        for layer in self.layers:
            h = h @ layer.weight + layer.bias
            if layer.activation == "relu":
                h = h.relu()
            elif layer.activation == "sigmoid":
                h = h.sigmoid()
            elif layer.activation == "softplus":
                h = h.softplus()
        return h

    __call__ = forward


def mlp_init(sizes, activations, rng) -> Mlp:
    """He-style initialization for a layer-size chain like (16, 64, 4)."""
    if len(activations) != len(sizes) - 1:
        raise ValueError("need one activation per layer")
    layers = []
    for fan_in, fan_out, act in zip(sizes, sizes[1:], activations):
        scale = np.sqrt(2.0 / fan_in)
        weight = Tensor(rng.standard_normal((fan_in, fan_out)) * scale, requires_grad=True)
        bias = Tensor(np.zeros(fan_out), requires_grad=True)
        layers.append(Layer(weight, bias, act))
    return Mlp(layers)


class AdamW:
    """Adam with decoupled weight decay.

    The decay multiplies parameters by (1 - lr * weight_decay) before the
    bias-corrected Adam step, so decay and adaptive scaling never interact.
    """

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-2):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if not np.isfinite(g).all():
                raise NumericError(
                    f"update rejected: non-finite gradient in parameter {i} "
                    f"(shape {p.data.shape})")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if self.weight_decay != 0.0:
                p.data *= 1.0 - self.lr * self.weight_decay
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    # checkpointing --------------------------------------------------------

    def state_arrays(self):
        """Moment buffers in parameter order, for serialization."""
        return list(self.m), list(self.v)

    def load_state(self, m_list, v_list, step_count):
        if len(m_list) != len(self.params) or len(v_list) != len(self.params):
            raise ValueError("optimizer state does not match parameter count")
        self.m = [np.array(a, dtype=np.float64) for a in m_list]
        self.v = [np.array(a, dtype=np.float64) for a in v_list]
        self.step_count = int(step_count)
