"""Unconstrained one-step operator: an MLP with hand-written backprop.

Weights are stored as (fan_in, fan_out) so a batch of row vectors maps as
``x @ W + b``.
"""

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("tanh", "gelu")
_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    return 0.5 * z * (1.0 + np.tanh(_GELU_C * (z + _GELU_A * z**3)))


def _act_grad(name, z):
    if name == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    t = np.tanh(_GELU_C * (z + _GELU_A * z**3))
    return 0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * z**2)


@dataclass
class EmulatorParams:
    layer_sizes: list
    weights: list
    biases: list
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        sizes = list(self.layer_sizes)
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("need one weight matrix and bias per layer transition")
        for W, b, (fi, fo) in zip(self.weights, self.biases, zip(sizes[:-1], sizes[1:])):
            if W.shape != (fi, fo) or b.shape != (fo,):
                raise ValueError(f"layer shapes {W.shape}, {b.shape} inconsistent with {fi}->{fo}")

    @property
    def n(self):
        return self.layer_sizes[0]

    def parameter_count(self):
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def copy(self):
        return EmulatorParams(list(self.layer_sizes), [W.copy() for W in self.weights],
                              [b.copy() for b in self.biases], self.activation)


def init_params(layer_sizes, seed=0, activation="tanh"):
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise ValueError(f"layer_sizes needs at least two positive entries, got {layer_sizes}")
    if sizes[0] != sizes[-1]:
        raise ValueError("input and output widths must match (state-to-state map)")
    rng = np.random.default_rng(seed)
    weights = [rng.standard_normal((fi, fo)) / np.sqrt(fi) for fi, fo in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(fo) for fo in sizes[1:]]
    return EmulatorParams(sizes, weights, biases, activation)


@dataclass
class ForwardCache:
    inputs: list
    preacts: list
    weights: list = field(default_factory=list)
    single: bool = False


def forward(params, w, cache=False):
    """Apply the network; returns ``(output, cache_or_None)``."""
    x = np.asarray(w, dtype=float)
    if x.shape[-1] != params.n:
        raise ValueError(f"input has dimension {x.shape[-1]}, network expects {params.n}")
    single = x.ndim == 1
    h = np.atleast_2d(x)
    inputs, preacts = [], []
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ W + b
        if i < last:
            preacts.append(z)
            h = _act(params.activation, z)
        else:
            h = z
    out = h[0] if single else h
    if not cache:
        return out, None
    return out, ForwardCache(inputs, preacts, list(params.weights), single)


def backward(params, cache, upstream):
    """Gradients ``({"weights": [...], "biases": [...]}, grad_input)``."""
    if cache is None:
        raise ValueError("backward needs a cache from forward(..., cache=True)")
    if len(cache.weights) != len(params.weights) or any(
        a is not b for a, b in zip(cache.weights, params.weights)
    ):
        raise ValueError("stale cache: parameters changed since the forward pass")
    g = np.atleast_2d(np.asarray(upstream, dtype=float))
    n_layers = len(params.weights)
    gW = [None] * n_layers
    gb = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        if i < n_layers - 1:
            g = g * _act_grad(params.activation, cache.preacts[i])
        gW[i] = cache.inputs[i].T @ g
        gb[i] = g.sum(axis=0)
        g = g @ params.weights[i].T
    grad_input = g[0] if cache.single else g
    return {"weights": gW, "biases": gb}, grad_input
