"""Minimal dense-network kernel: linear layers, tanh, exact backprop, Adam.

Just enough machinery for a small autoencoder. All arithmetic is float64.
Layers operate on single vectors (d,) or batches (n, d); gradients returned
by the backward pass are exact analytic derivatives of whatever scalar the
upstream gradient differentiates, summed over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("tanh", "identity")


@dataclass
class DenseLayer:
    """Fully connected layer: y = act(W x + b), W is (out, in)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ValueError("weights must be 2-D and bias 1-D")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise ValueError(
                f"bias length {self.bias.shape[0]} does not match"
                f" output dim {self.weights.shape[0]}"
            )
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("layer parameters must be finite")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def glorot(cls, out_dim: int, in_dim: int, rng: np.random.Generator) -> "DenseLayer":
        """Uniform init in +-sqrt(6/(fan_in+fan_out)); bias starts at zero."""
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        w = rng.uniform(-limit, limit, size=(out_dim, in_dim))
        return cls(weights=w, bias=np.zeros(out_dim))


def forward(layer: DenseLayer, x: np.ndarray, activation: str = "identity") -> np.ndarray:
    """Apply act(W x + b); x may be a vector (in,) or a batch (n, in)."""
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.in_dim:
        raise ValueError(
            f"input dim {x.shape[-1]} does not match layer in-dim {layer.in_dim}"
        )
    pre = x @ layer.weights.T + layer.bias
    return np.tanh(pre) if activation == "tanh" else pre


@dataclass
class LayerCache:
    """Activations recorded by a forward pass, consumed by backward."""

    x: np.ndarray  # layer input, (n, in)
    out: np.ndarray  # post-activation output, (n, out)


@dataclass
class LayerGrads:
    weights: np.ndarray
    bias: np.ndarray


class Mlp:
    """A stack of dense layers with per-layer activations."""

    def __init__(self, layers: list[DenseLayer], activations: list[str]):
        if len(layers) != len(activations):
            raise ValueError("need one activation per layer")
        for act in activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ValueError(
                    f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}"
                )
        self.layers = layers
        self.activations = activations

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer, act in zip(self.layers, self.activations):
            x = forward(layer, x, act)
        return x

    def forward_cached(self, x: np.ndarray) -> tuple[np.ndarray, list[LayerCache]]:
        """Forward pass that records per-layer inputs/outputs for backward."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        caches = []
        for layer, act in zip(self.layers, self.activations):
            out = forward(layer, x, act)
            caches.append(LayerCache(x=x, out=out))
            x = out
        return x, caches

    def backward(
        self, caches: list[LayerCache] | None, upstream: np.ndarray
    ) -> tuple[list[LayerGrads], np.ndarray]:
        """Backpropagate upstream = dL/d(output), shape (n, out).

        Returns per-layer parameter gradients (summed over the batch) and
        dL/d(input). Requires the caches of a preceding forward_cached call.
        """
        if caches is None or len(caches) != len(self.layers):
            raise ValueError("backward requires the caches of a forward pass")
        g = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
        grads: list[LayerGrads] = [None] * len(self.layers)  # type: ignore[list-item]
        for i in range(len(self.layers) - 1, -1, -1):
            layer, act, cache = self.layers[i], self.activations[i], caches[i]
            g_pre = g * (1.0 - cache.out**2) if act == "tanh" else g
            grads[i] = LayerGrads(weights=g_pre.T @ cache.x, bias=g_pre.sum(axis=0))
            g = g_pre @ layer.weights
        return grads, g

    def parameters(self) -> list[np.ndarray]:
        params = []
        for layer in self.layers:
            params.extend((layer.weights, layer.bias))
        return params


@dataclass
class AdamState:
    """Adam optimizer state for a flat list of parameter arrays."""

    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        for name, b in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not (0.0 < b < 1.0):
                raise ValueError(f"{name} must lie in (0, 1), got {b}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")

    @classmethod
    def for_params(cls, params: list[np.ndarray], lr: float = 1e-3, **kwargs) -> "AdamState":
        return cls(
            first_moment=[np.zeros_like(p) for p in params],
            second_moment=[np.zeros_like(p) for p in params],
            lr=lr,
            **kwargs,
        )


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
    """One bias-corrected Adam update, in place on params and state."""
    if not (len(params) == len(grads) == len(state.first_moment)):
        raise ValueError("params, grads and moment buffers must align")
    for p, g, m in zip(params, grads, state.first_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape} vs grad {g.shape}")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g**2
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
