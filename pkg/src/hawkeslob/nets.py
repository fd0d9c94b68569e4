"""Small feed-forward nets with explicit gradients, plus Adam.

Everything is float64 numpy. Each net is a flat list of parameter arrays
with a fixed layout, so policies checkpoint as plain byte blobs and every
gradient path can be checked against central finite differences.
"""

from __future__ import annotations

import numpy as np


def init_mlp(sizes: list[int], rng: np.random.Generator,
             zero_head: bool = True) -> list[np.ndarray]:
    """Parameters [W0, b0, W1, b1, ...] for a tanh MLP with linear output.

    Hidden weights are scaled-normal (1/sqrt(fan_in)); the output layer is
    zeroed by default so a fresh policy is exactly uniform/neutral.
    """
    params: list[np.ndarray] = []
    n_layers = len(sizes) - 1
    for i in range(n_layers):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        if zero_head and i == n_layers - 1:
            w = np.zeros((fan_in, fan_out))
        else:
            w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
        params.append(w)
        params.append(np.zeros(fan_out))
    return params


def mlp_forward(params: list[np.ndarray], x: np.ndarray):
    """Forward pass; returns (output, cache). Hidden activations are tanh,
    the final layer is linear. ``x`` has shape (N, in_dim)."""
    acts = [x]
    h = x
    n_layers = len(params) // 2
    for i in range(n_layers):
        w, b = params[2 * i], params[2 * i + 1]
        z = h @ w + b
        h = np.tanh(z) if i < n_layers - 1 else z
        acts.append(h)
    return h, acts


def mlp_backward(params: list[np.ndarray], acts: list[np.ndarray],
                 d_out: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Backprop ``d_out`` (dL/d output) through the net.

    Returns (grads aligned with params, dL/d input).
    """
    n_layers = len(params) // 2
    grads: list[np.ndarray | None] = [None] * len(params)
    delta = d_out
    for i in range(n_layers - 1, -1, -1):
        w = params[2 * i]
        h_in = acts[i]
        if i < n_layers - 1:
            # delta currently holds dL/d(activation); fold in tanh'.
            delta = delta * (1.0 - acts[i + 1] ** 2)
        grads[2 * i] = h_in.T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        delta = delta @ w.T
    return grads, delta


class Adam:
    """Adam over a list of parameter arrays, updated in place."""

    def __init__(self, params: list[np.ndarray], lr: float = 3e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


def flatten_params(groups: list[list[np.ndarray]]) -> np.ndarray:
    return np.concatenate([p.ravel() for group in groups for p in group])


def assign_flat(groups: list[list[np.ndarray]], flat: np.ndarray) -> None:
    """Write a flat vector back into the parameter arrays (for FD checks)."""
    i = 0
    for group in groups:
        for p in group:
            n = p.size
            p[...] = flat[i:i + n].reshape(p.shape)
            i += n
    if i != flat.size:
        raise ValueError(f"flat vector length {flat.size} != parameter count {i}")
