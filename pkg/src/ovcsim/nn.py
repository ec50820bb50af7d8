"""Minimal multilayer-perceptron engine in double precision.

Affine layers with rectifier activations on hidden layers and an identity
output, exact reverse-mode gradients, the smooth-L1 loss, and an RMSprop
optimizer.  Just enough machinery to train the value network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, StaleCache


@dataclass
class MLP:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    def parameters(self) -> list[np.ndarray]:
        return list(self.weights) + list(self.biases)

    def clone(self) -> "MLP":
        return MLP([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def init_mlp(
    input_dim: int,
    hidden_width: int,
    output_dim: int,
    rng: np.random.Generator,
    hidden_layers: int = 6,
) -> MLP:
    """Uniform Glorot-style initialization, zero biases."""
    if min(input_dim, hidden_width, output_dim) < 1 or hidden_layers < 0:
        raise ValueError("dimensions must be >= 1")
    dims = [input_dim] + [hidden_width] * hidden_layers + [output_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MLP(weights, biases)


def forward(net: MLP, x: np.ndarray) -> np.ndarray:
    """Action scores for a single state vector or a batch of them."""
    y, _ = forward_cached(net, x)
    return y


def forward_cached(net: MLP, x: np.ndarray) -> tuple[np.ndarray, dict]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != net.input_dim:
        raise DimensionMismatch(f"input dim {h.shape[1]} != {net.input_dim}")
    activations = [h]
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if i < net.n_layers - 1:
            h = np.maximum(h, 0.0)
        activations.append(h)
    out = activations[-1]
    cache = {"activations": activations, "single": single, "x": x}
    return out[0] if single else out, cache


def backward(net: MLP, cache: dict, upstream: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Gradients of sum(upstream * output) w.r.t. every weight and bias.

    The rectifier subgradient at exactly 0 is taken as 0.
    """
    if cache.get("x") is None or len(cache["activations"]) != net.n_layers + 1:
        raise StaleCache("cache does not match this network")
    upstream = np.asarray(upstream, dtype=float)
    if cache["single"]:
        upstream = upstream[None, :]
    if upstream.shape != cache["activations"][-1].shape:
        raise DimensionMismatch("upstream gradient shape mismatch")

    grads_w = [np.zeros_like(w) for w in net.weights]
    grads_b = [np.zeros_like(b) for b in net.biases]
    delta = upstream
    for i in range(net.n_layers - 1, -1, -1):
        grads_w[i] = cache["activations"][i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ net.weights[i].T) * (cache["activations"][i] > 0.0)
    return grads_w, grads_b


def smooth_l1(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean smooth-L1 loss and its gradient with respect to pred.

    Per element: 0.5*e^2 when |e| < 1, else |e| - 0.5.
    """
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise DimensionMismatch("pred/target shape mismatch")
    e = pred - target
    small = np.abs(e) < 1.0
    losses = np.where(small, 0.5 * e**2, np.abs(e) - 0.5)
    grad = np.where(small, e, np.sign(e)) / e.size
    return float(losses.mean()), grad


@dataclass
class RmsPropState:
    """Per-parameter squared-gradient accumulators."""

    sq_weights: list[np.ndarray]
    sq_biases: list[np.ndarray]
    rho: float = 0.99
    eps: float = 1e-8
    lr: float = 0.01

    @classmethod
    def for_net(cls, net: MLP, rho: float = 0.99, eps: float = 1e-8, lr: float = 0.01) -> "RmsPropState":
        return cls(
            sq_weights=[np.zeros_like(w) for w in net.weights],
            sq_biases=[np.zeros_like(b) for b in net.biases],
            rho=rho,
            eps=eps,
            lr=lr,
        )


def rmsprop_step(
    net: MLP,
    grads_w: list[np.ndarray],
    grads_b: list[np.ndarray],
    state: RmsPropState,
) -> None:
    """In-place update: acc <- rho*acc + (1-rho)*g^2; p <- p - lr*g/(sqrt(acc)+eps)."""
    for w, g, acc in zip(net.weights, grads_w, state.sq_weights):
        acc *= state.rho
        acc += (1.0 - state.rho) * g**2
        w -= state.lr * g / (np.sqrt(acc) + state.eps)
    for b, g, acc in zip(net.biases, grads_b, state.sq_biases):
        acc *= state.rho
        acc += (1.0 - state.rho) * g**2
        b -= state.lr * g / (np.sqrt(acc) + state.eps)


# ---------------------------------------------------------------------------
# serialization


def net_to_dict(net: MLP) -> dict:
    return {
        "dims": [net.input_dim] + [w.shape[1] for w in net.weights],
        "weights": [w.ravel().tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def net_from_dict(d: dict) -> MLP:
    dims = d["dims"]
    weights = [
        np.array(flat, dtype=float).reshape(dims[i], dims[i + 1])
        for i, flat in enumerate(d["weights"])
    ]
    biases = [np.array(b, dtype=float) for b in d["biases"]]
    return MLP(weights, biases)


def rmsprop_to_dict(state: RmsPropState) -> dict:
    return {
        "sq_weights": [a.ravel().tolist() for a in state.sq_weights],
        "sq_biases": [a.tolist() for a in state.sq_biases],
        "rho": state.rho,
        "eps": state.eps,
        "lr": state.lr,
    }


def rmsprop_from_dict(d: dict, net: MLP) -> RmsPropState:
    state = RmsPropState.for_net(net, rho=d["rho"], eps=d["eps"], lr=d["lr"])
    state.sq_weights = [
        np.array(flat, dtype=float).reshape(w.shape)
        for flat, w in zip(d["sq_weights"], net.weights)
    ]
    state.sq_biases = [np.array(b, dtype=float) for b in d["sq_biases"]]
    return state
