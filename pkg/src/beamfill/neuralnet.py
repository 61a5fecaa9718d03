"""Minimal dense-network engine with exact manual gradients.

Linear layers with LeakyReLU / sigmoid / linear outputs, smooth-L1 and
binary-cross-entropy losses, and bias-corrected Adam. Everything is
float64 and batched: inputs may be a single vector or a (batch, dim)
matrix; gradients are summed over the batch in fixed order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LEAKY_SLOPE = 0.2
SMOOTH_L1_BETA = 1.0
BCE_CLAMP = 1e-7
ACTIVATIONS = ("leaky_relu", "sigmoid", "none")
NET_FORMAT_VERSION = 1


@dataclass
class Layer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str


@dataclass
class NetParams:
    layers: list
    init_seed: int = 0


@dataclass
class ForwardCache:
    net: NetParams
    inputs: list
    preacts: list
    outputs: list
    batched: bool


def init_net(layer_dims, activations, seed: int = 0) -> NetParams:
    """Glorot-uniform weights, zero biases.

    ``layer_dims`` chains input to output, e.g. [5, 8, 3] builds two layers.
    """
    if len(layer_dims) < 2:
        raise ValueError("need at least an input and an output dimension")
    if len(activations) != len(layer_dims) - 1:
        raise ValueError(f"expected {len(layer_dims) - 1} activations, got {len(activations)}")
    for act in activations:
        if act not in ACTIVATIONS:
            raise ValueError(f"unknown activation {act!r}")
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    layers = []
    for fan_in, fan_out, act in zip(layer_dims[:-1], layer_dims[1:], activations):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append(
            Layer(
                weights=rng.uniform(-limit, limit, size=(fan_out, fan_in)),
                bias=np.zeros(fan_out),
                activation=act,
            )
        )
    return NetParams(layers=layers, init_seed=seed)


def _apply_activation(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "leaky_relu":
        return np.where(z > 0, z, LEAKY_SLOPE * z)
    if kind == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    return z


def _activation_grad(z: np.ndarray, out: np.ndarray, kind: str) -> np.ndarray:
    if kind == "leaky_relu":
        return np.where(z > 0, 1.0, LEAKY_SLOPE)
    if kind == "sigmoid":
        return out * (1.0 - out)
    return np.ones_like(z)


def forward(net: NetParams, x):
    """Run the net; returns (output, cache for exact backprop)."""
    x = np.asarray(x, dtype=float)
    batched = x.ndim == 2
    a = x if batched else x[None, :]
    if a.shape[1] != net.layers[0].weights.shape[1]:
        raise ValueError(
            f"input width {a.shape[1]} != first-layer width {net.layers[0].weights.shape[1]}"
        )
    inputs, preacts, outputs = [], [], []
    for layer in net.layers:
        inputs.append(a)
        z = a @ layer.weights.T + layer.bias
        a = _apply_activation(z, layer.activation)
        preacts.append(z)
        outputs.append(a)
    cache = ForwardCache(net=net, inputs=inputs, preacts=preacts, outputs=outputs, batched=batched)
    return (a if batched else a[0]), cache


def backward(net: NetParams, cache: ForwardCache, d_output):
    """Exact gradients for every layer, plus the gradient w.r.t. the input.

    Returns (grads, d_input) where grads is a list of (dW, db) pairs
    aligned with ``net.layers``.
    """
    if cache.net is not net:
        raise ValueError("cache was produced by a different net (stale cache)")
    d_a = np.asarray(d_output, dtype=float)
    if d_a.ndim == 1:
        d_a = d_a[None, :]
    grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        d_z = d_a * _activation_grad(cache.preacts[i], cache.outputs[i], layer.activation)
        grads[i] = (d_z.T @ cache.inputs[i], d_z.sum(axis=0))
        d_a = d_z @ layer.weights
    return grads, (d_a if cache.batched else d_a[0])


def smooth_l1(pred, target, selection_mask=None):
    """Huber-style loss averaged over selected elements; beta = 1.

    Returns (loss, dLoss/dPred) with zero gradient at unselected slots.
    """
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    sel = np.ones(pred.shape, dtype=bool) if selection_mask is None else np.asarray(selection_mask, dtype=bool)
    count = int(sel.sum())
    if count == 0:
        raise ValueError("empty selection mask")
    d = pred - target
    quad = np.abs(d) < SMOOTH_L1_BETA
    per_elem = np.where(quad, 0.5 * d * d / SMOOTH_L1_BETA, np.abs(d) - 0.5 * SMOOTH_L1_BETA)
    loss = float(per_elem[sel].sum() / count)
    grad = np.where(quad, d / SMOOTH_L1_BETA, np.sign(d)) / count
    grad = np.where(sel, grad, 0.0)
    return loss, grad


def bce(pred_prob, label):
    """Mean binary cross entropy; probabilities clamped to [1e-7, 1 - 1e-7]."""
    pred_prob = np.asarray(pred_prob, dtype=float)
    label = np.asarray(label, dtype=float)
    if pred_prob.shape != label.shape:
        raise ValueError(f"shape mismatch {pred_prob.shape} vs {label.shape}")
    n = pred_prob.size
    p = np.clip(pred_prob, BCE_CLAMP, 1.0 - BCE_CLAMP)
    loss = float(-np.sum(label * np.log(p) + (1.0 - label) * np.log(1.0 - p)) / n)
    inside = (pred_prob > BCE_CLAMP) & (pred_prob < 1.0 - BCE_CLAMP)
    grad = np.where(inside, (p - label) / (p * (1.0 - p)) / n, 0.0)
    return loss, grad


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(net: NetParams, lr: float) -> AdamState:
    zeros = lambda layer: (np.zeros_like(layer.weights), np.zeros_like(layer.bias))
    return AdamState(m=[zeros(l) for l in net.layers], v=[zeros(l) for l in net.layers], t=0, lr=lr)


def adam_step(net: NetParams, grads, state: AdamState):
    """Pure bias-corrected Adam update; returns (new_net, new_state)."""
    if len(grads) != len(net.layers):
        raise ValueError("gradient list does not match the layer list")
    t = state.t + 1
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    new_layers, new_m, new_v = [], [], []
    for layer, (g_w, g_b), (m_w, m_b), (v_w, v_b) in zip(net.layers, grads, state.m, state.v):
        if g_w.shape != layer.weights.shape or g_b.shape != layer.bias.shape:
            raise ValueError("gradient shapes do not match parameter shapes")
        m_w = state.beta1 * m_w + (1.0 - state.beta1) * g_w
        m_b = state.beta1 * m_b + (1.0 - state.beta1) * g_b
        v_w = state.beta2 * v_w + (1.0 - state.beta2) * g_w**2
        v_b = state.beta2 * v_b + (1.0 - state.beta2) * g_b**2
        w = layer.weights - state.lr * (m_w / c1) / (np.sqrt(v_w / c2) + state.eps)
        b = layer.bias - state.lr * (m_b / c1) / (np.sqrt(v_b / c2) + state.eps)
        new_layers.append(Layer(weights=w, bias=b, activation=layer.activation))
        new_m.append((m_w, m_b))
        new_v.append((v_w, v_b))
    new_net = NetParams(layers=new_layers, init_seed=net.init_seed)
    new_state = AdamState(
        m=new_m, v=new_v, t=t, lr=state.lr, beta1=state.beta1, beta2=state.beta2, eps=state.eps
    )
    return new_net, new_state


def param_count(net: NetParams) -> int:
    return sum(l.weights.size + l.bias.size for l in net.layers)


# ---------------------------------------------------------------------------
# Serialization (exact round-trip)
# ---------------------------------------------------------------------------

def net_state(net: NetParams, prefix: str = "") -> dict:
    state = {
        f"{prefix}meta": np.array([NET_FORMAT_VERSION, len(net.layers), net.init_seed], dtype=np.int64),
        f"{prefix}activations": np.array([ACTIVATIONS.index(l.activation) for l in net.layers], dtype=np.int64),
    }
    for i, layer in enumerate(net.layers):
        state[f"{prefix}w{i}"] = layer.weights
        state[f"{prefix}b{i}"] = layer.bias
    return state


def net_from_state(state: dict, prefix: str = "") -> NetParams:
    meta = state[f"{prefix}meta"]
    if int(meta[0]) != NET_FORMAT_VERSION:
        raise ValueError(f"unsupported net format version {int(meta[0])}")
    acts = state[f"{prefix}activations"]
    layers = [
        Layer(
            weights=np.asarray(state[f"{prefix}w{i}"], dtype=float),
            bias=np.asarray(state[f"{prefix}b{i}"], dtype=float),
            activation=ACTIVATIONS[int(acts[i])],
        )
        for i in range(int(meta[1]))
    ]
    return NetParams(layers=layers, init_seed=int(meta[2]))


def save_net(net: NetParams, path) -> None:
    np.savez(Path(path), **net_state(net))


def load_net(path) -> NetParams:
    with np.load(Path(path)) as data:
        return net_from_state({k: data[k] for k in data.files})
