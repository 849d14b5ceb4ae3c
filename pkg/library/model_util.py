# variational quantum classifier: amplitude encoding -> strongly entangling layers -> <Z> -> softmax

import math
from typing import (
    Callable,
    NamedTuple,
    Optional,
    Tuple,
)

import numpy as np

from library import quantum_util
from library.mnist_util import stack_samples
from library.quantum_util import LayerTemplate


MEASURED_WIRES = (0, 1, 2)
NUM_CLASSES = len(MEASURED_WIRES)
LOG_CLAMP = 1e-12
SHIFT = math.pi / 2

GRAD_METHODS = ["adjoint", "shift"]


class Prediction(NamedTuple):
    expectations: np.ndarray
    probabilities: np.ndarray
    predicted_class: int


def init_params(template: LayerTemplate, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, 2.0 * math.pi, size=template.param_shape)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def _as_batch(pixels) -> np.ndarray:
    x = np.asarray(pixels, dtype=np.float64)
    return x[None] if x.ndim == 1 else x


def _batch_arrays(batch) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(batch, tuple) and len(batch) == 2 and isinstance(batch[0], np.ndarray):
        pixels, labels = batch
        return _as_batch(pixels), np.asarray(labels, dtype=np.int64).reshape(-1)
    return stack_samples(batch)


def forward_batch(params: np.ndarray, pixels: np.ndarray, template: Optional[LayerTemplate] = None) -> Tuple[np.ndarray, np.ndarray]:
    """returns (expectations, probabilities), both (B, NUM_CLASSES)"""
    x = _as_batch(pixels)
    state = quantum_util.amplitude_encode(x)
    state = quantum_util.apply_strongly_entangling(state, params, template)
    expectations = quantum_util.pauli_z_expectations(state, MEASURED_WIRES)
    return expectations, softmax(expectations)


def forward(params: np.ndarray, pixels: np.ndarray, template: Optional[LayerTemplate] = None) -> Prediction:
    expectations, probs = forward_batch(params, pixels, template)
    return Prediction(expectations[0], probs[0], int(np.argmax(probs[0])))


def per_sample_losses(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    picked = probs[np.arange(len(labels)), labels]
    return -np.log(np.maximum(picked, LOG_CLAMP))


def loss(params: np.ndarray, batch, template: Optional[LayerTemplate] = None) -> float:
    pixels, labels = _batch_arrays(batch)
    assert len(labels) > 0, "loss of an empty batch is undefined / 空のバッチの損失は定義されません"
    _, probs = forward_batch(params, pixels, template)
    return float(np.mean(per_sample_losses(probs, labels)))


def evaluate(params: np.ndarray, batch, template: Optional[LayerTemplate] = None) -> Tuple[float, float]:
    """(mean cross-entropy, accuracy)"""
    pixels, labels = _batch_arrays(batch)
    assert len(labels) > 0, "cannot evaluate an empty set"
    _, probs = forward_batch(params, pixels, template)
    predicted = np.argmax(probs, axis=-1)
    return float(np.mean(per_sample_losses(probs, labels))), float(np.mean(predicted == labels))


def accuracy(params: np.ndarray, batch, template: Optional[LayerTemplate] = None) -> float:
    return evaluate(params, batch, template)[1]


def dloss_dexpectations(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    # d(-log p_y)/dz = p - onehot(y); zero where the log clamp is active
    onehot = np.zeros_like(probs)
    onehot[np.arange(len(labels)), labels] = 1.0
    active = probs[np.arange(len(labels)), labels] > LOG_CLAMP
    return (probs - onehot) * active[:, None]


# region parameter gradients


def parameter_shift(fn: Callable[[np.ndarray], np.ndarray], params: np.ndarray, index: int, shift: float = SHIFT):
    """two-term shift rule for a Pauli-rotation angle: (f(t+s) - f(t-s)) / (2 sin s)"""
    plus = np.array(params, dtype=np.float64, copy=True)
    minus = np.array(params, dtype=np.float64, copy=True)
    plus.reshape(-1)[index] += shift
    minus.reshape(-1)[index] -= shift
    return (np.asarray(fn(plus)) - np.asarray(fn(minus))) / (2.0 * math.sin(shift))


def grad_params_shift(params: np.ndarray, batch, template: Optional[LayerTemplate] = None) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    pixels, labels = _batch_arrays(batch)
    assert len(labels) > 0, "gradient of an empty batch is undefined"

    _, probs = forward_batch(params, pixels, template)
    upstream = dloss_dexpectations(probs, labels)

    expectations_fn = lambda p: forward_batch(p, pixels, template)[0]
    grads = np.zeros(params.size, dtype=np.float64)
    for j in range(params.size):
        dz = parameter_shift(expectations_fn, params, j)
        grads[j] = np.sum(upstream * dz) / len(labels)
    return grads.reshape(params.shape)


class _AdjointResult(NamedTuple):
    losses: np.ndarray  # (B,)
    probs: np.ndarray  # (B, NUM_CLASSES)
    grad_params: Optional[np.ndarray]  # mean over batch, params shape
    grad_pixels: Optional[np.ndarray]  # per sample, (B, 64)


def _adjoint(
    params: np.ndarray,
    pixels: np.ndarray,
    labels: np.ndarray,
    template: Optional[LayerTemplate],
    want_params: bool,
    want_pixels: bool,
) -> _AdjointResult:
    params = np.asarray(params, dtype=np.float64)
    gates = quantum_util.strongly_entangling_gates(params, template)

    encoded = quantum_util.amplitude_encode(pixels)
    phi = quantum_util.apply_gates(encoded, [gate for gate, _ in gates])
    expectations = quantum_util.pauli_z_expectations(phi, MEASURED_WIRES)
    probs = softmax(expectations)
    losses = per_sample_losses(probs, labels)

    # lambda = H|phi> with H = sum_k dL/dz_k Z_k, one observable per sample
    upstream = dloss_dexpectations(probs, labels)
    lam = quantum_util.apply_z_observable(phi, MEASURED_WIRES, upstream)

    grads = np.zeros(params.size, dtype=np.float64) if want_params else None
    for gate, index in reversed(gates):
        if want_params and index is not None:
            # dL/dt = Im <lambda| G |phi> for U = exp(-i t G / 2)
            g_phi = quantum_util.apply_generator(phi, gate)
            grads[index] = np.sum(np.imag(np.sum(np.conj(lam) * g_phi, axis=-1))) / len(labels)
        inverse = quantum_util.inverse_gate(gate)
        phi = quantum_util.apply_gate(phi, inverse)
        lam = quantum_util.apply_gate(lam, inverse)

    grad_pixels = None
    if want_pixels:
        grad_pixels = _through_normalization(pixels, 2.0 * np.real(lam))

    return _AdjointResult(losses, probs, grads.reshape(params.shape) if want_params else None, grad_pixels)


def _through_normalization(pixels: np.ndarray, grad_unit: np.ndarray) -> np.ndarray:
    # u = x / |x|  =>  dL/dx = (g - (g.u) u) / |x|
    norms = np.linalg.norm(pixels, axis=-1, keepdims=True)
    zero = norms[:, 0] == 0.0
    safe = np.where(norms == 0.0, 1.0, norms)
    unit = pixels / safe
    grad = (grad_unit - np.sum(grad_unit * unit, axis=-1, keepdims=True) * unit) / safe
    # the uniform-state fallback has no pixel dependence
    grad[zero] = 0.0
    return grad


def grad_params_adjoint(params: np.ndarray, batch, template: Optional[LayerTemplate] = None) -> np.ndarray:
    pixels, labels = _batch_arrays(batch)
    assert len(labels) > 0, "gradient of an empty batch is undefined"
    return _adjoint(params, pixels, labels, template, want_params=True, want_pixels=False).grad_params


def grad_params(params: np.ndarray, batch, method: str = "adjoint", template: Optional[LayerTemplate] = None) -> np.ndarray:
    if method == "adjoint":
        return grad_params_adjoint(params, batch, template)
    if method == "shift":
        return grad_params_shift(params, batch, template)
    raise ValueError(f"unknown gradient method: {method} (choose from {GRAD_METHODS})")


def loss_and_grad_params(params: np.ndarray, batch, template: Optional[LayerTemplate] = None) -> Tuple[float, np.ndarray]:
    pixels, labels = _batch_arrays(batch)
    assert len(labels) > 0, "gradient of an empty batch is undefined"
    result = _adjoint(params, pixels, labels, template, want_params=True, want_pixels=False)
    return float(np.mean(result.losses)), result.grad_params


# endregion

# region input gradients


def loss_and_grad_input_batch(
    params: np.ndarray, pixels: np.ndarray, labels: np.ndarray, template: Optional[LayerTemplate] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """per-sample losses (B,) and d loss_b / d pixels_b (B, 64)"""
    x = _as_batch(pixels)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    result = _adjoint(params, x, y, template, want_params=False, want_pixels=True)
    return result.losses, result.grad_pixels


def grad_input(params: np.ndarray, pixels: np.ndarray, label: int, template: Optional[LayerTemplate] = None) -> np.ndarray:
    if quantum_util.is_zero_input(pixels):
        print("warning: input gradient of an all-zero image is defined as zero / 全画素0の入力の勾配は0とします")
    _, grads = loss_and_grad_input_batch(params, pixels, [label], template)
    return grads[0]


# endregion
