# dense statevector simulation for small circuits
#
# conventions:
#   qubit 0 is the most significant bit of the basis index (|q0 q1 ... q_{n-1}>)
#   RY(t) = exp(-i t Y / 2), RZ(t) = exp(-i t Z / 2)
#   a state is an array of shape (2**n,) or a batch of shape (B, 2**n)

import math
from dataclasses import dataclass
from typing import (
    List,
    NamedTuple,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np


RY = "RY"
RZ = "RZ"
CNOT = "CNOT"
GATE_KINDS = (RY, RZ, CNOT)

NORM_TOLERANCE = 1e-10

_PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
_PAULI_Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)
_CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=np.complex128)


class GateSpec(NamedTuple):
    kind: str
    wires: Tuple[int, ...]  # (target,) for rotations, (control, target) for CNOT
    angle: float = 0.0

    @staticmethod
    def ry(angle: float, wire: int) -> "GateSpec":
        return GateSpec(RY, (wire,), float(angle))

    @staticmethod
    def rz(angle: float, wire: int) -> "GateSpec":
        return GateSpec(RZ, (wire,), float(angle))

    @staticmethod
    def cnot(control: int, target: int) -> "GateSpec":
        return GateSpec(CNOT, (control, target))

    @property
    def is_rotation(self) -> bool:
        return self.kind in (RY, RZ)


@dataclass(frozen=True)
class LayerTemplate:
    num_layers: int = 2
    num_wires: int = 6
    ranges: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        assert self.num_layers >= 1 and self.num_wires >= 1, "template needs at least one layer and one wire"
        if self.ranges is None:
            object.__setattr__(self, "ranges", default_ranges(self.num_layers, self.num_wires))
        else:
            object.__setattr__(self, "ranges", tuple(int(r) for r in self.ranges))
        assert len(self.ranges) == self.num_layers, f"need one CNOT range per layer, got {self.ranges}"
        if self.num_wires > 1:
            for r in self.ranges:
                assert 1 <= r <= self.num_wires - 1, f"CNOT range {r} must be in [1, {self.num_wires - 1}]"

    @property
    def param_shape(self) -> Tuple[int, int, int]:
        return (self.num_layers, self.num_wires, 3)

    @property
    def num_params(self) -> int:
        return self.num_layers * self.num_wires * 3

    @staticmethod
    def from_params(params: np.ndarray) -> "LayerTemplate":
        assert params.ndim == 3 and params.shape[2] == 3, f"params must be (layers, wires, 3), got {params.shape}"
        return LayerTemplate(params.shape[0], params.shape[1])


def default_ranges(num_layers: int, num_wires: int) -> Tuple[int, ...]:
    if num_wires == 1:
        return tuple(0 for _ in range(num_layers))
    return tuple((l % (num_wires - 1)) + 1 for l in range(num_layers))


def num_qubits(state: np.ndarray) -> int:
    dim = state.shape[-1]
    n = int(round(math.log2(dim))) if dim > 0 else -1
    assert n >= 0 and 2**n == dim, f"state dimension {dim} is not a power of two"
    return n


def zero_state(n: int) -> np.ndarray:
    state = np.zeros(2**n, dtype=np.complex128)
    state[0] = 1.0
    return state


def basis_state(bits: str) -> np.ndarray:
    # basis_state("10") == |10>, qubit 0 first
    state = np.zeros(2 ** len(bits), dtype=np.complex128)
    state[int(bits, 2)] = 1.0
    return state


def amplitude_encode(pixels: np.ndarray) -> np.ndarray:
    """
    Embeds real vectors as normalized real amplitudes. Accepts (2**n,) or (B, 2**n).
    All-zero rows have no direction, so they become the uniform superposition and a warning is printed.
    """
    x = np.asarray(pixels, dtype=np.float64)
    n = num_qubits(x)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    zero = norms[..., 0] == 0.0

    with np.errstate(invalid="ignore", divide="ignore"):
        amplitudes = x / norms
    if np.any(zero):
        print(f"warning: {int(np.sum(zero))} all-zero input(s) encoded as the uniform state / 全画素0の入力を一様状態として扱います")
        amplitudes[zero] = 1.0 / math.sqrt(2**n)

    # exact renormalization removes the last-bit drift of the division
    amplitudes = amplitudes / np.linalg.norm(amplitudes, axis=-1, keepdims=True)
    return amplitudes.astype(np.complex128)


def is_zero_input(pixels: np.ndarray) -> np.ndarray:
    return ~np.any(np.asarray(pixels) != 0.0, axis=-1)


# region gate application


def _as_tensor(state: np.ndarray, n: int) -> np.ndarray:
    return state.reshape((-1,) + (2,) * n)


def _check_wires(gate: GateSpec, n: int):
    assert gate.kind in GATE_KINDS, f"unknown gate kind: {gate.kind}"
    expected = 2 if gate.kind == CNOT else 1
    assert len(gate.wires) == expected, f"{gate.kind} takes {expected} wire(s), got {gate.wires}"
    assert len(set(gate.wires)) == len(gate.wires), f"wires must be distinct: {gate.wires}"
    for w in gate.wires:
        assert 0 <= w < n, f"wire {w} out of range for {n} qubits"


def rotation_matrix(kind: str, angle: float) -> np.ndarray:
    c, s = math.cos(angle / 2), math.sin(angle / 2)
    if kind == RY:
        return np.array([[c, -s], [s, c]], dtype=np.complex128)
    if kind == RZ:
        return np.array([[c - 1j * s, 0], [0, c + 1j * s]], dtype=np.complex128)
    raise ValueError(f"not a rotation gate: {kind}")


def _apply_1q(tensor: np.ndarray, matrix: np.ndarray, wire: int) -> np.ndarray:
    axis = wire + 1  # axis 0 is the batch
    out = np.tensordot(matrix, tensor, axes=([1], [axis]))
    return np.moveaxis(out, 0, axis)


def _apply_cnot(tensor: np.ndarray, control: int, target: int) -> np.ndarray:
    out = tensor.copy()
    index = [slice(None)] * tensor.ndim
    index[control + 1] = 1
    index = tuple(index)
    # the control axis disappears from the slice
    target_axis = target + 1 if target < control else target
    out[index] = np.flip(tensor[index], axis=target_axis)
    return out


def _apply_tensor(tensor: np.ndarray, gate: GateSpec) -> np.ndarray:
    if gate.kind == CNOT:
        return _apply_cnot(tensor, gate.wires[0], gate.wires[1])
    return _apply_1q(tensor, rotation_matrix(gate.kind, gate.angle), gate.wires[0])


def apply_gate(state: np.ndarray, gate: GateSpec) -> np.ndarray:
    n = num_qubits(state)
    _check_wires(gate, n)
    return _apply_tensor(_as_tensor(state, n), gate).reshape(state.shape)


def apply_gates(state: np.ndarray, gates: Sequence[GateSpec]) -> np.ndarray:
    n = num_qubits(state)
    tensor = _as_tensor(state, n)
    for gate in gates:
        _check_wires(gate, n)
        tensor = _apply_tensor(tensor, gate)
    return tensor.reshape(state.shape)


def inverse_gate(gate: GateSpec) -> GateSpec:
    if gate.kind == CNOT:
        return gate
    return GateSpec(gate.kind, gate.wires, -gate.angle)


def apply_generator(state: np.ndarray, gate: GateSpec) -> np.ndarray:
    """G|psi> for the Pauli generator of a rotation gate (Y for RY, Z for RZ)."""
    assert gate.is_rotation, f"{gate.kind} has no rotation generator"
    n = num_qubits(state)
    _check_wires(gate, n)
    pauli = _PAULI_Y if gate.kind == RY else _PAULI_Z
    return _apply_1q(_as_tensor(state, n), pauli, gate.wires[0]).reshape(state.shape)


def gate_matrix(gate: GateSpec, n: int) -> np.ndarray:
    """Dense 2**n x 2**n unitary built from Kronecker products."""
    _check_wires(gate, n)
    eye = np.eye(2, dtype=np.complex128)

    def kron_all(ops):
        out = np.ones((1, 1), dtype=np.complex128)
        for op in ops:
            out = np.kron(out, op)
        return out

    if gate.is_rotation:
        ops = [eye] * n
        ops[gate.wires[0]] = rotation_matrix(gate.kind, gate.angle)
        return kron_all(ops)

    control, target = gate.wires
    p0 = np.array([[1, 0], [0, 0]], dtype=np.complex128)
    p1 = np.array([[0, 0], [0, 1]], dtype=np.complex128)
    x = np.array([[0, 1], [1, 0]], dtype=np.complex128)
    keep = [eye] * n
    keep[control] = p0
    flip = [eye] * n
    flip[control] = p1
    flip[target] = x
    return kron_all(keep) + kron_all(flip)


# endregion

# region templates and measurement


def strongly_entangling_gates(params: np.ndarray, template: Optional[LayerTemplate] = None) -> List[Tuple[GateSpec, Optional[int]]]:
    """
    Gate sequence of the strongly entangling template, paired with the flat index of
    the parameter each rotation reads (None for CNOT). Rot(a, b, c) = RZ(a) RY(b) RZ(c)
    as an operator, so RZ(c) acts first.
    """
    params = np.asarray(params, dtype=np.float64)
    if template is None:
        template = LayerTemplate.from_params(params)
    assert params.shape == template.param_shape, f"params shape {params.shape} does not match template {template.param_shape}"

    n = template.num_wires
    gates = []
    for l in range(template.num_layers):
        for w in range(n):
            a, b, c = params[l, w]
            base = (l * n + w) * 3
            gates.append((GateSpec.rz(c, w), base + 2))
            gates.append((GateSpec.ry(b, w), base + 1))
            gates.append((GateSpec.rz(a, w), base))
        if n > 1:
            r = template.ranges[l]
            for w in range(n):
                gates.append((GateSpec.cnot(w, (w + r) % n), None))
    return gates


def apply_strongly_entangling(state: np.ndarray, params: np.ndarray, template: Optional[LayerTemplate] = None) -> np.ndarray:
    if template is None:
        template = LayerTemplate.from_params(np.asarray(params))
    assert num_qubits(state) == template.num_wires, f"state has {num_qubits(state)} qubits, template has {template.num_wires} wires"
    return apply_gates(state, [gate for gate, _ in strongly_entangling_gates(params, template)])


def probabilities(state: np.ndarray) -> np.ndarray:
    return np.abs(state) ** 2


def pauli_z_expectations(state: np.ndarray, wires: Sequence[int]) -> np.ndarray:
    """exact <Z_w> per wire; returns (len(wires),) or (B, len(wires)) for a batch"""
    n = num_qubits(state)
    assert len(set(wires)) == len(wires), f"wires must be distinct: {wires}"
    probs = _as_tensor(probabilities(state), n)
    values = []
    for w in wires:
        assert 0 <= w < n, f"wire {w} out of range for {n} qubits"
        marginal = probs.sum(axis=tuple(a for a in range(1, n + 1) if a != w + 1))
        values.append(marginal[:, 0] - marginal[:, 1])
    out = np.clip(np.stack(values, axis=-1), -1.0, 1.0)
    return out.reshape(state.shape[:-1] + (len(wires),))


def apply_z_observable(state: np.ndarray, wires: Sequence[int], weights: np.ndarray) -> np.ndarray:
    """H|psi> with H = sum_k weights[..., k] Z_{wires[k]}; weights may differ per batch row"""
    n = num_qubits(state)
    tensor = _as_tensor(state, n)
    weights = np.asarray(weights, dtype=np.float64).reshape(tensor.shape[0], len(wires))
    out = np.zeros_like(tensor)
    for k, w in enumerate(wires):
        sign = np.ones((2,), dtype=np.float64)
        sign[1] = -1.0
        shape = [1] * tensor.ndim
        shape[w + 1] = 2
        coeff = weights[:, k].reshape((-1,) + (1,) * n)
        out += coeff * sign.reshape(shape) * tensor
    return out.reshape(state.shape)


def norm_squared(state: np.ndarray) -> np.ndarray:
    return np.sum(probabilities(state), axis=-1)


# endregion
