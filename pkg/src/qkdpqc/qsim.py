"""Exact statevector simulation for one or two qubits.

Basis ordering for two qubits is ``|q_i q_j>`` with ``q_i`` as the high-order
bit, so index 0..3 maps to ``|00>, |01>, |10>, |11>``.  ``tensor(a, b)`` puts
``a`` on ``q_i`` and ``b`` on ``q_j``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

ALGEBRA_TOL = 1e-12
NORM_TOL = 1e-9

_INV_SQRT2 = 1 / math.sqrt(2)


class RandomSource(Protocol):
    """Anything with ``random()`` in [0, 1); ``random.Random`` qualifies."""

    def random(self) -> float: ...


class DimensionError(ValueError):
    pass


class NormalizationError(ValueError):
    pass


def _frozen(values, dim_shape) -> np.ndarray:
    arr = np.array(values, dtype=np.complex128)
    if arr.shape != dim_shape:
        raise DimensionError(f"expected shape {dim_shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("amplitudes must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class StateVector:
    amplitudes: np.ndarray

    def __init__(self, amplitudes) -> None:
        n = len(amplitudes)
        if n not in (2, 4):
            raise DimensionError(f"state dimension must be 2 or 4, got {n}")
        object.__setattr__(self, "amplitudes", _frozen(amplitudes, (n,)))

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[0]

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amplitudes) ** 2)))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def isclose(self, other: StateVector, tol: float = ALGEBRA_TOL) -> bool:
        return self.dim == other.dim and bool(
            np.max(np.abs(self.amplitudes - other.amplitudes)) <= tol
        )

    def __repr__(self) -> str:
        return f"StateVector({self.amplitudes.tolist()})"


@dataclass(frozen=True, eq=False)
class GateMatrix:
    entries: np.ndarray

    def __init__(self, entries) -> None:
        arr = np.asarray(entries, dtype=np.complex128)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] not in (2, 4):
            raise DimensionError(f"gate must be 2x2 or 4x4, got {arr.shape}")
        object.__setattr__(self, "entries", _frozen(arr, arr.shape))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def is_unitary(self, tol: float = ALGEBRA_TOL) -> bool:
        product = self.entries @ self.entries.conj().T
        return bool(np.max(np.abs(product - np.eye(self.dim))) <= tol)

    def dagger(self) -> GateMatrix:
        return GateMatrix(self.entries.conj().T)

    def isclose(self, other: GateMatrix, tol: float = ALGEBRA_TOL) -> bool:
        return self.dim == other.dim and bool(
            np.max(np.abs(self.entries - other.entries)) <= tol
        )

    def __matmul__(self, other: GateMatrix) -> GateMatrix:
        return compose(self, other)

    def __repr__(self) -> str:
        return f"GateMatrix({self.entries.tolist()})"


@dataclass(frozen=True)
class MeasurementOutcome:
    bits: str
    collapsed: StateVector


_I = GateMatrix([[1, 0], [0, 1]])
_H = GateMatrix(np.array([[1, 1], [1, -1]]) * _INV_SQRT2)
_S = GateMatrix([[1, 0], [0, 1j]])
_X = GateMatrix([[0, 1], [1, 0]])
# control on q_j (low bit), target q_i (high bit)
_CNOT_JI = GateMatrix(
    [[1, 0, 0, 0],
     [0, 0, 0, 1],
     [0, 0, 1, 0],
     [0, 1, 0, 0]]
)


def gate_identity() -> GateMatrix:
    return _I


def gate_h() -> GateMatrix:
    return _H


def gate_s() -> GateMatrix:
    return _S


def gate_x() -> GateMatrix:
    return _X


def gate_hs() -> GateMatrix:
    """S first, then H: ``(1/sqrt2) [[1, i], [1, -i]]``."""
    return _HS


def gate_cnot() -> GateMatrix:
    """CNOT with ``q_j`` as control and ``q_i`` as target."""
    return _CNOT_JI


def compose(a: GateMatrix, b: GateMatrix) -> GateMatrix:
    """Matrix product ``a @ b`` (``b`` acts first)."""
    if a.dim != b.dim:
        raise DimensionError(f"cannot compose {a.dim}x{a.dim} with {b.dim}x{b.dim}")
    return GateMatrix(a.entries @ b.entries)


_HS = compose(_H, _S)


def tensor(a: GateMatrix, b: GateMatrix) -> GateMatrix:
    if a.dim != 2 or b.dim != 2:
        raise DimensionError("tensor expects two single-qubit gates")
    return GateMatrix(np.kron(a.entries, b.entries))


def ket(bits: str) -> StateVector:
    """Computational basis state, e.g. ``ket("0")`` or ``ket("10")``."""
    if len(bits) not in (1, 2) or set(bits) - {"0", "1"}:
        raise ValueError(f"bad basis label {bits!r}")
    amps = np.zeros(2 ** len(bits), dtype=np.complex128)
    amps[int(bits, 2)] = 1
    return StateVector(amps)


def apply(gate: GateMatrix, state: StateVector) -> StateVector:
    if gate.dim != state.dim:
        raise DimensionError(f"gate dim {gate.dim} != state dim {state.dim}")
    return StateVector(gate.entries @ state.amplitudes)


def make_bell_pair() -> StateVector:
    """CNOT(q_j -> q_i) applied to ``|0> (x) H|0>``."""
    return apply(_CNOT_JI, apply(tensor(_I, _H), ket("00")))


def _check_normalized(state: StateVector) -> None:
    if abs(state.norm() - 1.0) > NORM_TOL:
        raise NormalizationError(f"state norm {state.norm()!r} deviates from 1")


def _sample(probs: np.ndarray, rng: RandomSource) -> int:
    u = rng.random()
    acc = 0.0
    last = 0
    for idx, p in enumerate(probs):
        if p <= 0:
            continue
        last = idx
        acc += p
        if u < acc:
            return idx
    # u landed in the rounding slack above the final cumulative sum
    return last


def measure(state: StateVector, rng: RandomSource) -> MeasurementOutcome:
    """Born-rule measurement of every qubit in the computational basis."""
    _check_normalized(state)
    idx = _sample(state.probabilities(), rng)
    width = 1 if state.dim == 2 else 2
    bits = format(idx, f"0{width}b")
    return MeasurementOutcome(bits, ket(bits))


_ONES_MASK = {
    0: np.array([False, False, True, True]),
    1: np.array([False, True, False, True]),
}


def measure_qubit(state: StateVector, qubit: int, rng: RandomSource) -> tuple[int, StateVector]:
    """Measure one qubit of a two-qubit state.

    ``qubit`` 0 is ``q_i`` (high-order), 1 is ``q_j``.  Returns the bit and the
    renormalized post-measurement two-qubit state.
    """
    if state.dim != 4:
        raise DimensionError("measure_qubit needs a two-qubit state")
    if qubit not in (0, 1):
        raise ValueError("qubit must be 0 (q_i) or 1 (q_j)")
    _check_normalized(state)
    ones = _ONES_MASK[qubit]
    probs = state.probabilities()
    p1 = float(probs[ones].sum())
    bit = 1 if rng.random() < p1 else 0
    p_bit = p1 if bit else 1.0 - p1
    keep = ones if bit else ~ones
    amps = np.where(keep, state.amplitudes, 0) / math.sqrt(p_bit)
    return bit, StateVector(amps)


def remaining_qubit(state: StateVector, measured_qubit: int, bit: int) -> StateVector:
    """Single-qubit state of the unmeasured partner after ``measure_qubit``."""
    if state.dim != 4:
        raise DimensionError("remaining_qubit needs a two-qubit state")
    if measured_qubit == 1:
        amps = state.amplitudes[[bit, 2 + bit]]
    else:
        amps = state.amplitudes[[2 * bit, 2 * bit + 1]]
    return StateVector(amps)
