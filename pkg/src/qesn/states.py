"""Qubit-register states, gates and the basic quantities read off them.

Qubit 0 is the leftmost tensor factor, i.e. the most significant bit of a
computational-basis index: on two qubits ``|10>`` is basis index 2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from . import _kernels

STATE_TOL = 1e-10
POSITIVITY_TOL = 1e-9

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = (X, Y, Z)
CNOT_MATRIX = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)


class DimensionError(ValueError):
    """Operands act on registers of incompatible size."""


def _num_qubits_for(dim: int) -> int:
    n = int(dim).bit_length() - 1
    if n < 1 or (1 << n) != dim:
        raise DimensionError(f"dimension {dim} is not a power of two >= 2")
    return n


@dataclass(frozen=True)
class StateVector:
    """Pure state of an N-qubit register."""

    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        _num_qubits_for(amps.shape[0])
        norm_sq = float(np.vdot(amps, amps).real)
        if abs(norm_sq - 1.0) > STATE_TOL:
            raise ValueError(f"state vector is not normalised (|psi|^2 = {norm_sq})")
        object.__setattr__(self, "amplitudes", amps)

    @property
    def num_qubits(self) -> int:
        return _num_qubits_for(self.amplitudes.shape[0])

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[0]

    @classmethod
    def zeros(cls, num_qubits: int) -> "StateVector":
        amps = np.zeros(1 << num_qubits, dtype=complex)
        amps[0] = 1.0
        return cls(amps)

    @classmethod
    def from_label(cls, label: str) -> "StateVector":
        """Product state from a string over ``0 1 + -``, qubit 0 first."""
        single = {
            "0": np.array([1, 0], dtype=complex),
            "1": np.array([0, 1], dtype=complex),
            "+": np.array([1, 1], dtype=complex) / np.sqrt(2),
            "-": np.array([1, -1], dtype=complex) / np.sqrt(2),
        }
        amps = np.ones(1, dtype=complex)
        for ch in label:
            amps = np.kron(amps, single[ch])
        return cls(amps)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def to_density(self) -> "DensityMatrix":
        return DensityMatrix(np.outer(self.amplitudes, self.amplitudes.conj()))

    def is_valid(self, tol: float = STATE_TOL) -> bool:
        return abs(self.norm() ** 2 - 1.0) < tol


@dataclass(frozen=True)
class DensityMatrix:
    """Mixed state of an N-qubit register as a dense ``2^N x 2^N`` matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"density matrix must be square, got {m.shape}")
        _num_qubits_for(m.shape[0])
        # positivity needs an eigendecomposition; it is left to is_valid()
        if np.max(np.abs(m - m.conj().T)) > STATE_TOL:
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(m).real - 1.0) > STATE_TOL:
            raise ValueError(f"density matrix trace is {np.trace(m).real}, not 1")
        object.__setattr__(self, "matrix", m)

    @property
    def num_qubits(self) -> int:
        return _num_qubits_for(self.matrix.shape[0])

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def zeros(cls, num_qubits: int) -> "DensityMatrix":
        m = np.zeros((1 << num_qubits, 1 << num_qubits), dtype=complex)
        m[0, 0] = 1.0
        return cls(m)

    @classmethod
    def maximally_mixed(cls, num_qubits: int) -> "DensityMatrix":
        d = 1 << num_qubits
        return cls(np.eye(d, dtype=complex) / d)

    @classmethod
    def from_bloch(cls, r: Sequence[float]) -> "DensityMatrix":
        rx, ry, rz = r
        return cls(0.5 * (I2 + rx * X + ry * Y + rz * Z))

    def bloch_vector(self) -> np.ndarray:
        if self.num_qubits != 1:
            raise DimensionError("Bloch vector is defined for one qubit only")
        return np.array([np.trace(p @ self.matrix).real for p in PAULIS])

    def purity(self) -> float:
        return float(np.real(np.trace(self.matrix @ self.matrix)))

    def trace(self) -> float:
        return float(np.real(np.trace(self.matrix)))

    def is_valid(self, tol: float = STATE_TOL, pos_tol: float = POSITIVITY_TOL) -> bool:
        m = self.matrix
        if np.max(np.abs(m - m.conj().T)) > tol:
            return False
        if abs(np.trace(m) - 1.0) > tol:
            return False
        return bool(np.linalg.eigvalsh(0.5 * (m + m.conj().T)).min() >= -pos_tol)


State = Union[StateVector, DensityMatrix]


@dataclass(frozen=True)
class UnitaryGate:
    """A one- or two-qubit unitary bound to target qubits."""

    matrix: np.ndarray
    targets: tuple[int, ...]
    name: str = ""

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        targets = tuple(int(t) for t in self.targets)
        k = len(targets)
        if k not in (1, 2):
            raise ValueError("gates act on one or two qubits")
        if m.shape != (1 << k, 1 << k):
            raise DimensionError(f"matrix shape {m.shape} does not match {k} targets")
        if len(set(targets)) != k:
            raise ValueError(f"duplicate target qubits {targets}")
        if min(targets) < 0:
            raise ValueError(f"negative target qubit in {targets}")
        if not np.allclose(m.conj().T @ m, np.eye(m.shape[0]), rtol=0, atol=STATE_TOL):
            raise ValueError(f"gate matrix {self.name!r} is not unitary")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "targets", targets)

    def is_unitary(self, tol: float = STATE_TOL) -> bool:
        m = self.matrix
        return bool(np.allclose(m.conj().T @ m, np.eye(m.shape[0]), atol=tol))


def rx_matrix(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)


def rz_matrix(theta: float) -> np.ndarray:
    return np.array([[np.exp(-0.5j * theta), 0], [0, np.exp(0.5j * theta)]], dtype=complex)


def rx(theta: float, qubit: int) -> UnitaryGate:
    return UnitaryGate(rx_matrix(theta), (qubit,), "rx")


def rz(theta: float, qubit: int) -> UnitaryGate:
    return UnitaryGate(rz_matrix(theta), (qubit,), "rz")


def cnot(control: int, target: int) -> UnitaryGate:
    return UnitaryGate(CNOT_MATRIX, (control, target), "cnot")


def _check_targets(targets: Iterable[int], num_qubits: int) -> None:
    for t in targets:
        if not 0 <= t < num_qubits:
            raise ValueError(f"target qubit {t} out of range for {num_qubits} qubits")


def tensor_embed(gate: UnitaryGate, num_qubits: int) -> np.ndarray:
    """Full-register matrix of ``gate``, identity on all other qubits."""
    _check_targets(gate.targets, num_qubits)
    dim = 1 << num_qubits
    out = np.eye(dim, dtype=complex)
    # apply the gate to each column of the identity
    return _apply_to_axes(out.reshape((2,) * num_qubits + (dim,)), gate, num_qubits).reshape(dim, dim)


def _apply_to_axes(tensor: np.ndarray, gate: UnitaryGate, num_qubits: int) -> np.ndarray:
    k = len(gate.targets)
    g = gate.matrix.reshape((2,) * (2 * k))
    moved = np.tensordot(g, tensor, axes=(list(range(k, 2 * k)), list(gate.targets)))
    return np.moveaxis(moved, list(range(k)), list(gate.targets))


def apply_gate_sv(psi: StateVector, gate: UnitaryGate) -> StateVector:
    n = psi.num_qubits
    _check_targets(gate.targets, n)
    t = psi.amplitudes.reshape((2,) * n)
    return StateVector(_apply_to_axes(t, gate, n).reshape(-1))


def apply_gate_dm(rho: DensityMatrix, gate: UnitaryGate) -> DensityMatrix:
    """``U rho U^dagger`` with ``U`` embedded at the gate's targets."""
    n = rho.num_qubits
    _check_targets(gate.targets, n)
    dim = rho.dim
    if len(gate.targets) == 1:
        u = gate.matrix
        superop = np.kron(u, u.conj())
        return DensityMatrix(_kernels.superop_1q(rho.matrix, superop, gate.targets[0], n))
    # rows: U acting on the ket index; columns: conj(U) on the bra index
    t = rho.matrix.reshape((2,) * n + (dim,))
    left = _apply_to_axes(t, gate, n).reshape(dim, dim)
    conj_gate = UnitaryGate(gate.matrix.conj(), gate.targets)
    t = left.T.reshape((2,) * n + (dim,))
    both = _apply_to_axes(t, conj_gate, n).reshape(dim, dim).T
    return DensityMatrix(both)


def trace_distance(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """Half the trace norm of ``rho - sigma``, from Hermitian eigenvalues."""
    if rho.dim != sigma.dim:
        raise DimensionError(f"dimensions differ: {rho.dim} vs {sigma.dim}")
    return trace_distance_matrix(rho.matrix, sigma.matrix)


def trace_distance_matrix(a: np.ndarray, b: np.ndarray) -> float:
    diff = a - b
    diff = 0.5 * (diff + diff.conj().T)
    return float(0.5 * np.abs(np.linalg.eigvalsh(diff)).sum())


def _z_signs(num_qubits: int, qubit: int) -> np.ndarray:
    idx = np.arange(1 << num_qubits)
    bit = (idx >> (num_qubits - 1 - qubit)) & 1
    return 1.0 - 2.0 * bit


def pauli_z_expectation(state: State, qubit: int) -> float:
    n = state.num_qubits
    if not 0 <= qubit < n:
        raise ValueError(f"qubit {qubit} out of range for {n} qubits")
    if isinstance(state, StateVector):
        probs = np.abs(state.amplitudes) ** 2
    else:
        probs = np.real(np.diag(state.matrix))
    return float(np.dot(_z_signs(n, qubit), probs))


def z_expectations(probs: np.ndarray, num_qubits: int, qubits: Sequence[int]) -> np.ndarray:
    """``<Z_i>`` for several qubits from a vector of basis probabilities."""
    return np.array([np.dot(_z_signs(num_qubits, q), probs) for q in qubits])


def partial_trace(rho: DensityMatrix, keep: Iterable[int]) -> DensityMatrix:
    """Reduced state on ``keep``; kept qubits retain their relative order."""
    keep = sorted(set(int(k) for k in keep))
    n = rho.num_qubits
    if not keep:
        raise ValueError("keep set must be non-empty")
    _check_targets(keep, n)
    drop = [q for q in range(n) if q not in keep]
    t = rho.matrix.reshape((2,) * (2 * n))
    letters = "abcdefghijklmnopqrstuvwxyz"
    row = list(letters[:n])
    col = list(letters[n : 2 * n])
    for q in drop:
        col[q] = row[q]
    out = "".join(row[q] for q in keep) + "".join(col[q] for q in keep)
    reduced = np.einsum("".join(row) + "".join(col) + "->" + out, t)
    d = 1 << len(keep)
    return DensityMatrix(reduced.reshape(d, d))


def random_density_matrix(num_qubits: int, rng: np.random.Generator, rank: int | None = None) -> DensityMatrix:
    """Hilbert-Schmidt (Ginibre) random state; ``rank=1`` gives Haar pure states."""
    d = 1 << num_qubits
    k = d if rank is None else rank
    g = rng.normal(size=(d, k)) + 1j * rng.normal(size=(d, k))
    m = g @ g.conj().T
    return DensityMatrix(m / np.trace(m).real)


def random_state_vector(num_qubits: int, rng: np.random.Generator) -> StateVector:
    d = 1 << num_qubits
    v = rng.normal(size=d) + 1j * rng.normal(size=d)
    return StateVector(v / np.linalg.norm(v))


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary via QR with phase correction."""
    g = (rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(g)
    return q * (np.diag(r) / np.abs(np.diag(r)))
