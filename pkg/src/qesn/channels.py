"""Single-qubit Kraus channels and the diagnostics used to tell them apart.

Parametrisations:

* ``amplitude_damping(gamma)``: ``K0 = diag(1, sqrt(1-gamma))``,
  ``K1 = sqrt(gamma) |0><1|``.
* ``phase_damping(gamma)``: ``sqrt(1-gamma) I``, ``sqrt(gamma)|0><0|``,
  ``sqrt(gamma)|1><1|``; coherences shrink by ``1 - gamma``.
  ``phase_damping(lam=...)`` uses ``diag(1, sqrt(1-lam))``,
  ``diag(0, sqrt(lam))`` instead; coherences shrink by ``sqrt(1 - lam)``.
* ``depolarizing(p)``: ``rho -> (1-p) rho + p I/2``, i.e. ``K0 =
  sqrt(1-3p/4) I`` and ``K_i = sqrt(p/4) sigma_i``.
* ``bit_flip``/``phase_flip``/``bit_phase_flip(gamma)``: ``sqrt(1-gamma) I``
  and ``sqrt(gamma)`` times X, Z or Y.
* ``thermal_relaxation(p_z, p_r0, p_r1)``: identity, a Z flip, and reset to
  ``|0>`` or ``|1>`` with the given probabilities.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from scipy import optimize

from . import _kernels
from .states import (
    I2,
    X,
    Y,
    Z,
    DensityMatrix,
    DimensionError,
    StateVector,
    UnitaryGate,
    random_density_matrix,
    trace_distance_matrix,
)

COMPLETENESS_TOL = 1e-10
# products of Kraus sets accumulate rounding, so construction accepts a bit more
COMPOSED_COMPLETENESS_TOL = 1e-9
MERGE_RADIUS = 0.05
_ZERO_OP_TOL = 1e-12

KINDS = (
    "identity",
    "amplitude_damping",
    "phase_damping",
    "depolarizing",
    "bit_flip",
    "phase_flip",
    "bit_phase_flip",
    "thermal_relaxation",
)


class ChannelError(ValueError):
    """Invalid channel parameters or a non-CPTP Kraus set."""


@dataclass(frozen=True)
class KrausChannel:
    """A CPTP single-qubit map given by its Kraus operators."""

    kraus_ops: tuple[np.ndarray, ...]
    label: str = "custom"
    gamma: float = 0.0
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        ops = tuple(np.asarray(k, dtype=complex) for k in self.kraus_ops)
        if not ops:
            raise ChannelError("a channel needs at least one Kraus operator")
        for k in ops:
            if k.shape != (2, 2):
                raise DimensionError(f"Kraus operators must be 2x2, got {k.shape}")
        object.__setattr__(self, "kraus_ops", ops)
        err = self.completeness_error()
        if err > COMPOSED_COMPLETENESS_TOL:
            raise ChannelError(f"Kraus operators are not trace preserving (error {err:.2e})")

    def completeness_error(self) -> float:
        s = sum(k.conj().T @ k for k in self.kraus_ops)
        return float(np.max(np.abs(s - I2)))

    def superoperator(self) -> np.ndarray:
        """4x4 matrix acting on the row-major vectorisation of a 2x2 operator."""
        return sum(np.kron(k, k.conj()) for k in self.kraus_ops)

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        return sum(k @ rho @ k.conj().T for k in self.kraus_ops)

    @property
    def is_identity(self) -> bool:
        return bool(np.allclose(self.superoperator(), np.eye(4), atol=1e-15, rtol=0))

    def to_spec(self) -> dict:
        spec = {"kind": self.label}
        spec.update(self.params)
        return spec


def _check_prob(name: str, value: float) -> float:
    value = float(value)
    if not (0.0 <= value <= 1.0) or math.isnan(value):
        raise ChannelError(f"{name}={value} is outside [0, 1]")
    return value


def _prune(ops: Iterable[np.ndarray]) -> list[np.ndarray]:
    kept = [k for k in ops if np.linalg.norm(k) >= _ZERO_OP_TOL]
    return kept or [np.zeros((2, 2), dtype=complex)]


def make_channel(kind: str, **params: float) -> KrausChannel:
    """Build one of the library's channel kinds.

    Args:
        kind: one of :data:`KINDS` (``"none"`` is accepted for identity).
        **params: ``gamma`` for most kinds (``p`` is accepted for
            depolarizing), ``lam`` for the alternative phase-damping form,
            ``p_z``, ``p_r0``, ``p_r1`` for thermal relaxation.

    Raises:
        ChannelError: unknown kind, parameter outside [0, 1], or a thermal
            relaxation triple summing above one.
    """
    kind = kind.lower().replace("-", "_")
    if kind in ("none", "identity"):
        return KrausChannel((I2.copy(),), "identity", 0.0, {})

    if kind == "thermal_relaxation":
        p_z = _check_prob("p_z", params.get("p_z", 0.0))
        p_r0 = _check_prob("p_r0", params.get("p_r0", 0.0))
        p_r1 = _check_prob("p_r1", params.get("p_r1", 0.0))
        rest = 1.0 - p_z - p_r0 - p_r1
        if rest < -1e-12:
            raise ChannelError(f"p_z + p_r0 + p_r1 = {1 - rest} exceeds 1")
        rest = max(rest, 0.0)
        ops = [
            math.sqrt(rest) * I2,
            math.sqrt(p_z) * Z,
            math.sqrt(p_r0) * np.array([[1, 0], [0, 0]], dtype=complex),
            math.sqrt(p_r0) * np.array([[0, 1], [0, 0]], dtype=complex),
            math.sqrt(p_r1) * np.array([[0, 0], [1, 0]], dtype=complex),
            math.sqrt(p_r1) * np.array([[0, 0], [0, 1]], dtype=complex),
        ]
        return KrausChannel(
            tuple(_prune(ops)), kind, p_r0 + p_r1 + p_z, {"p_z": p_z, "p_r0": p_r0, "p_r1": p_r1}
        )

    if kind == "phase_damping" and "lam" in params:
        lam = _check_prob("lam", params["lam"])
        ops = [
            np.diag([1.0, math.sqrt(1 - lam)]).astype(complex),
            np.diag([0.0, math.sqrt(lam)]).astype(complex),
        ]
        return KrausChannel(tuple(_prune(ops)), kind, lam, {"lam": lam})

    if kind == "depolarizing" and "p" in params and "gamma" not in params:
        params = {"gamma": params["p"]}
    unknown = set(params) - {"gamma"}
    if unknown:
        raise ChannelError(f"unexpected parameters for {kind}: {sorted(unknown)}")
    g = _check_prob("gamma", params.get("gamma", 0.0))

    if kind == "amplitude_damping":
        ops = [
            np.diag([1.0, math.sqrt(1 - g)]).astype(complex),
            np.array([[0, math.sqrt(g)], [0, 0]], dtype=complex),
        ]
    elif kind == "phase_damping":
        ops = [
            math.sqrt(1 - g) * I2,
            math.sqrt(g) * np.diag([1.0, 0.0]).astype(complex),
            math.sqrt(g) * np.diag([0.0, 1.0]).astype(complex),
        ]
    elif kind == "depolarizing":
        ops = [math.sqrt(1 - 0.75 * g) * I2] + [math.sqrt(g / 4) * p for p in (X, Y, Z)]
    elif kind in ("bit_flip", "phase_flip", "bit_phase_flip"):
        pauli = {"bit_flip": X, "phase_flip": Z, "bit_phase_flip": Y}[kind]
        ops = [math.sqrt(1 - g) * I2, math.sqrt(g) * pauli]
    else:
        raise ChannelError(f"unknown channel kind {kind!r}")
    return KrausChannel(tuple(_prune(ops)), kind, g, {"gamma": g})


def channel_from_spec(spec: Mapping[str, Any] | None) -> KrausChannel:
    """Build a channel from its JSON fragment; ``None`` means no noise."""
    if spec is None:
        return make_channel("identity")
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind == "composite":
        return compose_channels([channel_from_spec(p) for p in spec["parts"]])
    return make_channel(kind, **spec)


def channel_to_spec(ch: KrausChannel) -> dict:
    if ch.label == "composite":
        return {"kind": "composite", "parts": list(ch.params["parts"])}
    return ch.to_spec()


def dumps_spec(ch: KrausChannel) -> str:
    return json.dumps(channel_to_spec(ch), sort_keys=True)


def apply_channel(state: DensityMatrix, ch: KrausChannel, qubit: int) -> DensityMatrix:
    """``sum_i K_i rho K_i^dagger`` with the channel acting on ``qubit``."""
    n = state.num_qubits
    if not 0 <= qubit < n:
        raise DimensionError(f"qubit {qubit} out of range for {n} qubits")
    out = _kernels.superop_1q(state.matrix, ch.superoperator(), qubit, n)
    return DensityMatrix(out)


def stochastic_kraus_apply(
    psi: StateVector, ch: KrausChannel, qubit: int, rng: np.random.Generator
) -> StateVector:
    """One Monte Carlo unravelling step: pick ``K_i`` with prob ``||K_i psi||^2``."""
    n = psi.num_qubits
    if not 0 <= qubit < n:
        raise DimensionError(f"qubit {qubit} out of range for {n} qubits")
    left = 1 << qubit
    right = 1 << (n - qubit - 1)
    v = psi.amplitudes.reshape(left, 2, right)
    branches = [np.einsum("ab,lbr->lar", k, v).reshape(-1) for k in ch.kraus_ops]
    probs = np.array([np.vdot(b, b).real for b in branches])
    total = probs.sum()
    if not total > 0:
        raise FloatingPointError("all Kraus branches have zero probability")
    cum = np.cumsum(probs)
    choice = min(int(np.sum(cum < rng.random() * total)), len(probs) - 1)
    return StateVector(branches[choice] / math.sqrt(probs[choice]))


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlochAffineMap:
    """Action ``r -> linear @ r + translation`` of a qubit channel on Bloch vectors."""

    linear: np.ndarray
    translation: np.ndarray

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return np.asarray(r) @ self.linear.T + self.translation

    def max_output_norm(self, samples: int = 2000) -> float:
        pts = fibonacci_sphere(samples)
        return float(np.linalg.norm(self(pts), axis=1).max())


@dataclass(frozen=True)
class PureOutputClass:
    """Which pure states a qubit channel can output.

    ``kind`` is ``"Empty"``, ``"Single"``, ``"Pair"`` or ``"All"``; ``states``
    holds the Bloch vectors of the pure outputs for Single and Pair.
    """

    kind: str
    states: tuple[np.ndarray, ...] = ()
    antipodal: bool | None = None

    def __str__(self) -> str:
        if self.kind == "Pair":
            return f"Pair ({'antipodal' if self.antipodal else 'not antipodal'})"
        return self.kind


def bloch_affine(ch: KrausChannel) -> BlochAffineMap:
    """Fit the affine Bloch map from the channel's action on I/2 and the Paulis."""
    center = DensityMatrix(ch(I2 / 2)).bloch_vector()
    cols = []
    for p in (X, Y, Z):
        # ch is linear: ch(I/2 + P/2) - ch(I/2) = ch(P)/2
        img = ch(p / 2)
        cols.append([np.trace(q @ img).real for q in (X, Y, Z)])
    return BlochAffineMap(np.array(cols).T, center)


def is_unital(ch: KrausChannel, tol: float = 1e-10) -> tuple[bool, float]:
    """Return ``(unital, displacement)``; displacement is ``|ch(I/2) - I/2|`` on the Bloch ball."""
    out = ch(I2 / 2)
    dist = trace_distance_matrix(out, I2 / 2)
    displacement = float(np.linalg.norm(DensityMatrix(out).bloch_vector()))
    return dist < tol, displacement


def fibonacci_sphere(n: int) -> np.ndarray:
    k = np.arange(n) + 0.5
    z = 1 - 2 * k / n
    phi = np.pi * (1 + 5**0.5) * k
    rho = np.sqrt(1 - z * z)
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)


def _sph(a: np.ndarray) -> np.ndarray:
    th, ph = a
    return np.array([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])


def classify_pure_output(
    ch: KrausChannel, samples: int = 10_000, tol: float = 1e-8
) -> PureOutputClass:
    """Intersect the channel's image ellipsoid with the Bloch sphere.

    The image norm ``|M r + c|`` is convex in ``r``, so pure outputs can only
    come from pure inputs; the sphere is scanned on a Fibonacci grid and the
    best candidates refined with a local optimiser.
    """
    amap = bloch_affine(ch)
    m, c = amap.linear, amap.translation
    sv = np.linalg.svd(m, compute_uv=False)
    if np.all(np.abs(sv - 1) < tol) and np.linalg.norm(c) < tol:
        return PureOutputClass("All")

    pts = fibonacci_sphere(samples)
    norms = np.linalg.norm(amap(pts), axis=1)
    order = np.argsort(-norms)
    starts: list[np.ndarray] = []
    for i in order[:400]:
        if all(np.dot(pts[i], s) < np.cos(0.35) for s in starts):
            starts.append(pts[i])
        if len(starts) >= 8:
            break

    def neg_sq(a):
        v = m @ _sph(a) + c
        return -float(v @ v)

    # A tangential contact can be very flat (quartic for amplitude damping), so
    # optimiser runs from different starts stop at slightly different points of
    # one contact region; candidates closer than MERGE_RADIUS are one output.
    found: list[tuple[float, np.ndarray]] = []
    for s in starts:
        a0 = np.array([np.arccos(np.clip(s[2], -1, 1)), np.arctan2(s[1], s[0])])
        res = optimize.minimize(neg_sq, a0, method="Nelder-Mead", options={"xatol": 1e-12, "fatol": 1e-16, "maxiter": 4000})
        best = m @ _sph(res.x) + c
        norm = float(np.linalg.norm(best))
        if abs(norm - 1.0) > tol:
            continue
        for i, (other_norm, other) in enumerate(found):
            if np.linalg.norm(best / norm - other) < MERGE_RADIUS:
                if norm > other_norm:
                    found[i] = (norm, best / norm)
                break
        else:
            found.append((norm, best / norm))
    found = [v for _, v in found]
    if not found:
        return PureOutputClass("Empty")
    if len(found) == 1:
        return PureOutputClass("Single", (found[0],))
    if len(found) == 2:
        antipodal = bool(np.linalg.norm(found[0] + found[1]) < 1e-6)
        unital, _ = is_unital(ch)
        if unital and not antipodal:
            raise AssertionError("unital channel with non-antipodal pure outputs")
        return PureOutputClass("Pair", (found[0], found[1]), antipodal)
    raise RuntimeError(f"found {len(found)} isolated pure outputs; not a valid qubit channel")


def contraction_estimate(ch: KrausChannel, samples: int, rng: np.random.Generator) -> float:
    """Largest sampled ratio ``||ch(rho) - ch(sigma)||_1 / ||rho - sigma||_1``."""
    if samples < 2:
        raise ValueError("need at least two samples")
    best = 0.0
    for _ in range(samples):
        rho = random_density_matrix(1, rng).matrix
        sigma = random_density_matrix(1, rng).matrix
        den = trace_distance_matrix(rho, sigma)
        if den < 1e-12:
            continue
        best = max(best, trace_distance_matrix(ch(rho), ch(sigma)) / den)
    return best


# ---------------------------------------------------------------------------
# fixed points and composition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FixedPointAnalysis:
    states: tuple[np.ndarray, ...]
    multiplicity: int
    eigenvalues: np.ndarray

    @property
    def unique(self) -> np.ndarray:
        if self.multiplicity != 1:
            raise ValueError(f"fixed point is not unique (multiplicity {self.multiplicity})")
        return self.states[0]


def step_superoperator(ch: KrausChannel, gate: UnitaryGate | np.ndarray) -> np.ndarray:
    """4x4 superoperator of ``rho -> ch(U rho U^dagger)``."""
    u = gate.matrix if isinstance(gate, UnitaryGate) else np.asarray(gate, dtype=complex)
    if u.shape != (2, 2):
        raise DimensionError("fixed-point analysis is for single-qubit maps")
    return ch.superoperator() @ np.kron(u, u.conj())


def fixed_points(ch: KrausChannel, gate: UnitaryGate | np.ndarray, tol: float = 1e-8) -> FixedPointAnalysis:
    """Eigen-analysis of ``rho -> ch(U rho U^dagger)`` at eigenvalue one."""
    s = step_superoperator(ch, gate)
    vals, vecs = np.linalg.eig(s)
    hit = np.where(np.abs(vals - 1) < tol)[0]
    if hit.size == 0:
        raise FloatingPointError(f"no eigenvalue within {tol} of 1: {vals}")
    states = []
    # the eigenvalue-1 eigenspace is spanned by Hermitian operators; recover them
    basis = vecs[:, hit]
    herm_parts = []
    for j in range(basis.shape[1]):
        op = basis[:, j].reshape(2, 2)
        herm_parts.append(0.5 * (op + op.conj().T))
        herm_parts.append(0.5j * (op - op.conj().T))
    for op in herm_parts:
        tr = np.trace(op).real
        if abs(tr) > 1e-9 and len(states) < hit.size:
            cand = op / tr
            if all(np.max(np.abs(cand - s_)) > 1e-9 for s_ in states):
                states.append(cand)
    return FixedPointAnalysis(tuple(states), int(hit.size), vals)


def iterate_to_fixed_point(
    ch: KrausChannel, gate: UnitaryGate | np.ndarray, rho0: np.ndarray, tol: float = 1e-13, max_iter: int = 100_000
) -> np.ndarray:
    """Power iteration of the step map from ``rho0`` until successive iterates agree."""
    u = gate.matrix if isinstance(gate, UnitaryGate) else np.asarray(gate, dtype=complex)
    rho = np.asarray(rho0, dtype=complex)
    for _ in range(max_iter):
        nxt = ch(u @ rho @ u.conj().T)
        if np.max(np.abs(nxt - rho)) < tol:
            return nxt
        rho = nxt
    return rho


def compose_channels(channels: Sequence[KrausChannel], prune: float = _ZERO_OP_TOL) -> KrausChannel:
    """Channel applying ``channels`` in list order (first element acts first)."""
    if not channels:
        return make_channel("identity")
    ops = [I2.copy()]
    for ch in channels:
        ops = [k @ prev for prev in ops for k in ch.kraus_ops]
        ops = [k for k in ops if np.linalg.norm(k) >= prune] or [np.zeros((2, 2), dtype=complex)]
    parts = [channel_to_spec(ch) for ch in channels]
    return KrausChannel(tuple(ops), "composite", max(ch.gamma for ch in channels), {"parts": parts})
