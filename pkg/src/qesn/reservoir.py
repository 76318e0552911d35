"""Gate-based echo state network with mid-circuit measurements.

Each time step encodes one input value ``u`` as ``RX(theta) RZ(theta)`` on
every qubit (``theta = encoding_scale * u + encoding_offset``), entangles with
a CNOT chain (or ring), lets the noise channel act, reads ``<Z_i>`` on the
measured qubits and measures them.  Two interchangeable backends:

* ``exact``: the density matrix of the infinite-shot ensemble.  Measurement
  is non-selective, i.e. dephasing in the computational basis of the
  measured qubits.
* ``trajectory``: ``S`` independent pure-state shots with Monte Carlo Kraus
  sampling and projective collapse; ``<Z_i>`` is the shot average.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import _kernels
from .channels import KrausChannel, channel_from_spec
from .states import (
    DensityMatrix,
    StateVector,
    UnitaryGate,
    cnot,
    rx,
    rx_matrix,
    rz,
    rz_matrix,
)

INPUT_AMPLITUDE = 0.1
DEFAULT_SCALE = math.pi / (2 * INPUT_AMPLITUDE)
DEFAULT_OFFSET = math.pi / 4
SHOT_CHUNK = 256


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ReservoirConfig:
    """Everything needed to reproduce one reservoir run.

    ``measured_qubits=None`` measures every qubit; an empty tuple disables
    measurement (useful for diagnostics only).  ``noise`` is a channel JSON
    fragment such as ``{"kind": "amplitude_damping", "gamma": 0.03}``.
    ``noise_placement`` is ``"composite"`` (noise after every sub-rotation and
    again after the entangler) or ``"layer"`` (only after the entangler).
    """

    num_qubits: int = 7
    measured_qubits: tuple[int, ...] | None = None
    encoding_scale: float = DEFAULT_SCALE
    encoding_offset: float = DEFAULT_OFFSET
    entangler: str = "chain"
    noise: Mapping[str, Any] | None = None
    split_factor: int = 1
    shots: int = 10_000
    seed: int = 0
    noise_placement: str = "composite"
    backend: str = "exact"

    def __post_init__(self):
        if self.num_qubits < 1:
            raise ConfigError("num_qubits must be >= 1")
        if self.measured_qubits is not None:
            mq = tuple(int(q) for q in self.measured_qubits)
            if len(set(mq)) != len(mq) or any(not 0 <= q < self.num_qubits for q in mq):
                raise ConfigError(f"invalid measured_qubits {mq} for {self.num_qubits} qubits")
            object.__setattr__(self, "measured_qubits", mq)
        if self.split_factor < 1:
            raise ConfigError("split_factor must be >= 1")
        if self.shots < 1:
            raise ConfigError("shots must be >= 1")
        if self.entangler not in ("chain", "ring"):
            raise ConfigError(f"unknown entangler {self.entangler!r}")
        if self.noise_placement not in ("composite", "layer"):
            raise ConfigError(f"unknown noise_placement {self.noise_placement!r}")
        if self.backend not in ("exact", "trajectory"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.noise is not None:
            object.__setattr__(self, "noise", dict(self.noise))
            self.channel()  # validates

    @property
    def measured(self) -> tuple[int, ...]:
        if self.measured_qubits is None:
            return tuple(range(self.num_qubits))
        return self.measured_qubits

    def channel(self) -> KrausChannel:
        try:
            return channel_from_spec(self.noise)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad noise spec {self.noise!r}: {exc}") from exc

    def angle(self, u: float) -> float:
        return self.encoding_scale * u + self.encoding_offset

    def replace(self, **changes) -> "ReservoirConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["measured_qubits"] = None if self.measured_qubits is None else list(self.measured_qubits)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ReservoirConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown reservoir fields: {sorted(unknown)}")
        d = dict(d)
        if d.get("measured_qubits") is not None:
            d["measured_qubits"] = tuple(d["measured_qubits"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def config_hash(self) -> str:
        return config_hash(self.to_dict())


def config_hash(obj: Any) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Segmentation:
    """0-based time ranges: washout ``[0, washout)``, training
    ``[washout, train_end)``, test ``[train_end, length)``."""

    washout: int
    train_end: int
    length: int

    def __post_init__(self):
        if not 0 <= self.washout < self.train_end < self.length:
            raise ConfigError(
                f"need 0 <= washout < train_end < length, got {self.washout}, {self.train_end}, {self.length}"
            )

    @classmethod
    def default(cls, length: int, washout: int = 10, test_length: int | None = None) -> "Segmentation":
        if test_length is None:
            test_length = min(60, (length - washout) // 3)
        return cls(washout, length - test_length, length)

    @property
    def train(self) -> slice:
        return slice(self.washout, self.train_end)

    @property
    def test(self) -> slice:
        return slice(self.train_end, self.length)

    @property
    def post_washout(self) -> slice:
        return slice(self.washout, self.length)


@dataclass
class SignalMatrix:
    """Reservoir signal ``z_t`` for every step, washout rows included.

    ``values`` has one row per time step ``t = 0..L-1`` and one column per
    measured qubit.  :attr:`H` drops the washout rows.
    """

    values: np.ndarray
    segmentation: Segmentation
    qubits: tuple[int, ...]
    seed: int = 0
    config_hash: str = ""

    @property
    def H(self) -> np.ndarray:
        return self.values[self.segmentation.post_washout]

    @property
    def washout_mask(self) -> np.ndarray:
        mask = np.zeros(self.values.shape[0], dtype=bool)
        mask[: self.segmentation.washout] = True
        return mask

    def metadata(self) -> dict:
        s = self.segmentation
        return {
            "T_wo": s.washout,
            "T_tr": s.train_end,
            "L": s.length,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "qubits": list(self.qubits),
        }

    def to_csv(self, path: str | Path) -> None:
        """Write post-washout rows plus a ``.meta.json`` sidecar."""
        path = Path(path)
        s = self.segmentation
        t = np.arange(s.washout, s.length)
        header = "t," + ",".join(f"z_q{q}" for q in self.qubits)
        data = np.column_stack([t, self.H])
        fmt = ["%d"] + ["%.17g"] * len(self.qubits)
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt=fmt)
        path.with_suffix(".meta.json").write_text(json.dumps(self.metadata(), indent=2, sort_keys=True))

    @classmethod
    def from_csv(cls, path: str | Path) -> "SignalMatrix":
        path = Path(path)
        meta = json.loads(path.with_suffix(".meta.json").read_text())
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        seg = Segmentation(meta["T_wo"], meta["T_tr"], meta["L"])
        values = np.full((seg.length, data.shape[1] - 1), np.nan)
        values[data[:, 0].astype(int)] = data[:, 1:]
        return cls(values, seg, tuple(meta["qubits"]), meta["seed"], meta["config_hash"])


@dataclass
class ShotRecord:
    """Binary outcomes ``m[s, t, i]`` for shot ``s``, step ``t``, measured qubit ``i``."""

    outcomes: np.ndarray
    qubits: tuple[int, ...] = ()
    seed: int = 0

    @property
    def shots(self) -> int:
        return self.outcomes.shape[0]

    def z_means(self) -> np.ndarray:
        return 1.0 - 2.0 * self.outcomes.mean(axis=0)

    def save(self, path: str | Path) -> None:
        np.savez_compressed(
            path, outcomes=np.packbits(self.outcomes, axis=0), shots=self.shots,
            qubits=np.array(self.qubits), seed=self.seed,
        )

    @classmethod
    def load(cls, path: str | Path) -> "ShotRecord":
        with np.load(path) as f:
            shots = int(f["shots"])
            outcomes = np.unpackbits(f["outcomes"], axis=0, count=shots)
            return cls(outcomes, tuple(int(q) for q in f["qubits"]), int(f["seed"]))


# ---------------------------------------------------------------------------
# circuit layout
# ---------------------------------------------------------------------------


def entangler_pairs(cfg: ReservoirConfig) -> list[tuple[int, int]]:
    n = cfg.num_qubits
    pairs = [(i, i + 1) for i in range(n - 1)]
    if cfg.entangler == "ring" and n > 2:
        pairs.append((n - 1, 0))
    return pairs


def encoding_layer(u: float, cfg: ReservoirConfig) -> list[UnitaryGate]:
    """Gate sequence of one input step, rotations split into ``split_factor`` pieces."""
    theta = cfg.angle(u)
    d = cfg.split_factor
    gates: list[UnitaryGate] = []
    for q in range(cfg.num_qubits):
        gates.extend(rx(theta / d, q) for _ in range(d))
        gates.extend(rz(theta / d, q) for _ in range(d))
    gates.extend(cnot(c, t) for c, t in entangler_pairs(cfg))
    return gates


def _entangler_perm(cfg: ReservoirConfig) -> np.ndarray:
    """Basis permutation ``p`` with ``(P psi)[i] = psi[p[i]]`` for the whole CNOT layer."""
    n = cfg.num_qubits
    idx = np.arange(1 << n)
    perm = idx.copy()
    for c, t in entangler_pairs(cfg):
        cmask = 1 << (n - 1 - c)
        tmask = 1 << (n - 1 - t)
        single = np.where(idx & cmask, idx ^ tmask, idx)
        perm = perm[single]
    return perm


def _dephase_mask(num_qubits: int, measured: Sequence[int]) -> np.ndarray:
    idx = np.arange(1 << num_qubits)
    mmask = 0
    for q in measured:
        mmask |= 1 << (num_qubits - 1 - q)
    return ((idx[:, None] ^ idx[None, :]) & mmask) == 0


def _z_sign_matrix(num_qubits: int, qubits: Sequence[int]) -> np.ndarray:
    idx = np.arange(1 << num_qubits)
    signs = [1.0 - 2.0 * ((idx >> (num_qubits - 1 - q)) & 1) for q in qubits]
    return np.array(signs, dtype=float).reshape(len(signs), idx.size)


class ExactStepper:
    """Precomputed pieces of the density-matrix step for one config."""

    def __init__(self, cfg: ReservoirConfig):
        self.cfg = cfg
        self.n = cfg.num_qubits
        self.channel = cfg.channel()
        self.noisy = not self.channel.is_identity
        self.noise_superop = self.channel.superoperator()
        self.perm = _entangler_perm(cfg)
        self.measured = cfg.measured
        self.mask = _dephase_mask(self.n, self.measured) if self.measured else None
        self.signs = _z_sign_matrix(self.n, self.measured)

    def rotation_superop(self, theta: float) -> np.ndarray:
        """Fused superoperator of every rotation (and interleaved noise) on one qubit."""
        d = self.cfg.split_factor
        per_gate_noise = self.noisy and self.cfg.noise_placement == "composite"
        total = np.eye(4, dtype=complex)
        for mat in (rx_matrix(theta / d), rz_matrix(theta / d)):
            sub = np.kron(mat, mat.conj())
            if per_gate_noise:
                sub = self.noise_superop @ sub
            for _ in range(d):
                total = sub @ total
        return total

    def evolve(self, rho: np.ndarray, u: float) -> np.ndarray:
        """Unitary encoding plus noise, before measurement."""
        rot = self.rotation_superop(self.cfg.angle(u))
        for q in range(self.n):
            rho = _kernels.superop_1q(rho, rot, q, self.n)
        rho = rho[np.ix_(self.perm, self.perm)]
        if self.noisy:
            for q in range(self.n):
                rho = _kernels.superop_1q(rho, self.noise_superop, q, self.n)
        return rho

    def step(self, rho: np.ndarray, u: float) -> tuple[np.ndarray, np.ndarray]:
        rho = self.evolve(rho, u)
        z = self.signs @ np.real(np.diag(rho))
        if self.mask is not None:
            rho = np.where(self.mask, rho, 0.0)
        return rho, z


def noisy_step_exact(rho: DensityMatrix, u: float, cfg: ReservoirConfig) -> tuple[DensityMatrix, np.ndarray]:
    """One exact step: encode ``u``, apply noise, read ``<Z>``, dephase measured qubits."""
    if rho.num_qubits != cfg.num_qubits:
        raise ValueError(f"state has {rho.num_qubits} qubits, config {cfg.num_qubits}")
    out, z = ExactStepper(cfg).step(rho.matrix, u)
    return DensityMatrix(out), z


# ---------------------------------------------------------------------------
# trajectory backend
# ---------------------------------------------------------------------------


class TrajectoryProgram:
    """Op table of one step for the batched trajectory kernel."""

    def __init__(self, cfg: ReservoirConfig):
        self.cfg = cfg
        self.n = cfg.num_qubits
        ch = cfg.channel()
        self.kraus = [] if ch.is_identity else list(ch.kraus_ops)
        kinds, q0, q1, start, count = [], [], [], [], []
        noisy = bool(self.kraus)
        kr_start = 2  # mats = [rx_sub, rz_sub, K_0, ..., K_{k-1}]

        def add(kind, a, b=0, s=0, c=0):
            kinds.append(kind)
            q0.append(a)
            q1.append(b)
            start.append(s)
            count.append(c)

        d = cfg.split_factor
        per_gate = noisy and cfg.noise_placement == "composite"
        for q in range(self.n):
            for mat_idx in (0, 1):
                for _ in range(d):
                    add(_kernels.OP_UNITARY, q, s=mat_idx, c=1)
                    if per_gate:
                        add(_kernels.OP_KRAUS, q, s=kr_start, c=len(self.kraus))
        for c, t in entangler_pairs(cfg):
            add(_kernels.OP_CNOT, c, t)
        if noisy:
            for q in range(self.n):
                add(_kernels.OP_KRAUS, q, s=kr_start, c=len(self.kraus))
        self.op_kind = np.array(kinds, dtype=np.int64)
        self.op_q0 = np.array(q0, dtype=np.int64)
        self.op_q1 = np.array(q1, dtype=np.int64)
        self.op_start = np.array(start, dtype=np.int64)
        self.op_count = np.array(count, dtype=np.int64)
        self.draws = int(np.sum(self.op_kind == _kernels.OP_KRAUS)) + 1
        self.measured = cfg.measured
        mmask = 0
        for q in self.measured:
            mmask |= 1 << (self.n - 1 - q)
        self.meas_mask = mmask

    def mats(self, u: float) -> np.ndarray:
        theta = self.cfg.angle(u) / self.cfg.split_factor
        return np.array([rx_matrix(theta), rz_matrix(theta)] + self.kraus, dtype=complex)

    def run(self, psi: np.ndarray, u: float, uniforms: np.ndarray, kernel=None) -> tuple[np.ndarray, np.ndarray]:
        kernel = kernel or _kernels.trajectory_step
        psi, picked = kernel(
            psi, self.op_kind, self.op_q0, self.op_q1, self.op_start, self.op_count,
            self.mats(u), uniforms, self.meas_mask, self.n,
        )
        bits = np.array([(picked >> (self.n - 1 - q)) & 1 for q in self.measured], dtype=np.uint8)
        return psi, bits.T.reshape(len(picked), len(self.measured))


def noisy_step_trajectory(
    psi: StateVector, u: float, cfg: ReservoirConfig, rng: np.random.Generator
) -> tuple[StateVector, np.ndarray]:
    """One shot, one step: stochastic noise, then a joint Born sample of the measured qubits."""
    if psi.num_qubits != cfg.num_qubits:
        raise ValueError(f"state has {psi.num_qubits} qubits, config {cfg.num_qubits}")
    prog = TrajectoryProgram(cfg)
    uniforms = rng.random((1, prog.draws))
    out, bits = prog.run(psi.amplitudes[None, :].copy(), u, uniforms)
    return StateVector(out[0]), bits[0]


def shot_uniforms(seed: int, shot: int, length: int, draws: int) -> np.ndarray:
    """The random stream of one shot, a function of ``(seed, shot)`` only."""
    return np.random.default_rng([int(seed), int(shot)]).random((length, draws))


def _run_shot_chunk(prog: TrajectoryProgram, u: np.ndarray, seed: int, shots: range, kernel=None) -> np.ndarray:
    length = len(u)
    uni = np.stack([shot_uniforms(seed, s, length, prog.draws) for s in shots])
    psi = np.zeros((len(shots), 1 << prog.n), dtype=complex)
    psi[:, 0] = 1.0
    out = np.empty((len(shots), length, len(prog.measured)), dtype=np.uint8)
    for t in range(length):
        psi, bits = prog.run(psi, float(u[t]), np.ascontiguousarray(uni[:, t, :]), kernel)
        out[:, t, :] = bits
    return out


def run_trajectories(
    u: Sequence[float], cfg: ReservoirConfig, jobs: int = 1, kernel=None
) -> ShotRecord:
    """All ``cfg.shots`` trajectories; identical for any ``jobs`` value."""
    u = np.asarray(u, dtype=float)
    prog = TrajectoryProgram(cfg)
    chunks = [range(a, min(a + SHOT_CHUNK, cfg.shots)) for a in range(0, cfg.shots, SHOT_CHUNK)]
    if jobs > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(lambda c: _run_shot_chunk(prog, u, cfg.seed, c, kernel), chunks))
    else:
        parts = [_run_shot_chunk(prog, u, cfg.seed, c, kernel) for c in chunks]
    return ShotRecord(np.concatenate(parts, axis=0), cfg.measured, cfg.seed)


def run_exact(u: Sequence[float], cfg: ReservoirConfig, return_states: bool = False):
    """Exact-backend signal, optionally with the post-measurement states."""
    stepper = ExactStepper(cfg)
    rho = DensityMatrix.zeros(cfg.num_qubits).matrix
    zs = np.empty((len(u), len(cfg.measured)))
    states = [] if return_states else None
    for t, ut in enumerate(u):
        rho, zs[t] = stepper.step(rho, float(ut))
        if return_states:
            states.append(rho)
    return (zs, states) if return_states else zs


def run_reservoir(
    u: Sequence[float],
    cfg: ReservoirConfig,
    segmentation: Segmentation | None = None,
    backend: str | None = None,
    jobs: int = 1,
) -> tuple[SignalMatrix, ShotRecord | None]:
    """Drive the reservoir with ``u`` from ``|0...0>`` and collect the signal.

    Returns the signal matrix and, for the trajectory backend, the shot record.
    """
    u = np.asarray(u, dtype=float)
    seg = segmentation or Segmentation.default(len(u))
    if seg.length != len(u):
        raise ConfigError(f"segmentation length {seg.length} != input length {len(u)}")
    backend = backend or cfg.backend
    record = None
    if backend == "exact":
        zs = run_exact(u, cfg)
    elif backend == "trajectory":
        record = run_trajectories(u, cfg, jobs=jobs)
        zs = record.z_means()
    else:
        raise ConfigError(f"unknown backend {backend!r}")
    return SignalMatrix(zs, seg, cfg.measured, cfg.seed, cfg.config_hash()), record
