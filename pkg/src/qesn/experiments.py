"""Gamma sweeps and state-space diagnostics built on the reservoir and readout.

Sweep results are long-form records, one per ``(measured, noise, gamma,
seed, task, metric)``, each carrying the hash of the exact cell that
produced it so a partial sweep can be resumed without recomputation.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .learning import (
    DegenerateReservoirError,
    evaluate_narma,
    generate_input,
    memory_capacity,
)
from .reservoir import (
    ConfigError,
    ExactStepper,
    ReservoirConfig,
    Segmentation,
    config_hash,
    encoding_layer,
    run_reservoir,
)
from .states import DensityMatrix, tensor_embed, trace_distance_matrix

TASKS = ("narma2", "narma5", "narma8", "mc")
DEFAULT_NOISE_KINDS = ("amplitude_damping", "phase_damping", "depolarizing")
MC_DELAYS = 10
RECORD_FIELDS = ("measured", "noise", "gamma", "seed", "task", "metric", "value", "status", "cell_hash", "error")


def code_version() -> str:
    from . import __version__

    return __version__


def linear_gammas(num: int = 20, stop: float = 0.25) -> tuple[float, ...]:
    return tuple(float(g) for g in np.linspace(0.0, stop, num))


def noise_spec(kind: str, gamma: float) -> dict | None:
    """Channel JSON for one sweep cell; ``none`` ignores ``gamma``."""
    if kind in ("none", "identity"):
        return None
    return {"kind": kind, "gamma": float(gamma)}


@dataclass(frozen=True)
class SweepSpec:
    """A grid of reservoir runs.

    Every cell ``(noise kind, gamma, seed)`` drives one reservoir and
    evaluates all ``tasks`` on its signal.
    """

    template: ReservoirConfig
    gammas: tuple[float, ...] = field(default_factory=lambda: linear_gammas(100))
    noise_kinds: tuple[str, ...] = DEFAULT_NOISE_KINDS
    tasks: tuple[str, ...] = ("narma5", "mc")
    seeds: tuple[int, ...] = (0,)
    length: int = 200
    washout: int = 10
    test_length: int = 60
    fit_bias: bool = False
    smoothing_window: int | None = None

    def __post_init__(self):
        for name in ("gammas", "noise_kinds", "tasks", "seeds"):
            value = tuple(getattr(self, name))
            if not value:
                raise ConfigError(f"{name} must be non-empty")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        bad = [t for t in self.tasks if t not in TASKS]
        if bad:
            raise ConfigError(f"unknown tasks {bad}; choose from {TASKS}")
        if any(g < 0 or g > 1 for g in self.gammas):
            raise ConfigError("gammas must lie in [0, 1]")
        self.segmentation()

    def segmentation(self) -> Segmentation:
        try:
            return Segmentation(self.washout, self.length - self.test_length, self.length)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def cells(self) -> list[tuple[str, float, int]]:
        return [(k, g, s) for k in self.noise_kinds for g in self.gammas for s in self.seeds]

    def cell_config(self, kind: str, gamma: float, seed: int) -> ReservoirConfig:
        return self.template.replace(noise=noise_spec(kind, gamma), seed=seed)

    def cell_hash(self, kind: str, gamma: float, seed: int) -> str:
        return config_hash(
            {
                "reservoir": self.cell_config(kind, gamma, seed).to_dict(),
                "length": self.length,
                "washout": self.washout,
                "test_length": self.test_length,
                "fit_bias": self.fit_bias,
                "tasks": list(self.tasks),
            }
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["template"] = self.template.to_dict()
        for name in ("gammas", "noise_kinds", "tasks", "seeds"):
            d[name] = list(d[name])
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SweepSpec":
        d = dict(d)
        try:
            d["template"] = ReservoirConfig.from_dict(d["template"])
        except KeyError as exc:
            raise ConfigError("sweep spec needs a 'template' reservoir config") from exc
        gammas = d.get("gammas")
        if isinstance(gammas, Mapping):
            d["gammas"] = linear_gammas(int(gammas["num"]), float(gammas.get("stop", 0.25)))
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown sweep fields: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def desk_scale_spec(**changes) -> SweepSpec:
    """Five qubits, 20 gammas on [0, 0.25], five seeds, exact backend."""
    spec = SweepSpec(
        template=ReservoirConfig(num_qubits=5, shots=10_000),
        gammas=linear_gammas(20),
        tasks=("narma2", "narma5", "narma8", "mc"),
        seeds=(0, 1, 2, 3, 4),
    )
    return dataclasses.replace(spec, **changes)


def paper_scale_spec(**changes) -> SweepSpec:
    """Seven qubits, 100 gammas, 10^5 shots on the trajectory backend (hours of CPU)."""
    spec = SweepSpec(
        template=ReservoirConfig(num_qubits=7, shots=100_000, backend="trajectory"),
        gammas=linear_gammas(100),
        tasks=("narma2", "narma5", "narma8", "mc"),
        seeds=(0, 1, 2, 3, 4),
    )
    return dataclasses.replace(spec, **changes)


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------


def _record_key(r: Mapping[str, Any]) -> tuple:
    return (int(r["measured"]), r["noise"], float(r["gamma"]), int(r["seed"]), r["task"], r["metric"])


@dataclass
class ExperimentResult:
    records: list[dict]
    metadata: dict = field(default_factory=dict)

    def sorted_records(self) -> list[dict]:
        return sorted(self.records, key=_record_key)

    @property
    def failures(self) -> list[dict]:
        return [r for r in self.records if r["status"] != "ok"]

    def select(self, **where) -> list[dict]:
        return [r for r in self.records if all(r[k] == v for k, v in where.items())]

    def curve(self, noise: str, task: str, metric: str | None = None, measured: int | None = None):
        """Seed-mean ``(gammas, values)`` for one noise kind and task, finite values only."""
        metric = metric or ("mc" if task == "mc" else "nmse")
        rows = [
            r
            for r in self.records
            if r["noise"] == noise
            and r["task"] == task
            and r["metric"] == metric
            and (measured is None or int(r["measured"]) == measured)
            and r["status"] == "ok"
            and math.isfinite(r["value"])
        ]
        gammas = sorted({float(r["gamma"]) for r in rows})
        means = [float(np.mean([r["value"] for r in rows if r["gamma"] == g])) for g in gammas]
        return np.array(gammas), np.array(means)

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        write_records(buf, self.sorted_records(), header=True)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path: str | Path) -> "ExperimentResult":
        return cls(read_records(path))

    def summary(self) -> dict:
        out: dict[str, Any] = {"metadata": self.metadata, "failures": len(self.failures), "optima": []}
        for measured in sorted({int(r["measured"]) for r in self.records}):
            for noise in sorted({r["noise"] for r in self.records}):
                for task in sorted({r["task"] for r in self.records}):
                    g, v = self.curve(noise, task, measured=measured)
                    if len(g) < 2:
                        continue
                    best = optimal_gamma_from_curve(g, v, maximize=task == "mc", min_points=2)
                    out["optima"].append(
                        {"measured": measured, "noise": noise, "task": task, **best.to_dict()}
                    )
        return out


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_records(fh, records: Iterable[Mapping[str, Any]], header: bool) -> None:
    w = csv.writer(fh, lineterminator="\n")
    if header:
        w.writerow(RECORD_FIELDS)
    for r in records:
        w.writerow([_fmt(r[k]) for k in RECORD_FIELDS])


def read_records(path: str | Path) -> list[dict]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if None in row or any(row.get(k) is None for k in RECORD_FIELDS):
                continue  # torn trailing line from an interrupted write
            try:
                out.append(
                    {
                        "measured": int(row["measured"]),
                        "noise": row["noise"],
                        "gamma": float(row["gamma"]),
                        "seed": int(row["seed"]),
                        "task": row["task"],
                        "metric": row["metric"],
                        "value": float(row["value"]),
                        "status": row["status"],
                        "cell_hash": row["cell_hash"],
                        "error": row["error"],
                    }
                )
            except ValueError:
                continue
    return out


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


def evaluate_cell(spec: SweepSpec, kind: str, gamma: float, seed: int) -> list[dict]:
    """Run one reservoir and score every task on its signal.

    Failures are returned as ``status="failed"`` rows rather than raised.
    """
    cfg = spec.cell_config(kind, gamma, seed)
    base = {
        "measured": len(cfg.measured),
        "noise": kind,
        "gamma": float(gamma),
        "seed": int(seed),
        "cell_hash": spec.cell_hash(kind, gamma, seed),
    }

    def row(task, metric, value, status="ok", error=""):
        return {**base, "task": task, "metric": metric, "value": float(value), "status": status, "error": error}

    u = generate_input(spec.length)
    try:
        signal, _ = run_reservoir(u, cfg, spec.segmentation())
    except Exception as exc:  # noqa: BLE001 - recorded, sweep continues
        return [row(t, "mc" if t == "mc" else "nmse", math.nan, "failed", f"{type(exc).__name__}: {exc}") for t in spec.tasks]
    rows = []
    for task in spec.tasks:
        try:
            if task == "mc":
                mc = memory_capacity(signal, u, MC_DELAYS, fit_bias=spec.fit_bias)
                rows.append(row(task, "mc", mc.total))
                rows.extend(row(task, f"mc_d{d}", v) for d, v in enumerate(mc.per_delay, start=1))
            else:
                rows.append(row(task, "nmse", evaluate_narma(signal, u, int(task[5:]), fit_bias=spec.fit_bias)))
        except (DegenerateReservoirError, ZeroDivisionError, ValueError, np.linalg.LinAlgError) as exc:
            rows.append(row(task, "mc" if task == "mc" else "nmse", math.nan, "failed", f"{type(exc).__name__}: {exc}"))
    return rows


def noise_comparison_sweep(
    spec: SweepSpec,
    jobs: int = 1,
    existing: Iterable[Mapping[str, Any]] = (),
    on_cell: Callable[[list[dict]], None] | None = None,
) -> ExperimentResult:
    """Evaluate every cell of ``spec``.

    Args:
        spec: the grid.
        jobs: worker threads; results do not depend on it.
        existing: records from an earlier partial run.  Cells whose records
            are all present with a matching cell hash are reused as is.
        on_cell: called with the records of each newly computed cell, in
            completion order (used for incremental checkpoints).
    """
    have: dict[str, list[dict]] = {}
    for r in existing:
        have.setdefault(r["cell_hash"], []).append(dict(r))
    records: list[dict] = []
    todo = []
    for kind, gamma, seed in spec.cells():
        h = spec.cell_hash(kind, gamma, seed)
        prev = have.get(h)
        if prev and {r["task"] for r in prev} >= set(spec.tasks) and all(r["status"] == "ok" for r in prev):
            records.extend(prev)
        else:
            todo.append((kind, gamma, seed))

    def work(cell):
        out = evaluate_cell(spec, *cell)
        if on_cell is not None:
            on_cell(out)
        return out

    if jobs > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            for out in pool.map(work, todo):
                records.extend(out)
    else:
        for cell in todo:
            records.extend(work(cell))
    meta = {
        "spec_hash": config_hash(spec.to_dict()),
        "code_version": code_version(),
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "cells": len(spec.cells()),
        "computed_cells": len(todo),
    }
    return ExperimentResult(records, meta)


def partial_measurement_study(
    spec: SweepSpec, sizes: Sequence[int] | None = None, jobs: int = 1
) -> ExperimentResult:
    """Repeat ``spec`` with the first ``M`` qubits measured for each ``M`` in ``sizes``."""
    n = spec.template.num_qubits
    sizes = list(sizes) if sizes is not None else list(range(1, n + 1))
    if any(not 1 <= m <= n for m in sizes):
        raise ConfigError(f"measured sizes must lie in 1..{n}")
    records: list[dict] = []
    for m in sizes:
        sub = dataclasses.replace(spec, template=spec.template.replace(measured_qubits=tuple(range(m))))
        records.extend(noise_comparison_sweep(sub, jobs=jobs).records)
    meta = {"spec_hash": config_hash(spec.to_dict()), "code_version": code_version(), "sizes": sizes}
    return ExperimentResult(records, meta)


# ---------------------------------------------------------------------------
# optimum search
# ---------------------------------------------------------------------------


def running_average(values: Sequence[float], window: int) -> np.ndarray:
    """Centred moving average whose window shrinks at the ends of the grid."""
    v = np.asarray(values, dtype=float)
    if window < 1:
        raise ValueError("window must be >= 1")
    lo_off = window // 2
    hi_off = window - 1 - lo_off
    out = np.empty_like(v)
    for i in range(len(v)):
        out[i] = v[max(0, i - lo_off) : i + hi_off + 1].mean()
    return out


def default_window(num_points: int) -> int:
    """One tenth of the grid, so 100 gammas average over ten neighbours."""
    return max(1, round(num_points / 10))


@dataclass(frozen=True)
class OptimalGamma:
    gamma: float
    value: float
    plateau: tuple[float, float]
    at_boundary: bool

    def to_dict(self) -> dict:
        return {"gamma": self.gamma, "value": self.value, "plateau": list(self.plateau), "at_boundary": self.at_boundary}


def optimal_gamma_from_curve(
    gammas: Sequence[float],
    values: Sequence[float],
    maximize: bool = False,
    window: int | None = None,
    min_points: int = 10,
) -> OptimalGamma:
    """Best gamma of a smoothed metric curve and the plateau around it.

    The plateau is the contiguous run of grid points whose smoothed value is
    within 10% of the optimum.  Non-finite points are dropped first.
    """
    g = np.asarray(gammas, dtype=float)
    v = np.asarray(values, dtype=float)
    keep = np.isfinite(v)
    g, v = g[keep], v[keep]
    order = np.argsort(g)
    g, v = g[order], v[order]
    if len(g) < min_points:
        raise ValueError(f"need at least {min_points} finite gamma points, got {len(g)}")
    s = running_average(v, window or default_window(len(g)))
    i = int(np.argmax(s) if maximize else np.argmin(s))
    best = s[i]
    if maximize:
        ok = s >= best - 0.1 * abs(best)
    else:
        ok = s <= best + 0.1 * abs(best)
    lo = i
    while lo > 0 and ok[lo - 1]:
        lo -= 1
    hi = i
    while hi < len(g) - 1 and ok[hi + 1]:
        hi += 1
    return OptimalGamma(float(g[i]), float(best), (float(g[lo]), float(g[hi])), i in (0, len(g) - 1))


def optimal_gamma(
    result: ExperimentResult, task: str, noise: str = "amplitude_damping", window: int | None = None
) -> OptimalGamma:
    g, v = result.curve(noise, task)
    return optimal_gamma_from_curve(g, v, maximize=task == "mc", window=window)


# ---------------------------------------------------------------------------
# state-space diagnostics
# ---------------------------------------------------------------------------


def random_traceless_hermitian(dim: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    h = 0.5 * (a + a.conj().T)
    return h - np.trace(h).real / dim * np.eye(dim)


def state_at_distance(num_qubits: int, distance: float, rng: np.random.Generator, max_tries: int = 10_000) -> np.ndarray:
    """A random density matrix at exactly ``distance`` (trace distance) from I/2^N."""
    dim = 1 << num_qubits
    bound = 1 - 1 / dim
    if not 0 <= distance <= bound:
        raise ValueError(f"distance {distance} outside [0, {bound}]")
    for _ in range(max_tries):
        delta = random_traceless_hermitian(dim, rng)
        delta /= np.abs(np.linalg.eigvalsh(delta)).sum()
        rho = np.eye(dim) / dim + 2 * distance * delta
        if np.linalg.eigvalsh(rho).min() >= -1e-12:
            return rho
    raise RuntimeError(f"no positive state found at distance {distance} in {max_tries} tries")


def layer_unitary(u: float, cfg: ReservoirConfig) -> np.ndarray:
    """Full-register unitary of one encoding layer (rotations and entangler)."""
    mat = np.eye(1 << cfg.num_qubits, dtype=complex)
    for gate in encoding_layer(u, cfg):
        mat = tensor_embed(gate, cfg.num_qubits) @ mat
    return mat


@dataclass(frozen=True)
class SeparabilityCurve:
    """One row per (initial state, input pair)."""

    distance_from_mixed: np.ndarray
    input_gap: np.ndarray
    separability: np.ndarray

    def binned(self, by: str = "distance_from_mixed", bins: int = 10) -> tuple[np.ndarray, np.ndarray]:
        """Bin centres and mean separability per bin (NaN for empty bins)."""
        x = getattr(self, by)
        edges = np.linspace(x.min(), x.max(), bins + 1)
        idx = np.clip(np.digitize(x, edges) - 1, 0, bins - 1)
        means = np.array([self.separability[idx == b].mean() if np.any(idx == b) else np.nan for b in range(bins)])
        return 0.5 * (edges[:-1] + edges[1:]), means


def separability_vs_input(
    cfg: ReservoirConfig,
    num_states: int = 100,
    num_input_pairs: int = 20,
    seed: int = 0,
    max_distance: float | None = None,
    amplitude: float = 0.1,
) -> SeparabilityCurve:
    """Trace distance between two encodings of the same initial state.

    Initial states are drawn at a uniformly random trace distance from the
    maximally mixed state in ``[0, max_distance]``; ``max_distance`` defaults
    to ``1/2^N``, the largest radius where every direction stays positive.
    Inputs are uniform in ``[-amplitude, amplitude]``.
    """
    dim = 1 << cfg.num_qubits
    bound = 1 - 1 / dim
    max_distance = 1 / dim if max_distance is None else float(max_distance)
    if max_distance > bound:
        raise ValueError(f"distance {max_distance} exceeds the bound 1 - 1/2^N = {bound}")
    rng = np.random.default_rng(seed)
    d0, gaps, seps = [], [], []
    for _ in range(num_states):
        eps = rng.uniform(0, max_distance)
        rho = state_at_distance(cfg.num_qubits, eps, rng)
        for _ in range(num_input_pairs):
            x, y = rng.uniform(-amplitude, amplitude, size=2)
            ux, uy = layer_unitary(x, cfg), layer_unitary(y, cfg)
            seps.append(trace_distance_matrix(ux @ rho @ ux.conj().T, uy @ rho @ uy.conj().T))
            d0.append(eps)
            gaps.append(abs(x - y))
    return SeparabilityCurve(np.array(d0), np.array(gaps), np.array(seps))


@dataclass(frozen=True)
class DecoherenceTrack:
    """Repetition-mean ``T(rho_t, I/2^N)`` after each step, ``t = 1..steps``."""

    noisy: np.ndarray
    noiseless: np.ndarray
    unitary_only: np.ndarray


def _distance_series(cfg: ReservoirConfig, inputs: np.ndarray) -> np.ndarray:
    stepper = ExactStepper(cfg)
    dim = 1 << cfg.num_qubits
    mixed = np.eye(dim) / dim
    out = np.empty((inputs.shape[0], inputs.shape[1]))
    for r, u in enumerate(inputs):
        rho = DensityMatrix.zeros(cfg.num_qubits).matrix
        for t, ut in enumerate(u):
            rho, _ = stepper.step(rho, float(ut))
            out[r, t] = trace_distance_matrix(rho, mixed)
    return out.mean(axis=0)


def decoherence_track(
    cfg: ReservoirConfig, steps: int = 40, repetitions: int = 10, seed: int = 0, amplitude: float = 0.1
) -> DecoherenceTrack:
    """Distance from the maximally mixed state along random-input runs.

    All three variants see the same inputs: ``noisy`` uses ``cfg`` as is,
    ``noiseless`` drops the noise, ``unitary_only`` drops noise and measurement.
    """
    inputs = np.stack([np.random.default_rng([seed, r]).uniform(-amplitude, amplitude, steps) for r in range(repetitions)])
    return DecoherenceTrack(
        _distance_series(cfg, inputs),
        _distance_series(cfg.replace(noise=None), inputs),
        _distance_series(cfg.replace(noise=None, measured_qubits=()), inputs),
    )
