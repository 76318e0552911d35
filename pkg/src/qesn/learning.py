"""Benchmark tasks, linear readout training and the metrics computed on them."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .reservoir import Segmentation, ShotRecord, SignalMatrix

INPUT_FREQS = (2.11, 3.73, 4.11)
INPUT_PERIOD = 200.0
PINV_RCOND = 1e-10


class DegenerateReservoirError(ValueError):
    """The reservoir signal carries no information (e.g. all zeros)."""


def generate_input(length: int, amplitude: float = 0.1) -> np.ndarray:
    """Triple-sine input ``u_t`` sampled at integer ``t = 0..length-1``."""
    if length < 1:
        raise ValueError("length must be >= 1")
    t = np.arange(length, dtype=float)
    a, b, c = INPUT_FREQS
    w = 2 * np.pi * t / INPUT_PERIOD
    return amplitude * np.sin(a * w) * np.sin(b * w) * np.sin(c * w)


def narma_target(p: int, u: Sequence[float]) -> np.ndarray:
    """NARMA-p target aligned with ``u`` (entry ``t`` is the target at time ``t``).

    ``y[t+1] = 0.4 y[t] + 0.1 sum(y[t-p+1..t]) + u[t-p+1] u[t] + 0.1`` with
    ``y[t] = 0`` for ``t < p``.
    """
    if p < 1:
        raise ValueError("NARMA order must be >= 1")
    u = np.asarray(u, dtype=float)
    n = len(u)
    if n < p:
        raise ValueError(f"need at least {p} input values")
    y = np.zeros(n)
    for t in range(p - 1, n - 1):
        window = y[t - p + 1 : t + 1].sum()
        y[t + 1] = 0.4 * y[t] + 0.1 * window + u[max(t - p + 1, 0)] * u[t] + 0.1
    return y


def delay_target(d: int, u: Sequence[float]) -> np.ndarray:
    """``y[t] = u[t-d]``, zero for ``t < d``; all zeros (with a warning) if ``d >= len(u)``."""
    if d < 1:
        raise ValueError("delay must be >= 1")
    u = np.asarray(u, dtype=float)
    y = np.zeros_like(u)
    if d >= len(u):
        warnings.warn(f"delay {d} >= series length {len(u)}: target is identically zero", stacklevel=2)
        return y
    y[d:] = u[:-d]
    return y


@dataclass(frozen=True)
class ReadoutWeights:
    weights: np.ndarray
    bias: float = 0.0


def _design(h: np.ndarray) -> np.ndarray:
    return np.column_stack([h, np.ones(h.shape[0])])


def train_readout(
    signal: SignalMatrix | np.ndarray,
    target: Sequence[float],
    segmentation: Segmentation | None = None,
    fit_bias: bool = False,
) -> ReadoutWeights:
    """Least-squares readout on the training rows via the pseudoinverse.

    The default readout is ``y = z . w`` with no intercept, so a reservoir
    whose signal has collapsed to zero also predicts zero.  ``fit_bias``
    appends a constant column and fits an intercept as well.

    Args:
        signal: a :class:`SignalMatrix` or an ``(L, M)`` array of ``z_t`` rows.
        target: full-length target aligned with the signal rows.
        segmentation: required when ``signal`` is a plain array.
        fit_bias: also fit a constant offset.

    Raises:
        DegenerateReservoirError: if every training-row signal is zero.
    """
    if isinstance(signal, SignalMatrix):
        values = signal.values
        segmentation = segmentation or signal.segmentation
    else:
        values = np.asarray(signal, dtype=float)
        if segmentation is None:
            raise ValueError("segmentation is required for a raw signal array")
    target = np.asarray(target, dtype=float)
    if target.shape[0] != values.shape[0]:
        raise ValueError(f"target length {target.shape[0]} != signal rows {values.shape[0]}")
    h = values[segmentation.train]
    if h.shape[0] == 0:
        raise ValueError("empty training segment")
    if not np.any(h):
        raise DegenerateReservoirError("reservoir signal is identically zero on the training segment")
    design = _design(h) if fit_bias else h
    sol = np.linalg.pinv(design, rcond=PINV_RCOND) @ target[segmentation.train]
    if fit_bias:
        return ReadoutWeights(sol[:-1], float(sol[-1]))
    return ReadoutWeights(sol, 0.0)


def predict(signal: SignalMatrix | np.ndarray, w: ReadoutWeights) -> np.ndarray:
    """``y_t = z_t . w + bias`` for every row of the signal."""
    values = signal.values if isinstance(signal, SignalMatrix) else np.asarray(signal, dtype=float)
    values = np.atleast_2d(values)
    if values.shape[1] != w.weights.shape[0]:
        raise ValueError(f"signal has {values.shape[1]} columns, weights {w.weights.shape[0]}")
    return values @ w.weights + w.bias


def nmse(predicted: Sequence[float], target: Sequence[float]) -> float:
    """``sum (target - predicted)^2 / sum target^2`` over the given (test) segment."""
    y = np.asarray(predicted, dtype=float)
    yh = np.asarray(target, dtype=float)
    if y.shape != yh.shape or y.size == 0:
        raise ValueError("predicted and target must be non-empty and equally shaped")
    den = float(np.sum(yh**2))
    if den == 0.0:
        raise ZeroDivisionError("target is identically zero")
    return float(np.sum((yh - y) ** 2) / den)


def squared_correlation(y: Sequence[float], target: Sequence[float]) -> float:
    """``Cov^2(y, target) / (Var y Var target)``; NaN when either variance vanishes."""
    y = np.asarray(y, dtype=float)
    t = np.asarray(target, dtype=float)
    yc = y - y.mean()
    tc = t - t.mean()
    vy = float(yc @ yc)
    vt = float(tc @ tc)
    if vy <= 1e-300 or vt <= 1e-300:
        return float("nan")
    return float((yc @ tc) ** 2 / (vy * vt))


@dataclass
class MemoryCapacity:
    per_delay: np.ndarray
    total: float
    degenerate: list[int] = field(default_factory=list)


def memory_capacity(
    signal: SignalMatrix, u: Sequence[float], d_max: int = 10, fit_bias: bool = False
) -> MemoryCapacity:
    """``MC_d`` for ``d = 1..d_max`` and their mean, each delay with its own readout.

    A delay whose prediction or target has zero variance on the test segment
    scores 0 and is listed in ``degenerate``.
    """
    if d_max < 1:
        raise ValueError("d_max must be >= 1")
    seg = signal.segmentation
    per = np.zeros(d_max)
    degenerate = []
    for d in range(1, d_max + 1):
        target = delay_target(d, u)
        try:
            w = train_readout(signal, target, fit_bias=fit_bias)
        except DegenerateReservoirError:
            degenerate.append(d)
            continue
        y = predict(signal.values[seg.test], w)
        mc = squared_correlation(y, target[seg.test])
        if np.isnan(mc):
            degenerate.append(d)
            continue
        per[d - 1] = mc
    return MemoryCapacity(per, float(per.mean()), degenerate)


def evaluate_narma(signal: SignalMatrix, u: Sequence[float], p: int, fit_bias: bool = False) -> float:
    """Train on the training rows, return the NARMA-p test NMSE."""
    target = narma_target(p, u)
    w = train_readout(signal, target, fit_bias=fit_bias)
    seg = signal.segmentation
    return nmse(predict(signal.values[seg.test], w), target[seg.test])


class ShotCorrelation(NamedTuple):
    value: float
    used: int
    skipped: int


def shot_correlation(record: ShotRecord, qubit: int, lag: int, start: int = 0) -> ShotCorrelation:
    """Mean over ``t`` of the across-shot Pearson correlation of outcomes at ``t`` and ``t - lag``.

    ``qubit`` indexes the record's measured-qubit axis.  Steps where either
    outcome column is constant across shots are skipped and counted.
    """
    if lag < 0:
        raise ValueError("lag must be >= 0")
    if lag == 0:
        return ShotCorrelation(1.0, 0, 0)
    x = 1.0 - 2.0 * record.outcomes[:, :, qubit].astype(float)
    x = x - x.mean(axis=0)
    norms = np.sqrt(np.sum(x * x, axis=0))
    vals = []
    skipped = 0
    for t in range(max(lag, start + lag), x.shape[1]):
        a, b = norms[t], norms[t - lag]
        if a < 1e-12 or b < 1e-12:
            skipped += 1
            continue
        vals.append(float(x[:, t] @ x[:, t - lag]) / (a * b))
    if not vals:
        return ShotCorrelation(float("nan"), 0, skipped)
    return ShotCorrelation(float(np.mean(vals)), len(vals), skipped)
