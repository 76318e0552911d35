"""Command-line front end.

Every subcommand that produces data writes it together with a
``manifest.json`` that records the resolved configuration and seed, so the
output directory is enough to reproduce itself.  Exit codes: 0 success,
1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import shutil
import sys
import tempfile
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Iterator, Mapping

import numpy as np

from . import __version__
from ._kernels import backend_name
from .channels import (
    ChannelError,
    bloch_affine,
    classify_pure_output,
    contraction_estimate,
    fixed_points,
    make_channel,
)
from .experiments import (
    SweepSpec,
    decoherence_track,
    noise_comparison_sweep,
    read_records,
    separability_vs_input,
    write_records,
)
from .learning import (
    DegenerateReservoirError,
    evaluate_narma,
    generate_input,
    memory_capacity,
    shot_correlation,
)
from .reservoir import ConfigError, ReservoirConfig, Segmentation, run_reservoir
from .states import rx_matrix, rz_matrix

SCHEMA_VERSION = 1
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("qesn")


class UsageError(Exception):
    """Bad command line or configuration; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------


def load_json(path: str | None, what: str) -> dict:
    if path is None:
        raise UsageError(f"--{what} is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} file not found: {path}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise UsageError(f"{path}: top level must be an object")
    if data.get("schema_version") != SCHEMA_VERSION:
        raise UsageError(f"{path}: schema_version must be {SCHEMA_VERSION}, got {data.get('schema_version')!r}")
    return data


def resolve_seed(cli_seed: int | None, config_seed: Any) -> int:
    if cli_seed is not None:
        return int(cli_seed)
    if config_seed is None:
        raise UsageError("no seed given: set 'seed' in the config or pass --seed")
    return int(config_seed)


def reservoir_from_config(data: Mapping[str, Any], seed: int) -> ReservoirConfig:
    res = data.get("reservoir")
    if not isinstance(res, Mapping):
        raise UsageError("config needs a 'reservoir' object")
    missing = [k for k in ("num_qubits", "noise") if k not in res]
    if missing:
        raise UsageError(f"reservoir config must set {missing} explicitly")
    if "seed" in res:
        raise UsageError("put the seed at the top level of the config, not inside 'reservoir'")
    try:
        return ReservoirConfig.from_dict({**res, "seed": seed})
    except (ConfigError, ChannelError) as exc:
        raise UsageError(str(exc)) from exc


def segmentation_from_config(data: Mapping[str, Any]) -> Segmentation:
    if "length" not in data:
        raise UsageError("config must set 'length'")
    try:
        length = int(data["length"])
        washout = int(data.get("washout", 10))
        test = data.get("test_length")
        return Segmentation.default(length, washout, None if test is None else int(test))
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad segmentation: {exc}") from exc


# ---------------------------------------------------------------------------
# output handling
# ---------------------------------------------------------------------------


def _replayable(cfg: ReservoirConfig) -> dict:
    """Reservoir block for a manifest; the seed lives at the top level."""
    return {k: v for k, v in cfg.to_dict().items() if k != "seed"}


def _json_safe(obj: Any) -> Any:
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    return obj


def dump_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(_json_safe(obj), indent=2, sort_keys=True) + "\n")


@contextmanager
def staged_output(out: str | None) -> Iterator[Path]:
    """Yield a staging directory whose files move into ``out`` only on success."""
    if out is None:
        raise UsageError("--out is required")
    dest = Path(out)
    dest.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=dest))
    try:
        yield stage
        for f in sorted(stage.iterdir()):
            os.replace(f, dest / f.name)
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def manifest(args: argparse.Namespace, config: Any, seed: int | None, outputs: list[str], started: float) -> dict:
    return {
        "command": args.command,
        "code_version": __version__,
        "kernel_backend": backend_name(),
        "seed": seed,
        "config": config,
        "input": getattr(args, "config", None) or getattr(args, "spec", None),
        "outputs": outputs,
        "duration_s": round(time.perf_counter() - started, 3),
    }


def _print_json_or(args, payload: dict, text: str) -> None:
    if args.json:
        print(json.dumps(_json_safe(payload), indent=2, sort_keys=True))
    else:
        print(text)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def compute_metrics(signal, u, tasks) -> dict:
    out: dict[str, Any] = {}
    for task in tasks:
        try:
            if task == "mc":
                mc = memory_capacity(signal, u)
                out["mc"] = mc.total
                out["mc_d"] = mc.per_delay.tolist()
            elif task.startswith("narma"):
                out[f"{task}_nmse"] = evaluate_narma(signal, u, int(task[5:]))
            else:
                raise UsageError(f"unknown task {task!r}")
        except (DegenerateReservoirError, ZeroDivisionError) as exc:
            out[f"{task}_error"] = f"{type(exc).__name__}: {exc}"
    return out


def cmd_run(args) -> int:
    started = time.perf_counter()
    data = load_json(args.config, "config")
    seed = resolve_seed(args.seed, data.get("seed"))
    cfg = reservoir_from_config(data, seed)
    seg = segmentation_from_config(data)
    tasks = list(data.get("tasks", ["narma2", "narma5", "mc"]))
    u = generate_input(seg.length)
    signal, record = run_reservoir(u, cfg, seg, jobs=args.jobs)
    metrics = {"config_hash": cfg.config_hash(), "seed": seed, **compute_metrics(signal, u, tasks)}
    with staged_output(args.out) as stage:
        signal.to_csv(stage / "H.csv")
        dump_json(stage / "metrics.json", metrics)
        outputs = ["H.csv", "H.meta.json", "metrics.json", "manifest.json"]
        if record is not None:
            record.save(stage / "shots.npz")
            outputs.append("shots.npz")
        resolved = {**data, "reservoir": _replayable(cfg), "seed": seed}
        dump_json(stage / "manifest.json", manifest(args, resolved, seed, outputs, started))
    _print_json_or(args, metrics, " ".join(f"{k}={v:.6g}" for k, v in metrics.items() if isinstance(v, float)))
    return EXIT_OK


def _load_spec(args) -> tuple[dict, SweepSpec]:
    data = load_json(args.spec, "spec")
    body = {k: v for k, v in data.items() if k != "schema_version"}
    if args.seed is not None:
        body["seeds"] = [args.seed]
    elif not body.get("seeds"):
        raise UsageError("no seeds given: set 'seeds' in the spec or pass --seed")
    if "template" not in body or not isinstance(body["template"], Mapping):
        raise UsageError("spec needs a 'template' reservoir config")
    if "num_qubits" not in body["template"]:
        raise UsageError("template must set num_qubits explicitly")
    try:
        return data, SweepSpec.from_dict(body)
    except (ConfigError, ChannelError, KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"bad sweep spec: {exc}") from exc


def cmd_sweep(args) -> int:
    started = time.perf_counter()
    data, spec = _load_spec(args)
    cells = spec.cells()
    if args.dry_run:
        plan = [
            {"noise": k, "gamma": g, "seed": s, "cell_hash": spec.cell_hash(k, g, s), "tasks": list(spec.tasks)}
            for k, g, s in cells
        ]
        _print_json_or(
            args,
            {"cells": plan},
            "\n".join(f"{p['noise']:<20} gamma={p['gamma']:<10.6g} seed={p['seed']:<4} {p['cell_hash']}" for p in plan)
            + f"\n{len(plan)} cells, {len(spec.tasks)} task(s) each",
        )
        return EXIT_OK
    if args.out is None:
        raise UsageError("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    partial = out / "results.partial.csv"
    final = out / "results.csv"
    existing: list[dict] = []
    if args.resume:
        for p in (final, partial):
            if p.is_file():
                existing.extend(read_records(p))
    # checkpoint file: previous good rows first, then each new cell as it lands
    with open(partial, "w", newline="") as fh:
        write_records(fh, existing, header=True)
        fh.flush()

        def checkpoint(rows):
            write_records(fh, rows, header=False)
            fh.flush()

        result = noise_comparison_sweep(spec, jobs=args.jobs, existing=existing, on_cell=checkpoint)
    for r in result.failures:
        log.error("cell %s gamma=%s seed=%s task=%s failed: %s", r["noise"], r["gamma"], r["seed"], r["task"], r["error"])
    with staged_output(args.out) as stage:
        result.to_csv(stage / "results.csv")
        dump_json(stage / "summary.json", result.summary())
        dump_json(
            stage / "manifest.json",
            manifest(args, {**data, **spec.to_dict()}, None, ["results.csv", "summary.json", "manifest.json"], started),
        )
    partial.unlink(missing_ok=True)
    msg = f"{len(cells)} cells, {result.metadata['computed_cells']} computed, {len(result.failures)} failed rows"
    _print_json_or(args, {"cells": len(cells), "computed": result.metadata["computed_cells"], "failed": len(result.failures)}, msg)
    return EXIT_RUNTIME if result.failures else EXIT_OK


def _parse_params(items: list[str]) -> dict[str, float]:
    params = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"channel parameter {item!r} must look like name=value")
        try:
            params[key] = float(value)
        except ValueError as exc:
            raise UsageError(f"channel parameter {key} is not a number: {value!r}") from exc
    return params


def cmd_channel(args) -> int:
    try:
        ch = make_channel(args.kind, **_parse_params(args.params))
    except (ChannelError, TypeError, KeyError) as exc:
        raise UsageError(f"invalid channel: {exc}") from exc
    amap = bloch_affine(ch)
    displacement = float(np.linalg.norm(amap.translation))
    unital = displacement < 1e-10
    pure = classify_pure_output(ch)
    contraction = contraction_estimate(ch, args.samples, np.random.default_rng(args.seed if args.seed is not None else 0))
    gate = rz_matrix(args.angle) @ rx_matrix(args.angle)
    fp = fixed_points(ch, gate)
    verdict = "unital" if unital else f"non-unital, displacement {displacement:.3f}"
    payload = {
        "kind": args.kind,
        "params": _parse_params(args.params),
        "unital": unital,
        "displacement": displacement,
        "bloch_linear": amap.linear,
        "bloch_translation": amap.translation,
        "pure_output": pure.kind,
        "pure_output_states": [s.tolist() for s in pure.states],
        "antipodal": pure.antipodal,
        "contraction_estimate": contraction,
        "fixed_point_angle": args.angle,
        "fixed_point_multiplicity": fp.multiplicity,
    }
    lines = [
        f"{verdict}, pure output: {pure}",
        "bloch map: r -> M r + c",
        "  M = " + np.array2string(amap.linear, precision=4, suppress_small=True).replace("\n", "\n      "),
        "  c = " + np.array2string(amap.translation, precision=4, suppress_small=True),
        f"contraction estimate ({args.samples} pairs): {contraction:.6f}",
        f"fixed points under RZ({args.angle:g})RX({args.angle:g}): multiplicity {fp.multiplicity}",
    ]
    _print_json_or(args, payload, "\n".join(lines))
    return EXIT_OK


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def cmd_decoherence(args) -> int:
    started = time.perf_counter()
    data = load_json(args.config, "config")
    seed = resolve_seed(args.seed, data.get("seed"))
    cfg = reservoir_from_config(data, seed)
    track = decoherence_track(cfg, steps=args.steps, repetitions=args.repetitions, seed=seed)
    with staged_output(args.out) as stage:
        rows = zip(range(1, args.steps + 1), track.noisy, track.noiseless, track.unitary_only)
        _write_csv(stage / "decoherence.csv", ["t", "noisy", "noiseless", "unitary_only"], rows)
        resolved = {**data, "reservoir": _replayable(cfg), "seed": seed, "steps": args.steps, "repetitions": args.repetitions}
        dump_json(stage / "manifest.json", manifest(args, resolved, seed, ["decoherence.csv", "manifest.json"], started))
    tail = slice(max(0, args.steps - 10), None)
    payload = {
        "first": {"noisy": track.noisy[0], "noiseless": track.noiseless[0]},
        "last": {"noisy": track.noisy[-1], "noiseless": track.noiseless[-1]},
        "tail_mean": {"noisy": float(track.noisy[tail].mean()), "noiseless": float(track.noiseless[tail].mean())},
    }
    text = (
        f"T(rho_t, I/d) noisy: {track.noisy[0]:.4f} -> {track.noisy[-1]:.4f}; "
        f"noiseless: {track.noiseless[0]:.4f} -> {track.noiseless[-1]:.4g}"
    )
    _print_json_or(args, payload, text)
    return EXIT_OK


def cmd_separability(args) -> int:
    started = time.perf_counter()
    data = load_json(args.config, "config")
    seed = resolve_seed(args.seed, data.get("seed"))
    cfg = reservoir_from_config(data, seed)
    try:
        curve = separability_vs_input(cfg, args.num_states, args.pairs, seed=seed, max_distance=args.max_distance)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    with staged_output(args.out) as stage:
        rows = zip(curve.distance_from_mixed, curve.input_gap, curve.separability)
        _write_csv(stage / "separability.csv", ["distance_from_mixed", "input_gap", "separability"], rows)
        resolved = {**data, "reservoir": _replayable(cfg), "seed": seed, "num_states": args.num_states, "pairs": args.pairs}
        dump_json(stage / "manifest.json", manifest(args, resolved, seed, ["separability.csv", "manifest.json"], started))
    ratio = curve.separability / np.maximum(curve.distance_from_mixed, 1e-300)
    payload = {"rows": len(curve.separability), "mean": float(curve.separability.mean()), "max_ratio": float(ratio.max())}
    _print_json_or(args, payload, f"{payload['rows']} rows, mean separability {payload['mean']:.4g}, max T/T0 {payload['max_ratio']:.4f}")
    return EXIT_OK


def cmd_correlations(args) -> int:
    started = time.perf_counter()
    data = load_json(args.config, "config")
    seed = resolve_seed(args.seed, data.get("seed"))
    cfg = reservoir_from_config(data, seed).replace(backend="trajectory")
    seg = segmentation_from_config(data)
    u = generate_input(seg.length)
    _, record = run_reservoir(u, cfg, seg, jobs=args.jobs)
    rows = []
    for qi, q in enumerate(record.qubits):
        for lag in range(1, args.max_lag + 1):
            c = shot_correlation(record, qi, lag, start=seg.washout)
            rows.append((q, lag, c.value, c.used, c.skipped))
    with staged_output(args.out) as stage:
        _write_csv(stage / "correlations.csv", ["qubit", "lag", "correlation", "used_steps", "skipped_steps"], rows)
        resolved = {**data, "reservoir": _replayable(cfg), "seed": seed, "max_lag": args.max_lag}
        dump_json(stage / "manifest.json", manifest(args, resolved, seed, ["correlations.csv", "manifest.json"], started))
    by_lag = {lag: float(np.nanmean([r[2] for r in rows if r[1] == lag])) for lag in range(1, args.max_lag + 1)}
    _print_json_or(args, {"mean_by_lag": by_lag}, "\n".join(f"lag {k}: {v:.4f}" for k, v in by_lag.items()))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="overrides the seed in the config")
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker threads")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--json", action="store_true", help="machine-readable stdout")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="qesn", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"qesn {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("run", parents=[common], help="drive one reservoir and score its readout")
    s.add_argument("--config", required=False)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", parents=[common], help="gamma sweep over noise kinds")
    s.add_argument("--spec", required=False)
    s.add_argument("--resume", action="store_true", help="reuse finished cells from --out")
    s.add_argument("--dry-run", action="store_true", help="print the cell plan only")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("channel", parents=[common], help="diagnostics of one qubit channel")
    s.add_argument("kind")
    s.add_argument("params", nargs="*", help="name=value pairs, e.g. gamma=0.3")
    s.add_argument("--angle", type=float, default=math.pi / 4, help="rotation angle of the fixed-point gate")
    s.add_argument("--samples", type=int, default=500, help="state pairs for the contraction estimate")
    s.set_defaults(func=cmd_channel)

    s = sub.add_parser("decoherence", parents=[common], help="distance from I/2^N along random-input runs")
    s.add_argument("--config", required=False)
    s.add_argument("--steps", type=int, default=40)
    s.add_argument("--repetitions", type=int, default=10)
    s.set_defaults(func=cmd_decoherence)

    s = sub.add_parser("separability", parents=[common], help="encoding separability vs distance from I/2^N")
    s.add_argument("--config", required=False)
    s.add_argument("--num-states", type=int, default=100)
    s.add_argument("--pairs", type=int, default=20)
    s.add_argument("--max-distance", type=float, default=None)
    s.set_defaults(func=cmd_separability)

    s = sub.add_parser("correlations", parents=[common], help="shot-to-shot outcome correlations vs lag")
    s.add_argument("--config", required=False)
    s.add_argument("--max-lag", type=int, default=5)
    s.set_defaults(func=cmd_correlations)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"qesn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("qesn: error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"qesn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - top-level handler
        log.debug("traceback", exc_info=True)
        print(f"qesn: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
