"""Time the numba kernels against their numpy fallbacks.

Usage: python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from qesn import _kernels
from qesn.reservoir import ReservoirConfig, TrajectoryProgram
from qesn.states import random_density_matrix


def bench_superop(num_qubits: int, repeat: int) -> dict:
    rng = np.random.default_rng(0)
    rho = random_density_matrix(num_qubits, rng).matrix
    sup = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    out = {}
    for name, fn in (("numpy", _kernels.superop_1q_numpy), ("numba", _kernels.superop_1q_numba)):
        fn(rho, sup, 0, num_qubits)  # compile / warm up
        t = min(timeit.repeat(lambda: [fn(rho, sup, q, num_qubits) for q in range(num_qubits)], number=20, repeat=repeat))
        out[name] = t / 20
    return out


def bench_trajectory(num_qubits: int, shots: int, repeat: int) -> dict:
    cfg = ReservoirConfig(num_qubits=num_qubits, noise={"kind": "amplitude_damping", "gamma": 0.05})
    prog = TrajectoryProgram(cfg)
    psi = np.zeros((shots, 1 << num_qubits), dtype=complex)
    psi[:, 0] = 1
    uni = np.random.default_rng(0).random((shots, prog.draws))
    out = {}
    for name, fn in (("numpy", _kernels.trajectory_step_numpy), ("numba", _kernels.trajectory_step_numba)):
        prog.run(psi, 0.05, uni, fn)
        t = min(timeit.repeat(lambda: prog.run(psi, 0.05, uni, fn), number=5, repeat=repeat))
        out[name] = t / 5
    return out


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"{'kernel':<28}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}")
    for n in (3, 5, 7):
        r = bench_superop(n, args.repeat)
        print(f"{f'superop_1q all qubits N={n}':<28}{r['numpy'] * 1e3:>12.3f}{r['numba'] * 1e3:>12.3f}{r['numpy'] / r['numba']:>10.1f}")
    for n, s in ((3, 256), (5, 256), (7, 256)):
        r = bench_trajectory(n, s, args.repeat)
        print(f"{f'trajectory step N={n} S={s}':<28}{r['numpy'] * 1e3:>12.3f}{r['numba'] * 1e3:>12.3f}{r['numpy'] / r['numba']:>10.1f}")


if __name__ == "__main__":
    main()
