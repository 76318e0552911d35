import json
import os
import subprocess
import sys

import numpy as np
import pytest

from qesn import _kernels
from qesn.reservoir import ReservoirConfig, TrajectoryProgram, run_trajectories
from qesn.states import random_density_matrix

pytestmark = pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not installed")


class TestSuperopKernel:
    @pytest.mark.parametrize("n", [1, 2, 4])
    def test_numba_matches_numpy(self, n):
        rng = np.random.default_rng(n)
        rho = random_density_matrix(n, rng).matrix
        sup = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        for q in range(n):
            np.testing.assert_allclose(
                _kernels.superop_1q_numba(rho, sup, q, n), _kernels.superop_1q_numpy(rho, sup, q, n), atol=1e-13
            )

    def test_matches_dense_kron(self):
        rng = np.random.default_rng(0)
        rho = random_density_matrix(3, rng).matrix
        k = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        full = np.kron(np.kron(np.eye(2), k), np.eye(2))
        out = _kernels.superop_1q_numpy(rho, np.kron(k, k.conj()), 1, 3)
        np.testing.assert_allclose(out, full @ rho @ full.conj().T, atol=1e-13)


class TestTrajectoryKernel:
    @pytest.mark.parametrize(
        "noise",
        [None, {"kind": "amplitude_damping", "gamma": 0.2}, {"kind": "thermal_relaxation", "p_z": 0.1, "p_r0": 0.1, "p_r1": 0.05}],
    )
    def test_numba_matches_numpy(self, noise):
        cfg = ReservoirConfig(num_qubits=3, noise=noise, measured_qubits=(0, 2), split_factor=2, entangler="ring")
        prog = TrajectoryProgram(cfg)
        rng = np.random.default_rng(5)
        psi = rng.normal(size=(64, 8)) + 1j * rng.normal(size=(64, 8))
        psi /= np.linalg.norm(psi, axis=1, keepdims=True)
        for step in range(5):
            uni = rng.random((64, prog.draws))
            a, bits_a = prog.run(psi, 0.03 * step, uni, _kernels.trajectory_step_numpy)
            b, bits_b = prog.run(psi, 0.03 * step, uni, _kernels.trajectory_step_numba)
            np.testing.assert_array_equal(bits_a, bits_b)
            np.testing.assert_allclose(a, b, atol=1e-12)
            psi = a

    def test_full_runs_identical(self):
        cfg = ReservoirConfig(num_qubits=3, noise={"kind": "amplitude_damping", "gamma": 0.1}, shots=300, seed=4)
        u = np.linspace(-0.1, 0.1, 15)
        a = run_trajectories(u, cfg, kernel=_kernels.trajectory_step_numpy)
        b = run_trajectories(u, cfg, kernel=_kernels.trajectory_step_numba)
        np.testing.assert_array_equal(a.outcomes, b.outcomes)


def test_env_flag_selects_numpy_fallback():
    code = (
        "import json, numpy as np; from qesn import _kernels; "
        "from qesn.reservoir import ReservoirConfig, run_reservoir; "
        "cfg = ReservoirConfig(num_qubits=2, noise={'kind': 'amplitude_damping', 'gamma': 0.1}, shots=200, seed=1, backend='trajectory'); "
        "s, r = run_reservoir(np.linspace(0, 0.1, 20), cfg); "
        "print(json.dumps([_kernels.backend_name(), int(r.outcomes.sum()), s.values.tolist()]))"
    )
    results = {}
    for flag in ("1", "0"):
        env = {**os.environ, "QESN_DISABLE_NUMBA": flag}
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        results[flag] = json.loads(out.stdout)
    assert results["1"][0] == "numpy" and results["0"][0] == "numba"
    assert results["1"][1] == results["0"][1]
    np.testing.assert_allclose(results["1"][2], results["0"][2], atol=0)
