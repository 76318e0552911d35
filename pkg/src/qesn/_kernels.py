"""Hot inner loops for density-matrix and batched state-vector evolution.

Every kernel has a numba implementation and a pure-numpy one with the same
signature.  The numba path is used when numba imports cleanly and the
environment variable ``QESN_DISABLE_NUMBA`` is unset (or ``0``).  Both paths
are always importable under explicit names so tests can compare them.

Conventions: qubit 0 is the most significant bit of a basis index.  Density
matrices are dense ``(D, D)`` complex128 arrays; batched state vectors are
``(S, D)`` complex128 arrays with one row per shot.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLE = os.environ.get("QESN_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _DISABLE

# op codes of the per-step trajectory program
OP_UNITARY = 0
OP_KRAUS = 1
OP_CNOT = 2


def _maybe_njit(func):
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True, nogil=True)(func)


# ---------------------------------------------------------------------------
# density matrix: single-qubit superoperator
# ---------------------------------------------------------------------------


def superop_1q_numpy(rho: np.ndarray, superop: np.ndarray, qubit: int, num_qubits: int) -> np.ndarray:
    """Apply a 4x4 single-qubit superoperator to ``rho``.

    ``superop`` acts on the row-major vectorisation of the 2x2 block
    ``(rho_00, rho_01, rho_10, rho_11)`` of the target qubit, so a Kraus set
    ``{K}`` corresponds to ``sum(kron(K, K.conj()))``.
    """
    left = 1 << qubit
    right = 1 << (num_qubits - qubit - 1)
    r = rho.reshape(left, 2, right, left, 2, right)
    s = superop.reshape(2, 2, 2, 2)
    out = np.einsum("abcd,icjkdl->iajkbl", s, r, optimize=False)
    return np.ascontiguousarray(out.reshape(rho.shape))


def _superop_1q_loop(rho, superop, qubit, num_qubits):
    dim = rho.shape[0]
    mask = 1 << (num_qubits - 1 - qubit)
    out = np.empty_like(rho)
    for i0 in range(dim):
        if i0 & mask:
            continue
        i1 = i0 | mask
        for j0 in range(dim):
            if j0 & mask:
                continue
            j1 = j0 | mask
            v0 = rho[i0, j0]
            v1 = rho[i0, j1]
            v2 = rho[i1, j0]
            v3 = rho[i1, j1]
            out[i0, j0] = superop[0, 0] * v0 + superop[0, 1] * v1 + superop[0, 2] * v2 + superop[0, 3] * v3
            out[i0, j1] = superop[1, 0] * v0 + superop[1, 1] * v1 + superop[1, 2] * v2 + superop[1, 3] * v3
            out[i1, j0] = superop[2, 0] * v0 + superop[2, 1] * v1 + superop[2, 2] * v2 + superop[2, 3] * v3
            out[i1, j1] = superop[3, 0] * v0 + superop[3, 1] * v1 + superop[3, 2] * v2 + superop[3, 3] * v3
    return out


superop_1q_numba = _maybe_njit(_superop_1q_loop)


# ---------------------------------------------------------------------------
# batched state vectors
# ---------------------------------------------------------------------------


def _apply_1q_batch_numpy(psi, mat, qubit, num_qubits):
    shots = psi.shape[0]
    left = 1 << qubit
    right = 1 << (num_qubits - qubit - 1)
    v = psi.reshape(shots, left, 2, right)
    return np.einsum("ab,slbr->slar", mat, v, optimize=False).reshape(psi.shape)


def _basis_cnot_perm(dim, num_qubits, control, target):
    idx = np.arange(dim)
    cmask = 1 << (num_qubits - 1 - control)
    tmask = 1 << (num_qubits - 1 - target)
    return np.where(idx & cmask, idx ^ tmask, idx)


def trajectory_step_numpy(
    psi: np.ndarray,
    op_kind: np.ndarray,
    op_q0: np.ndarray,
    op_q1: np.ndarray,
    op_start: np.ndarray,
    op_count: np.ndarray,
    mats: np.ndarray,
    uniforms: np.ndarray,
    meas_mask: int,
    num_qubits: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Advance every shot in ``psi`` through one step program, then measure.

    Args:
        psi: ``(S, D)`` batch of normalised state vectors.
        op_kind, op_q0, op_q1, op_start, op_count: the op table. Unitaries and
            Kraus sets index into ``mats`` via ``op_start``/``op_count``.
        mats: ``(K, 2, 2)`` stack of single-qubit matrices.
        uniforms: ``(S, n_kraus_ops + 1)`` uniforms in [0, 1); one per Kraus
            op in program order, the last one drives the measurement.
        meas_mask: bit mask (over basis indices) of the measured qubits.

    Returns:
        The post-measurement batch and the sampled basis index per shot. Bits
        of the sampled index at unmeasured positions carry no meaning.
    """
    shots, dim = psi.shape
    rows = np.arange(shots)
    draw = 0
    psi = psi.copy()
    for n in range(op_kind.shape[0]):
        kind = op_kind[n]
        if kind == OP_UNITARY:
            psi = _apply_1q_batch_numpy(psi, mats[op_start[n]], op_q0[n], num_qubits)
        elif kind == OP_KRAUS:
            ks = mats[op_start[n] : op_start[n] + op_count[n]]
            left = 1 << int(op_q0[n])
            right = 1 << (num_qubits - int(op_q0[n]) - 1)
            v = psi.reshape(shots, left, 2, right)
            branches = np.einsum("kab,slbr->kslar", ks, v, optimize=False).reshape(len(ks), shots, dim)
            probs = np.einsum("ksd,ksd->ks", branches.conj(), branches).real
            cum = np.cumsum(probs, axis=0)
            thresh = uniforms[:, draw] * cum[-1]
            choice = np.minimum((cum < thresh[None, :]).sum(axis=0), len(ks) - 1)
            chosen = branches[choice, rows]
            psi = chosen / np.sqrt(probs[choice, rows])[:, None]
            draw += 1
        else:
            perm = _basis_cnot_perm(dim, num_qubits, op_q0[n], op_q1[n])
            psi = psi[:, perm]
    probs = (psi.real**2 + psi.imag**2)
    cum = np.cumsum(probs, axis=1)
    thresh = uniforms[:, draw] * cum[:, -1]
    picked = np.minimum((cum < thresh[:, None]).sum(axis=1), dim - 1)
    basis = np.arange(dim)
    keep = ((basis[None, :] ^ picked[:, None]) & meas_mask) == 0
    psi = np.where(keep, psi, 0.0)
    norm = np.sqrt(np.sum(psi.real**2 + psi.imag**2, axis=1))
    psi = psi / norm[:, None]
    return psi, picked


def _trajectory_step_loop(psi, op_kind, op_q0, op_q1, op_start, op_count, mats, uniforms, meas_mask, num_qubits):
    shots, dim = psi.shape
    out = psi.copy()
    picked = np.empty(shots, dtype=np.int64)
    max_k = 1
    for n in range(op_kind.shape[0]):
        if op_count[n] > max_k:
            max_k = op_count[n]
    branch = np.empty((max_k, dim), dtype=np.complex128)
    probs = np.empty(max_k)
    for s in range(shots):
        v = out[s]
        draw = 0
        for n in range(op_kind.shape[0]):
            kind = op_kind[n]
            if kind == OP_UNITARY:
                m = mats[op_start[n]]
                mask = 1 << (num_qubits - 1 - op_q0[n])
                for i0 in range(dim):
                    if i0 & mask:
                        continue
                    i1 = i0 | mask
                    a = v[i0]
                    b = v[i1]
                    v[i0] = m[0, 0] * a + m[0, 1] * b
                    v[i1] = m[1, 0] * a + m[1, 1] * b
            elif kind == OP_KRAUS:
                mask = 1 << (num_qubits - 1 - op_q0[n])
                count = op_count[n]
                for k in range(count):
                    m = mats[op_start[n] + k]
                    p = 0.0
                    for i0 in range(dim):
                        if i0 & mask:
                            continue
                        i1 = i0 | mask
                        a = v[i0]
                        b = v[i1]
                        x0 = m[0, 0] * a + m[0, 1] * b
                        x1 = m[1, 0] * a + m[1, 1] * b
                        branch[k, i0] = x0
                        branch[k, i1] = x1
                        p += x0.real * x0.real + x0.imag * x0.imag + x1.real * x1.real + x1.imag * x1.imag
                    probs[k] = p
                total = 0.0
                for k in range(count):
                    total += probs[k]
                thresh = uniforms[s, draw] * total
                choice = 0
                acc = 0.0
                for k in range(count):
                    acc += probs[k]
                    if acc < thresh:
                        choice += 1
                if choice > count - 1:
                    choice = count - 1
                scale = 1.0 / np.sqrt(probs[choice])
                for i in range(dim):
                    v[i] = branch[choice, i] * scale
                draw += 1
            else:
                cmask = 1 << (num_qubits - 1 - op_q0[n])
                tmask = 1 << (num_qubits - 1 - op_q1[n])
                for i in range(dim):
                    if (i & cmask) and not (i & tmask):
                        j = i | tmask
                        tmp = v[i]
                        v[i] = v[j]
                        v[j] = tmp
        total = 0.0
        for i in range(dim):
            total += v[i].real * v[i].real + v[i].imag * v[i].imag
        thresh = uniforms[s, draw] * total
        acc = 0.0
        idx = 0
        for i in range(dim):
            acc += v[i].real * v[i].real + v[i].imag * v[i].imag
            if acc < thresh:
                idx += 1
        if idx > dim - 1:
            idx = dim - 1
        picked[s] = idx
        norm = 0.0
        for i in range(dim):
            if ((i ^ idx) & meas_mask) != 0:
                v[i] = 0.0
            else:
                norm += v[i].real * v[i].real + v[i].imag * v[i].imag
        scale = 1.0 / np.sqrt(norm)
        for i in range(dim):
            v[i] = v[i] * scale
    return out, picked


trajectory_step_numba = _maybe_njit(_trajectory_step_loop)


if USE_NUMBA:
    superop_1q = superop_1q_numba
    trajectory_step = trajectory_step_numba
else:
    superop_1q = superop_1q_numpy
    trajectory_step = trajectory_step_numpy


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
