"""Dense spin-1/2 operator construction for the reference solvers."""

from __future__ import annotations

import numpy as np

# Dense matrices scale as 4^N in memory; 10 qubits (1024x1024 complex) is
# the reference-solver ceiling.
DENSE_CAP = 10

PAULI = (
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)


class DimensionLimitError(ValueError):
    """Reference solver dimension limit exceeded."""


def build_spin_ops(n_qubits: int) -> np.ndarray:
    """Spin operators S[q, i] = (pauli_i / 2) acting on qubit q, embedded in
    the 2^n-dimensional product space. Shape (n, 3, 2^n, 2^n).

    Satisfies [S_i^a, S_j^b] = i delta_ab eps_ijk S_k^a and, on a single
    qubit, S_i S_j = (1/4) delta_ij + (i/2) eps_ijk S_k.
    """
    if n_qubits < 1:
        raise ValueError("n_qubits must be >= 1")
    if n_qubits > DENSE_CAP:
        raise DimensionLimitError(
            f"reference solver dimension limit: n_qubits={n_qubits} > {DENSE_CAP}"
        )
    dim = 2 ** n_qubits
    ops = np.empty((n_qubits, 3, dim, dim), dtype=complex)
    eye2 = np.eye(2, dtype=complex)
    for q in range(n_qubits):
        for i in range(3):
            m = np.eye(1, dtype=complex)
            for r in range(n_qubits):
                m = np.kron(m, PAULI[i] / 2 if r == q else eye2)
            ops[q, i] = m
    return ops
