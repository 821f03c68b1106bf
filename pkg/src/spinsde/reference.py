"""Exact quantum evolution at desk scale: dense von Neumann integration and
the equivalent Bloch-coefficient ODE, the ground truth for every stochastic
result.

States are carried either as 2^N x 2^N density matrices or as real Bloch
tensors b with one index per qubit, each in {0, x, y, z} (axis code 0 is
the identity slot). The two representations are linked by

    rho = (1/2^N) sum_mu 4^|mu| b_mu S_mu,    b_mu = tr(rho S_mu),

where S_mu is the product of the indicated spin components and |mu| counts
non-identity slots.
"""

from __future__ import annotations

import itertools
import math
from functools import reduce

import numpy as np

from .algebra import SystemSpec
from .spinops import PAULI, build_spin_ops

AXIS_LABELS = "0xyz"

# Per-qubit factor of 4^|mu| S_mu / 2^N: identity slot contributes I/2,
# axis slots contribute the full Pauli matrix.
_P_UP = np.stack([np.eye(2, dtype=complex) / 2, *PAULI])
# Per-qubit factor of S_mu for trace extraction: I or pauli/2.
_P_DOWN = np.stack([np.eye(2, dtype=complex), *(p / 2 for p in PAULI)])


def multi_indices(n: int) -> list[tuple[int, ...]]:
    """All 4^n multi-indices in row-major order; position k of a tuple is
    qubit k's axis code (0 = identity, 1..3 = x, y, z)."""
    return list(itertools.product(range(4), repeat=n))


def mu_weight(mu: tuple[int, ...]) -> int:
    return sum(1 for a in mu if a != 0)


def _interleave_perm(n: int) -> list[int]:
    perm = []
    for q in range(n):
        perm += [q, n + q]
    return perm


def density_from_bloch(b: np.ndarray, ops=None) -> np.ndarray:
    """Bloch tensor (shape (4,)*n) to density matrix. The normalization
    slot b[0,...,0] must be 1 for a state; not checked here so generator
    columns can be built from unnormalized tensors."""
    b = np.asarray(b, dtype=float)
    n = b.ndim
    r = b.astype(complex)
    for _ in range(n):
        # consume one qubit axis, append its (row, col) 2x2 indices
        r = np.tensordot(r, _P_UP, axes=([0], [0]))
    # now indexed (i1, j1, ..., in, jn); regroup rows and columns
    perm = [2 * q for q in range(n)] + [2 * q + 1 for q in range(n)]
    return r.transpose(perm).reshape(2 ** n, 2 ** n)


def bloch_from_density(rho: np.ndarray, ops=None, check: bool = True) -> np.ndarray:
    """Density matrix to Bloch tensor, b_mu = tr(rho S_mu)."""
    rho = np.asarray(rho, dtype=complex)
    dim = rho.shape[0]
    n = int(round(math.log2(dim)))
    if rho.shape != (dim, dim) or 2 ** n != dim:
        raise ValueError(f"density matrix shape {rho.shape} is not 2^n x 2^n")
    if check and np.max(np.abs(rho - rho.conj().T)) > 1e-10:
        raise ValueError("density matrix is not Hermitian")
    t = rho.reshape((2,) * (2 * n)).transpose(_interleave_perm(n))
    # tr(rho S) pairs rho_{ij} with S_{ji}
    down = _P_DOWN.transpose(1, 2, 0)  # indexed (row, col, axis)
    r = t
    for _ in range(n):
        # contract (i_q, j_q) against S_{j i}, appending the axis slot
        r = np.tensordot(r, down, axes=([0, 1], [1, 0]))
    return r.real.copy()


def check_density(rho: np.ndarray) -> None:
    """Validate the state invariants: Hermitian, unit trace, spectrum
    bounded below by -1e-10. Raises ValueError otherwise."""
    rho = np.asarray(rho, dtype=complex)
    if np.max(np.abs(rho - rho.conj().T)) > 1e-12:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho).real - 1.0) > 1e-12 or abs(np.trace(rho).imag) > 1e-12:
        raise ValueError("density matrix trace is not 1")
    if np.linalg.eigvalsh(rho).min() < -1e-10:
        raise ValueError("density matrix has a negative eigenvalue")


_PRODUCT_DIRECTIONS = {
    "up": np.array([0.0, 0.0, 0.5]),
    "down": np.array([0.0, 0.0, -0.5]),
    "+z": np.array([0.0, 0.0, 0.5]),
    "-z": np.array([0.0, 0.0, -0.5]),
    "+x": np.array([0.5, 0.0, 0.0]),
    "-x": np.array([-0.5, 0.0, 0.0]),
    "+y": np.array([0.0, 0.5, 0.0]),
    "-y": np.array([0.0, -0.5, 0.0]),
}


def product_state_bloch(labels) -> np.ndarray:
    """Bloch tensor of a product state given per-qubit labels
    (up/down/+x/-x/+y/-y, +z/-z as aliases)."""
    vecs = []
    for lab in labels:
        if lab not in _PRODUCT_DIRECTIONS:
            raise ValueError(f"unknown product-state label {lab!r}")
        v = _PRODUCT_DIRECTIONS[lab]
        vecs.append(np.array([1.0, *v]))
    return reduce(np.multiply.outer, vecs)


def singlet_bloch() -> np.ndarray:
    """Two-qubit singlet: vanishing single-qubit vectors, b_ij = -delta_ij/4."""
    b = np.zeros((4, 4))
    b[0, 0] = 1.0
    for i in (1, 2, 3):
        b[i, i] = -0.25
    return b


def build_hamiltonian(spec: SystemSpec, ops: np.ndarray, t: float) -> np.ndarray:
    """H(t) = -sum_q B^q(t).S^q - sum_pairs S^a_i J_ij(t) S^b_j."""
    dim = ops.shape[-1]
    h = np.zeros((dim, dim), dtype=complex)
    for q in range(spec.n_qubits):
        b = spec.field_at(q, t)
        for i in range(3):
            if b[i] != 0.0:
                h -= b[i] * ops[q, i]
    for (a, bq, j) in spec.couplings_at(t):
        for i in range(3):
            for k in range(3):
                if j[i, k] != 0.0:
                    h -= j[i, k] * (ops[a, i] @ ops[bq, k])
    return h


def _segments(spec: SystemSpec, t_final: float,
              t0: float = 0.0) -> list[tuple[float, float]]:
    edges = [t0] + spec.boundaries_within(t0, t_final) + [t_final]
    return [(a, b) for a, b in zip(edges, edges[1:]) if b > a]


def evolve_von_neumann(rho0: np.ndarray, spec: SystemSpec, ops: np.ndarray,
                       t_final: float, dt: float, t0: float = 0.0) -> np.ndarray:
    """Integrate d rho/dt = -i[H(t), rho] from t0 (default 0) to t_final
    with fixed-step RK4, sub-stepping each piecewise-constant schedule
    segment so boundaries never straddle a step."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    rho = np.array(rho0, dtype=complex)
    for (ta, tb) in _segments(spec, t_final, t0):
        h = build_hamiltonian(spec, ops, ta)
        nsub = max(1, math.ceil((tb - ta) / dt - 1e-12))
        step = (tb - ta) / nsub

        def rhs(r):
            return -1j * (h @ r - r @ h)

        for _ in range(nsub):
            k1 = rhs(rho)
            k2 = rhs(rho + 0.5 * step * k1)
            k3 = rhs(rho + 0.5 * step * k2)
            k4 = rhs(rho + step * k3)
            rho = rho + (step / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return rho


def quantum_generator(spec: SystemSpec, ops: np.ndarray, t: float) -> np.ndarray:
    """Generator L of the Bloch-coefficient dynamics, (db/dt)_mu =
    sum_nu L[mu, nu] b_nu, with tensors flattened in multi_indices order.

    Column nu is built by evolving the basis contribution
    rho_nu = (4^|nu| / 2^N) S_nu through the von Neumann bracket and reading
    the result back as a Bloch tensor. The normalization row is identically
    zero (H is traceless)."""
    n = spec.n_qubits
    dim = 4 ** n
    h = build_hamiltonian(spec, ops, t)
    eye = np.eye(2 ** n, dtype=complex)
    ell = np.empty((dim, dim))
    for col, nu in enumerate(multi_indices(n)):
        m = eye
        for q, a in enumerate(nu):
            if a != 0:
                m = m @ ops[q, a - 1]
        rho_nu = (4.0 ** mu_weight(nu) / 2 ** n) * m
        d = -1j * (h @ rho_nu - rho_nu @ h)
        ell[:, col] = bloch_from_density(d, check=False).reshape(-1)
    ell[0, :] = 0.0
    return ell


def evolve_bloch(b0: np.ndarray, spec: SystemSpec, ops: np.ndarray,
                 t_final: float, dt: float, t0: float = 0.0) -> np.ndarray:
    """Integrate db/dt = L(t) b from t0 (default 0) to t_final with
    fixed-step RK4; the generator is rebuilt once per schedule segment."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    b0 = np.asarray(b0, dtype=float)
    shape = b0.shape
    v = b0.reshape(-1).copy()
    for (ta, tb) in _segments(spec, t_final, t0):
        ell = quantum_generator(spec, ops, ta)
        nsub = max(1, math.ceil((tb - ta) / dt - 1e-12))
        step = (tb - ta) / nsub
        for _ in range(nsub):
            k1 = ell @ v
            k2 = ell @ (v + 0.5 * step * k1)
            k3 = ell @ (v + 0.5 * step * k2)
            k4 = ell @ (v + step * k3)
            v = v + (step / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return v.reshape(shape)
