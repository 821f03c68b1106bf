"""Phase-space side of the method: the signed multilinear density, the
observable kernels, initial-ensemble sampling, and the ratio estimator
with batch-means errors and weight diagnostics.

A phase point is one real 3-vector per qubit. A quantum state's density
is the multilinear polynomial rho(S^1, ..., S^N) = sum_mu c_mu
prod_{q in mu} S^q_{i_q} with c_mu = (4^|mu| / 2^N) b_mu; it is signed
(takes negative values) and unnormalizable, which is why expectations are
formed as ratios of weighted sums.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .reference import AXIS_LABELS, multi_indices

# Kernel singularity guard: qubits with |S| at or below this radius are
# excluded from estimates that involve them.
EPS_RADIUS = 1e-12


class NormalizationCollapseError(RuntimeError):
    """The weight sum vanished; no estimate can be formed."""


@dataclass(frozen=True)
class PhaseDensity:
    """Multilinear polynomial over N qubits; coeffs has shape (4,)*N with
    the same index convention as Bloch tensors (0 = constant slot)."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (4,) * c.ndim:
            raise ValueError(f"coefficient tensor must be (4,)*n, got {c.shape}")
        object.__setattr__(self, "coeffs", c)

    @property
    def n_qubits(self) -> int:
        return self.coeffs.ndim

    def __call__(self, z) -> np.ndarray | float:
        return eval_density(self, z)


def density_from_bloch_poly(b: np.ndarray) -> PhaseDensity:
    """Promote a Bloch tensor to its phase-space polynomial,
    c_mu = (4^|mu| / 2^N) b_mu. For a normalized state the constant
    coefficient is 1/2^N."""
    b = np.asarray(b, dtype=float)
    n = b.ndim
    per_qubit = np.array([0.5, 2.0, 2.0, 2.0])
    scale = np.ones(())
    for _ in range(n):
        scale = np.multiply.outer(scale, per_qubit)
    return PhaseDensity(b * scale)


def _as_batch(z, n: int) -> tuple[np.ndarray, bool]:
    a = np.asarray(z, dtype=float)
    if a.shape == (n, 3):
        return a[None, :, :], True
    if a.ndim == 3 and a.shape[1:] == (n, 3):
        return a, False
    raise ValueError(f"phase point must have shape ({n}, 3) or (m, {n}, 3), got {a.shape}")


def _value_vectors(pos: np.ndarray) -> np.ndarray:
    """(m, n, 4) per-qubit evaluation vectors (1, Sx, Sy, Sz)."""
    m, n, _ = pos.shape
    v = np.empty((m, n, 4))
    v[:, :, 0] = 1.0
    v[:, :, 1:] = pos
    return v


def _contract(coeffs: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    """Fold the coefficient tensor against per-qubit 4-vectors; vecs is
    (m, n, 4), result is (m,)."""
    n = coeffs.ndim
    m = vecs.shape[0]
    r = np.broadcast_to(coeffs.reshape((1,) + coeffs.shape), (m,) + coeffs.shape)
    for q in range(n):
        r = np.einsum("ma,ma...->m...", vecs[:, q, :], r)
    return r


def eval_density(rho: PhaseDensity, z) -> np.ndarray | float:
    pos, single = _as_batch(z, rho.n_qubits)
    out = _contract(rho.coeffs, _value_vectors(pos))
    return float(out[0]) if single else out


def eval_partials(rho: PhaseDensity, z, derivs) -> np.ndarray | float:
    """Partial derivatives of the density polynomial.

    derivs is a sequence of (qubit, axis) pairs, axis in {0,1,2}, at most
    two entries on distinct qubits. Repeating a qubit returns exactly 0
    (multilinearity); malformed requests raise."""
    derivs = list(derivs)
    if len(derivs) > 2:
        raise ValueError("at most two derivatives are supported")
    n = rho.n_qubits
    for (q, ax) in derivs:
        if not (0 <= q < n):
            raise ValueError(f"derivative qubit {q} out of range")
        if ax not in (0, 1, 2):
            raise ValueError(f"derivative axis {ax} must be 0, 1, or 2")
    pos, single = _as_batch(z, n)
    qubits = [q for q, _ in derivs]
    if len(set(qubits)) < len(qubits):
        out = np.zeros(pos.shape[0])
        return 0.0 if single else out
    vecs = _value_vectors(pos)
    for (q, ax) in derivs:
        vecs[:, q, :] = 0.0
        vecs[:, q, ax + 1] = 1.0
    out = _contract(rho.coeffs, vecs)
    return float(out[0]) if single else out


def observable_name(mu: tuple[int, ...]) -> str:
    return ".".join(AXIS_LABELS[a] for a in mu)


def parse_observable(item, n: int) -> tuple[int, ...]:
    """Accepts either a dot-joined label string ("z.0") or a per-qubit
    label list (["z", "0"]); returns the axis-code tuple."""
    if isinstance(item, str):
        parts = item.split(".")
    else:
        parts = [str(p) for p in item]
    if len(parts) != n:
        raise ValueError(f"observable {item!r} must name all {n} qubits")
    mu = []
    for p in parts:
        if p not in AXIS_LABELS:
            raise ValueError(f"observable axis label {p!r} not one of 0, x, y, z")
        mu.append(AXIS_LABELS.index(p))
    return tuple(mu)


def default_observables(n: int) -> list[tuple[int, ...]]:
    """Every first- and second-order component: singles qubit-major, then
    qubit pairs with row-major axes."""
    obs = []
    for q in range(n):
        for ax in (1, 2, 3):
            mu = [0] * n
            mu[q] = ax
            obs.append(tuple(mu))
    for qa, qb in itertools.combinations(range(n), 2):
        for ax_a in (1, 2, 3):
            for ax_b in (1, 2, 3):
                mu = [0] * n
                mu[qa] = ax_a
                mu[qb] = ax_b
                obs.append(tuple(mu))
    return obs


def kernel(mu: tuple[int, ...], z) -> float | np.ndarray:
    """Observable kernel K_mu(z) = prod over qubits named by mu of
    3 S_i / (4 |S|^2). The empty index is the normalization kernel, 1.
    Radially invariant: sampling radii cancel in the ratio estimator."""
    n = len(mu)
    pos, single = _as_batch(z, n)
    out = np.ones(pos.shape[0])
    for q, ax in enumerate(mu):
        if ax == 0:
            continue
        r2 = np.einsum("mi,mi->m", pos[:, q, :], pos[:, q, :])
        if np.any(r2 <= EPS_RADIUS ** 2):
            raise ValueError(f"kernel undefined at |S^{q}| <= {EPS_RADIUS}")
        out = out * (0.75 * pos[:, q, ax - 1] / r2)
    return float(out[0]) if single else out


def _kernel_vectors(pos: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-qubit kernel 4-vectors (1, 3Sx/(4r^2), ...), shape (m, n, 4),
    plus the per-qubit underflow mask (m, n). Underflowed qubits get zero
    axis entries; callers exclude those rows from affected observables."""
    r2 = np.einsum("mqi,mqi->mq", pos, pos)
    under = r2 <= EPS_RADIUS ** 2
    r2safe = np.where(under, 1.0, r2)
    k = np.empty(pos.shape[:2] + (4,))
    k[:, :, 0] = 1.0
    k[:, :, 1:] = 0.75 * pos / r2safe[:, :, None]
    k[:, :, 1:][under] = 0.0
    return k, under


@dataclass
class Ensemble:
    """Weighted trajectory ensemble: positions (count, n, 3), signed
    weights (count,), a diverged flag per trajectory, and the sampling
    radius it was drawn with."""

    positions: np.ndarray
    weights: np.ndarray
    M: float = 1.0
    diverged: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.positions.ndim != 3 or self.positions.shape[2] != 3:
            raise ValueError("positions must have shape (count, n_qubits, 3)")
        if self.weights.shape != (self.positions.shape[0],):
            raise ValueError("weights length must match positions")
        if self.diverged is None:
            self.diverged = np.zeros(self.count, dtype=bool)

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @property
    def n_qubits(self) -> int:
        return self.positions.shape[1]


def sample_initial(rho: PhaseDensity, M: float, count: int, rng,
                   r_min: float = 0.0) -> Ensemble:
    """Draw positions uniformly in the product of per-qubit balls of
    radius M (or annuli [r_min, M]); weights are the density values.
    The uniform-proposal constant cancels in the ratio estimator."""
    if M <= 0 or not (0.0 <= r_min < M):
        raise ValueError("need 0 <= r_min < M")
    if count < 0:
        raise ValueError("count must be >= 0")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    n = rho.n_qubits
    if count == 0:
        return Ensemble(np.zeros((0, n, 3)), np.zeros(0), M=M)
    d = rng.standard_normal((count, n, 3))
    d /= np.linalg.norm(d, axis=2, keepdims=True)
    u = rng.random((count, n))
    r = np.cbrt(r_min ** 3 + (M ** 3 - r_min ** 3) * u)
    pos = d * r[:, :, None]
    w = eval_density(rho, pos)
    return Ensemble(pos, w, M=M)


@dataclass(frozen=True)
class EnsembleStats:
    """Ratio estimates with batch-means standard errors plus weight
    diagnostics over the included (shell-filtered) trajectories."""

    names: tuple[str, ...]
    estimates: np.ndarray
    stderrs: np.ndarray
    sum_w: float
    ess: float
    neg_w_frac: float
    mean_abs_w: float
    underflow_count: int

    def get(self, name: str) -> tuple[float, float]:
        i = self.names.index(name)
        return float(self.estimates[i]), float(self.stderrs[i])


def estimate(ens: Ensemble, observables, shell: tuple[float, float] | None = None,
             batches: int = 100) -> EnsembleStats:
    """Ratio estimates est_mu = sum' w K_mu / sum' w.

    sum' runs over trajectories inside the shell (r <= |S^q| <= R for all
    qubits) when one is given. Standard errors use contiguous batch means;
    ESS = (sum|w|)^2 / sum w^2, plus negative-weight fraction and mean |w|.
    """
    if batches < 2:
        raise ValueError("need at least 2 batches")
    obs = [tuple(mu) for mu in observables]
    n = ens.n_qubits
    for mu in obs:
        if len(mu) != n:
            raise ValueError(f"observable {mu} does not match n_qubits={n}")
    m = ens.count
    if m == 0:
        raise NormalizationCollapseError("empty ensemble")
    pos, w = ens.positions, ens.weights
    k4, under = _kernel_vectors(pos)

    include = np.ones(m, dtype=bool)
    if shell is not None:
        lo, hi = shell
        r = np.sqrt(np.einsum("mqi,mqi->mq", pos, pos))
        include = np.all((r >= lo) & (r <= hi), axis=1)

    sum_w = float(np.sum(w, where=include)) if shell is not None else float(np.sum(w))
    if not np.isfinite(sum_w) or abs(sum_w) <= 1e-300:
        raise NormalizationCollapseError(
            f"weight sum collapsed (sum_w={sum_w}); cannot normalize estimates")

    nb = min(batches, m)
    bids = (np.arange(m) * nb) // m

    names = tuple(observable_name(mu) for mu in obs)
    est = np.empty(len(obs))
    err = np.empty(len(obs))
    underflow_count = 0
    for j, mu in enumerate(obs):
        support = [q for q, a in enumerate(mu) if a != 0]
        excl = np.zeros(m, dtype=bool)
        for q in support:
            excl |= under[:, q]
        excl &= include
        underflow_count += int(np.sum(excl))
        inc = include & ~excl
        if support:
            kcol = k4[np.arange(m)[:, None], support, [mu[q] for q in support]].prod(axis=1)
        else:
            kcol = np.ones(m)
        wi = np.where(inc, w, 0.0)
        num = wi * kcol
        den_total = float(np.sum(wi))
        if abs(den_total) <= 1e-300:
            raise NormalizationCollapseError(
                f"weight sum collapsed for observable {names[j]}")
        est[j] = float(np.sum(num)) / den_total
        if m == 1:
            err[j] = 0.0
            continue
        num_b = np.bincount(bids, weights=num, minlength=nb)
        den_b = np.bincount(bids, weights=wi, minlength=nb)
        ok = np.abs(den_b) > 1e-300
        if int(ok.sum()) >= 2:
            eb = num_b[ok] / den_b[ok]
            err[j] = float(np.std(eb, ddof=1) / np.sqrt(ok.sum()))
        else:
            err[j] = float("nan")

    aw = np.abs(np.where(include, w, 0.0))
    ess = effective_sample_size(aw)
    n_inc = int(include.sum())
    neg = float(np.sum((w < 0) & include)) / n_inc if n_inc else 0.0
    mean_abs = float(aw.sum()) / n_inc if n_inc else 0.0
    return EnsembleStats(names, est, err, sum_w, ess, neg, mean_abs, underflow_count)


def effective_sample_size(weights: np.ndarray) -> float:
    """(sum|w|)^2 / sum w^2, computed on max-scaled weights so huge but
    finite weights cannot overflow the square."""
    aw = np.abs(np.asarray(weights, dtype=float))
    peak = float(aw.max()) if aw.size else 0.0
    if not np.isfinite(peak) or peak == 0.0:
        return 0.0
    x = aw / peak
    s1 = float(x.sum())
    s2 = float((x * x).sum())
    return s1 * s1 / s2 if s2 > 0 else 0.0


def estimate_bloch_tensor(ens: Ensemble, chunk: int = 8192,
                          shell: tuple[float, float] | None = None) -> np.ndarray:
    """Estimate every Bloch component at once via product kernels,
    returning a (4,)*n tensor with the normalization slot forced to 1.
    Used by ensemble resets; a shell restricts the sums the same way it
    does for estimate()."""
    n = ens.n_qubits
    m = ens.count
    if m == 0:
        raise NormalizationCollapseError("empty ensemble")
    chunk = max(1, min(chunk, (1 << 22) // max(1, 4 ** n)))
    acc = np.zeros(4 ** n)
    wsum = 0.0
    for lo in range(0, m, chunk):
        hi = min(m, lo + chunk)
        pos = ens.positions[lo:hi]
        wts = ens.weights[lo:hi]
        if shell is not None:
            r = np.sqrt(np.einsum("mqi,mqi->mq", pos, pos))
            keep = np.all((r >= shell[0]) & (r <= shell[1]), axis=1)
            wts = np.where(keep, wts, 0.0)
        k4, _ = _kernel_vectors(pos)
        arr = wts.reshape(-1, 1)
        for q in range(n):
            arr = (arr[:, :, None] * k4[:, q, :][:, None, :]).reshape(hi - lo, -1)
        acc += arr.sum(axis=0)
        wsum += float(wts.sum())
    if not np.isfinite(wsum) or abs(wsum) <= 1e-300:
        raise NormalizationCollapseError(
            f"weight sum collapsed (sum_w={wsum}); ensemble exhausted")
    t = (acc / wsum).reshape((4,) * n)
    t.flat[0] = 1.0
    return t
