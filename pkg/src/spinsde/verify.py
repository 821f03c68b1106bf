"""Proof-by-computation that the stochastic process reproduces quantum
dynamics: a pointwise generator-equivalence check on multilinear
densities, a finite-difference validation of the closed-form drift
divergence, and a one-step statistical consistency test of the full
ensemble machinery.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .algebra import Schedule, SystemSpec, PairCoupling
from .engine import step
from .phasespace import (
    PhaseDensity,
    _kernel_vectors,
    default_observables,
    density_from_bloch_poly,
    eval_density,
    eval_partials,
    observable_name,
    sample_initial,
)
from .reference import bloch_from_density, build_spin_ops, quantum_generator

_EPS_TENSOR = np.zeros((3, 3, 3))
for _i, _j, _k in [(0, 1, 2), (1, 2, 0), (2, 0, 1)]:
    _EPS_TENSOR[_i, _j, _k] = 1.0
    _EPS_TENSOR[_i, _k, _j] = -1.0


def fp_apply(rho: PhaseDensity, z, spec: SystemSpec, t: float) -> float | np.ndarray:
    """Right-hand side of the phase-space master equation at point(s) z:
    per-qubit precession transport plus, per coupled pair, two first-order
    transport terms, two Levi-Civita-contracted mixed-second-derivative
    terms, and two rotation-gradient terms. On multilinear densities this
    equals the quantum generator exactly; everything the noise channels
    add beyond these terms cancels identically on such densities.

    z may be a single (n, 3) point or a batch (m, n, 3)."""
    z = np.asarray(z, dtype=float)
    single = z.ndim == 2
    p = z[None] if single else z
    m, n = p.shape[0], rho.n_qubits

    grads = np.empty((m, n, 3))
    for q in range(n):
        for i in range(3):
            grads[:, q, i] = eval_partials(rho, p, [(q, i)])

    out = np.zeros(m)
    for q in range(n):
        b = spec.field_at(q, t)
        out += np.einsum("mi,mi->m", np.cross(b[None, :], p[:, q]), grads[:, q])

    for (a, bq, j) in spec.couplings_at(t):
        if not np.any(j != 0.0):
            continue
        sa, sb = p[:, a], p[:, bq]
        ga, gb = grads[:, a], grads[:, bq]
        h2 = np.empty((m, 3, 3))
        for i in range(3):
            for k in range(3):
                h2[:, i, k] = eval_partials(rho, p, [(a, i), (bq, k)])
        jsb = sb @ j.T
        jtsa = sa @ j
        rot_a = np.cross(sa, jsb)
        rot_b = np.cross(sb, jtsa)
        out -= np.einsum("mi,mi->m", rot_a, ga)
        out -= np.einsum("mi,mi->m", rot_b, gb)
        out += 0.25 * np.einsum("ijk,mj,il,mkl->m", _EPS_TENSOR, sa, j, h2)
        out += 0.25 * np.einsum("ijk,mj,li,mlk->m", _EPS_TENSOR, sb, j, h2)
        out += np.einsum("mi,mi->m", rot_b, np.einsum("mlk,ml->mk", h2, sa))
        out += np.einsum("mi,mi->m", rot_a, np.einsum("mkl,ml->mk", h2, sb))
    return float(out[0]) if single else out


@dataclass(frozen=True)
class GeneratorReport:
    max_discrepancy: float
    trials: int
    points_per_trial: int
    tol: float
    passed: bool
    breakdown: dict

    def __str__(self):
        parts = ", ".join(f"{k}={v:.3e}" for k, v in self.breakdown.items())
        return (f"generator equivalence: max discrepancy {self.max_discrepancy:.3e} "
                f"over {self.trials} x {self.points_per_trial} points "
                f"(tol {self.tol:.1e}) [{parts}] -> "
                f"{'PASS' if self.passed else 'FAIL'}")


def _random_state_bloch(n: int, rng: np.random.Generator) -> np.ndarray:
    dim = 2 ** n
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    rho = a @ a.conj().T
    rho /= np.trace(rho).real
    return bloch_from_density(rho)


def verify_generator(spec: SystemSpec, trials: int = 5,
                     points_per_trial: int = 100, tol: float = 1e-8,
                     seed: int = 0) -> GeneratorReport:
    """Compare fp_apply against the quantum generator on random quantum
    states at random points with components in [-2, 2]. The identity is
    polynomial, so random-point agreement pins every drift, noise, and
    weight term at once. The breakdown re-runs with fields only and with
    pairs only to localize a failure."""
    n = spec.n_qubits
    ops = build_spin_ops(n)
    rng = np.random.default_rng(seed)
    variants = {
        "combined": spec,
        "fields_only": SystemSpec(n, spec.fields, ()),
        "pairs_only": SystemSpec(n, (), spec.pairs),
    }
    ells = {k: quantum_generator(v, ops, 0.0) for k, v in variants.items()}
    breakdown = {k: 0.0 for k in variants}
    for _ in range(trials):
        b = _random_state_bloch(n, rng)
        pts = rng.uniform(-2.0, 2.0, size=(points_per_trial, n, 3))
        dens = density_from_bloch_poly(b)
        for name, vspec in variants.items():
            bdot = (ells[name] @ b.reshape(-1)).reshape(b.shape)
            target = eval_density(density_from_bloch_poly(bdot), pts)
            got = fp_apply(dens, pts, vspec, 0.0)
            breakdown[name] = max(breakdown[name],
                                  float(np.max(np.abs(got - target))))
    disc = breakdown["combined"]
    return GeneratorReport(disc, trials, points_per_trial, tol,
                           disc <= tol, breakdown)


@dataclass(frozen=True)
class DivergenceReport:
    max_error: float
    trials: int
    tol: float
    passed: bool

    def __str__(self):
        return (f"drift divergence closed form: max relative error "
                f"{self.max_error:.3e} over {self.trials} trials "
                f"(tol {self.tol:.1e}) -> {'PASS' if self.passed else 'FAIL'}")


def verify_divergence(spec: SystemSpec | None = None, trials: int = 1000,
                      tol: float = 1e-6, seed: int = 0) -> DivergenceReport:
    """Closed-form drift divergences div_a F^a = -2|J u^b|^2 and
    div_b F^b = -2|J^T u^a|^2 against 5-point central finite differences
    (step 1e-4) at random points bounded away from the origins
    (|S| >= 0.1). Couplings come from the given system first, then random
    matrices with entries in [-1, 1]."""
    rng = np.random.default_rng(seed)
    js = []
    if spec is not None:
        js = [j for (_, _, j) in spec.couplings_at(0.0)]
    h = 1e-4
    stencil = np.array([1.0, -8.0, 8.0, -1.0]) / (12.0 * h)
    offsets = np.array([-2.0, -1.0, 1.0, 2.0]) * h
    max_err = 0.0
    for k in range(trials):
        j = js[k] if k < len(js) else rng.uniform(-1.0, 1.0, size=(3, 3))
        d = rng.standard_normal((2, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = rng.uniform(0.1, 1.5, size=2)
        s1, s2 = d[0] * r[0], d[1] * r[1]
        u1, u2 = s1 / np.linalg.norm(s1), s2 / np.linalg.norm(s2)

        for (s, ju, trans) in ((s1, j @ u2, False), (s2, j.T @ u1, True)):
            closed = -2.0 * float(ju @ ju)
            fd = 0.0
            for ax in range(3):
                for c, off in zip(stencil, offsets):
                    sp = s.copy()
                    sp[ax] += off
                    f = np.cross(np.cross(sp, ju), ju)
                    fd += c * f[ax]
            err = abs(fd - closed) / max(1.0, abs(closed))
            max_err = max(max_err, err)
    return DivergenceReport(max_err, trials, tol, max_err <= tol)


@dataclass(frozen=True)
class WeakStepReport:
    names: tuple[str, ...]
    finite_differences: np.ndarray
    targets: np.ndarray
    stderrs: np.ndarray
    thresholds: np.ndarray
    max_abs_deviation: float
    passed: bool

    def __str__(self):
        devs = np.abs(self.finite_differences - self.targets)
        worst = int(np.argmax(devs / self.thresholds))
        return (f"weak one-step consistency: worst component "
                f"{self.names[worst]} |deviation| {devs[worst]:.3e} "
                f"(threshold {self.thresholds[worst]:.3e}) "
                f"-> {'PASS' if self.passed else 'FAIL'}")


def verify_weak_step(spec: SystemSpec, b0: np.ndarray, dt: float = 1e-4,
                     count: int = 10 ** 6, seed: int = 0,
                     batches: int = 100) -> WeakStepReport:
    """One Euler-Maruyama step from a fresh sample: the difference
    quotient (estimate(dt) - estimate(0)) / dt of every first- and
    second-order component is compared against the quantum generator
    applied to b0. Tolerance per component: max(4 stderr, 10 dt), with
    stderr from paired batch means. A statistical smoke test that the
    stepping (not just the generator algebra) is wired correctly."""
    b0 = np.asarray(b0, dtype=float)
    n = spec.n_qubits
    obs = default_observables(n)
    names = tuple(observable_name(mu) for mu in obs)
    ops = build_spin_ops(n)
    ell = quantum_generator(spec, ops, 0.0)
    bdot = (ell @ b0.reshape(-1)).reshape(b0.shape)
    targets = np.array([bdot[mu] for mu in obs])

    dens = density_from_bloch_poly(b0)
    ens0 = sample_initial(dens, 1.0, count, np.random.default_rng([seed, 0]))
    ens1 = step(ens0, spec, 0.0, dt, np.random.default_rng([seed, 1]))

    k0, u0 = _kernel_vectors(ens0.positions)
    k1, u1 = _kernel_vectors(ens1.positions)
    m = count
    nb = min(batches, m)
    bids = (np.arange(m) * nb) // m

    fds = np.empty(len(obs))
    ses = np.empty(len(obs))
    for jx, mu in enumerate(obs):
        support = [q for q, a in enumerate(mu) if a != 0]
        axes = [mu[q] for q in support]
        excl = np.zeros(m, dtype=bool)
        for q in support:
            excl |= u0[:, q] | u1[:, q]
        keep = ~excl
        kc0 = k0[np.arange(m)[:, None], support, axes].prod(axis=1)
        kc1 = k1[np.arange(m)[:, None], support, axes].prod(axis=1)
        w0 = np.where(keep, ens0.weights, 0.0)
        w1 = np.where(keep, ens1.weights, 0.0)
        est0 = float((w0 * kc0).sum()) / float(w0.sum())
        est1 = float((w1 * kc1).sum()) / float(w1.sum())
        fds[jx] = (est1 - est0) / dt
        n0 = np.bincount(bids, weights=w0 * kc0, minlength=nb)
        d0 = np.bincount(bids, weights=w0, minlength=nb)
        n1 = np.bincount(bids, weights=w1 * kc1, minlength=nb)
        d1 = np.bincount(bids, weights=w1, minlength=nb)
        ok = (np.abs(d0) > 1e-300) & (np.abs(d1) > 1e-300)
        fk = (n1[ok] / d1[ok] - n0[ok] / d0[ok]) / dt
        ses[jx] = float(np.std(fk, ddof=1) / np.sqrt(ok.sum()))

    thresholds = np.maximum(4.0 * ses, 10.0 * dt)
    devs = np.abs(fds - targets)
    passed = bool(np.all(devs <= thresholds))
    return WeakStepReport(names, fds, targets, ses, thresholds,
                          float(devs.max()), passed)


def random_system(n_qubits: int, pairs, rng: np.random.Generator,
                  scale: float = 1.0) -> SystemSpec:
    """Random constant system: field components and coupling entries
    uniform in [-scale, scale] on the given (a, b) pairs."""
    fields = tuple(Schedule.constant(rng.uniform(-scale, scale, 3))
                   for _ in range(n_qubits))
    pcs = tuple(PairCoupling(a, b, Schedule.constant(
        rng.uniform(-scale, scale, (3, 3)))) for (a, b) in pairs)
    return SystemSpec(n_qubits, fields, pcs)
