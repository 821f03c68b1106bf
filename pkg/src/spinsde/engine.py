"""The weighted diffusion process: drift, per-pair noise channels, weight
dynamics, Euler-Maruyama stepping, periodic resets, and the run loop.

Per coupled pair (a, b) with coupling J the trajectory picks up

  drift on a:  5 S^a x (J S^b) + (S^a x J u^b) x J u^b + 6|S^a|^2 S^a - S^a/2
  drift on b:  the mirror image with J^T and u^a = S^a/|S^a|
  noise:       two vector draws (eta_a, eta_b) and two scalar draws
               (xi_1, xi_2), each component Normal(0, dt):
               dS^a += (eta_a/2) x S^a + J eta_b/2
                       + xi_1 S^a x (J u^b) + xi_2 |S^a| S^a
               dS^b += (eta_b/2) x S^b + J^T eta_a/2
                       + xi_2 S^b x (J^T u^a) + xi_1 |S^b| S^b
  weight rate: h += -|J u^b|^2 - |J^T u^a|^2 + 15(|S^a|^2 + |S^b|^2) - 3/2

on top of the per-qubit precession drift S^q x B^q. The scalar noises are
cross-paired: the draw that rotates one qubit radially drives its partner.
Weights evolve multiplicatively, w <- w exp(h dt), preserving sign.

Randomness is counter-based (Philox) and block-granular: trajectories are
partitioned into fixed blocks of 8192, and the draws for (step, block) or
(resample epoch, block) are a pure function of the master seed, so results
are bitwise independent of worker count and scheduling. Within a block the
step draws are laid out (pair, channel, trajectory).

Hot-path arrays live in component-contiguous (n_qubits, 3, m) layout; the
public API speaks the (m, n_qubits, 3) layout of Ensemble.
"""

from __future__ import annotations

import bisect
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .algebra import SystemSpec
from .phasespace import (
    Ensemble,
    EnsembleStats,
    NormalizationCollapseError,
    density_from_bloch_poly,
    default_observables,
    effective_sample_size,
    estimate,
    estimate_bloch_tensor,
    sample_initial,
    EPS_RADIUS,
)

BLOCK = 8192

_DOMAIN_STEP = 0
_DOMAIN_SAMPLE = 1
_MASK64 = (1 << 64) - 1


def _stream(seed: int, epoch: int, block: int, domain: int) -> np.random.Generator:
    """Philox stream keyed by the master seed with a counter that encodes
    (epoch, block, domain); disjoint for distinct triples."""
    key = np.array([seed & _MASK64, (seed >> 64) & _MASK64], dtype=np.uint64)
    counter = np.array([0, epoch & _MASK64, block & _MASK64, domain], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))


def sampling_rng(seed: int, epoch: int = 0) -> np.random.Generator:
    """The stream used to (re)sample the ensemble at a given resample epoch."""
    return _stream(seed, epoch, 0, _DOMAIN_SAMPLE)


@dataclass(frozen=True)
class _Tables:
    """Per-segment constants: fields (n, 3) and the pair channels."""

    fields: np.ndarray
    pairs: tuple[tuple[int, int, np.ndarray, np.ndarray], ...]  # (a, b, J, J^T)
    active: tuple[bool, ...]


def _tables_at(spec: SystemSpec, t: float) -> _Tables:
    pairs = []
    active = []
    for (a, b, j) in spec.couplings_at(t):
        pairs.append((a, b, j, j.T.copy()))
        active.append(bool(np.any(j != 0.0)))
    return _Tables(spec.fields_at(t), tuple(pairs), tuple(active))


def _cross_t(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Cross product in (3, m) component-row layout."""
    out = np.empty_like(x)
    out[0] = x[1] * y[2] - x[2] * y[1]
    out[1] = x[2] * y[0] - x[0] * y[2]
    out[2] = x[0] * y[1] - x[1] * y[0]
    return out


def _radii(P: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Radii^2 (n, m), unit vectors (zero where |S| underflows), mask."""
    r2 = np.einsum("qim,qim->qm", P, P)
    under = r2 <= EPS_RADIUS ** 2
    if under.any():
        U = P / np.sqrt(np.where(under, 1.0, r2))[:, None, :]
        U *= ~under[:, None, :]
    else:
        U = P / np.sqrt(r2)[:, None, :]
    return r2, U, under


def _field_drift(P: np.ndarray, fields: np.ndarray) -> np.ndarray:
    """Precession drift S x B per qubit, (n, 3, m)."""
    V = np.empty_like(P)
    for q in range(P.shape[0]):
        bf = fields[q]
        V[q, 0] = bf[2] * P[q, 1] - bf[1] * P[q, 2]
        V[q, 1] = bf[0] * P[q, 2] - bf[2] * P[q, 0]
        V[q, 2] = bf[1] * P[q, 0] - bf[0] * P[q, 1]
    return V


def _drift_core(P: np.ndarray, tab: _Tables) -> tuple[np.ndarray, int]:
    V = _field_drift(P, tab.fields)
    r2, U, under = _radii(P)
    underflows = 0
    for (a, b, j, jt), act in zip(tab.pairs, tab.active):
        if not act:
            continue
        underflows += int(under[a].sum()) + int(under[b].sum())
        sa, sb = P[a], P[b]
        jub = j @ U[b]
        jtua = jt @ U[a]
        V[a] += 5.0 * _cross_t(sa, j @ sb)
        V[a] += _cross_t(_cross_t(sa, jub), jub)
        V[a] += (6.0 * r2[a] - 0.5) * sa
        V[b] += 5.0 * _cross_t(sb, jt @ sa)
        V[b] += _cross_t(_cross_t(sb, jtua), jtua)
        V[b] += (6.0 * r2[b] - 0.5) * sb
    return V, underflows


def _rate_core(P: np.ndarray, tab: _Tables) -> np.ndarray:
    r2, U, _ = _radii(P)
    h = np.zeros(P.shape[2])
    for (a, b, j, jt), act in zip(tab.pairs, tab.active):
        if not act:
            continue
        jub = j @ U[b]
        jtua = jt @ U[a]
        h -= np.einsum("im,im->m", jub, jub)
        h -= np.einsum("im,im->m", jtua, jtua)
        h += 15.0 * (r2[a] + r2[b]) - 1.5
    return h


def _to_internal(pos: np.ndarray) -> np.ndarray:
    """(m, n, 3) -> contiguous (n, 3, m)."""
    return np.ascontiguousarray(pos.transpose(1, 2, 0))


def _to_public(P: np.ndarray) -> np.ndarray:
    """(n, 3, m) -> contiguous (m, n, 3)."""
    return np.ascontiguousarray(P.transpose(2, 0, 1))


def drift(z, spec: SystemSpec, t: float) -> np.ndarray:
    """Deterministic velocity at a phase point (or batch of points).
    Qubits at underflow radius in an active pair contribute with u = 0."""
    z = np.asarray(z, dtype=float)
    single = z.ndim == 2
    p = z[None] if single else z
    V, _ = _drift_core(_to_internal(p), _tables_at(spec, t))
    v = _to_public(V)
    return v[0] if single else v


def weight_rate(z, spec: SystemSpec, t: float) -> float | np.ndarray:
    """Logarithmic weight growth rate h at a phase point (or batch)."""
    z = np.asarray(z, dtype=float)
    single = z.ndim == 2
    p = z[None] if single else z
    h = _rate_core(_to_internal(p), _tables_at(spec, t))
    return float(h[0]) if single else h


def _step_core(P: np.ndarray, w: np.ndarray, tab: _Tables, dt: float,
               draws: np.ndarray | None
               ) -> tuple[np.ndarray, np.ndarray, int, np.ndarray]:
    """One Euler-Maruyama step in (n, 3, m) layout. draws holds the
    Gaussian increments, shape (n_pairs, 8, m) with per-pair channel
    layout (eta_a[3], eta_b[3], xi_1, xi_2), each component Normal(0, dt);
    None means zero noise. Noise coefficients sit at the pre-step point.

    Returns (positions, weights, underflow events, diverged mask); where
    the update went non-finite the position is left at its pre-step value
    and the weight is zeroed. Overflow along the way is expected for
    runaway trajectories and resolved by the diverged mask, so fp errors
    are suppressed for the whole computation."""
    m = P.shape[2]
    underflows = 0
    with np.errstate(over="ignore", invalid="ignore"):
        r2, U, under = _radii(P)
        V = _field_drift(P, tab.fields)
        h = np.zeros(m)
        noise = np.zeros_like(P) if draws is not None else None
        for k, ((a, b, j, jt), act) in enumerate(zip(tab.pairs, tab.active)):
            if not act:
                continue
            underflows += int(under[a].sum()) + int(under[b].sum())
            sa, sb = P[a], P[b]
            ra2, rb2 = r2[a], r2[b]
            jub = j @ U[b]
            jtua = jt @ U[a]
            rot_a = _cross_t(sa, jub)
            rot_b = _cross_t(sb, jtua)
            V[a] += 5.0 * _cross_t(sa, j @ sb)
            V[a] += _cross_t(rot_a, jub)
            V[a] += (6.0 * ra2 - 0.5) * sa
            V[b] += 5.0 * _cross_t(sb, jt @ sa)
            V[b] += _cross_t(rot_b, jtua)
            V[b] += (6.0 * rb2 - 0.5) * sb
            h -= np.einsum("im,im->m", jub, jub)
            h -= np.einsum("im,im->m", jtua, jtua)
            h += 15.0 * (ra2 + rb2) - 1.5
            if draws is not None:
                ea = draws[k, 0:3]
                eb = draws[k, 3:6]
                x1 = draws[k, 6]
                x2 = draws[k, 7]
                noise[a] += 0.5 * _cross_t(ea, sa)
                noise[a] += 0.5 * (j @ eb)
                noise[a] += x1 * rot_a
                noise[a] += (x2 * np.sqrt(ra2)) * sa
                noise[b] += 0.5 * _cross_t(eb, sb)
                noise[b] += 0.5 * (jt @ ea)
                noise[b] += x2 * rot_b
                noise[b] += (x1 * np.sqrt(rb2)) * sb
        P2 = P + V * dt if noise is None else P + V * dt + noise
        w2 = w * np.exp(h * dt)
    bad = ~(np.isfinite(P2.reshape(-1, m)).all(axis=0) & np.isfinite(w2))
    if bad.any():
        P2[:, :, bad] = P[:, :, bad]
        w2[bad] = 0.0
    return P2, w2, underflows, bad


def step(ens: Ensemble, spec: SystemSpec, t: float, dt: float,
         rng: np.random.Generator) -> Ensemble:
    """One Euler-Maruyama step of the whole ensemble, drawing the per-pair
    noises from rng. Previously diverged trajectories stay frozen."""
    tab = _tables_at(spec, t)
    npairs = len(tab.pairs)
    draws = None
    if npairs:
        draws = rng.standard_normal((npairs, 8, ens.count)) * math.sqrt(dt)
    P = _to_internal(ens.positions)
    P2, w2, _, bad = _step_core(P, ens.weights, tab, dt, draws)
    div = ens.diverged | bad
    P2[:, :, ens.diverged] = P[:, :, ens.diverged]
    w2[div] = 0.0
    return Ensemble(_to_public(P2), w2, M=ens.M, diverged=div)


def reset(ens: Ensemble, count: int, M: float, rng,
          shell: tuple[float, float] | None = None) -> Ensemble:
    """Estimate the full Bloch tensor from the current ensemble, rebuild
    the density polynomial, and draw a fresh ensemble from it. A shell
    keeps runaway trajectories out of the re-estimate, the same way it
    does for recorded estimates."""
    try:
        t = estimate_bloch_tensor(ens, shell=shell)
    except NormalizationCollapseError as e:
        raise NormalizationCollapseError(
            f"{e}; reduce the reset interval") from None
    return sample_initial(density_from_bloch_poly(t), M, count, rng)


@dataclass(frozen=True)
class RunConfig:
    """Run parameters. observables holds axis-code tuples (see
    parse_observable); None means every component up to second order."""

    count: int
    dt: float
    t_final: float
    M: float = 1.0
    seed: int = 0
    output_every: int = 1
    reset_every: int | None = None
    observables: tuple[tuple[int, ...], ...] | None = None
    shell: tuple[float, float] | None = None
    batches: int = 100

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_final < 0:
            raise ValueError("t_final must be >= 0")
        if self.output_every < 1:
            raise ValueError("output_every must be >= 1")
        if self.reset_every is not None and self.reset_every < 1:
            raise ValueError("reset_every must be >= 1 or None")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")


@dataclass(frozen=True)
class RunRecord:
    t: float
    stats: EnsembleStats
    escape_frac: float
    underflow_count: int  # cumulative over the run up to this record


@dataclass(frozen=True)
class ResetEvent:
    step: int
    t: float
    ess_before: float
    ess_after: float


@dataclass(frozen=True)
class RunResult:
    records: list[RunRecord]
    resets: list[ResetEvent]
    diagnostics: dict

    def series(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(t, estimate, stderr) arrays for one observable name."""
        i = self.records[0].stats.names.index(name)
        t = np.array([r.t for r in self.records])
        est = np.array([r.stats.estimates[i] for r in self.records])
        err = np.array([r.stats.stderrs[i] for r in self.records])
        return t, est, err


def _block_spans(count: int) -> list[tuple[int, int, int]]:
    return [(i, lo, min(count, lo + BLOCK))
            for i, lo in enumerate(range(0, count, BLOCK))]


def _ess(weights: np.ndarray) -> float:
    return effective_sample_size(weights)


def run(spec: SystemSpec, b0: np.ndarray, cfg: RunConfig,
        initial: Ensemble | None = None, workers: int = 1) -> RunResult:
    """Sample, then repeat {step; record on schedule; reset on schedule}.

    Deterministic for a given master seed and independent of the worker
    count: all randomness comes from counter-based streams keyed by
    (seed, step or resample epoch, trajectory block). Records are taken
    before a same-step reset, so logged estimates always describe the
    pre-reset ensemble. An explicit initial ensemble overrides sampling
    (the deterministic-cubature entry point)."""
    b0 = np.asarray(b0, dtype=float)
    if b0.shape != (4,) * spec.n_qubits:
        raise ValueError("b0 must be a (4,)*n Bloch tensor")
    obs = list(cfg.observables) if cfg.observables is not None \
        else default_observables(spec.n_qubits)
    n_steps = int(round(cfg.t_final / cfg.dt))
    if abs(n_steps * cfg.dt - cfg.t_final) > 1e-9 * max(1.0, cfg.t_final):
        raise ValueError("t_final must be an integer number of steps")

    if initial is not None:
        ens0 = initial
    else:
        dens = density_from_bloch_poly(b0)
        ens0 = sample_initial(dens, cfg.M, cfg.count, sampling_rng(cfg.seed, 0))
    P = _to_internal(ens0.positions)
    w = ens0.weights.copy()
    div = ens0.diverged.copy()

    npairs = len(spec.pairs)
    sqdt = math.sqrt(cfg.dt)
    spans = _block_spans(w.size)
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    records: list[RunRecord] = []
    resets: list[ResetEvent] = []
    diverged_total = 0
    underflow_total = 0
    epoch = 0

    seg_starts = [0.0] + spec.boundaries_within(0.0, cfg.t_final + cfg.dt)
    tab_cache: dict[int, _Tables] = {}

    def tables_for(t: float) -> _Tables:
        i = bisect.bisect_right(seg_starts, t + 1e-15) - 1
        if i not in tab_cache:
            tab_cache[i] = _tables_at(spec, seg_starts[i])
        return tab_cache[i]

    def snapshot() -> Ensemble:
        return Ensemble(_to_public(P), w, M=cfg.M, diverged=div.copy())

    def record(n: int):
        stats = estimate(snapshot(), obs, shell=cfg.shell, batches=cfg.batches)
        r2 = np.einsum("qim,qim->qm", P, P)
        esc = float(np.mean(np.any(r2 > cfg.M ** 2, axis=0)))
        records.append(RunRecord(n * cfg.dt, stats, esc,
                                 underflow_total + stats.underflow_count))

    def shell_ess(pos, wts):
        # diagnostics track the same population the estimates use
        if cfg.shell is None:
            return _ess(wts)
        r2 = np.einsum("qim,qim->qm", pos, pos)
        keep = np.all((r2 >= cfg.shell[0] ** 2) & (r2 <= cfg.shell[1] ** 2),
                      axis=0)
        return _ess(np.where(keep, wts, 0.0))

    try:
        record(0)
        for n in range(1, n_steps + 1):
            tab = tables_for((n - 1) * cfg.dt)
            P2 = np.empty_like(P)
            w2 = np.empty_like(w)
            bad = np.zeros(w.size, dtype=bool)
            ufs = np.zeros(len(spans), dtype=np.int64)

            def do_block(span):
                i, lo, hi = span
                draws = None
                if npairs:
                    g = _stream(cfg.seed, n - 1, i, _DOMAIN_STEP)
                    draws = g.standard_normal((npairs, 8, hi - lo))
                    draws *= sqdt
                bp, bw, uf, bb = _step_core(P[:, :, lo:hi].copy(), w[lo:hi],
                                            tab, cfg.dt, draws)
                P2[:, :, lo:hi] = bp
                w2[lo:hi] = bw
                bad[lo:hi] = bb
                ufs[i] = uf

            if pool is not None:
                list(pool.map(do_block, spans))
            else:
                for s in spans:
                    do_block(s)

            P2[:, :, div] = P[:, :, div]
            newdiv = div | bad
            w2[newdiv] = 0.0
            diverged_total += int((newdiv & ~div).sum())
            underflow_total += int(ufs.sum())
            P, w, div = P2, w2, newdiv

            if n % cfg.output_every == 0 or n == n_steps:
                record(n)
            if cfg.reset_every and n % cfg.reset_every == 0 and n < n_steps:
                ess_before = shell_ess(P, w)
                epoch += 1
                fresh = reset(snapshot(), cfg.count, cfg.M,
                              sampling_rng(cfg.seed, epoch), shell=cfg.shell)
                P = _to_internal(fresh.positions)
                w = fresh.weights.copy()
                div = fresh.diverged.copy()
                spans = _block_spans(w.size)
                resets.append(ResetEvent(n, n * cfg.dt, ess_before,
                                         shell_ess(P, w)))
    finally:
        if pool is not None:
            pool.shutdown()

    diagnostics = {
        "diverged": diverged_total,
        "underflow_events": underflow_total,
        "resets": len(resets),
        "final_ess": shell_ess(P, w),
    }
    return RunResult(records, resets, diagnostics)
