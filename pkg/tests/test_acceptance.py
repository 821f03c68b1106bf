"""Acceptance suite. One test per acceptance criterion, each printing a
single PASS/FAIL line (run pytest with -s or -rA to see them on success).

The two-qubit entangling benchmark (criterion 4) is executed through the
real CLI and shared by criteria 8 and 9, so this module runs the full
5e5-trajectory simulation twice (second time for worker-count
determinism). Expect several minutes of wall time.
"""

import csv
import json
import math
import time

import numpy as np
import pytest

from spinsde.algebra import PairCoupling, Schedule, SystemSpec
from spinsde.cli import main as cli_main
from spinsde.engine import RunConfig, run, step
from spinsde.phasespace import (
    Ensemble,
    default_observables,
    density_from_bloch_poly,
    estimate,
    sample_initial,
)
from spinsde.reference import (
    bloch_from_density,
    build_spin_ops,
    evolve_bloch,
    evolve_von_neumann,
    product_state_bloch,
    singlet_bloch,
)
from spinsde.verify import random_system, verify_divergence, verify_generator

SHELL = [0.0, 0.7]  # estimation radius strictly inside the sampling ball

CRIT4_CONFIG = {
    "n_qubits": 2,
    "fields": [
        {"qubit": 0, "schedule": [{"t": 0.0, "B": [0.0, 0.0, 0.3]}]},
        {"qubit": 1, "schedule": [{"t": 0.0, "B": [0.2, 0.0, 0.0]}]},
    ],
    "pairs": [
        {"a": 0, "b": 1,
         "schedule": [{"t": 0.0, "J": [[0.5, 0.0, 0.0],
                                       [0.0, 0.5, 0.0],
                                       [0.0, 0.0, 0.5]]}]},
    ],
    "initial": {"product": ["up", "up"]},
    "ensemble": {"count": 500000, "M": 1.0, "seed": 0},
    "integrator": {"dt": 1e-4, "t_final": 0.2, "output_every": 50,
                   "reset_every": 500},
    "estimator": {"shell": SHELL, "batches": 100},
}

CHECKPOINTS = (0.05, 0.1, 0.2)


def report(num, name, ok, detail):
    line = f"criterion {num} ({name}): {'PASS' if ok else 'FAIL'} [{detail}]"
    print(line)
    assert ok, line


def read_csv_columns(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    return {nm: data[:, i] for i, nm in enumerate(header)}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def crit4(workdir):
    cfg = workdir / "crit4.json"
    cfg.write_text(json.dumps(CRIT4_CONFIG))
    sim = workdir / "crit4_sim.csv"
    manifest = workdir / "crit4_manifest.json"
    ref = workdir / "crit4_ref.csv"
    t0 = time.perf_counter()
    assert cli_main(["simulate", "--config", str(cfg), "--output", str(sim),
                     "--manifest", str(manifest), "--workers", "2"]) == 0
    seconds = time.perf_counter() - t0
    assert cli_main(["reference", "--config", str(cfg),
                     "--output", str(ref)]) == 0
    return {"config": cfg, "sim": sim, "ref": ref, "manifest": manifest,
            "seconds": seconds}


@pytest.fixture(scope="module")
def crit4_rerun(workdir, crit4):
    out = workdir / "crit4_sim_w5.csv"
    assert cli_main(["simulate", "--config", str(crit4["config"]),
                     "--output", str(out), "--workers", "5"]) == 0
    return out


def test_criterion_1_generator_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    ok = True
    for k in range(10):
        spec = random_system(2, [(0, 1)], rng)
        rep = verify_generator(spec, trials=1, points_per_trial=100,
                               seed=1000 + k)
        worst = max(worst, rep.max_discrepancy)
        ok &= rep.passed
    chain = random_system(3, [(0, 1), (1, 2)], rng)
    rep3 = verify_generator(chain, trials=1, points_per_trial=100, seed=2000)
    worst = max(worst, rep3.max_discrepancy)
    ok &= rep3.passed
    seconds = time.perf_counter() - t0
    ok &= worst <= 1e-8 and seconds < 10.0
    report(1, "generator equivalence", ok,
           f"max discrepancy {worst:.3e} <= 1e-8 over 10 two-qubit systems "
           f"x 100 points + three-qubit chain; {seconds:.1f} s")


def test_criterion_2_dual_exact_solvers():
    t0 = time.perf_counter()
    worst = 0.0
    for n, pairs, seed in ((2, [(0, 1)], 5), (3, [(0, 1), (1, 2)], 6)):
        rng = np.random.default_rng(seed)
        spec = random_system(n, pairs, rng)
        dim = 2 ** n
        a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
        rho0 = a @ a.conj().T
        rho0 /= np.trace(rho0).real
        ops = build_spin_ops(n)
        rho_t = evolve_von_neumann(rho0, spec, ops, 1.0, 1e-4)
        b_t = evolve_bloch(bloch_from_density(rho0), spec, ops, 1.0, 1e-4)
        worst = max(worst, float(np.max(np.abs(bloch_from_density(rho_t) - b_t))))
    seconds = time.perf_counter() - t0
    ok = worst <= 1e-8 and seconds < 30.0
    report(2, "dual exact solvers", ok,
           f"max Bloch deviation {worst:.3e} <= 1e-8 at T=1, dt=1e-4 "
           f"for N=2 and N=3; {seconds:.1f} s")


def test_criterion_3_deterministic_precession():
    # J = 0 silences every noise channel, so trajectories are
    # deterministic and the 6-point octahedral cubature reproduces the
    # state exactly: the only deviation left is Euler drift error.
    t0 = time.perf_counter()
    spec = SystemSpec(1, (Schedule.constant(np.array([0.0, 0.0, 2 * np.pi])),),
                      ())
    pos = np.array([[[1.0, 0, 0]], [[-1.0, 0, 0]], [[0, 1.0, 0]],
                    [[0, -1.0, 0]], [[0, 0, 1.0]], [[0, 0, -1.0]]])
    wts = np.array([1.5, -0.5, 0.5, 0.5, 0.5, 0.5])
    octa = Ensemble(pos, wts, M=1.0)
    cfg = RunConfig(count=6, dt=1e-4, t_final=1.0, output_every=500)
    result = run(spec, product_state_bloch(["+x"]), cfg, initial=octa)
    t, est, _ = result.series("x")
    dev = float(np.max(np.abs(est - 0.5 * np.cos(2 * np.pi * t))))
    seconds = time.perf_counter() - t0
    ok = dev <= 1e-3 and seconds < 10.0
    report(3, "deterministic limit", ok,
           f"max |<S_x> - cos(2 pi t)/2| = {dev:.3e} <= 1e-3 "
           f"at dt=1e-4 over t <= 1; {seconds:.1f} s")


def test_criterion_4_entangling_benchmark(crit4):
    sim = read_csv_columns(crit4["sim"])
    ref = read_csv_columns(crit4["ref"])
    assert np.array_equal(sim["t"], ref["t"])
    names = [nm[4:] for nm in sim if nm.startswith("est_")]
    assert len(names) == 15
    rows = [int(np.flatnonzero(np.isclose(sim["t"], c))[0]) for c in CHECKPOINTS]
    worst = 0.0
    ok = True
    for nm in names:
        for i in rows:
            dev = abs(sim[f"est_{nm}"][i] - ref[f"exact_{nm}"][i])
            thr = max(4.0 * sim[f"err_{nm}"][i], 0.05)
            ok &= dev <= thr
            worst = max(worst, dev)
    ok &= crit4["seconds"] < 900.0
    report(4, "entangling benchmark", ok,
           f"15 components at t in {CHECKPOINTS}: max |deviation| "
           f"{worst:.4f}, threshold floor 0.05; {crit4['seconds']:.0f} s")


def test_criterion_5_singlet_stationarity():
    j = Schedule.constant(0.5 * np.eye(3))
    spec = SystemSpec(2, (Schedule.constant(np.zeros(3)),) * 2,
                      (PairCoupling(0, 1, j),))
    b0 = singlet_bloch()
    # the singlet is exactly stationary, so no resets are needed out to
    # t = 0.2: the ESS decay only widens the stderr-scaled thresholds
    cfg = RunConfig(count=100000, dt=1e-4, t_final=0.2, M=1.0, seed=1,
                    output_every=250, shell=tuple(SHELL), batches=100)
    result = run(spec, b0, cfg)
    obs = default_observables(2)
    worst = 0.0
    ok = True
    for rec in result.records:
        for i, mu in enumerate(obs):
            dev = abs(rec.stats.estimates[i] - b0[mu])
            thr = max(4.0 * rec.stats.stderrs[i], 0.05)
            ok &= dev <= thr
            worst = max(worst, dev)
    report(5, "singlet stationarity", ok,
           f"all 15 components constant over t <= 0.2 within "
           f"max(4 stderr, 0.05); max |deviation| {worst:.4f}")


def test_criterion_6_radial_invariance():
    dens = density_from_bloch_poly(product_state_bloch(["up", "up"]))
    obs = default_observables(2)
    shells = [(0.0, 1.0), (0.5, 1.5), (1.0, 2.0)]
    stats = []
    for k, (lo, hi) in enumerate(shells):
        ens = sample_initial(dens, hi, 10 ** 6,
                             np.random.default_rng(100 + k), r_min=lo)
        stats.append(estimate(ens, obs))
    worst_z = 0.0
    ok = True
    for a in range(3):
        for b in range(a + 1, 3):
            dev = np.abs(stats[a].estimates - stats[b].estimates)
            lim = 4.0 * np.hypot(stats[a].stderrs, stats[b].stderrs)
            ok &= bool(np.all(dev <= lim))
            worst_z = max(worst_z, float(np.max(dev / (lim / 4.0))))
    report(6, "radial invariance", ok,
           f"shells (0,1), (0.5,1.5), (1,2) x 1e6 samples agree pairwise; "
           f"worst deviation {worst_z:.2f} combined stderrs (limit 4)")


def test_criterion_7_divergence_closed_form():
    rep = verify_divergence(trials=1000, seed=3)
    ok = rep.passed and rep.max_error <= 1e-6
    report(7, "drift divergence", ok,
           f"max relative error {rep.max_error:.3e} <= 1e-6 over 1000 trials")


def test_criterion_8_aging_and_reset(crit4):
    sim = read_csv_columns(crit4["sim"])
    man = json.loads(crit4["manifest"].read_text())
    steps = np.rint(sim["t"] / 1e-4).astype(int)
    ess = sim["ess"]

    # between consecutive resets the 5-point moving average of ESS must
    # not increase (2% slack absorbs estimator noise on a falling trend)
    ok_mono = True
    reset_steps = [0] + [r["step"] for r in man["resets"]] + [steps[-1]]
    for lo, hi in zip(reset_steps, reset_steps[1:]):
        series = ess[(steps > lo) & (steps <= hi)]
        if len(series) < 5:
            continue
        ma = np.convolve(series, np.ones(5) / 5.0, mode="valid")
        ok_mono &= bool(np.all(ma[1:] <= ma[:-1] * 1.02))

    # every reset must restore ESS to at least 0.9x the fresh-sample ESS
    fresh = ess[0]
    ratios = [r["ess_after"] / fresh for r in man["resets"]]
    ok_restore = len(ratios) == 3 and all(r >= 0.9 for r in ratios)

    # weight growth rate: two coupled pairs age twice as fast as one
    rates = {}
    b0 = np.zeros((4, 4, 4))
    b0[0, 0, 0] = 1.0
    dens = density_from_bloch_poly(b0)
    fields = (Schedule.constant(np.zeros(3)),) * 3
    j = 0.5 * np.eye(3)
    for label, edges in (("single", [(0, 1)]), ("chain", [(0, 1), (1, 2)])):
        pairs = tuple(PairCoupling(a, b, Schedule.constant(j))
                      for (a, b) in edges)
        spec = SystemSpec(3, fields, pairs)
        ens = sample_initial(dens, 1.0, 20000, np.random.default_rng(77))
        rng = np.random.default_rng(78)
        dt, nsteps = 1e-4, 100
        for k in range(nsteps):
            ens = step(ens, spec, k * dt, dt, rng)
        w = ens.weights
        good = np.isfinite(w) & (w != 0.0)
        rates[label] = float(np.mean(np.log(np.abs(w[good]) * 8.0))) / (nsteps * dt)
    ratio = rates["chain"] / rates["single"]
    ok_rate = 1.5 <= ratio <= 2.5

    ok = ok_mono and ok_restore and ok_rate
    report(8, "aging and reset", ok,
           f"ESS 5-point moving average non-increasing between resets: "
           f"{ok_mono}; reset/fresh ESS ratios "
           f"{[f'{r:.2f}' for r in ratios]} all >= 0.9: {ok_restore}; "
           f"two-pair/one-pair weight rate {ratio:.2f} in [1.5, 2.5]: "
           f"{ok_rate}")


def test_criterion_9_worker_determinism(crit4, crit4_rerun):
    same = crit4["sim"].read_bytes() == crit4_rerun.read_bytes()
    report(9, "worker-count determinism", same,
           "CSV byte-identical for workers=2 and workers=5 at same seed")
