"""Command-line front end.

Subcommands: simulate (stochastic run -> CSV time series), reference
(exact solver on the same output grid), compare (deviation check between
the two), verify (built-in correctness suite). Exit codes: 0 success,
1 usage or configuration error, 2 a verification or comparison check
failed, 3 the ensemble normalization collapsed.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .algebra import Schedule, SystemSpec, PairCoupling
from .engine import RunConfig, RunResult, run
from .phasespace import (
    NormalizationCollapseError,
    default_observables,
    observable_name,
    parse_observable,
)
from .reference import (
    bloch_from_density,
    build_spin_ops,
    check_density,
    evolve_bloch,
    product_state_bloch,
    singlet_bloch,
)
from .spinops import DimensionLimitError
from .verify import (
    random_system,
    verify_divergence,
    verify_generator,
    verify_weak_step,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CHECK_FAILED = 2
EXIT_COLLAPSE = 3


class ConfigError(ValueError):
    """Configuration rejected; the message names the offending JSON path."""


def _require(obj, path: str, keys: set[str], required: set[str]) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object")
    unknown = set(obj) - keys
    if unknown:
        raise ConfigError(f"{path}: unknown key {sorted(unknown)[0]!r}")
    for k in sorted(required):
        if k not in obj:
            raise ConfigError(f"{path}: missing required key {k!r}")


def _as_int(v, path: str, minimum: int | None = None) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{path}: expected an integer")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{path}: must be >= {minimum}")
    return v


def _as_float(v, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}: expected a number")
    return float(v)


def _as_vec3(v, path: str) -> list[float]:
    if not isinstance(v, list) or len(v) != 3:
        raise ConfigError(f"{path}: expected a list of 3 numbers")
    return [_as_float(x, f"{path}[{i}]") for i, x in enumerate(v)]


def _as_mat3(v, path: str) -> list[list[float]]:
    if not isinstance(v, list) or len(v) != 3:
        raise ConfigError(f"{path}: expected a 3x3 matrix")
    return [_as_vec3(row, f"{path}[{i}]") for i, row in enumerate(v)]


def _parse_schedule(items, path: str, kind: str):
    if not isinstance(items, list) or not items:
        raise ConfigError(f"{path}: expected a non-empty list")
    out = []
    for i, it in enumerate(items):
        p = f"{path}[{i}]"
        _require(it, p, {"t", kind}, {"t", kind})
        t = _as_float(it["t"], f"{p}.t")
        val = (_as_vec3 if kind == "B" else _as_mat3)(it[kind], f"{p}.{kind}")
        out.append((t, val))
    if out[0][0] != 0.0:
        raise ConfigError(f"{path}[0].t: schedules must start at t = 0")
    for (ta, _), (tb, _) in zip(out, out[1:]):
        if tb <= ta:
            raise ConfigError(f"{path}: times must be strictly increasing")
    return out


@dataclass(frozen=True)
class Config:
    """Parsed run configuration, kept close to the JSON layout so
    emit_config can reproduce it."""

    n_qubits: int
    fields: tuple  # ((qubit, ((t, [3]), ...)), ...)
    pairs: tuple   # ((a, b, ((t, [[3]x3]), ...)), ...)
    initial: dict
    count: int
    M: float
    seed: int
    dt: float
    t_final: float
    output_every: int
    reset_every: int | None
    observables: tuple[str, ...] | None
    shell: tuple[float, float] | None
    batches: int
    base_dir: str = "."

    def system(self) -> SystemSpec:
        fields = [Schedule.constant(np.zeros(3)) for _ in range(self.n_qubits)]
        for (q, sched) in self.fields:
            fields[q] = Schedule.vec3(sched)
        pairs = tuple(PairCoupling(a, b, Schedule.mat3(sched))
                      for (a, b, sched) in self.pairs)
        return SystemSpec(self.n_qubits, tuple(fields), pairs)

    def initial_bloch(self) -> np.ndarray:
        n = self.n_qubits
        if "product" in self.initial:
            return product_state_bloch(self.initial["product"])
        if "singlet" in self.initial:
            return singlet_bloch()
        if "bloch" in self.initial:
            b = np.zeros((4,) * n)
            b[(0,) * n] = 1.0
            for name, val in self.initial["bloch"].items():
                b[parse_observable(name, n)] = val
            return b
        path = self.initial["density_file"]
        if not os.path.isabs(path):
            path = os.path.join(self.base_dir, path)
        rho = np.load(path)
        if rho.shape != (2 ** n, 2 ** n):
            raise ConfigError(
                f"initial.density_file: array shape {rho.shape} does not "
                f"match n_qubits = {n}")
        check_density(rho)
        return bloch_from_density(rho)

    def observable_tuples(self) -> list[tuple[int, ...]]:
        if self.observables is None:
            return default_observables(self.n_qubits)
        return [parse_observable(s, self.n_qubits) for s in self.observables]

    def run_config(self) -> RunConfig:
        return RunConfig(count=self.count, dt=self.dt, t_final=self.t_final,
                         M=self.M, seed=self.seed,
                         output_every=self.output_every,
                         reset_every=self.reset_every,
                         observables=tuple(self.observable_tuples()),
                         shell=self.shell, batches=self.batches)


def parse_config(data, base_dir: str = ".") -> Config:
    _require(data, "config",
             {"n_qubits", "fields", "pairs", "initial", "ensemble",
              "integrator", "observables", "estimator"},
             {"n_qubits", "initial", "ensemble", "integrator"})
    n = _as_int(data["n_qubits"], "n_qubits", 1)

    fields = []
    seen_q = set()
    for i, f in enumerate(data.get("fields", [])):
        p = f"fields[{i}]"
        _require(f, p, {"qubit", "schedule"}, {"qubit", "schedule"})
        q = _as_int(f["qubit"], f"{p}.qubit", 0)
        if q >= n:
            raise ConfigError(f"{p}.qubit: out of range for n_qubits = {n}")
        if q in seen_q:
            raise ConfigError(f"{p}.qubit: duplicate entry for qubit {q}")
        seen_q.add(q)
        fields.append((q, tuple(_parse_schedule(f["schedule"],
                                                f"{p}.schedule", "B"))))

    pairs = []
    seen_p = set()
    for i, pr in enumerate(data.get("pairs", [])):
        p = f"pairs[{i}]"
        _require(pr, p, {"a", "b", "schedule"}, {"a", "b", "schedule"})
        a = _as_int(pr["a"], f"{p}.a", 0)
        b = _as_int(pr["b"], f"{p}.b", 0)
        if a >= n or b >= n:
            raise ConfigError(f"{p}: qubit out of range for n_qubits = {n}")
        if not a < b:
            raise ConfigError(f"{p}: require a < b")
        if (a, b) in seen_p:
            raise ConfigError(f"{p}: duplicate pair ({a}, {b})")
        seen_p.add((a, b))
        pairs.append((a, b, tuple(_parse_schedule(pr["schedule"],
                                                  f"{p}.schedule", "J"))))

    init = data["initial"]
    _require(init, "initial",
             {"product", "singlet", "bloch", "density_file"}, set())
    if len(init) != 1:
        raise ConfigError("initial: exactly one of product, singlet, bloch, "
                          "density_file is required")
    if "product" in init:
        labels = init["product"]
        if not isinstance(labels, list) or len(labels) != n:
            raise ConfigError(f"initial.product: expected {n} labels")
        initial = {"product": list(labels)}
    elif "singlet" in init:
        if init["singlet"] is not True:
            raise ConfigError("initial.singlet: must be true")
        if n != 2:
            raise ConfigError("initial.singlet: requires n_qubits = 2")
        initial = {"singlet": True}
    elif "bloch" in init:
        m = init["bloch"]
        if not isinstance(m, dict):
            raise ConfigError("initial.bloch: expected an object")
        norm_name = observable_name((0,) * n)
        comps = {}
        for name, val in m.items():
            try:
                mu = parse_observable(name, n)
            except ValueError as e:
                raise ConfigError(f"initial.bloch.{name}: {e}") from None
            v = _as_float(val, f"initial.bloch.{name}")
            if mu == (0,) * n and v != 1.0:
                raise ConfigError(f"initial.bloch.{norm_name}: the "
                                  "normalization component must be 1")
            comps[name] = v
        initial = {"bloch": comps}
    else:
        if not isinstance(init["density_file"], str):
            raise ConfigError("initial.density_file: expected a path string")
        initial = {"density_file": init["density_file"]}

    ens = data["ensemble"]
    _require(ens, "ensemble", {"count", "M", "seed"}, {"count"})
    count = _as_int(ens["count"], "ensemble.count", 1)
    m_val = _as_float(ens.get("M", 1.0), "ensemble.M")
    if m_val <= 0:
        raise ConfigError("ensemble.M: must be positive")
    seed = _as_int(ens.get("seed", 0), "ensemble.seed", 0)

    integ = data["integrator"]
    _require(integ, "integrator",
             {"dt", "t_final", "output_every", "reset_every"},
             {"dt", "t_final"})
    dt = _as_float(integ["dt"], "integrator.dt")
    if dt <= 0:
        raise ConfigError("integrator.dt: must be positive")
    t_final = _as_float(integ["t_final"], "integrator.t_final")
    if t_final < 0:
        raise ConfigError("integrator.t_final: must be >= 0")
    output_every = _as_int(integ.get("output_every", 1),
                           "integrator.output_every", 1)
    reset_every = integ.get("reset_every")
    if reset_every is not None:
        reset_every = _as_int(reset_every, "integrator.reset_every", 1)

    observables = None
    if "observables" in data and data["observables"] is not None:
        if not isinstance(data["observables"], list) or not data["observables"]:
            raise ConfigError("observables: expected a non-empty list")
        names = []
        for i, s in enumerate(data["observables"]):
            try:
                mu = parse_observable(s, n)
            except ValueError as e:
                raise ConfigError(f"observables[{i}]: {e}") from None
            names.append(observable_name(mu))
        observables = tuple(names)

    shell = None
    batches = 100
    if "estimator" in data and data["estimator"] is not None:
        est = data["estimator"]
        _require(est, "estimator", {"shell", "batches"}, set())
        if est.get("shell") is not None:
            sh = est["shell"]
            if not isinstance(sh, list) or len(sh) != 2:
                raise ConfigError("estimator.shell: expected [r_lo, r_hi]")
            lo = _as_float(sh[0], "estimator.shell[0]")
            hi = _as_float(sh[1], "estimator.shell[1]")
            if not 0.0 <= lo < hi:
                raise ConfigError("estimator.shell: require 0 <= r_lo < r_hi")
            shell = (lo, hi)
        if "batches" in est:
            batches = _as_int(est["batches"], "estimator.batches", 2)

    return Config(n, tuple(fields), tuple(pairs), initial, count, m_val, seed,
                  dt, t_final, output_every, reset_every, observables, shell,
                  batches, base_dir)


def emit_config(cfg: Config) -> dict:
    """Inverse of parse_config: parse_config(emit_config(c)) == c (up to
    the base directory, which is caller state)."""
    out: dict = {"n_qubits": cfg.n_qubits}
    if cfg.fields:
        out["fields"] = [
            {"qubit": q, "schedule": [{"t": t, "B": list(b)} for (t, b) in sched]}
            for (q, sched) in cfg.fields]
    if cfg.pairs:
        out["pairs"] = [
            {"a": a, "b": b,
             "schedule": [{"t": t, "J": [list(r) for r in j]} for (t, j) in sched]}
            for (a, b, sched) in cfg.pairs]
    out["initial"] = {k: (list(v) if isinstance(v, list) else
                          dict(v) if isinstance(v, dict) else v)
                      for k, v in cfg.initial.items()}
    out["ensemble"] = {"count": cfg.count, "M": cfg.M, "seed": cfg.seed}
    integ = {"dt": cfg.dt, "t_final": cfg.t_final,
             "output_every": cfg.output_every}
    if cfg.reset_every is not None:
        integ["reset_every"] = cfg.reset_every
    out["integrator"] = integ
    if cfg.observables is not None:
        out["observables"] = list(cfg.observables)
    if cfg.shell is not None or cfg.batches != 100:
        est: dict = {}
        if cfg.shell is not None:
            est["shell"] = [cfg.shell[0], cfg.shell[1]]
        if cfg.batches != 100:
            est["batches"] = cfg.batches
        out["estimator"] = est
    return out


def _fmt(x) -> str:
    """Shortest representation that round-trips through float()."""
    return repr(float(x))


def _write_sim_csv(path: str, result: RunResult) -> None:
    names = result.records[0].stats.names
    header = ["t"]
    for nm in names:
        header += [f"est_{nm}", f"err_{nm}"]
    header += ["sum_w", "ess", "neg_w_frac", "escape_frac", "underflow_count"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for rec in result.records:
            row = [_fmt(rec.t)]
            for i in range(len(names)):
                row += [_fmt(rec.stats.estimates[i]), _fmt(rec.stats.stderrs[i])]
            row += [_fmt(rec.stats.sum_w), _fmt(rec.stats.ess),
                    _fmt(rec.stats.neg_w_frac), _fmt(rec.escape_frac),
                    str(int(rec.underflow_count))]
            w.writerow(row)


def _load_json(path: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def cmd_simulate(args) -> int:
    data = _load_json(args.config)
    cfg = parse_config(data, base_dir=os.path.dirname(os.path.abspath(args.config)))
    spec = cfg.system()
    b0 = cfg.initial_bloch()
    rc = cfg.run_config()
    started = _utc_now()
    result = run(spec, b0, rc, workers=args.workers)
    finished = _utc_now()
    _write_sim_csv(args.output, result)
    if args.manifest:
        manifest = {
            "command": "simulate",
            "version": __version__,
            "started": started,
            "finished": finished,
            "config": emit_config(cfg),
            "workers": args.workers,
            "n_steps": int(round(rc.t_final / rc.dt)),
            "records": len(result.records),
            "output": args.output,
            "diagnostics": result.diagnostics,
            "resets": [{"step": r.step, "t": r.t,
                        "ess_before": r.ess_before, "ess_after": r.ess_after}
                       for r in result.resets],
        }
        with open(args.manifest, "w") as fh:
            json.dump(manifest, fh, indent=2)
            fh.write("\n")
    last = result.records[-1]
    print(f"simulate: wrote {len(result.records)} records to {args.output} "
          f"(t_final={_fmt(last.t)}, ess={last.stats.ess:.1f}, "
          f"resets={len(result.resets)})")
    return EXIT_OK


def cmd_reference(args) -> int:
    data = _load_json(args.config)
    cfg = parse_config(data, base_dir=os.path.dirname(os.path.abspath(args.config)))
    spec = cfg.system()
    b0 = cfg.initial_bloch()
    ops = build_spin_ops(cfg.n_qubits)
    obs = cfg.observable_tuples()
    names = [observable_name(mu) for mu in obs]
    n_steps = int(round(cfg.t_final / cfg.dt))
    if abs(n_steps * cfg.dt - cfg.t_final) > 1e-9 * max(1.0, cfg.t_final):
        raise ConfigError("integrator.t_final: must be an integer number of steps")
    record_steps = [0] + [k for k in range(1, n_steps + 1)
                          if k % cfg.output_every == 0 or k == n_steps]
    with open(args.output, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"exact_{nm}" for nm in names])
        b = b0
        prev_t = 0.0
        for k in record_steps:
            t = k * cfg.dt
            if t > prev_t:
                b = evolve_bloch(b, spec, ops, t, cfg.dt, t0=prev_t)
                prev_t = t
            w.writerow([_fmt(t)] + [_fmt(b[mu]) for mu in obs])
    print(f"reference: wrote {len(record_steps)} records to {args.output}")
    return EXIT_OK


def _read_csv(path: str) -> tuple[list[str], list[list[float]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty CSV")
    header = rows[0]
    data = [[float(x) for x in row] for row in rows[1:]]
    return header, data


def cmd_compare(args) -> int:
    sim_hdr, sim_rows = _read_csv(args.sim)
    ref_hdr, ref_rows = _read_csv(args.ref)
    if not sim_hdr or sim_hdr[0] != "t" or not ref_hdr or ref_hdr[0] != "t":
        raise ConfigError("compare: both CSV files must start with a t column")
    sim_cols = {nm: i for i, nm in enumerate(sim_hdr)}
    ref_cols = {nm: i for i, nm in enumerate(ref_hdr)}
    names = [nm[4:] for nm in sim_hdr
             if nm.startswith("est_") and f"exact_{nm[4:]}" in ref_cols]
    if not names:
        raise ConfigError("compare: no common observables between the files")
    ts = [r[0] for r in sim_rows]
    tr = [r[0] for r in ref_rows]
    if ts != tr:
        print("compare: time grids do not match "
              f"({len(ts)} vs {len(tr)} records)", file=sys.stderr)
        return EXIT_USAGE

    worst = {nm: (0.0, 0.0) for nm in names}  # (|dev|, threshold at worst)
    failures = 0
    out_rows = []
    for i, t in enumerate(ts):
        row = [t]
        for nm in names:
            est = sim_rows[i][sim_cols[f"est_{nm}"]]
            err_col = sim_cols.get(f"err_{nm}")
            err = sim_rows[i][err_col] if err_col is not None else 0.0
            exact = ref_rows[i][ref_cols[f"exact_{nm}"]]
            dev = est - exact
            thr = max(args.z_tol * err, args.abs_tol)
            if abs(dev) > thr:
                failures += 1
            if abs(dev) > worst[nm][0]:
                worst[nm] = (abs(dev), thr)
            row += [dev, dev / err if err > 0 else 0.0]
        out_rows.append(row)

    if args.output:
        with open(args.output, "w", newline="") as fh:
            w = csv.writer(fh)
            hdr = ["t"]
            for nm in names:
                hdr += [f"dev_{nm}", f"z_{nm}"]
            w.writerow(hdr)
            for row in out_rows:
                w.writerow([_fmt(x) for x in row])

    overall = max(w0 for (w0, _) in worst.values())
    for nm in names:
        d, thr = worst[nm]
        status = "ok" if d <= thr else "FAIL"
        print(f"  {nm}: max |deviation| = {d:.6g} (threshold {thr:.6g}) {status}")
    if failures:
        print(f"compare: FAIL ({failures} component-records above threshold, "
              f"max |deviation| = {overall:.6g})")
        return EXIT_CHECK_FAILED
    print(f"compare: PASS (max |deviation| = {overall:.6g} across "
          f"{len(names)} observables, {len(ts)} records)")
    return EXIT_OK


def cmd_verify(args) -> int:
    rng = np.random.default_rng(args.seed)
    ok = True

    worst = 0.0
    for k in range(args.systems):
        spec = random_system(2, [(0, 1)], rng)
        rep = verify_generator(spec, trials=1,
                               points_per_trial=args.points,
                               seed=args.seed + 1000 + k)
        worst = max(worst, rep.max_discrepancy)
        ok &= rep.passed
    spec3 = random_system(3, [(0, 1), (1, 2)], rng)
    rep3 = verify_generator(spec3, trials=1, points_per_trial=args.points,
                            seed=args.seed + 2000)
    worst = max(worst, rep3.max_discrepancy)
    ok &= rep3.passed
    print(f"generator equivalence: max discrepancy {worst:.3e} over "
          f"{args.systems} two-qubit systems and one three-qubit chain "
          f"({args.points} points each) -> {'PASS' if ok else 'FAIL'}")

    drep = verify_divergence(trials=args.div_trials, seed=args.seed)
    print(drep)
    ok &= drep.passed

    if args.weak_count > 0:
        spec = random_system(2, [(0, 1)], np.random.default_rng(args.seed + 3000),
                             scale=0.5)
        b0 = product_state_bloch(["up", "up"])
        wrep = verify_weak_step(spec, b0, dt=args.dt, count=args.weak_count,
                                seed=args.seed)
        print(wrep)
        ok &= wrep.passed

    print(f"verify: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spinsde",
                description="Weighted stochastic trajectories for N-qubit "
                            "spin dynamics, with exact reference solvers.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    ps = sub.add_parser("simulate", help="run the stochastic engine")
    ps.add_argument("--config", required=True, help="JSON run configuration")
    ps.add_argument("--output", required=True, help="destination CSV")
    ps.add_argument("--manifest", help="optional JSON run manifest")
    ps.add_argument("--workers", type=int, default=1,
                    help="thread count (results are identical for any value)")
    ps.set_defaults(func=cmd_simulate)

    pr = sub.add_parser("reference", help="exact solver on the same grid")
    pr.add_argument("--config", required=True, help="JSON run configuration")
    pr.add_argument("--output", required=True, help="destination CSV")
    pr.set_defaults(func=cmd_reference)

    pc = sub.add_parser("compare", help="check a simulation against a reference")
    pc.add_argument("--sim", required=True, help="CSV from simulate")
    pc.add_argument("--ref", required=True, help="CSV from reference")
    pc.add_argument("--output", help="optional deviation CSV")
    pc.add_argument("--z-tol", type=float, default=4.0,
                    help="stderr multiples allowed (default 4)")
    pc.add_argument("--abs-tol", type=float, default=0.05,
                    help="absolute deviation floor (default 0.05)")
    pc.set_defaults(func=cmd_compare)

    pv = sub.add_parser("verify", help="built-in correctness suite")
    pv.add_argument("--seed", type=int, default=42)
    pv.add_argument("--systems", type=int, default=10,
                    help="random two-qubit systems for the generator check")
    pv.add_argument("--points", type=int, default=100,
                    help="evaluation points per system")
    pv.add_argument("--div-trials", type=int, default=1000,
                    help="trials for the divergence check")
    pv.add_argument("--weak-count", type=int, default=10 ** 6,
                    help="trajectories for the one-step check (0 to skip)")
    pv.add_argument("--dt", type=float, default=1e-4,
                    help="step size for the one-step check")
    pv.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (ConfigError, DimensionLimitError, ValueError) as e:
        print(f"spinsde {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NormalizationCollapseError as e:
        print(f"spinsde {args.command}: {e}", file=sys.stderr)
        return EXIT_COLLAPSE
    except OSError as e:
        print(f"spinsde {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
