"""End-to-end tests of the command line interface: config parsing and
validation, the four subcommands, exit codes, and byte-level output
determinism. Everything runs in process through main(argv).
"""

import csv
import json

import numpy as np
import pytest

from spinsde.cli import ConfigError, emit_config, main, parse_config


def precession_config(count=2000, dt=1e-3, t_final=0.01, output_every=5,
                      seed=7, **extra):
    cfg = {
        "n_qubits": 1,
        "fields": [{"qubit": 0,
                    "schedule": [{"t": 0.0, "B": [0.0, 0.0, 2 * np.pi]}]}],
        "initial": {"product": ["+x"]},
        "ensemble": {"count": count, "M": 1.0, "seed": seed},
        "integrator": {"dt": dt, "t_final": t_final,
                       "output_every": output_every},
    }
    cfg.update(extra)
    return cfg


def write_config(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def read_rows(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], [[float(x) for x in r] for r in rows[1:]]


# ---------------------------------------------------------------- parsing


def full_config_dict():
    return {
        "n_qubits": 2,
        "fields": [
            {"qubit": 0, "schedule": [{"t": 0.0, "B": [0.0, 0.0, 0.3]},
                                      {"t": 0.1, "B": [0.1, 0.0, 0.0]}]},
        ],
        "pairs": [
            {"a": 0, "b": 1,
             "schedule": [{"t": 0.0, "J": [[0.5, 0, 0], [0, 0.5, 0],
                                           [0, 0, 0.5]]}]},
        ],
        "initial": {"product": ["up", "up"]},
        "ensemble": {"count": 1000, "M": 1.5, "seed": 3},
        "integrator": {"dt": 1e-4, "t_final": 0.2, "output_every": 500,
                       "reset_every": 500},
        "observables": ["z.0", "0.z", "z.z"],
        "estimator": {"shell": [0.0, 0.8], "batches": 50},
    }


def test_parse_emit_round_trip():
    cfg = parse_config(full_config_dict())
    again = parse_config(emit_config(cfg))
    assert again == cfg
    assert cfg.shell == (0.0, 0.8)
    assert cfg.batches == 50
    assert cfg.observables == ("z.0", "0.z", "z.z")


def test_parse_defaults():
    cfg = parse_config(precession_config())
    assert cfg.M == 1.0
    assert cfg.reset_every is None
    assert cfg.observables is None
    assert cfg.shell is None
    assert cfg.batches == 100


@pytest.mark.parametrize("mutate,msg", [
    (lambda c: c.pop("integrator"), "missing required key 'integrator'"),
    (lambda c: c.update(extra_key=1), "unknown key 'extra_key'"),
    (lambda c: c["fields"][0]["schedule"].__setitem__(
        0, {"t": 0.5, "B": [0, 0, 1]}), "must start at t = 0"),
    (lambda c: c["fields"].append(dict(c["fields"][0])),
     "duplicate entry for qubit 0"),
    (lambda c: c["fields"][0].update(qubit=5), "out of range"),
    (lambda c: c["integrator"].update(dt=-1.0), "integrator.dt"),
    (lambda c: c["ensemble"].update(count=0), "ensemble.count"),
    (lambda c: c["ensemble"].update(M=0.0), "ensemble.M"),
    (lambda c: c["integrator"].update(t_final=-0.5), "integrator.t_final"),
])
def test_parse_rejects_bad_field_configs(mutate, msg):
    cfg = precession_config()
    mutate(cfg)
    with pytest.raises(ConfigError, match=msg):
        parse_config(cfg)


@pytest.mark.parametrize("mutate,msg", [
    (lambda c: c["pairs"][0].update(a=1, b=0), "require a < b"),
    (lambda c: c["pairs"].append(dict(c["pairs"][0])), "duplicate pair"),
    (lambda c: c.update(initial={"singlet": True, "product": ["up", "up"]}),
     "exactly one"),
    (lambda c: c.update(initial={"bloch": {"0.0": 2.0}}),
     "normalization component must be 1"),
    (lambda c: c.update(observables=["q.q"]), "observables\\[0\\]"),
    (lambda c: c["estimator"].update(shell=[0.8, 0.2]),
     "require 0 <= r_lo < r_hi"),
    (lambda c: c["estimator"].update(batches=1), "estimator.batches"),
])
def test_parse_rejects_bad_pair_configs(mutate, msg):
    cfg = full_config_dict()
    mutate(cfg)
    with pytest.raises(ConfigError, match=msg):
        parse_config(cfg)


def test_parse_singlet_needs_two_qubits():
    cfg = precession_config()
    cfg["initial"] = {"singlet": True}
    with pytest.raises(ConfigError, match="requires n_qubits = 2"):
        parse_config(cfg)


# ------------------------------------------------------------ subcommands


def test_simulate_smoke(tmp_path, capsys):
    cfg = write_config(tmp_path, precession_config())
    out = tmp_path / "sim.csv"
    manifest = tmp_path / "run.json"
    rc = main(["simulate", "--config", cfg, "--output", str(out),
               "--manifest", str(manifest)])
    assert rc == 0
    assert "wrote 3 records" in capsys.readouterr().out

    header, rows = read_rows(out)
    assert header == ["t", "est_x", "err_x", "est_y", "err_y", "est_z",
                      "err_z", "sum_w", "ess", "neg_w_frac", "escape_frac",
                      "underflow_count"]
    assert [r[0] for r in rows] == [0.0, 0.005, 0.01]
    # |+x> under B = (0, 0, 2 pi): x stays near 0.5 cos(2 pi t)
    for r in rows:
        assert abs(r[1] - 0.5 * np.cos(2 * np.pi * r[0])) < max(5 * r[2], 0.01)

    man = json.loads(manifest.read_text())
    assert man["records"] == 3
    assert man["resets"] == []
    assert parse_config(man["config"]) == parse_config(json.loads(
        (tmp_path / "cfg.json").read_text()))


def test_simulate_worker_count_invariance(tmp_path):
    cfg = write_config(tmp_path, precession_config(count=3000))
    a, b = tmp_path / "w1.csv", tmp_path / "w2.csv"
    assert main(["simulate", "--config", cfg, "--output", str(a),
                 "--workers", "1"]) == 0
    assert main(["simulate", "--config", cfg, "--output", str(b),
                 "--workers", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_reference_matches_closed_form(tmp_path):
    cfg = write_config(tmp_path, precession_config(
        count=10, dt=1e-4, t_final=0.1, output_every=250))
    out = tmp_path / "ref.csv"
    assert main(["reference", "--config", cfg, "--output", str(out)]) == 0
    header, rows = read_rows(out)
    assert header == ["t", "exact_x", "exact_y", "exact_z"]
    for r in rows:
        assert r[1] == pytest.approx(0.5 * np.cos(2 * np.pi * r[0]), abs=1e-9)
        assert r[2] == pytest.approx(-0.5 * np.sin(2 * np.pi * r[0]), abs=1e-9)
        assert r[3] == pytest.approx(0.0, abs=1e-12)


def test_compare_pass_and_fail(tmp_path, capsys):
    cfg = write_config(tmp_path, precession_config(count=20000))
    sim, ref = tmp_path / "sim.csv", tmp_path / "ref.csv"
    assert main(["simulate", "--config", cfg, "--output", str(sim)]) == 0
    assert main(["reference", "--config", cfg, "--output", str(ref)]) == 0

    dev = tmp_path / "dev.csv"
    rc = main(["compare", "--sim", str(sim), "--ref", str(ref),
               "--output", str(dev)])
    out = capsys.readouterr().out
    assert rc == 0
    assert "compare: PASS" in out
    hdr, rows = read_rows(dev)
    assert hdr[:3] == ["t", "dev_x", "z_x"]
    assert len(rows) == 3

    # corrupt one reference value beyond any threshold -> exit 2
    lines = ref.read_text().splitlines()
    parts = lines[-1].split(",")
    parts[1] = str(float(parts[1]) + 1.0)
    lines[-1] = ",".join(parts)
    ref.write_text("\n".join(lines) + "\n")
    rc = main(["compare", "--sim", str(sim), "--ref", str(ref)])
    out = capsys.readouterr().out
    assert rc == 2
    assert "compare: FAIL" in out


def test_compare_grid_mismatch(tmp_path, capsys):
    cfg = write_config(tmp_path, precession_config(count=500))
    sim, ref = tmp_path / "sim.csv", tmp_path / "ref.csv"
    main(["simulate", "--config", cfg, "--output", str(sim)])
    main(["reference", "--config", cfg, "--output", str(ref)])
    lines = ref.read_text().splitlines()
    ref.write_text("\n".join(lines[:-1]) + "\n")
    assert main(["compare", "--sim", str(sim), "--ref", str(ref)]) == 1
    assert "time grids do not match" in capsys.readouterr().err


def test_collapse_exit_code(tmp_path, capsys):
    # a shell that contains none of the samples empties the weight sum
    cfg = {
        "n_qubits": 2,
        "initial": {"product": ["up", "up"]},
        "ensemble": {"count": 100, "M": 1.0, "seed": 0},
        "integrator": {"dt": 1e-3, "t_final": 0.0},
        "estimator": {"shell": [0.999, 1.0]},
    }
    path = write_config(tmp_path, cfg)
    rc = main(["simulate", "--config", path, "--output",
               str(tmp_path / "out.csv")])
    assert rc == 3
    assert "collapsed" in capsys.readouterr().err


def test_verify_subcommand(tmp_path, capsys):
    rc = main(["verify", "--systems", "2", "--points", "25",
               "--div-trials", "50", "--weak-count", "0"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "verify: PASS" in out
    assert "generator equivalence" in out
    assert "divergence" in out


# -------------------------------------------------------------- exit codes


def test_usage_errors(tmp_path, capsys):
    assert main(["simulate", "--output", "x.csv"]) == 1  # missing --config
    assert main(["not-a-command"]) == 1
    assert main(["simulate", "--config", str(tmp_path / "absent.json"),
                 "--output", str(tmp_path / "o.csv")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["simulate", "--config", str(bad),
                 "--output", str(tmp_path / "o.csv")]) == 1
    wrong = write_config(tmp_path, {**precession_config(),
                                    "initial": {"singlet": True}}, "w.json")
    assert main(["simulate", "--config", wrong,
                 "--output", str(tmp_path / "o.csv")]) == 1
    capsys.readouterr()


def test_version_flag(capsys):
    assert main(["--version"]) == 0
    assert capsys.readouterr().out.strip()
