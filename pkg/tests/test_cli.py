import json
import subprocess
import sys

import numpy as np
import pytest

from diqkd.behavior import Behavior
from diqkd.cli import CliError, main, parse_grid


def run(args, capsys):
    code = main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_parse_grid():
    assert parse_grid("0:0.09:0.03") == [0.0, 0.03, 0.06, 0.09]
    assert parse_grid("0.3,0,0.15") == [0.0, 0.15, 0.3]
    for bad in ("0:1", "0.5:0.1:0.1", "1.5", "", "0:1:0"):
        with pytest.raises(CliError):
            parse_grid(bad)


def test_behavior_command(tmp_path, capsys):
    out = tmp_path / "b.json"
    code, _, _ = run(["behavior", "--preset", "ekert", "--rho", "1", "--out", str(out)], capsys)
    assert code == 0
    b = Behavior.load(out)
    assert np.allclose(b.table, 0.25, atol=1e-15)
    assert b.alphabets.nu == 2 and b.alphabets.nv == 3


def test_behavior_flip_flag(tmp_path, capsys):
    r2 = np.sqrt(2)
    hi, lo = (2 + r2) / 8, (2 - r2) / 8
    flipped, raw = tmp_path / "f.json", tmp_path / "r.json"
    run(["behavior", "--preset", "ekert", "--out", str(flipped)], capsys)
    run(["behavior", "--preset", "ekert", "--no-flip", "--out", str(raw)], capsys)
    f, r = Behavior.load(flipped).table, Behavior.load(raw).table
    assert np.allclose(f[:, :, :, ::-1], r, atol=1e-15)
    assert np.allclose(f[0, 0], [[hi, lo], [lo, hi]], atol=1e-12)
    assert np.allclose(f[1, 1], [[lo, hi], [hi, lo]], atol=1e-12)


def test_pguess_sweep_csv(tmp_path, capsys):
    out = tmp_path / "p.csv"
    env_dir = tmp_path / "cache"
    code, _, _ = run(["pguess-sweep", "--grid", "0,0.3", "--cert-dir", str(env_dir), "--out", str(out)], capsys)
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "rho,pguess"
    rows = [tuple(map(float, l.split(","))) for l in lines[1:]]
    assert [r[0] for r in rows] == [0.0, 0.3]
    assert rows[0][1] == pytest.approx(0.5, abs=1e-3) and rows[1][1] == pytest.approx(1.0, abs=1e-3)
    assert all(len(l.split(",")[1].split(".")[1]) == 6 for l in lines[1:])
    first = out.read_text()
    # second run hits the cache and must not change a byte
    run(["pguess-sweep", "--grid", "0,0.3", "--cert-dir", str(env_dir), "--out", str(out)], capsys)
    assert out.read_text() == first
    assert len(list(env_dir.glob("*.json"))) == 4  # level 2 and the in-run level 1 check


def test_keyrate_modes(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("DIQKD_CERT_DIR", str(tmp_path / "c"))
    code, fig, _ = run(["keyrate-sweep", "--grid", "0,0.06"], capsys)
    assert code == 0
    code, model, _ = run(["keyrate-sweep", "--grid", "0,0.06", "--delta-mode", "model"], capsys)
    f = [float(l.split(",")[1]) for l in fig.splitlines()[1:]]
    m = [float(l.split(",")[1]) for l in model.splitlines()[1:]]
    assert fig.splitlines()[0] == "rho,q"
    assert f[0] == pytest.approx(1.0, abs=3e-3) and m[0] == pytest.approx(1.0, abs=3e-3)
    assert all(b >= a for a, b in zip(f, m))
    assert any((tmp_path / "c").glob("*.json"))


def test_simulate_accepts_and_is_byte_stable(tmp_path, capsys):
    args = ["simulate", "--rho", "0", "--n", "100000", "--seed", "4", "--cert-dir", str(tmp_path / "c")]
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    code, _, _ = run(args + ["--out", str(a)], capsys)
    assert code == 0
    run(args + ["--out", str(b)], capsys)
    assert a.read_bytes() == b.read_bytes()
    doc = json.loads(a.read_text())
    assert doc["accepted"] is True
    assert doc["reconciliation"]["failures"] == 0 and doc["reconciliation"]["blocks"] > 0
    assert "eps_total_log2" in doc["security"]


def test_simulate_aborts_on_local_noise(tmp_path, capsys):
    code, _, err = run(["simulate", "--rho", "0.3", "--n", "100000", "--cert-dir", str(tmp_path / "c"),
                        "--out", str(tmp_path / "r.json")], capsys)
    assert code == 2
    assert "aborted" in err
    assert json.loads((tmp_path / "r.json").read_text())["accepted"] is False


def test_certificate_solve_and_eval(tmp_path, capsys):
    beh, cert = tmp_path / "b.json", tmp_path / "c.json"
    run(["behavior", "--preset", "chsh", "--rho", "0.06", "--out", str(beh)], capsys)
    code, _, err = run(["certificate", "solve", "--behavior", str(beh), "--out", str(cert)], capsys)
    assert code == 0 and "guess bound" in err
    code, out, _ = run(["certificate", "eval", str(cert), "--behavior", str(beh)], capsys)
    assert code == 0 and float(out) == pytest.approx(0.7285, abs=1e-2)


def test_operational_errors(tmp_path, capsys):
    assert run(["pguess-sweep", "--grid", "2"], capsys)[0] == 1
    assert run(["certificate", "eval", str(tmp_path / "missing.json"), "--behavior", "x"], capsys)[0] == 1
    assert run(["no-such-command"], capsys)[0] == 1
    assert run(["simulate", "--n", str(10**8)], capsys)[0] == 1


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "diqkd.cli", "pguess-sweep", "--rho", "0"],
                         capture_output=True, text=True, check=True)
    lines = res.stdout.splitlines()
    assert lines[0] == "rho,pguess" and lines[1].startswith("0.000000,0.5")


def test_sweep_stable_across_processes(tmp_path):
    # fresh processes get different memory layouts; output must not depend on them
    outs = set()
    for i, jobs in enumerate((1, 2, 1)):
        res = subprocess.run([sys.executable, "-m", "diqkd.cli", "pguess-sweep", "--rho", "0,0.03",
                              "--jobs", str(jobs), "--cert-dir", str(tmp_path / f"c{i}")],
                             capture_output=True, text=True, check=True)
        outs.add(res.stdout)
    assert len(outs) == 1
