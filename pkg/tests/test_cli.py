from dataclasses import replace
from pathlib import Path

import pytest

from pmsm_pi.analysis import certify
from pmsm_pi.cli import main
from pmsm_pi.config import dump_config, load_config
from pmsm_pi.io import HEADER, parse_report, read_trajectory
from pmsm_pi.sim import run_scenario

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
C1 = CONFIGS / "c1.cfg"


def short_config(tmp_path, name="short.cfg", src=C1, **changes):
    cfg = replace(load_config(src), output_path=None, **changes)
    path = tmp_path / name
    path.write_text(dump_config(cfg))
    return path


def kv(text):
    return dict(line.split(" = ", 1) for line in text.splitlines() if " = " in line)


# ---------------------------------------------------------------------- run

def test_run_sample_c1(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert main(["run", "--config", str(C1)]) == 0
    csv = (tmp_path / "c1.csv").read_text().splitlines()
    assert csv[0] == HEADER
    assert len(csv) == 20002
    report = parse_report((tmp_path / "c1.report.txt").read_text())
    assert report["diverged"] is False
    assert "failing_monitors = none" in (tmp_path / "c1.report.txt").read_text()


@pytest.mark.xfail(strict=True, reason="C1 with kp=-6 converges from rest; see decisions ledger")
def test_run_kp_minus6_exit_2(tmp_path):
    cfg = short_config(tmp_path, kp=-6.0)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o.csv")]) == 2


def test_run_divergent_exit_2(tmp_path, capsys):
    cfg = short_config(tmp_path, kp=-8.0)
    out = tmp_path / "o.csv"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 2
    report = parse_report(out.with_suffix(".report.txt").read_text())
    assert report["diverged"] is True and 0 < report["divergence_time"] < 2
    assert "diverged at t" in capsys.readouterr().out
    assert out.read_text().startswith(HEADER)


def test_run_missing_motor_key(tmp_path, capsys):
    text = "\n".join(line for line in C1.read_text().splitlines() if not line.startswith("motor.Ld"))
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    assert main(["run", "--config", str(path)]) == 1
    assert "motor.Ld" in capsys.readouterr().err


def test_run_without_config(capsys):
    assert main(["run"]) == 1


def test_run_decimation_and_plotdata(tmp_path):
    cfg = short_config(tmp_path, horizon=0.01)
    out = tmp_path / "r.csv"
    assert main(["run", "--config", str(cfg), "--out", str(out), "--decimation", "1", "--plotdata"]) == 0
    assert len(out.read_text().splitlines()) == 1002
    assert (tmp_path / "r.speed.csv").exists() and (tmp_path / "r.storage.csv").exists()


def test_run_batch_jobs_deterministic(tmp_path):
    a = short_config(tmp_path, "a.cfg", src=CONFIGS / "c2.cfg", horizon=0.02)
    b = short_config(tmp_path, "b.cfg", src=CONFIGS / "c4.cfg", horizon=0.02)
    par, ser = tmp_path / "par", tmp_path / "ser"
    assert main(["run", "--config", str(a), "--config", str(b), "--jobs", "2", "--out", str(par)]) == 0
    assert main(["run", "--config", str(a), "--config", str(b), "--out", str(ser)]) == 0
    for name in ("a.csv", "b.csv", "a.report.txt"):
        assert (par / name).read_bytes() == (ser / name).read_bytes()


def test_bad_arguments_exit_1():
    assert main(["frobnicate"]) == 1
    assert main(["gainbound", "--omega", "x", "--tau-max", "1"]) == 1


# ---------------------------------------------------------------- gainbound

def test_gainbound_table1(capsys):
    assert main(["gainbound", "--config", str(C1), "--omega", "104.72", "--tau-max", "4.6"]) == 0
    out = kv(capsys.readouterr().out)
    assert float(out["kp_min"]) == pytest.approx(-2.32, abs=0.05)
    assert float(out["kp_min_recommended"]) == pytest.approx(float(out["kp_min"]) + 1e-3)
    assert out["kp_min_closed_form"] == "not applicable"
    assert float(out["passivity_margin"]) == pytest.approx(float(out["kp_min"]), abs=1e-9)
    assert float(out["x2_worst"]) == pytest.approx((4.6 + 0.02 * 104.72) / (3 * 0.236))


def test_gainbound_trivial(capsys):
    assert main(["gainbound", "--omega", "0", "--tau-max", "0"]) == 0
    assert float(kv(capsys.readouterr().out)["kp_min"]) == pytest.approx(-6.0, abs=1e-12)


def test_gainbound_nonsalient(tmp_path, capsys):
    text = C1.read_text().replace("motor.Lq = 0.055", "motor.Lq = 0.0312")
    path = tmp_path / "ns.cfg"
    path.write_text(text)
    assert main(["gainbound", "--config", str(path), "--omega", "104.7", "--tau-max", "1.0", "--margin", "0.5"]) == 0
    out = kv(capsys.readouterr().out)
    assert float(out["kp_min_closed_form"]) == pytest.approx(-5.303, abs=1e-3)
    assert float(out["kp_min_recommended"]) == pytest.approx(float(out["kp_min"]) + 0.5)


def test_gainbound_invalid_params(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text(C1.read_text().replace("motor.Rs = 6.0", "motor.Rs = -6.0"))
    assert main(["gainbound", "--config", str(path), "--omega", "100", "--tau-max", "1"]) == 1
    assert "motor.Rs" in capsys.readouterr().err
    assert main(["gainbound", "--omega", "100", "--tau-max", "-1"]) == 1


# ---------------------------------------------------------------- linearize

def test_linearize_default(capsys):
    assert main(["linearize", "--config", str(C1)]) == 0
    out = capsys.readouterr().out
    eigs = [complex(v.replace(" ", "")) for k, v in kv(out).items() if k.startswith("eig_")]
    assert len(eigs) == 5 and all(e.real < 0 for e in eigs)
    assert "hurwitz = true" in out


def test_linearize_bracket(capsys):
    assert main(["linearize", "--config", str(C1), "--bracket", "-8", "-4"]) == 0
    kb = float(kv(capsys.readouterr().out)["stability_boundary"])
    assert -6.5 <= kb <= -5.0


def test_linearize_bracket_without_transition(capsys):
    assert main(["linearize", "--config", str(C1), "--bracket", "10", "20"]) == 1
    assert "no sign change" in capsys.readouterr().err


def test_linearize_needs_c1(capsys):
    assert main(["linearize", "--config", str(CONFIGS / "c2.cfg")]) == 1


# -------------------------------------------------------------------- check

@pytest.fixture
def c1_run(tmp_path):
    cfg = short_config(tmp_path, horizon=0.2)
    out = tmp_path / "c1.csv"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    return cfg, out


def test_check_round_trip(c1_run, capsys):
    cfg, out = c1_run
    capsys.readouterr()
    assert main(["check", "--config", str(cfg), str(out)]) == 0
    printed = parse_report(capsys.readouterr().out)
    c = load_config(cfg)
    sc = c.scenario()
    memory = certify(run_scenario(sc, c.motor), sc, c.motor).as_dict()
    assert printed.keys() == memory.keys()
    for key, value in memory.items():
        if isinstance(value, float):
            assert printed[key] == pytest.approx(value, rel=1e-12, abs=1e-12), key
        else:
            assert printed[key] == value, key
    assert read_trajectory(out, sc, c.motor).diverged is False


def test_check_detects_tampered_w(c1_run, capsys):
    cfg, out = c1_run
    lines = out.read_text().splitlines()
    cells = lines[500].split(",")
    cells[11] = repr(float(cells[11]) * 1.5 + 1.0)
    lines[500] = ",".join(cells)
    out.write_text("\n".join(lines) + "\n")
    assert main(["check", "--config", str(cfg), str(out)]) == 2
    assert "failing monitor: lyapunov" in capsys.readouterr().out


def test_check_truncated(c1_run, capsys):
    cfg, out = c1_run
    text = out.read_text()
    out.write_text(text[: len(text) - 37])
    assert main(["check", "--config", str(cfg), str(out)]) == 1
    assert "truncated" in capsys.readouterr().err


def test_check_diverged_run(tmp_path, capsys):
    cfg = short_config(tmp_path, kp=-8.0)
    out = tmp_path / "d.csv"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 2
    assert main(["check", "--config", str(cfg), str(out)]) == 2
    assert "divergence" in capsys.readouterr().out
