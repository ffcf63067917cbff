from dataclasses import replace
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from pmsm_pi.config import ConfigError, RunConfig, default_config, dump_config, load_config, parse_config, parse_motor
from pmsm_pi.motor import TABLE1, MotorParams
from pmsm_pi.sim import Profile

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SAMPLES = sorted(CONFIGS.glob("*.cfg"))


def c1_text():
    return (CONFIGS / "c1.cfg").read_text()


def test_samples_present():
    assert {s.stem for s in SAMPLES} >= {"c1", "c2", "c3", "c4"}


@pytest.mark.parametrize("path", SAMPLES, ids=lambda p: p.stem)
def test_sample_round_trip(path):
    cfg = load_config(path)
    assert parse_config(dump_config(cfg)) == cfg
    cfg.scenario()


def test_c1_sample_values():
    cfg = load_config(CONFIGS / "c1.cfg")
    assert cfg.motor == TABLE1
    assert (cfg.scenario_id, cfg.kp, cfg.ki, cfg.dt, cfg.horizon, cfg.decimation) == ("C1", 15.0, 2000.0, 1e-5, 2.0, 10)
    assert cfg.speed == Profile.constant(104.7) and cfg.load == Profile.constant(1.0)


def test_sample_gain_sets():
    c2, c3, c4 = (load_config(CONFIGS / f"{n}.cfg") for n in ("c2", "c3", "c4"))
    assert c2.ell == 20.0 and load_config(CONFIGS / "c2_slow.cfg").ell == 0.1
    assert (c3.alpha, c3.beta, c3.gamma, c3.rm_hat0) == (300.0, 300.0, 200.0, 0.005)
    assert (c4.a_p, c4.a_i) == (0.03, 1.1)


def test_missing_motor_key():
    text = "\n".join(line for line in c1_text().splitlines() if not line.startswith("motor.Ld"))
    with pytest.raises(ConfigError, match=r"motor\.Ld"):
        parse_config(text)


def test_unknown_key_names_key_and_line():
    text = c1_text() + "gains.kd = 3\n"
    line = len(c1_text().splitlines()) + 1
    with pytest.raises(ConfigError, match=rf":{line}: gains\.kd: unknown key"):
        parse_config(text, "c1.cfg")


def test_bad_value_names_key_and_line():
    text = c1_text().replace("gains.ki = 2000", "gains.ki = fast")
    line = next(i for i, s in enumerate(text.splitlines(), 1) if s.startswith("gains.ki"))
    with pytest.raises(ConfigError, match=rf":{line}: gains\.ki"):
        parse_config(text, "c1.cfg")


@pytest.mark.parametrize("bad", ["motor.Rs = -6", "motor.Rs = nan", "motor.Rs = inf"])
def test_invalid_motor_value(bad):
    text = c1_text().replace("motor.Rs = 6.0", bad)
    with pytest.raises(ConfigError, match=r"motor\.Rs"):
        parse_config(text)


def test_duplicate_and_malformed_lines():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config(c1_text() + "gains.kp = 3\n")
    with pytest.raises(ConfigError, match="section.key = value"):
        parse_config(c1_text() + "just words\n")
    with pytest.raises(ConfigError, match="empty value"):
        parse_config(c1_text() + "observer.ell =\n")


def test_scenario_specific_keys_required():
    text = c1_text().replace("scenario.id = C1", "scenario.id = C2")
    with pytest.raises(ConfigError, match=r"observer\.ell"):
        parse_config(text)
    with pytest.raises(ConfigError, match="scenario.id"):
        parse_config(c1_text().replace("scenario.id = C1", "scenario.id = C7"))


def test_profile_errors():
    with pytest.raises(ConfigError, match=r"speed\.points"):
        parse_config(c1_text() + "speed.points = 0 1; 1 2\n")
    text = c1_text().replace("speed.kind = constant\nspeed.value = 104.7", "speed.kind = piecewise-linear\nspeed.points = 0 1; 0 2")
    with pytest.raises(ConfigError, match="increasing"):
        parse_config(text)
    text = c1_text().replace("speed.kind = constant", "speed.kind = sine")
    with pytest.raises(ConfigError, match=r"speed\.kind"):
        parse_config(text)


def test_comments_and_blank_lines():
    text = "# header\n\n" + c1_text().replace("gains.kp = 15", "gains.kp = 15   # proportional")
    assert parse_config(text).kp == 15.0


def test_parse_motor_only():
    text = "\n".join(line for line in c1_text().splitlines() if line.startswith("motor.")) + "\n"
    assert parse_motor(text) == TABLE1


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.cfg")


finite = st.floats(1e-6, 1e6, allow_nan=False, allow_infinity=False)


@given(
    st.sampled_from(["C1", "C2", "C3", "C4"]), finite, finite, st.floats(-50, 50), finite,
    st.lists(st.tuples(st.floats(0, 10), st.floats(-200, 200)), min_size=2, max_size=5, unique_by=lambda p: p[0]),
    st.booleans(),
)
def test_round_trip_generated(sid, ld, rm, kp, ki, pts, eqstart):
    pts = tuple(sorted(pts))
    cfg = default_config(
        sid, motor=MotorParams(Ld=ld, Rm=rm), kp=kp, ki=ki, speed=Profile.piecewise(*pts),
        start_at_equilibrium=eqstart, x0=(0.1, -0.2, 1e-17), output_path="out dir/x.csv",
    )
    back = parse_config(dump_config(cfg))
    assert back == cfg
    assert isinstance(back, RunConfig)


def test_default_config_matches_sample():
    sample = load_config(CONFIGS / "c1.cfg")
    assert replace(sample, output_path=None) == default_config("C1")
