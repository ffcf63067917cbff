"""Run configuration: a flat ``section.key = value`` text format.

Example::

    # C1, classical PI
    motor.Ld = 0.0312
    ...
    scenario.id = C1
    gains.kp = 15
    speed.kind = constant
    speed.value = 104.7

Piecewise-linear profiles list ``time value`` pairs separated by ``;``.
Vectors (initial conditions) are comma separated.  All numbers are SI.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .controllers import PiGains
from .motor import TABLE1, MotorParams, MotorState
from .sim import SCENARIO_IDS, Profile, Scenario


class ConfigError(ValueError):
    """Invalid configuration; the message names the key and, when known, the line."""


@dataclass(frozen=True)
class RunConfig:
    motor: MotorParams
    scenario_id: str
    speed: Profile
    load: Profile
    kp: float
    ki: float
    dt: float = 1e-5
    horizon: float = 2.0
    decimation: int = 10
    ell: float | None = None
    alpha: float | None = None
    beta: float | None = None
    gamma: float | None = None
    rm_hat0: float = 0.005
    a_p: float | None = None
    a_i: float | None = None
    x0: tuple[float, float, float] = (0.0, 0.0, 0.0)
    xc0: tuple[float, float] = (0.0, 0.0)
    chi0: float = 0.0
    rm_filter0: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    outer_chi0: float = 0.0
    start_at_equilibrium: bool = False
    output_path: str | None = None
    report: bool = True

    def scenario(self) -> Scenario:
        return Scenario(
            self.scenario_id, self.speed, self.load, PiGains.scalar(self.kp, self.ki),
            dt=self.dt, horizon=self.horizon, decimation=self.decimation,
            ell=self.ell, gamma=self.gamma, alpha=self.alpha, beta=self.beta,
            a_p=self.a_p, a_i=self.a_i, x0=MotorState(*self.x0), xc0=self.xc0,
            chi0=self.chi0, rm_hat0=self.rm_hat0, rm_filter0=self.rm_filter0,
            outer_chi0=self.outer_chi0, start_at_equilibrium=self.start_at_equilibrium,
        )


# key -> (RunConfig field, kind).  Motor keys are handled separately.
_MOTOR_KEYS = tuple(f"motor.{f.name}" for f in fields(MotorParams))
_KEYS = {
    "scenario.id": ("scenario_id", "id"),
    "scenario.dt": ("dt", "float"),
    "scenario.horizon": ("horizon", "float"),
    "scenario.decimation": ("decimation", "int"),
    "gains.kp": ("kp", "float"),
    "gains.ki": ("ki", "float"),
    "observer.ell": ("ell", "float"),
    "estimator.alpha": ("alpha", "float"),
    "estimator.beta": ("beta", "float"),
    "estimator.gamma": ("gamma", "float"),
    "estimator.rm_hat0": ("rm_hat0", "float"),
    "outer.a_p": ("a_p", "float"),
    "outer.a_i": ("a_i", "float"),
    "init.x0": ("x0", "vec3"),
    "init.xc0": ("xc0", "vec2"),
    "init.chi0": ("chi0", "float"),
    "init.rm_filter0": ("rm_filter0", "vec4"),
    "init.outer_chi0": ("outer_chi0", "float"),
    "init.equilibrium": ("start_at_equilibrium", "bool"),
    "output.path": ("output_path", "str"),
    "output.report": ("report", "bool"),
}
_PROFILE_KEYS = ("speed.kind", "speed.value", "speed.points", "load.kind", "load.value", "load.points")
_REQUIRED = ("scenario.id", "gains.kp", "gains.ki", "speed.kind", "load.kind")
_SCENARIO_KEYS = {
    "C2": ("observer.ell",),
    "C3": ("observer.ell", "estimator.alpha", "estimator.beta", "estimator.gamma"),
    "C4": ("outer.a_p", "outer.a_i"),
}
KNOWN_KEYS = frozenset(_MOTOR_KEYS) | frozenset(_KEYS) | frozenset(_PROFILE_KEYS)


def _fail(msg: str, key: str | None, line: int | None, source: str) -> ConfigError:
    where = f"{source}:{line}" if line is not None else source
    return ConfigError(f"{where}: {key}: {msg}" if key else f"{where}: {msg}")


def _number(text: str) -> float:
    v = float(text)
    if not math.isfinite(v):
        raise ValueError(f"not a finite number: {text!r}")
    return v


def _convert(kind: str, text: str):
    if kind == "float":
        return _number(text)
    if kind == "int":
        return int(text)
    if kind == "str":
        return text
    if kind == "id":
        if text not in SCENARIO_IDS:
            raise ValueError(f"expected one of {', '.join(SCENARIO_IDS)}, got {text!r}")
        return text
    if kind == "bool":
        low = text.lower()
        if low not in ("true", "false"):
            raise ValueError(f"expected true or false, got {text!r}")
        return low == "true"
    n = int(kind[3:])
    parts = [s.strip() for s in text.split(",")]
    if len(parts) != n:
        raise ValueError(f"expected {n} comma-separated numbers, got {len(parts)}")
    return tuple(_number(s) for s in parts)


def _points(text: str):
    pts = []
    for chunk in text.split(";"):
        pair = chunk.split()
        if len(pair) != 2:
            raise ValueError(f"expected 'time value' pairs separated by ';', got {chunk.strip()!r}")
        pts.append((_number(pair[0]), _number(pair[1])))
    return tuple(pts)


def _read_lines(text: str, source: str) -> dict[str, tuple[str, int]]:
    entries: dict[str, tuple[str, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise _fail("expected 'section.key = value'", None, lineno, source)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise _fail("unknown key", key, lineno, source)
        if key in entries:
            raise _fail(f"duplicate key (first set on line {entries[key][1]})", key, lineno, source)
        if not value:
            raise _fail("empty value", key, lineno, source)
        entries[key] = (value, lineno)
    return entries


def parse_motor(text: str, source: str = "<config>") -> MotorParams:
    """Motor block only; other known sections are ignored."""
    return _motor(_read_lines(text, source), source)


def _motor(entries, source) -> MotorParams:
    values = {}
    for key in _MOTOR_KEYS:
        if key not in entries:
            raise _fail("missing required key", key, None, source)
        text, line = entries[key]
        try:
            values[key.split(".", 1)[1]] = _number(text)
        except ValueError as exc:
            raise _fail(str(exc), key, line, source) from None
    try:
        return MotorParams(**values)
    except ValueError as exc:
        name = str(exc).split()[2]
        raise _fail(str(exc), f"motor.{name}", entries[f"motor.{name}"][1], source) from None


def _profile(entries, section: str, source: str) -> Profile:
    kind, line = entries[f"{section}.kind"]
    if kind == "constant":
        key, other = f"{section}.value", f"{section}.points"
    elif kind == "piecewise-linear":
        key, other = f"{section}.points", f"{section}.value"
    else:
        raise _fail(f"expected constant or piecewise-linear, got {kind!r}", f"{section}.kind", line, source)
    if other in entries:
        raise _fail(f"not allowed with {section}.kind = {kind}", other, entries[other][1], source)
    if key not in entries:
        raise _fail("missing required key", key, None, source)
    text, line = entries[key]
    try:
        if kind == "constant":
            return Profile.constant(_number(text))
        return Profile.piecewise(*_points(text))
    except ValueError as exc:
        raise _fail(str(exc), key, line, source) from None


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    entries = _read_lines(text, source)
    motor = _motor(entries, source)
    for key in _REQUIRED:
        if key not in entries:
            raise _fail("missing required key", key, None, source)
    values = {}
    for key, (name, kind) in _KEYS.items():
        if key in entries:
            text_value, line = entries[key]
            try:
                values[name] = _convert(kind, text_value)
            except ValueError as exc:
                raise _fail(str(exc), key, line, source) from None
    sid = values["scenario_id"]
    for key in _SCENARIO_KEYS.get(sid, ()):
        if key not in entries:
            raise _fail(f"missing required key for scenario {sid}", key, None, source)
    cfg = RunConfig(motor=motor, speed=_profile(entries, "speed", source),
                    load=_profile(entries, "load", source), **values)
    try:
        cfg.scenario()
    except ValueError as exc:
        raise _fail(str(exc), None, None, source) from None
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    return parse_config(text, str(path))


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _dump_profile(section: str, pr: Profile) -> list[str]:
    if pr.kind == "constant":
        return [f"{section}.kind = constant", f"{section}.value = {pr.breakpoints[0][1]!r}"]
    pts = "; ".join(f"{t!r} {v!r}" for t, v in pr.breakpoints)
    return [f"{section}.kind = piecewise-linear", f"{section}.points = {pts}"]


def dump_config(cfg: RunConfig) -> str:
    """Serialize so that ``parse_config(dump_config(c)) == c``."""
    lines = [f"motor.{f.name} = {getattr(cfg.motor, f.name)!r}" for f in fields(MotorParams)]
    for key, (name, _) in _KEYS.items():
        value = getattr(cfg, name)
        if value is not None:
            lines.append(f"{key} = {_fmt(value)}")
    lines += _dump_profile("speed", cfg.speed) + _dump_profile("load", cfg.load)
    return "\n".join(lines) + "\n"


def default_config(sid: str = "C1", **overrides) -> RunConfig:
    """Configuration equivalent to :func:`pmsm_pi.sim.default_scenario`."""
    from .sim import default_scenario

    sc = default_scenario(sid)
    cfg = RunConfig(
        motor=TABLE1, scenario_id=sid, speed=sc.speed_ref, load=sc.load, kp=15.0, ki=2000.0,
        dt=sc.dt, horizon=sc.horizon, decimation=sc.decimation, ell=sc.ell, alpha=sc.alpha,
        beta=sc.beta, gamma=sc.gamma, rm_hat0=sc.rm_hat0, a_p=sc.a_p, a_i=sc.a_i,
    )
    return replace(cfg, **overrides)
