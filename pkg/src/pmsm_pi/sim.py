"""Fixed-step RK4 simulation of the PMSM under the four closed-loop scenarios.

Scenario ids:

* ``C1`` classical current PI, exact load torque and friction.
* ``C2`` adaptive current PI with the load-torque observer.
* ``C3`` as C2, plus the on-line friction estimate fed back into the observer
  and the current reference.
* ``C4`` classical current PI with the reference from an outer speed PI.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import controllers as ctl
from .gains import equilibrium, integrator_equilibrium, reference_current
from .motor import NOMINAL_SPEED, TABLE1, MotorParams, MotorState, dynamics

SCENARIO_IDS = ("C1", "C2", "C3", "C4")
DIVERGENCE_THRESHOLD = 1e6


@dataclass(frozen=True)
class Profile:
    """Reference or load signal: a constant or a piecewise-linear curve.

    Outside the breakpoint range the end values are held.
    """

    kind: str
    breakpoints: tuple[tuple[float, float], ...]
    _times: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        bps = tuple((float(t), float(v)) for t, v in self.breakpoints)
        if self.kind not in ("constant", "piecewise-linear"):
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if not bps:
            raise ValueError("profile needs at least one breakpoint")
        if self.kind == "constant" and len(bps) != 1:
            raise ValueError("constant profile takes exactly one value")
        times = [t for t, _ in bps]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("profile breakpoints must be strictly increasing in time")
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "_times", tuple(times))

    @classmethod
    def constant(cls, value: float) -> Profile:
        return cls("constant", ((0.0, value),))

    @classmethod
    def piecewise(cls, *points) -> Profile:
        return cls("piecewise-linear", tuple(points))

    @property
    def is_constant(self) -> bool:
        values = {v for _, v in self.breakpoints}
        return len(values) == 1

    def __call__(self, t: float) -> float:
        return eval_profile(self, t)


def eval_profile(pr: Profile, t: float) -> float:
    bps = pr.breakpoints
    if len(bps) == 1 or t <= bps[0][0]:
        return bps[0][1]
    if t >= bps[-1][0]:
        return bps[-1][1]
    k = bisect.bisect_left(pr._times, t)
    (t0, v0), (t1, v1) = bps[k - 1], bps[k]
    return v0 + (v1 - v0) * (t - t0) / (t1 - t0)


def default_speed_profile() -> Profile:
    """Nominal speed, then a 30 % reduction ramped in over 0.1 s from t = 1 s."""
    w = NOMINAL_SPEED
    return Profile.piecewise((0.0, w), (1.0, w), (1.1, 0.7 * w))


def default_load_profile() -> Profile:
    """1 N m, stepping to 2 N m at t = 0.6 s (1 ms ramp)."""
    return Profile.piecewise((0.0, 1.0), (0.6, 1.0), (0.601, 2.0))


@dataclass(frozen=True)
class Scenario:
    id: str
    speed_ref: Profile
    load: Profile
    gains: ctl.PiGains
    dt: float = 1e-5
    horizon: float = 2.0
    decimation: int = 10
    ell: float | None = None
    gamma: float | None = None
    alpha: float | None = None
    beta: float | None = None
    a_p: float | None = None
    a_i: float | None = None
    x0: MotorState = MotorState(0.0, 0.0, 0.0)
    xc0: tuple[float, float] = (0.0, 0.0)
    chi0: float = 0.0
    rm_hat0: float = 0.005
    rm_filter0: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    outer_chi0: float = 0.0
    start_at_equilibrium: bool = False

    def __post_init__(self):
        if self.id not in SCENARIO_IDS:
            raise ValueError(f"unknown scenario id {self.id!r}")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not self.horizon >= self.dt:
            raise ValueError("horizon must be >= dt")
        if int(self.decimation) < 1:
            raise ValueError("decimation must be >= 1")
        needed = {"C2": ("ell",), "C3": ("ell", "alpha", "beta", "gamma"), "C4": ("a_p", "a_i")}
        for name in needed.get(self.id, ()):
            value = getattr(self, name)
            if value is None or not value > 0:
                raise ValueError(f"scenario {self.id} needs {name} > 0")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def state_size(self) -> int:
        return {"C1": 5, "C2": 6, "C3": 11, "C4": 6}[self.id]


def default_scenario(sid: str, **overrides) -> Scenario:
    """Scenario with the gain sets used for the published transients."""
    if sid == "C1":
        sc = Scenario("C1", Profile.constant(NOMINAL_SPEED), Profile.constant(1.0), ctl.PiGains.scalar(15.0, 2000.0))
    elif sid == "C2":
        sc = Scenario("C2", default_speed_profile(), default_load_profile(), ctl.PiGains.scalar(15.0, 2000.0), ell=20.0)
    elif sid == "C3":
        sc = Scenario(
            "C3", default_speed_profile(), default_load_profile(), ctl.PiGains.scalar(15.0, 2000.0),
            ell=20.0, alpha=300.0, beta=300.0, gamma=200.0, rm_hat0=0.005,
        )
    elif sid == "C4":
        sc = Scenario(
            "C4", default_speed_profile(), default_load_profile(), ctl.PiGains.scalar(15.0, 2000.0),
            a_p=0.03, a_i=1.1,
        )
    else:
        raise ValueError(f"unknown scenario id {sid!r}")
    if "kp" in overrides or "ki" in overrides:
        kp = overrides.pop("kp", 15.0)
        ki = overrides.pop("ki", 2000.0)
        overrides["gains"] = ctl.PiGains.scalar(kp, ki)
    return replace(sc, **overrides)


def low_excitation_c3() -> Scenario:
    """C3 started in its own equilibrium, with a 1 % speed step at 0.01 s.

    The speed is back within 0.1 % of its reference by t = 0.3 s, after which
    the friction regressor carries no excitation.
    """
    w = NOMINAL_SPEED
    return default_scenario(
        "C3",
        speed_ref=Profile.piecewise((0.0, w), (0.01, w), (0.011, 1.01 * w)),
        load=Profile.constant(1.0),
        start_at_equilibrium=True,
    )


def initial_state(sc: Scenario, p: MotorParams) -> np.ndarray:
    """Augmented initial state in the layout of ``sc.id``."""
    if sc.start_at_equilibrium:
        w, tl = sc.speed_ref(0.0), sc.load(0.0)
        eq = equilibrium(w, tl, p)
        x = tuple(eq.x_star)
        xc = tuple(integrator_equilibrium(eq.u_star, sc.gains.KI))
        rm_used = sc.rm_hat0 if sc.id == "C3" else p.Rm
        chi = ctl.observer_equilibrium(w, tl, sc.ell, p, rm_used) if sc.id in ("C2", "C3") else sc.chi0
        filt = ctl.rm_filter_rest_state(x, sc.alpha, sc.beta, p) if sc.id == "C3" else sc.rm_filter0
        outer = -eq.x2_star / sc.a_i if sc.id == "C4" else sc.outer_chi0
    else:
        x, xc, chi, filt, outer = tuple(sc.x0), tuple(sc.xc0), sc.chi0, tuple(sc.rm_filter0), sc.outer_chi0
    s = list(x) + list(xc)
    if sc.id == "C2":
        s += [chi]
    elif sc.id == "C3":
        s += [chi, *filt, sc.rm_hat0]
    elif sc.id == "C4":
        s += [outer]
    return np.array(s, dtype=float)


def _controller(sc: Scenario, p: MotorParams):
    """Build ``g(t, s) -> (xdot, aux)`` for the scenario.

    ``aux = (u, tau_load, omega_ref, tau_hat, rm_hat, x2_ref)``.
    """
    gains = sc.gains
    speed, load = sc.speed_ref, sc.load
    sid = sc.id

    def g(t, s):
        x = (s[0], s[1], s[2])
        xc = (s[3], s[4])
        w_ref = speed(t)
        tl = load(t)
        tau_hat = rm_hat = None
        extra = ()
        if sid == "C1":
            x2_ref = reference_current(w_ref, tl, p)
            u, xc_dot = ctl.pi_control(xc, ctl.y_tilde(x, x2_ref), gains)
        elif sid == "C2":
            obs = ctl.torque_observer_step(ctl.ObserverState(s[5], sc.ell), x, w_ref, p)
            tau_hat, x2_ref = obs.tau_hat, obs.x2_hat
            u, xc_dot = ctl.adaptive_pi_control(xc, x, x2_ref, gains)
            extra = (obs.chi_dot,)
        elif sid == "C3":
            est = ctl.RmEstimatorState(s[6], s[7], s[8], s[9], s[10], sc.alpha, sc.beta, sc.gamma)
            rm_hat = est.rm_hat
            obs = ctl.torque_observer_step(ctl.ObserverState(s[5], sc.ell), x, w_ref, p, rm=rm_hat)
            tau_hat, x2_ref = obs.tau_hat, obs.x2_hat
            u, xc_dot = ctl.adaptive_pi_control(xc, x, x2_ref, gains)
            filt = ctl.rm_filter_step(est, x, p)
            extra = (obs.chi_dot, *filt.state_dots, ctl.rm_estimator_step(est, filt.z, filt.phi))
        else:
            outer = ctl.OuterPiState(s[5], sc.a_p, sc.a_i)
            x2_ref, chi_dot = ctl.outer_pi(outer, x[2] - w_ref)
            u, xc_dot = ctl.pi_control(xc, ctl.y_tilde(x, x2_ref), gains)
            extra = (chi_dot,)
        xdot = dynamics(x, u, tl, p)
        return (*xdot, *xc_dot, *extra), (u, tl, w_ref, tau_hat, rm_hat, x2_ref)

    return g


def closed_loop_field(s, t: float, sc: Scenario, p: MotorParams) -> np.ndarray:
    """Time derivative of the augmented state at ``(s, t)``."""
    deriv, _ = _controller(sc, p)(t, s)
    return np.array(deriv)


def rk4_step(f, s, t: float, dt: float):
    """One classical Runge-Kutta step of ``s' = f(t, s)``."""
    k1 = f(t, s)
    k2 = f(t + 0.5 * dt, s + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, s + 0.5 * dt * k2)
    k4 = f(t + dt, s + dt * k3)
    return s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _rk4_list(g, s: list, t: float, dt: float) -> list:
    # rk4_step specialised to Python lists; numpy overhead dominates at this size
    h2 = 0.5 * dt
    k1 = g(t, s)[0]
    k2 = g(t + h2, [a + h2 * b for a, b in zip(s, k1)])[0]
    k3 = g(t + h2, [a + h2 * b for a, b in zip(s, k2)])[0]
    k4 = g(t + dt, [a + dt * b for a, b in zip(s, k3)])[0]
    h6 = dt / 6.0
    return [a + h6 * (b1 + 2.0 * (b2 + b3) + b4) for a, b1, b2, b3, b4 in zip(s, k1, k2, k3, k4)]


COLUMNS = (
    "t", "i_d", "i_q", "omega", "v_d", "v_q", "x_c1", "x_c2",
    "tau_hat", "rm_hat", "x2_ref", "W", "U", "Hc", "power_residual",
)


@dataclass
class Trajectory:
    """Samples of a closed-loop run on a uniform grid.

    ``x`` is ``(n, 3)``, ``u`` and ``xc`` are ``(n, 2)``.  ``tau_hat`` and
    ``rm_hat`` are ``None`` when the scenario has no such estimator.
    ``omega_ref`` and ``tau_load`` hold the true references at each sample.
    """

    scenario_id: str
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    xc: np.ndarray
    tau_hat: np.ndarray | None
    rm_hat: np.ndarray | None
    x2_ref: np.ndarray
    W: np.ndarray
    U: np.ndarray
    Hc: np.ndarray
    power_residual: np.ndarray
    omega_ref: np.ndarray
    tau_load: np.ndarray
    diverged: bool = False
    divergence_time: float | None = None

    def __len__(self):
        return len(self.t)

    @property
    def sample_interval(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else 0.0

    def columns(self) -> dict[str, np.ndarray | None]:
        return {
            "t": self.t, "i_d": self.x[:, 0], "i_q": self.x[:, 1], "omega": self.x[:, 2],
            "v_d": self.u[:, 0], "v_q": self.u[:, 1], "x_c1": self.xc[:, 0], "x_c2": self.xc[:, 1],
            "tau_hat": self.tau_hat, "rm_hat": self.rm_hat, "x2_ref": self.x2_ref,
            "W": self.W, "U": self.U, "Hc": self.Hc, "power_residual": self.power_residual,
        }


def storage_terms(x, xc, omega_ref, tau_load, KI, p: MotorParams) -> tuple[np.ndarray, np.ndarray]:
    """``U`` and ``Hc`` about the true equilibrium for the given references (row-wise)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xc = np.atleast_2d(np.asarray(xc, dtype=float))
    w = np.asarray(omega_ref, dtype=float)
    x2 = (np.asarray(tau_load, dtype=float) + p.Rm * w) / (p.np * p.Phi)
    U = 0.5 * (p.Ld * x[:, 0] ** 2 + p.Lq * (x[:, 1] - x2) ** 2 + (p.J / p.np) * (x[:, 2] - w) ** 2)
    u_star = np.column_stack([-p.Lq * w * x2, p.Phi * w + p.Rs * x2])
    KI = np.asarray(KI, dtype=float)
    xc_star = -np.linalg.solve(KI, u_star.T).T
    e = xc - xc_star
    Hc = 0.5 * np.einsum("ni,ij,nj->n", e, KI, e)
    return U, Hc


def power_residuals(x, u, tau_load, p: MotorParams) -> np.ndarray:
    """Normalized power-balance residual of the model derivative at each sample."""
    i_d, i_q, w = np.asarray(x, dtype=float).T
    vd, vq = np.asarray(u, dtype=float).T
    tl = np.asarray(tau_load, dtype=float)
    did, diq, dw = dynamics((i_d, i_q, w), (vd, vq), tl, p)
    stored = p.Ld * i_d * did + p.Lq * i_q * diq + (p.J / p.np) * w * dw
    dissipated = p.Rs * (i_d * i_d + i_q * i_q) + (p.Rm / p.np) * w * w
    supplied = i_d * vd + i_q * vq
    extracted = w * tl / p.np
    residual = stored + dissipated - supplied + extracted
    scale = 1.0 + np.abs(stored) + np.abs(dissipated) + np.abs(supplied) + np.abs(extracted)
    return np.abs(residual) / scale


def trajectory_from_samples(sid: str, t, x, u, xc, tau_hat, rm_hat, x2_ref, omega_ref, tau_load,
                            KI, p: MotorParams, diverged=False, divergence_time=None) -> Trajectory:
    """Assemble a trajectory and fill the derived columns (storages, power residual)."""
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    u = np.asarray(u, dtype=float).reshape(-1, 2)
    xc = np.asarray(xc, dtype=float).reshape(-1, 2)
    U, Hc = storage_terms(x, xc, omega_ref, tau_load, KI, p)
    return Trajectory(
        sid, np.asarray(t, float), x, u, xc,
        None if tau_hat is None else np.asarray(tau_hat, float),
        None if rm_hat is None else np.asarray(rm_hat, float),
        np.asarray(x2_ref, float), U + Hc, U, Hc, power_residuals(x, u, tau_load, p),
        np.asarray(omega_ref, float), np.asarray(tau_load, float), diverged, divergence_time,
    )


def run_scenario(sc: Scenario, p: MotorParams = TABLE1, decimation: int | None = None) -> Trajectory:
    """Integrate ``sc`` on its uniform grid and record every ``decimation``-th step.

    A state norm above 1e6 or any non-finite value stops the run and flags it
    as diverged.  The offending step is recorded as the last sample when it is
    still finite, so the divergence time can be read back from the samples.
    """
    g = _controller(sc, p)
    dt = sc.dt
    every = int(decimation or sc.decimation)
    s = initial_state(sc, p).tolist()
    rows = []
    diverged, t_div = False, None

    def record(k, state):
        _, (u, tl, w_ref, tau_hat, rm_hat, x2_ref) = g(k * dt, state)
        rows.append((k * dt, state[0:3], u, state[3:5], tau_hat, rm_hat, x2_ref, w_ref, tl))

    record(0, s)
    for k in range(sc.n_steps):
        s = _rk4_list(g, s, k * dt, dt)
        x_norm = math.sqrt(s[0] * s[0] + s[1] * s[1] + s[2] * s[2])
        if not (x_norm <= DIVERGENCE_THRESHOLD and all(map(math.isfinite, s))):
            diverged, t_div = True, (k + 1) * dt
            if all(map(math.isfinite, s)):
                record(k + 1, s)
            break
        if (k + 1) % every == 0:
            record(k + 1, s)

    t = [r[0] for r in rows]
    has_tau = sc.id in ("C2", "C3")
    return trajectory_from_samples(
        sc.id, t,
        [r[1] for r in rows], [r[2] for r in rows], [r[3] for r in rows],
        [r[4] for r in rows] if has_tau else None,
        [r[5] for r in rows] if sc.id == "C3" else None,
        [r[6] for r in rows], [r[7] for r in rows], [r[8] for r in rows],
        sc.gains.KI, p, diverged, t_div,
    )
