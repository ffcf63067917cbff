"""Post-processing monitors that check the stability certificates on simulated data.

The derivative monitors use centered differences on the recorded grid, so
their accuracy is second order in the sample interval; certification runs
should record every integration step.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .gains import Equilibrium, damping_matrix, equilibrium, integrator_equilibrium, passivity_margin
from .motor import MotorParams, energy
from .sim import Scenario, Trajectory

EPS = np.finfo(float).eps
POWER_TOL = 1e-8
FD_TOL = 1e-4
FD_REFERENCE_STEP = 1e-5


def storage_U(x_tilde, p: MotorParams) -> float:
    """Incremental motor energy ``|x~|_D^2 / 2``."""
    return energy(x_tilde, p)


def storage_Hc(xc_tilde, KI) -> float:
    """Integrator storage ``|x~_c|_KI^2 / 2``."""
    KI = np.asarray(KI, dtype=float)
    if KI.ndim == 0:
        KI = float(KI) * np.eye(2)
    if abs(np.linalg.det(KI)) < 1e-300:
        raise ValueError("KI is singular")
    e = np.asarray(xc_tilde, dtype=float)
    return 0.5 * float(e @ KI @ e)


def lyapunov_W(x_tilde, xc_tilde, p: MotorParams, KI) -> float:
    return storage_U(x_tilde, p) + storage_Hc(xc_tilde, KI)


def _require_samples(traj: Trajectory, n: int = 3):
    if len(traj) < n:
        raise ValueError(f"trajectory too short: {len(traj)} samples, need at least {n}")


def _centered(values: np.ndarray, h: float) -> np.ndarray:
    return (values[2:] - values[:-2]) / (2.0 * h)


def _U_series(dx: np.ndarray, p: MotorParams) -> np.ndarray:
    return 0.5 * (p.Ld * dx[:, 0] ** 2 + p.Lq * dx[:, 1] ** 2 + (p.J / p.np) * dx[:, 2] ** 2)


def dotW_identity_residual(traj: Trajectory, eq: Equilibrium, p: MotorParams, kp: float, KI) -> float:
    """Worst mismatch between the sampled ``Wdot`` and ``-|x~|^2_{R_d}/2``.

    Each mismatch is divided by ``max(1, |Wdot|)``.  Only meaningful for the
    classical PI with exact references (scenario C1).
    """
    _require_samples(traj)
    KI = np.asarray(KI, dtype=float)
    dx = traj.x - np.asarray(eq.x_star)
    dxc = traj.xc - integrator_equilibrium(eq.u_star, KI)
    W = _U_series(dx, p) + 0.5 * np.einsum("ni,ij,nj->n", dxc, KI, dxc)
    Wdot = _centered(W, traj.sample_interval)
    Rd = damping_matrix(kp, eq, p)
    inner = dx[1:-1]
    predicted = -0.5 * np.einsum("ni,ij,nj->n", inner, Rd, inner)
    mismatch = np.abs(Wdot - predicted) / np.maximum(1.0, np.abs(Wdot))
    return float(mismatch.max())


def dissipation_check(traj: Trajectory, eq: Equilibrium, p: MotorParams, epsilon: float) -> float:
    """Largest normalized slack of ``Udot <= eps |y~|^2 + y~'u~`` (0 if it always held)."""
    _require_samples(traj)
    dx = traj.x - np.asarray(eq.x_star)
    Udot = _centered(_U_series(dx, p), traj.sample_interval)
    y = dx[1:-1, :2]
    du = traj.u[1:-1] - np.asarray(eq.u_star)
    supply = epsilon * np.sum(y * y, axis=1) + np.sum(y * du, axis=1)
    slack = (Udot - supply) / np.maximum(1.0, np.abs(Udot))
    return float(max(0.0, slack.max()))


def max_lyapunov_increase(W: np.ndarray) -> float:
    """Largest sample-to-sample increase of ``W`` (negative if strictly decreasing)."""
    if len(W) < 2:
        return 0.0
    return float(np.max(np.diff(W)))


def exp_rate_fit(t, y) -> float:
    """Decay rate of a positive series from a least-squares fit of ``log y``.

    Samples below ``1e3 * eps * y[0]`` are treated as numerical noise and
    dropped before fitting.
    """
    t = np.asarray(t, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    if len(y) == 0:
        raise ValueError("empty series")
    keep = y > 1e3 * EPS * y[0]
    if keep.sum() < 2:
        raise ValueError("fit window has fewer than two usable samples")
    slope = np.polyfit(t[keep], np.log(y[keep]), 1)[0]
    return float(-slope)


def _first_change(profile_values: np.ndarray, t: np.ndarray) -> float:
    moved = np.nonzero(profile_values != profile_values[0])[0]
    return float(t[moved[0]]) if len(moved) else float(t[-1]) + 1.0


def observer_rate(traj: Trajectory) -> float | None:
    """Fitted decay rate of ``|tau_hat - tau_L|`` over the initial transient.

    The window runs from the first sample until the error first drops below
    ``1e3 * eps`` of its start value, and never past the first load change.
    """
    if traj.tau_hat is None or len(traj) < 2:
        return None
    err = np.abs(traj.tau_hat - traj.tau_load)
    if err[0] == 0.0:
        return None
    below = np.nonzero(err <= 1e3 * EPS * err[0])[0]
    end = below[0] if len(below) else len(err)
    end = min(end, int(np.searchsorted(traj.t, _first_change(traj.tau_load, traj.t))))
    if end < 2:
        return None
    return exp_rate_fit(traj.t[:end], err[:end])


class ChannelMetrics(NamedTuple):
    settling_time: float
    overshoot: float
    final_error: float


def channel_metrics(t, err) -> ChannelMetrics:
    """2 % settling time, overshoot past the final value, and last error."""
    t = np.asarray(t, dtype=float)
    e = np.asarray(err, dtype=float)
    peak = np.max(np.abs(e))
    if peak == 0.0:
        return ChannelMetrics(0.0, 0.0, float(e[-1]))
    outside = np.nonzero(np.abs(e) > 0.02 * peak)[0]
    if len(outside) == 0:
        settling = 0.0
    elif outside[-1] + 1 < len(t):
        settling = float(t[outside[-1] + 1] - t[0])
    else:
        settling = float("inf")
    final = e[-1]
    side = np.sign(e[0] - final)
    overshoot = float(max(0.0, np.max(-side * (e - final)))) if side != 0 else 0.0
    return ChannelMetrics(settling, overshoot, float(final))


def convergence_metrics(traj: Trajectory, p: MotorParams) -> dict[str, ChannelMetrics]:
    """Per-channel metrics of the errors against the true references."""
    x2_true = (traj.tau_load + p.Rm * traj.omega_ref) / (p.np * p.Phi)
    channels = {
        "omega": traj.x[:, 2] - traj.omega_ref,
        "i_d": traj.x[:, 0],
        "i_q": traj.x[:, 1] - x2_true,
    }
    if traj.tau_hat is not None:
        channels["tau"] = traj.tau_hat - traj.tau_load
    if traj.rm_hat is not None:
        channels["rm"] = traj.rm_hat - p.Rm
    return {name: channel_metrics(traj.t, e) for name, e in channels.items()}


@dataclass(frozen=True)
class CertificateReport:
    """Monitors evaluated on one trajectory.

    Units: ``max_lyapunov_increase`` in J, ``fitted_observer_rate`` in 1/s,
    ``divergence_time`` in s; the other monitors are dimensionless
    (normalized).  Monitors that do not apply to the scenario are ``None``.
    """

    scenario: str
    samples: int
    sample_interval: float
    W0: float | None
    max_lyapunov_increase: float | None
    max_dissipation_violation: float | None
    max_dotw_mismatch: float | None
    max_power_residual: float
    fitted_observer_rate: float | None
    diverged: bool
    divergence_time: float | None
    passivity_margin: float | None

    def as_dict(self) -> dict:
        return asdict(self)


def lyapunov_tolerance(W0: float, sample_interval: float, dt: float) -> float:
    steps = max(1, int(round(sample_interval / dt))) if dt > 0 else 1
    return 1e-9 * W0 + 10.0 * dt**5 * steps


def fd_tolerance(sample_interval: float) -> float:
    """Allowance for centered-difference monitors; grows as ``h^2`` above the reference step."""
    return FD_TOL * max(1.0, (sample_interval / FD_REFERENCE_STEP) ** 2)


def certify(traj: Trajectory, sc: Scenario, p: MotorParams) -> CertificateReport:
    W0 = lyap = diss = dotw = eps = None
    if sc.id == "C1" and sc.speed_ref.is_constant and sc.load.is_constant and len(traj) >= 3:
        eq = equilibrium(sc.speed_ref(0.0), sc.load(0.0), p)
        W0 = float(traj.W[0])
        lyap = max_lyapunov_increase(traj.W)
        eps = passivity_margin(eq, p)
        diss = dissipation_check(traj, eq, p, eps)
        try:
            kp = sc.gains.kp
        except ValueError:
            kp = None
        if kp is not None:
            dotw = dotW_identity_residual(traj, eq, p, kp, sc.gains.KI)
    rate = observer_rate(traj) if sc.id in ("C2", "C3") else None
    return CertificateReport(
        scenario=sc.id,
        samples=len(traj),
        sample_interval=traj.sample_interval,
        W0=W0,
        max_lyapunov_increase=lyap,
        max_dissipation_violation=diss,
        max_dotw_mismatch=dotw,
        max_power_residual=float(np.max(traj.power_residual)) if len(traj) else 0.0,
        fitted_observer_rate=rate,
        diverged=traj.diverged,
        divergence_time=traj.divergence_time,
        passivity_margin=eps,
    )


def failing_monitors(report: CertificateReport, dt: float) -> list[str]:
    """Names of the monitors outside tolerance: lyapunov, dotw, dissipation, power, divergence."""
    failed = []
    if report.diverged:
        failed.append("divergence")
    if report.max_lyapunov_increase is not None:
        if report.max_lyapunov_increase > lyapunov_tolerance(report.W0, report.sample_interval, dt):
            failed.append("lyapunov")
    fd_tol = fd_tolerance(report.sample_interval)
    if report.max_dotw_mismatch is not None and report.max_dotw_mismatch > fd_tol:
        failed.append("dotw")
    if report.max_dissipation_violation is not None and report.max_dissipation_violation > fd_tol:
        failed.append("dissipation")
    if report.max_power_residual > POWER_TOL:
        failed.append("power")
    return failed
