"""Equilibria, passivity indices and proportional-gain bounds for the PI loop.

Everything here works on the scalar proportional gain ``K_P = kp I``.  The
controllers accept full 2x2 gains, but only the scalar case is certified.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .eig import eigvalsh2, min_eig3
from .motor import InputVoltage, MotorParams, MotorState, dynamics

DEFAULT_BRACKET = (-1e3, 1e3)


class BracketError(ValueError):
    """A bisection bracket does not contain a sign change."""


@dataclass(frozen=True)
class Equilibrium:
    x_star: MotorState
    u_star: InputVoltage
    tau_load: float
    omega_star: float

    @property
    def x2_star(self) -> float:
        return self.x_star.iq


@dataclass(frozen=True)
class DissipationReport:
    B: np.ndarray
    epsilon: float
    min_eig: float


@dataclass(frozen=True)
class GainCertificate:
    kp_min: float
    Rd: np.ndarray
    method: str  # "general-eigen" or "nonsalient-closed-form"
    tau_max: float
    x2_worst: float
    min_eig_above: float  # lambda_min(R_d) at kp_min + 1e-6


def reference_current(omega_star: float, tau_load: float, p: MotorParams) -> float:
    """q-axis current that holds ``omega_star`` against ``tau_load`` (i_d = 0)."""
    return (tau_load + p.Rm * omega_star) / (p.np * p.Phi)


def equilibrium(omega_star: float, tau_load: float, p: MotorParams) -> Equilibrium:
    """Maximum-torque-per-ampere operating point and its steady-state voltage."""
    x2 = reference_current(omega_star, tau_load, p)
    x_star = MotorState(0.0, x2, omega_star)
    u_star = InputVoltage(-p.Lq * omega_star * x2, p.Phi * omega_star + p.Rs * x2)
    return Equilibrium(x_star, u_star, tau_load, omega_star)


def equilibrium_residual(eq: Equilibrium, p: MotorParams) -> float:
    return float(np.linalg.norm(dynamics(eq.x_star, eq.u_star, eq.tau_load, p)))


def integrator_equilibrium(u_star, KI) -> np.ndarray:
    """PI integrator state that reproduces ``u_star`` at zero current error."""
    KI = np.atleast_2d(np.asarray(KI, dtype=float))
    if KI.shape == (1, 1):
        KI = KI[0, 0] * np.eye(2)
    return -np.linalg.solve(KI, np.asarray(u_star, dtype=float))


def _coupling_matrix(diag: float, omega: float, x2: float, p: MotorParams) -> np.ndarray:
    c = (p.Ld - p.Lq) * omega
    e = -p.Ld * x2
    return np.array([
        [diag, c, e],
        [c, diag, 0.0],
        [e, 0.0, 2.0 * p.Rm / p.np],
    ])


def dissipation_matrix(eq: Equilibrium, epsilon: float, p: MotorParams) -> DissipationReport:
    """Matrix ``B`` of the incremental dissipation inequality at ``eq``.

    ``B >= 0`` implies ``Udot <= epsilon |y~|^2 + y~'u~`` along the incremental
    model, with ``U = |x~|_D^2 / 2``.
    """
    B = _coupling_matrix(2.0 * p.Rs + 2.0 * epsilon, eq.x_star.omega, eq.x2_star, p)
    return DissipationReport(B, float(epsilon), min_eig3(B))


def _bisect(f, lo: float, hi: float, tol: float, what: str) -> float:
    f_lo, f_hi = f(lo), f(hi)
    if (f_lo > 0) == (f_hi > 0):
        raise BracketError(
            f"{what}: bracket [{lo:g}, {hi:g}] has no sign change "
            f"(values {f_lo:.6g}, {f_hi:.6g})"
        )
    rising = f_hi > 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if (f(mid) > 0) == rising:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def passivity_margin(eq: Equilibrium, p: MotorParams, bracket=DEFAULT_BRACKET) -> float:
    """Smallest ``epsilon`` with ``B(epsilon) >= 0``.

    Negative values mean the incremental model is output strictly passive at
    ``eq``; positive values quantify the shortage of passivity.
    """
    lo, hi = bracket
    return _bisect(lambda eps: definiteness_indicator(dissipation_matrix(eq, eps, p).B), lo, hi, 0.0, "passivity margin")


def definiteness_indicator(m: np.ndarray) -> float:
    """Number with the sign of ``lambda_min(m)`` (zero iff singular PSD), well conditioned.

    The symmetric scaling ``S m S`` with ``S = diag(m_ii^-1/2)`` keeps the
    inertia of ``m`` (Sylvester) but brings its diagonal to one, so the sign
    is resolved at unit scale even when the entries of ``m`` span many
    decades.  A non-positive diagonal entry decides the sign by itself.
    """
    d = np.diag(m)
    if np.any(d <= 0.0):
        return float(min(d.min(), min_eig3(m)))
    s = 1.0 / np.sqrt(d)
    return min_eig3(m * np.outer(s, s))


def damping_matrix(kp: float, eq: Equilibrium, p: MotorParams) -> np.ndarray:
    """``R_d`` with ``Wdot = -|x~|^2_{R_d} / 2`` for the PI loop around ``eq``."""
    return _coupling_matrix(2.0 * p.Rs + 2.0 * kp, eq.omega_star, eq.x2_star, p)


def worst_case_x2(omega_star: float, tau_max: float, p: MotorParams) -> float:
    """Bound on ``|x2*|`` over all loads with ``|tau_L| <= tau_max``."""
    return (abs(tau_max) + p.Rm * abs(omega_star)) / (p.np * p.Phi)


def kp_min_general(omega_star: float, tau_max: float, p: MotorParams) -> GainCertificate:
    """Smallest ``kp`` making ``R_d`` positive definite for every admissible load.

    Eliminating the mechanical row by a Schur complement leaves the 2x2
    condition ``(Rs + kp) I > M``; the bound is ``lambda_max(M) - Rs``.  The
    inequality is strict, so the returned value is the boundary itself.
    """
    if tau_max < 0:
        raise ValueError("tau_max must be >= 0")
    x2 = worst_case_x2(omega_star, tau_max, p)
    m11 = 0.5 * p.np * p.Ld**2 * x2 * x2 / (2.0 * p.Rm)
    m12 = 0.5 * (p.Lq - p.Ld) * omega_star
    kp = eigvalsh2(m11, m12, 0.0)[1] - p.Rs
    worst = Equilibrium(MotorState(0.0, x2, omega_star), InputVoltage(0.0, 0.0), tau_max, omega_star)
    Rd = damping_matrix(kp, worst, p)
    check = min_eig3(damping_matrix(kp + 1e-6, worst, p))
    return GainCertificate(kp, Rd, "general-eigen", float(tau_max), x2, check)


def kp_min_nonsalient(omega_star: float, tau_load: float, p: MotorParams) -> float:
    """Closed-form bound for ``Ld == Lq``."""
    if p.salient:
        raise ValueError(f"closed form needs Ld == Lq (got Ld={p.Ld!r}, Lq={p.Lq!r})")
    s = tau_load + p.Rm * abs(omega_star)
    return p.Ld**2 * s * s / (4.0 * p.Rm * p.np * p.Phi**2) - p.Rs


def closed_loop_jacobian(kp: float, KI, eq: Equilibrium, p: MotorParams) -> np.ndarray:
    """Jacobian of motor + classical PI at ``(x*, x_c*)``; state ``(i_d, i_q, omega, x_c1, x_c2)``."""
    KI = np.asarray(KI, dtype=float)
    if KI.ndim == 0:
        KI = float(KI) * np.eye(2)
    _, x2, x3 = eq.x_star
    x1 = 0.0
    Ld, Lq, J = p.Ld, p.Lq, p.J
    A = np.zeros((5, 5))
    A[0] = [(-p.Rs - kp) / Ld, Lq * x3 / Ld, Lq * x2 / Ld, -KI[0, 0] / Ld, -KI[0, 1] / Ld]
    A[1] = [-Ld * x3 / Lq, (-p.Rs - kp) / Lq, -(Ld * x1 + p.Phi) / Lq, -KI[1, 0] / Lq, -KI[1, 1] / Lq]
    A[2] = [
        p.np * (Ld - Lq) * x2 / J,
        p.np * ((Ld - Lq) * x1 + p.Phi) / J,
        -p.Rm / J,
        0.0,
        0.0,
    ]
    A[3, 0] = 1.0
    A[4, 1] = 1.0
    return A


def spectral_abscissa(A: np.ndarray) -> float:
    return float(np.max(np.linalg.eigvals(A).real))


def kp_stability_boundary(KI, eq: Equilibrium, p: MotorParams, bracket=DEFAULT_BRACKET, tol: float = 1e-3) -> float:
    """Gain at which the linearized closed loop stops being Hurwitz."""
    lo, hi = bracket
    if not lo < hi:
        raise BracketError(f"empty bracket [{lo:g}, {hi:g}]")
    return _bisect(
        lambda kp: spectral_abscissa(closed_loop_jacobian(kp, KI, eq, p)),
        lo, hi, tol, "stability boundary",
    )


def is_hurwitz(kp: float, KI, eq: Equilibrium, p: MotorParams) -> bool:
    return spectral_abscissa(closed_loop_jacobian(kp, KI, eq, p)) < 0.0
