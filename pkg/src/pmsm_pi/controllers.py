"""Current PI, adaptive PI, load-torque observer, friction estimator, speed PI.

All laws are continuous time.  Step functions take the controller state as a
value and return derivatives; integration is left to :mod:`pmsm_pi.sim`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .motor import InputVoltage, MotorParams, electrical_torque


def _as_gain(value) -> np.ndarray:
    m = np.asarray(value, dtype=float)
    if m.ndim == 0:
        m = float(m) * np.eye(2)
    if m.shape != (2, 2):
        raise ValueError(f"gain must be a scalar or 2x2 matrix, got shape {m.shape}")
    if not np.allclose(m, m.T, rtol=0, atol=1e-12 * max(1.0, np.abs(m).max())):
        raise ValueError("gain matrix must be symmetric")
    return m


@dataclass(frozen=True)
class PiGains:
    """Proportional (Ohm) and integral (Ohm/s) gains of the current PI.

    ``KI`` must be positive definite.  ``KP`` is only required to be
    symmetric: destabilizing negative gains are a legitimate experiment.
    """

    KP: np.ndarray
    KI: np.ndarray
    _kp: tuple = field(init=False, repr=False, compare=False)
    _ki: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        KP, KI = _as_gain(self.KP), _as_gain(self.KI)
        if np.linalg.eigvalsh(KI)[0] <= 0:
            raise ValueError("KI must be positive definite")
        object.__setattr__(self, "KP", KP)
        object.__setattr__(self, "KI", KI)
        object.__setattr__(self, "_kp", tuple(KP.ravel().tolist()))
        object.__setattr__(self, "_ki", tuple(KI.ravel().tolist()))

    @classmethod
    def scalar(cls, kp: float, ki: float) -> PiGains:
        return cls(kp * np.eye(2), ki * np.eye(2))

    @property
    def kp(self) -> float:
        """Scalar proportional gain; only defined for ``KP = kp I``."""
        a, b, _, d = self._kp
        if b != 0.0 or a != d:
            raise ValueError("KP is not a multiple of the identity")
        return a


class PiOutput(NamedTuple):
    u: InputVoltage
    xc_dot: tuple[float, float]


def y_tilde(x, x2_star: float) -> tuple[float, float]:
    """Current error relative to the MTPA reference ``(0, x2_star)``."""
    return x[0], x[1] - x2_star


def pi_control(xc, y_err, g: PiGains) -> PiOutput:
    """``u = -KI xc - KP y~`` and ``xc_dot = y~``."""
    p11, p12, p21, p22 = g._kp
    i11, i12, i21, i22 = g._ki
    e1, e2 = y_err
    c1, c2 = xc
    vd = -(i11 * c1 + i12 * c2) - (p11 * e1 + p12 * e2)
    vq = -(i21 * c1 + i22 * c2) - (p21 * e1 + p22 * e2)
    return PiOutput(InputVoltage(vd, vq), (e1, e2))


def adaptive_pi_control(xc, x, x2_hat: float, g: PiGains) -> PiOutput:
    """PI around the currents with the q reference replaced by an estimate."""
    return pi_control(xc, y_tilde(x, x2_hat), g)


@dataclass(frozen=True)
class ObserverState:
    chi: float
    ell: float  # N m s

    def __post_init__(self):
        if not self.ell > 0:
            raise ValueError("observer gain ell must be > 0")


class ObserverOutput(NamedTuple):
    chi_dot: float
    tau_hat: float
    x2_hat: float


def torque_observer_step(o: ObserverState, x, omega_star: float, p: MotorParams, rm: float | None = None) -> ObserverOutput:
    """Reduced-order load-torque observer.

    The estimation error ``tau_hat - tau_L`` obeys ``e' = -(ell/J) e`` when the
    friction coefficient used here equals the true one.  ``rm`` overrides
    ``p.Rm`` (certainty equivalence with an on-line friction estimate).
    """
    i_d, i_q, w = x
    rm = p.Rm if rm is None else rm
    tau_hat = o.ell * (o.chi - w)
    chi_dot = (-rm * w + electrical_torque(i_d, i_q, p) - tau_hat) / p.J
    x2_hat = (tau_hat + rm * omega_star) / (p.np * p.Phi)
    return ObserverOutput(chi_dot, tau_hat, x2_hat)


def observer_equilibrium(omega: float, tau_load: float, ell: float, p: MotorParams, rm: float | None = None) -> float:
    """Observer state at rest with the plant at speed ``omega`` under ``tau_load``.

    With ``rm == p.Rm`` this is ``tau_load/ell + omega``.
    """
    rm = p.Rm if rm is None else rm
    return omega + (tau_load + (p.Rm - rm) * omega) / ell


@dataclass(frozen=True)
class RmEstimatorState:
    """Friction estimator: two second-order regression filters and the estimate.

    Both filters share the denominator ``(s + alpha)^2`` and use the observer
    canonical form with output equal to the first state (plus feedthrough).
    """

    wz1: float = 0.0
    wz2: float = 0.0
    wp1: float = 0.0
    wp2: float = 0.0
    rm_hat: float = 0.005
    alpha: float = 300.0
    beta: float = 300.0
    gamma: float = 200.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")


class RmFilterOutput(NamedTuple):
    z: float
    phi: float
    state_dots: tuple[float, float, float, float]


def rm_filter_step(e: RmEstimatorState, x, p: MotorParams) -> RmFilterOutput:
    """Regression signals with ``z = Rm * phi`` up to filter start-up transients.

    ``phi = beta s/(s+alpha)^2 [omega]`` and
    ``z = beta s/(s+alpha)^2 [tau_e] - beta s^2/(s+alpha)^2 [J omega]``,
    i.e. the filtered friction torque ``tau_e - J omega'`` minus the load,
    which the band-pass zero at ``s = 0`` removes.  The second-order
    high-pass part is realized with direct feedthrough, so no derivative of
    ``omega`` is taken.
    """
    a, b = e.alpha, e.beta
    i_d, i_q, w = x
    jw = p.J * w
    tau_e = electrical_torque(i_d, i_q, p)
    z = e.wz1 - b * jw
    phi = e.wp1
    dz1 = -2.0 * a * e.wz1 + e.wz2 + 2.0 * a * b * jw + b * tau_e
    dz2 = -a * a * e.wz1 + a * a * b * jw
    dp1 = -2.0 * a * e.wp1 + e.wp2 + b * w
    dp2 = -a * a * e.wp1
    return RmFilterOutput(z, phi, (dz1, dz2, dp1, dp2))


def rm_filter_rest_state(x, alpha: float, beta: float, p: MotorParams) -> tuple[float, float, float, float]:
    """Filter states after an infinitely long constant input ``x``; both outputs are zero."""
    i_d, i_q, w = x
    return (
        beta * p.J * w,
        -beta * electrical_torque(i_d, i_q, p),
        0.0,
        -beta * w,
    )


def rm_estimator_step(e: RmEstimatorState, z: float, phi: float) -> float:
    """Gradient update ``rm_hat' = gamma phi (z - rm_hat phi)``."""
    return e.gamma * phi * (z - e.rm_hat * phi)


@dataclass(frozen=True)
class OuterPiState:
    chi: float
    a_p: float
    a_i: float

    def __post_init__(self):
        if not (self.a_p > 0 and self.a_i > 0):
            raise ValueError("outer PI gains must be > 0")


def outer_pi(s: OuterPiState, omega_err: float) -> tuple[float, float]:
    """Speed PI producing the q-current reference; returns ``(x2_ref, chi_dot)``."""
    return -s.a_i * s.chi - s.a_p * omega_err, omega_err
