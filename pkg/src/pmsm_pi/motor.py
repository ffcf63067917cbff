"""Surface-mounted PMSM model in the rotating dq frame.

State ``x = (i_d, i_q, omega)``, input ``u = (v_d, v_q)``.  The model is kept
in its port-Hamiltonian form

    D xdot + (C(x) + R) x = G u + d

so that the energy ``H = x'Dx/2`` and the power balance can be checked
directly against simulated data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np


@dataclass(frozen=True)
class MotorParams:
    """Physical constants of the machine, all SI."""

    Ld: float = 31.2e-3  # H
    Lq: float = 55.0e-3  # H
    Rs: float = 6.0  # Ohm
    Rm: float = 0.02  # N m s, viscous friction
    J: float = 3.61e-4  # kg m^2
    np: float = 3.0  # pole-pair constant as it appears in the torque equation
    Phi: float = 0.236  # Wb

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"motor parameter {f.name} must be finite and > 0, got {value!r}")

    @property
    def salient(self) -> bool:
        return abs(self.Ld - self.Lq) > 1e-12 * max(self.Ld, self.Lq)


#: Motor data used throughout the simulations (rated current 4 A, nominal
#: electrical speed 104.7 rad/s) with a viscous friction of 0.02 N m s.
TABLE1 = MotorParams()
NOMINAL_SPEED = 104.7


class MotorState(NamedTuple):
    id: float
    iq: float
    omega: float


class InputVoltage(NamedTuple):
    vd: float
    vq: float


@dataclass(frozen=True)
class SystemMatrices:
    D: np.ndarray
    R: np.ndarray
    G: np.ndarray
    d: np.ndarray


def system_matrices(p: MotorParams, tauL: float = 0.0) -> SystemMatrices:
    D = np.diag([p.Ld, p.Lq, p.J / p.np])
    R = np.diag([p.Rs, p.Rs, p.Rm / p.np])
    G = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    d = np.array([0.0, 0.0, -tauL / p.np])
    return SystemMatrices(D, R, G, d)


def electrical_torque(i_d: float, i_q: float, p: MotorParams) -> float:
    return p.np * ((p.Ld - p.Lq) * i_d * i_q + p.Phi * i_q)


def dynamics(x, u, tauL: float, p: MotorParams) -> tuple[float, float, float]:
    """Return ``(di_d/dt, di_q/dt, domega/dt)``."""
    i_d, i_q, w = x
    vd, vq = u
    did = (-p.Rs * i_d + w * p.Lq * i_q + vd) / p.Ld
    diq = (-p.Rs * i_q - w * p.Ld * i_d - w * p.Phi + vq) / p.Lq
    dw = (-p.Rm * w + electrical_torque(i_d, i_q, p) - tauL) / p.J
    return did, diq, dw


def coriolis(x, p: MotorParams) -> np.ndarray:
    """Skew-symmetric interconnection matrix C(x)."""
    x1, x2, _ = x
    a = p.Lq * x2
    b = p.Ld * x1 + p.Phi
    return np.array([
        [0.0, 0.0, -a],
        [0.0, 0.0, b],
        [a, -b, 0.0],
    ])


def energy(x, p: MotorParams) -> float:
    i_d, i_q, w = x
    return 0.5 * (p.Ld * i_d * i_d + p.Lq * i_q * i_q + (p.J / p.np) * w * w)


def power_balance_terms(x, xdot, u, tauL: float, p: MotorParams) -> tuple[float, float, float, float]:
    """Stored, dissipated, supplied and extracted power, in that order."""
    i_d, i_q, w = x
    stored = p.Ld * i_d * xdot[0] + p.Lq * i_q * xdot[1] + (p.J / p.np) * w * xdot[2]
    dissipated = p.Rs * (i_d * i_d + i_q * i_q) + (p.Rm / p.np) * w * w
    supplied = i_d * u[0] + i_q * u[1]
    extracted = w * tauL / p.np
    return stored, dissipated, supplied, extracted


def power_balance_residual(x, xdot, u, tauL: float, p: MotorParams) -> float:
    """``Hdot + x'Rx - y'u + x3 tauL/np``; zero when ``xdot`` is the model derivative."""
    stored, dissipated, supplied, extracted = power_balance_terms(x, xdot, u, tauL, p)
    return stored + dissipated - supplied + extracted


def normalized_power_residual(x, u, tauL: float, p: MotorParams) -> float:
    """Power-balance residual of the model derivative, scaled by ``1 + sum |terms|``."""
    xdot = dynamics(x, u, tauL, p)
    terms = power_balance_terms(x, xdot, u, tauL, p)
    residual = terms[0] + terms[1] - terms[2] + terms[3]
    return abs(residual) / (1.0 + sum(abs(t) for t in terms))
