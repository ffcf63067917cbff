import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pmsm_pi.gains import equilibrium
from pmsm_pi.motor import (
    TABLE1,
    MotorParams,
    coriolis,
    dynamics,
    energy,
    normalized_power_residual,
    power_balance_residual,
    power_balance_terms,
    system_matrices,
)

finite = st.floats(-50, 50, allow_nan=False)
speeds = st.floats(-500, 500, allow_nan=False)


@pytest.mark.parametrize("field", ["Ld", "Lq", "Rs", "Rm", "J", "np", "Phi"])
@pytest.mark.parametrize("bad", [0.0, -1.0, math.inf, math.nan])
def test_params_reject_nonpositive_or_nonfinite(field, bad):
    with pytest.raises(ValueError, match=field):
        MotorParams(**{field: bad})


def test_table1_is_salient():
    assert TABLE1.salient
    assert not MotorParams(Lq=TABLE1.Ld).salient


def test_system_matrices_spd(p):
    m = system_matrices(p, tauL=1.5)
    for a in (m.D, m.R):
        np.testing.assert_array_equal(a, a.T)
        assert np.linalg.eigvalsh(a).min() > 0
    np.testing.assert_array_equal(m.G, [[1, 0], [0, 1], [0, 0]])
    assert m.d[2] == -1.5 / p.np


def test_dynamics_at_origin_is_zero(p):
    assert dynamics((0, 0, 0), (0, 0), 0.0, p) == (0.0, 0.0, 0.0)


def test_dynamics_unit_vd(p):
    assert dynamics((0, 0, 0), (1, 0), 0.0, p) == pytest.approx((1 / 0.0312, 0, 0), rel=1e-15)
    assert dynamics((0, 0, 0), (1, 0), 0.0, p)[0] == pytest.approx(32.051, abs=1e-3)


def test_dynamics_vanish_at_equilibrium(p):
    eq = equilibrium(104.7, 1.0, p)
    assert np.linalg.norm(dynamics(eq.x_star, eq.u_star, 1.0, p)) < 1e-9


def test_matrix_form_matches_dynamics(p, rng):
    """D xdot = -(C(x) + R) x + G u + d at random points."""
    for _ in range(20):
        x = rng.normal(0, 10, 3)
        u = rng.normal(0, 100, 2)
        tl = rng.normal()
        m = system_matrices(p, tl)
        rhs = -(coriolis(x, p) + m.R) @ x + m.G @ u + m.d
        np.testing.assert_allclose(m.D @ np.array(dynamics(x, u, tl, p)), rhs, rtol=1e-12, atol=1e-12)


def test_coriolis_examples(p):
    np.testing.assert_array_equal(coriolis((0, 0, 0), p), [[0, 0, 0], [0, 0, p.Phi], [0, -p.Phi, 0]])
    assert coriolis((1, 2, 3), p)[0, 2] == pytest.approx(-0.110, rel=1e-12)


@given(finite, finite, speeds)
def test_coriolis_exactly_skew(a, b, c):
    C = coriolis((a, b, c), TABLE1)
    assert np.all(C + C.T == 0)


def test_coriolis_quadratic_form_vanishes(p, rng):
    C = coriolis(rng.normal(size=3), p)
    for z in rng.normal(size=(10, 3)):
        assert abs(z @ C @ z) < 1e-15 * (1 + np.abs(z).max() ** 2)


def test_energy_examples(p):
    assert energy((0, 0, 0), p) == 0
    assert energy((1, 0, 0), p) == pytest.approx(0.0156, rel=1e-12)
    assert energy((0, 1, 1), p) == pytest.approx(0.5 * (0.055 + 3.61e-4 / 3), rel=1e-12)
    assert energy((0, 1, 1), p) == pytest.approx(0.0275602, abs=1e-7)


def test_power_balance_zero_state(p):
    assert power_balance_residual((0, 0, 0), (0, 0, 0), (0, 0), 0.0, p) == 0


@given(finite, finite, speeds, st.floats(-300, 300), st.floats(-300, 300), st.floats(-10, 10))
def test_power_balance_identity(i_d, i_q, w, vd, vq, tl):
    x, u = (i_d, i_q, w), (vd, vq)
    xdot = dynamics(x, u, tl, TABLE1)
    terms = power_balance_terms(x, xdot, u, tl, TABLE1)
    res = power_balance_residual(x, xdot, u, tl, TABLE1)
    assert abs(res) < 1e-10 * (1 + sum(abs(t) for t in terms))
    assert normalized_power_residual(x, u, tl, TABLE1) < 1e-10


def test_power_balance_detects_model_violation(p):
    x, u, tl = (2.0, 3.0, 50.0), (10.0, 40.0), 1.0
    xdot = np.array(dynamics(x, u, tl, p)) + (1.0, 0.0, 0.0)
    assert power_balance_residual(x, xdot, u, tl, p) == pytest.approx(p.Ld * x[0], rel=1e-9)


@given(st.tuples(finite, finite, speeds), st.tuples(finite, finite), st.tuples(finite, finite), st.floats(-5, 5))
def test_dynamics_affine_in_u(x, u1, u2, tl):
    f = lambda u: np.array(dynamics(x, u, tl, TABLE1))  # noqa: E731
    combo = f(np.add(u1, u2)) - f(u2) - f(u1) + f((0.0, 0.0))
    scale = 1 + max(np.abs(f(u1)).max(), np.abs(f(u2)).max())
    assert np.abs(combo).max() <= 1e-12 * scale
