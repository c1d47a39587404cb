import math

import numpy as np
import pytest

from oracles import equivalent_control_ref, expm_taylor, nominal_ai, psi_ref
from zemtwist.dynamics import EngagementState, VehicleCoeffs, geometry, los_rates, uav_lift_accel
from zemtwist.linmodel import airframe_modes, build_models, uav_normal_accel
from zemtwist.smallmat import mat_exp
from zemtwist.zem import (psi, psi_prime, sigma_dot_terms, target_normal_accel,
                          transition_row, zem_integrated, zem_linear)
from zemtwist.control import LossOfAuthority, equivalent_control

NOMINAL = VehicleCoeffs()


def models(gamma_m0=0.0, lambda0=0.0, coeffs=NOMINAL):
    return build_models(coeffs, gamma_m0, lambda0)


# ------------------------------------------------------------------ linmodel

def test_airframe_matrix_values():
    m = models()
    expected = [[-1190 / 380, 1, -80 / 380], [-234, -5, 160], [0, 0, -50]]
    assert np.allclose(m.AM, expected, rtol=0, atol=1e-15)
    assert np.array_equal(m.CM, [1190.0, 0.0, 80.0])


def test_integrated_structure():
    m = models(0.1, 0.02)
    assert np.allclose(m.AI, nominal_ai(cos_offset=math.cos(0.08)), rtol=0, atol=1e-13)
    assert np.array_equal(m.AI[3:, :3], np.zeros((3, 3)))
    assert np.array_equal(m.AI[3:, 3:], m.AM)
    assert np.array_equal(m.AI[1, 3:], -m.CM)
    assert np.flatnonzero(m.BI).tolist() == [5] and m.BI[5] == 1.0 / 0.02
    assert np.flatnonzero(m.GI).tolist() == [2] and m.GI[2] == 1.0 / 0.1
    ag = m.AG
    assert ag[0, 1] == 1.0 and ag[1, 2] == 1.0 and ag[1, 3] == -1.0
    assert ag[2, 2] == -10.0 and ag[3, 3] == -10.0
    assert np.array_equal(ag[3, :3], np.zeros(3))


def test_decoupled_guidance_block_closed_form():
    c = VehicleCoeffs(l_alpha=0.0, l_delta=0.0, m_alpha=0.0, m_q=0.0, m_delta=0.0)
    m = models(coeffs=c)
    t, tau = 1.3, c.tau_t
    phi = mat_exp(m.AI, t)[:3, :3]
    e = math.exp(-t / tau)
    expected = [[1, t, tau * tau * (e + t / tau - 1)],
                [0, 1, tau * (1 - e)],
                [0, 0, e]]
    assert np.allclose(phi, expected, rtol=0, atol=1e-12)


def test_normal_accel():
    m = models()
    assert uav_normal_accel([0, 0, 0], m) == 0.0
    assert uav_normal_accel([0.01, 0, 0], m) == pytest.approx(11.9)
    x = np.array([0.01, 0.3, -0.02])
    x_bar = np.concatenate([np.zeros(3), x])
    assert uav_normal_accel(x, m) == pytest.approx(-(m.AI @ x_bar)[1], rel=1e-14)
    # literal variant stays available for comparison
    assert uav_normal_accel(x, m, delta_cmd=0.0) == pytest.approx(m.CM @ (m.AM @ x))


def test_builds_are_bit_identical():
    a, b = models(0.05, 0.01), models(0.05, 0.01)
    for name in ("AG", "AM", "CM", "AI", "BI", "GI"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_transition_row_matches_series():
    m = models(0.087, 0.0)
    for tgo in (0.0, 1e-4, 0.01, 0.1, 0.5, 1.0, 2.0, 4.0, 8.0):
        ref = expm_taylor(m.AI, tgo)[0]
        row = transition_row(m, tgo)
        assert np.max(np.abs(row - ref)) <= 1e-12 * max(1.0, np.max(np.abs(ref)))
    tgos = np.array([0.02, 0.3, 3.0])
    batch = transition_row(m, tgos)
    for i, tgo in enumerate(tgos):
        assert np.array_equal(batch[:, i], transition_row(m, float(tgo)))


def test_transition_row_falls_back_without_modes():
    m = models()
    lam, w = airframe_modes(m.AM, m.CM)
    assert lam is not None
    fallback = type(m)(**{**m.__dict__, "am_eigvals": None, "am_weights": None})
    for tgo in (0.1, 2.0):
        assert np.allclose(transition_row(fallback, tgo), transition_row(m, tgo),
                           rtol=1e-12, atol=1e-13)


# ------------------------------------------------------------------ zem

def test_psi_values():
    assert psi(0.0, 0.1) == 0.0 and psi_prime(0.0, 0.1) == 0.0
    assert psi(0.1, 0.1) == pytest.approx(math.exp(-1), rel=1e-14)
    assert psi(0.2, 0.1) == pytest.approx(math.exp(-2) + 1, rel=1e-14)
    grid = np.linspace(0.0, 5.0, 2001)
    values = psi(grid, 0.1)
    assert np.all(values >= 0.0) and np.all(np.diff(values) >= 0.0)
    for tgo in (1e-6, 0.05, 0.7, 3.0):
        assert psi(tgo, 0.1) == pytest.approx(psi_ref(tgo, 0.1), rel=1e-12)
        h = 1e-6
        fd = (psi(tgo + h, 0.1) - psi(tgo - h, 0.1)) / (2 * h) if tgo > h else None
        if fd is not None:
            assert psi_prime(tgo, 0.1) == pytest.approx(fd, rel=1e-6)


def test_zem_linear_examples():
    a = nominal_ai()
    rng = np.random.default_rng(2)
    x = rng.normal(size=6)
    assert zem_linear(x, a, 0.0) == x[0]
    x2 = np.array([3.0, -2.0, 0, 0, 0, 0])
    assert zem_linear(x2, a, 1.7) == pytest.approx(3.0 - 2.0 * 1.7, abs=1e-12)
    assert zem_linear(x, a, 1.2) == pytest.approx(expm_taylor(a, 1.2)[0] @ x, rel=1e-10)
    y = rng.normal(size=6)
    lhs = zem_linear(2.0 * x - 3.0 * y, a, 0.8)
    rhs = 2.0 * zem_linear(x, a, 0.8) - 3.0 * zem_linear(y, a, 0.8)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def random_state(rng) -> EngagementState:
    s = EngagementState(
        gamma_m=rng.uniform(-0.3, 0.3), alpha=rng.uniform(-0.1, 0.1), q=rng.uniform(-1, 1),
        delta=rng.uniform(-0.3, 0.3), x_t=rng.uniform(200.0, 3000.0),
        z_t=rng.uniform(-300.0, 300.0), gamma_t=rng.uniform(-0.3, 0.3),
        a_t=rng.uniform(-200.0, 200.0))
    s.theta = s.gamma_m + s.alpha
    return s


def test_zem_terms_and_trivial_cases():
    m = models()
    s = EngagementState(x_t=3000.0)
    zb = zem_integrated(s, geometry(s, NOMINAL), m)
    assert zb.z == 0.0
    rng = np.random.default_rng(4)
    for _ in range(50):
        s = random_state(rng)
        zb = zem_integrated(s, geometry(s, NOMINAL), m)
        assert zb.z == zb.kinematic + zb.target_lag + zb.airframe


def test_zem_matches_linear_form():
    m = models(0.05, 0.0)
    rng = np.random.default_rng(8)
    for _ in range(200):
        s = random_state(rng)
        g = geometry(s, NOMINAL)
        # z + z_dot tgo equals the kinematic term when z = 0
        x = np.array([0.0, -g.v_r * g.tgo * g.lam_dot,
                      target_normal_accel(s.a_t, s.gamma_t, 0.0), s.alpha, s.q, s.delta])
        ref = expm_taylor(m.AI, g.tgo)[0] @ x
        z = zem_integrated(s, g, m).z
        assert abs(z - ref) <= 1e-8 * max(abs(ref), 1.0)


def test_surface_rate_reconstruction_near_trim():
    # at the linearisation point the reconstructed surface rate is exact
    from zemtwist.sim import step
    m = models()
    s0 = EngagementState(x_t=3000.0)
    y = s0.to_array()
    dt, dc, atc = 1e-4, 0.01, 5.0

    def zem_at(y, t):
        st = EngagementState.from_array(y, t)
        return zem_integrated(st, geometry(st, NOMINAL), m).z

    for k in range(1001):
        t = k * dt
        if k % 250 == 0:
            st = EngagementState.from_array(y, t)
            terms = sigma_dot_terms(st, geometry(st, NOMINAL), m, a_t_cmd=atc)
            fd = (zem_at(step(y, t, dc, atc, NOMINAL, dt), t + dt)
                  - zem_at(step(y, t, dc, atc, NOMINAL, -dt), t - dt)) / (2 * dt)
            assert terms.total(dc) == pytest.approx(fd, rel=1e-3)
        y = step(y, t, dc, atc, NOMINAL, dt)


def test_authority_vanishes_at_zero_tgo():
    m = models()
    s = EngagementState(x_t=3000.0)
    g = geometry(s, NOMINAL)._replace(tgo=0.0)
    terms = sigma_dot_terms(s, g, m)
    assert terms.control_gain == 0.0 and terms.authority_lost
    with pytest.raises(LossOfAuthority):
        equivalent_control(s, g, m)


# ------------------------------------------------------------------ equivalent control

def test_equivalent_control_zero_at_trim():
    m = models()
    s = EngagementState(x_t=3000.0)
    assert equivalent_control(s, geometry(s, NOMINAL), m) == 0.0


def test_equivalent_control_against_term_by_term_oracle():
    rng = np.random.default_rng(12)
    m = models(0.087, 0.0)
    for _ in range(30):
        s = random_state(rng)
        g = geometry(s, NOMINAL)
        a_m = uav_lift_accel(s.alpha, s.delta, NOMINAL)
        rates = los_rates(s, g, a_m, s.a_t)
        ref = equivalent_control_ref(
            g.v_lam, g.v_r, rates.v_r_dot, g.r, target_normal_accel(s.a_t, s.gamma_t, 0.0),
            g.tgo, 0.1, 0.02, m.AI, [0, 0, 0, s.alpha, s.q, s.delta])
        assert equivalent_control(s, g, m) == pytest.approx(ref, rel=1e-9, abs=1e-12)


def test_equivalent_control_closure():
    rng = np.random.default_rng(13)
    m = models(0.087, 0.0)
    for _ in range(300):
        s = random_state(rng)
        g = geometry(s, NOMINAL)
        if not 0.2 <= g.tgo <= 4.0:
            continue
        terms = sigma_dot_terms(s, g, m)
        u = equivalent_control(s, g, m)
        assert abs(terms.total(u)) < 1e-6 * max(1.0, abs(terms.drift))
