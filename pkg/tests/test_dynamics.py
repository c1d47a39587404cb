import math

import numpy as np
import pytest

from zemtwist.dynamics import (EngagementState, EngagementTerminal, DegenerateClosing,
                               ConfigurationError, PitchDisturbance, RelGeometry,
                               VehicleCoeffs, derivatives, los_rates, rel_geometry,
                               target_derivs, uav_derivs)
from zemtwist.sim import step

NOMINAL = VehicleCoeffs()


def head_on(r=3000.0) -> EngagementState:
    return EngagementState(x_t=r)


def test_head_on_geometry():
    g = rel_geometry(head_on(), NOMINAL)
    assert g.v_r == pytest.approx(-760.0, abs=1e-12)
    assert g.v_lam == pytest.approx(0.0, abs=1e-12)
    assert g.tgo == pytest.approx(3000.0 / 760.0, abs=1e-12)


def test_terminal_signal_and_opening_tgo():
    with pytest.raises(EngagementTerminal):
        rel_geometry(head_on(0.3), NOMINAL)
    # vehicles flying apart: tgo clamps to zero
    s = EngagementState(gamma_m=math.pi, x_t=100.0, gamma_t=math.pi)
    assert rel_geometry(s, NOMINAL).tgo == 0.0


def test_target_lag():
    c = VehicleCoeffs(tau_t=0.1)
    assert target_derivs(5.0, 5.0, 0.0, c)[0] == 0.0
    assert target_derivs(0.0, 196.2, 0.0, c)[0] == pytest.approx(1962.0)
    # integrated step response against 1 - exp(-t / tau)
    y = head_on().to_array()
    dt = 1e-3
    for k in range(300):
        y = step(y, k * dt, 0.0, 1.0, c, dt)
        assert abs(y[10] - (1.0 - math.exp(-(k + 1) * dt / 0.1))) < 1e-3


def test_airframe_examples():
    d = uav_derivs(head_on(), 0.0, NOMINAL)
    assert all(v == 0.0 for v in (d.alpha_dot, d.q_dot, d.delta_dot, d.gamma_m_dot))
    d = uav_derivs(EngagementState(alpha=0.01), 0.0, NOMINAL)
    assert d.q_dot == pytest.approx(-2.34)
    d = uav_derivs(head_on(), 0.1, NOMINAL)
    assert d.delta_dot == pytest.approx(5.0)


def test_disturbance_bound():
    dist = PitchDisturbance(delta_q=2.0, delta_q_bound=1.0)
    with pytest.raises(ConfigurationError):
        uav_derivs(head_on(), 0.0, NOMINAL, dist)
    ok = PitchDisturbance(delta_q=0.5, delta_q_bound=1.0)
    assert uav_derivs(head_on(), 0.0, NOMINAL, ok).q_dot == pytest.approx(0.5)


def test_los_rate_examples():
    s = head_on()
    g = rel_geometry(s, NOMINAL)
    rates = los_rates(s, g, 0.0, 0.0)
    assert rates.v_r_dot == 0.0 and rates.v_lam_dot == 0.0
    assert rates.tgo_dot == pytest.approx(-1.0)
    assert los_rates(s, g, 10.0, 0.0).v_lam_dot == pytest.approx(-10.0)
    with pytest.raises(DegenerateClosing):
        los_rates(s, RelGeometry(g.r, g.lam, 0.0, 1.0, 0.0), 0.0, 0.0)


def _geom_series(y0, coeffs, delta_cmd, a_t_cmd, dt, n):
    y = y0.copy()
    out = []
    for k in range(n):
        s = EngagementState.from_array(y, k * dt)
        out.append((y.copy(), rel_geometry(s, coeffs)))
        y = step(y, k * dt, delta_cmd, a_t_cmd, coeffs, dt)
    return out


def test_rates_against_finite_differences():
    rng = np.random.default_rng(11)
    for _ in range(5):
        s = EngagementState(gamma_m=rng.uniform(-0.3, 0.3), alpha=rng.uniform(-0.05, 0.05),
                            q=rng.uniform(-0.5, 0.5), x_t=rng.uniform(1000, 3000),
                            z_t=rng.uniform(-500, 500), gamma_t=rng.uniform(-0.3, 0.3),
                            a_t=rng.uniform(-50, 50))
        s.theta = s.gamma_m + s.alpha
        dt = 1e-4
        series = _geom_series(s.to_array(), NOMINAL, 0.02, 30.0, dt, 3)
        (y1, g1), (y0, g0), (y2, g2) = series[1], series[0], series[2]
        st = EngagementState.from_array(y1, dt)
        d = uav_derivs(st, 0.02, NOMINAL)
        rates = los_rates(st, g1, d.a_m, st.a_t)
        fd = lambda a, b: (b - a) / (2 * dt)
        # range and LOS angle
        assert fd(g0.r, g2.r) == pytest.approx(g1.v_r, abs=1e-4)
        assert fd(g0.lam, g2.lam) == pytest.approx(g1.v_lam / g1.r, abs=1e-4)
        assert fd(g0.v_r, g2.v_r) == pytest.approx(rates.v_r_dot, abs=1e-3)
        assert fd(g0.v_lam, g2.v_lam) == pytest.approx(rates.v_lam_dot, abs=1e-3)
        assert fd(g0.tgo, g2.tgo) == pytest.approx(rates.tgo_dot, abs=1e-3)


def test_unaccelerated_flight_invariants():
    # off a collision course the polar speeds rotate (V_r_dot = V_l^2 / r),
    # so constancy is checked on a collision course
    lam = math.atan2(200.0, 3000.0)
    gamma_t = -0.2
    gamma_m = lam + math.asin(NOMINAL.v_t * math.sin(gamma_t + lam) / NOMINAL.v_m)
    s = EngagementState(gamma_m=gamma_m, x_t=3000.0, z_t=200.0, gamma_t=gamma_t,
                        theta=gamma_m)
    dt = 1e-3
    series = _geom_series(s.to_array(), NOMINAL, 0.0, 0.0, dt, 3001)
    g0 = series[0][1]
    assert abs(g0.v_lam) < 1e-9
    for k, (y, g) in enumerate(series):
        t = k * dt
        assert abs(g.v_r - g0.v_r) <= 1e-6 * t + 1e-9
        assert abs(g.v_lam - g0.v_lam) <= 1e-6 * t + 1e-9
        px = 3000.0 - NOMINAL.v_t * math.cos(gamma_t) * t - NOMINAL.v_m * math.cos(gamma_m) * t
        pz = 200.0 + NOMINAL.v_t * math.sin(gamma_t) * t - NOMINAL.v_m * math.sin(gamma_m) * t
        assert abs(g.r - math.hypot(px, pz)) <= 1e-6 * g.r


def test_pitch_identity_holds():
    s = EngagementState(alpha=0.02, theta=0.02, x_t=3000.0)
    y = s.to_array()
    dt = 1e-3
    for k in range(2000):
        y = step(y, k * dt, 0.05 * math.sin(3 * k * dt), 0.0, NOMINAL, dt)
    assert abs(y[5] - y[2] - y[3]) < 1e-6


def test_batch_matches_single():
    rng = np.random.default_rng(5)
    ys = rng.normal(size=(11, 4)) * 0.1
    ys[7] += 3000.0
    cmds = rng.normal(size=4) * 0.1
    batch = derivatives(ys, 0.0, cmds, 10.0, NOMINAL)
    for i in range(4):
        assert np.array_equal(batch[:, i], derivatives(ys[:, i], 0.0, cmds[i], 10.0, NOMINAL))


def test_coefficient_validation():
    with pytest.raises(ConfigurationError):
        VehicleCoeffs(tau_s=0.0)
    with pytest.raises(ConfigurationError):
        VehicleCoeffs(l_alpha=math.nan)
    VehicleCoeffs(v_t=0.0)  # stationary target is allowed
