"""Zero-effort miss of the integrated model and its time derivative.

The ZEM is the first component of the integrated state propagated over the
time-to-go with no further control. It is used directly as the sliding
surface, and its rate splits into a drift part and a part proportional to the
canard command.

State-dependent functions accept scalar or per-run array fields (see
``dynamics``). Sums over the six integrated-state entries are written out
elementwise so that a run gives bit-identical numbers whatever batch it is
evaluated in.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .dynamics import EngagementState, RelGeometry, los_rates, uav_lift_accel
from .linmodel import LinearModels
from .smallmat import mat_exp

EPS_GAIN = 1e-6  # on the (1,6) transition entry


def psi(tgo, tau_t):
    x = tgo / tau_t
    # expm1 keeps the small-tgo end accurate
    return np.expm1(-x) + x


def psi_prime(tgo, tau_t):
    """Derivative of ``psi`` with respect to time-to-go."""
    return (tgo / tau_t - psi(tgo, tau_t)) / tau_t


def transition(models: LinearModels, tgo: float) -> np.ndarray:
    """State transition matrix of the integrated model over ``tgo``."""
    return mat_exp(models.AI, tgo)


def _ramp_integral(lam: np.ndarray, tgo: np.ndarray) -> np.ndarray:
    """``int_0^tgo (tgo - s) exp(lam s) ds`` elementwise, complex ``lam``."""
    x = lam * tgo
    small = np.abs(x) < 0.05
    if not small.any():
        return tgo * tgo * ((np.exp(x) - 1.0 - x) / (x * x))
    # Taylor series of (e^x - 1 - x) / x^2 where the closed form cancels
    series = np.zeros_like(x)
    for k in range(9, -1, -1):
        series = series * x + 1.0 / math.factorial(k + 2)
    xs = np.where(small, 1.0, x)
    closed = (np.exp(xs) - 1.0 - xs) / (xs * xs)
    return tgo * tgo * np.where(small, series, closed)


def transition_row(models: LinearModels, tgo) -> np.ndarray:
    """First row of ``exp(A_I tgo)``; shape ``(6,)``, or ``(6, n)`` for array ``tgo``.

    The integrated model is block triangular, so the row is known in closed
    form: ``[1, tgo, tau_T^2 psi, -C_M int_0^tgo (tgo-s) exp(A_M s) ds]``.
    The airframe integral uses the eigen-expansion of ``A_M``; if that basis
    is ill-conditioned the matrix exponential is used instead.
    """
    t = np.asarray(tgo, dtype=float)
    shape = (6,) + t.shape
    flat = t.reshape(-1)
    if models.am_eigvals is None:
        rows = [transition(models, float(v))[0] for v in flat]
        return np.array(rows).T.reshape(shape)
    row = np.empty((6, flat.size))
    row[0] = 1.0
    row[1] = flat
    tau_t = models.tau_t
    row[2] = tau_t * tau_t * psi(flat, tau_t)
    lam, w = models.am_eigvals, models.am_weights
    h = [_ramp_integral(lam[k], flat) for k in range(3)]
    for j in range(3):
        row[3 + j] = -(w[0, j] * h[0] + w[1, j] * h[1] + w[2, j] * h[2]).real
    return row.reshape(shape)


def zem_linear(x_i, a_i: np.ndarray, tgo: float) -> float:
    """First component of ``exp(A_I tgo) x_I``."""
    return float(mat_exp(a_i, tgo)[0] @ np.asarray(x_i, dtype=float))


def target_normal_accel(a, gamma_t, lambda0: float):
    """Project a target acceleration onto the normal of the initial LOS."""
    return a * np.cos(gamma_t + lambda0)


def airframe_vector(state: EngagementState) -> np.ndarray:
    """Integrated state with the relative-motion entries zeroed (single run)."""
    return np.array([0.0, 0.0, 0.0, state.alpha, state.q, state.delta], dtype=float)


class ZemBreakdown(NamedTuple):
    z: float
    kinematic: float
    target_lag: float
    airframe: float
    psi: float
    phi16: float
    drift_no_control: float


class SigmaDotTerms(NamedTuple):
    drift: float
    control_gain: float
    target: float
    model_error: float
    authority_lost: bool

    def total(self, delta_cmd: float) -> float:
        return self.drift + self.control_gain * delta_cmd + self.target + self.model_error


def _row(models: LinearModels, tgo, row):
    return transition_row(models, tgo) if row is None else row


def _airframe_term(row, state: EngagementState):
    return row[3] * state.alpha + row[4] * state.q + row[5] * state.delta


def _projected_rate(row, models: LinearModels, state: EngagementState):
    """``C_I Phi_I A_I x_bar`` with ``x_bar`` the airframe part of the state."""
    x = (state.alpha, state.q, state.delta)
    acc = 0.0
    # only the airframe columns of A_I act on x_bar; exact zeros are skipped
    for i in range(6):
        coeffs = [(float(c), j) for j, c in enumerate(models.AI[i, 3:]) if c != 0.0]
        if not coeffs:
            continue
        y_i = 0.0
        for c, j in coeffs:
            y_i = y_i + c * x[j]
        acc = acc + row[i] * y_i
    return acc


def _drift(state: EngagementState, geom: RelGeometry, models: LinearModels,
           row, a_tn):
    tau_t = models.tau_t
    a_m = uav_lift_accel(state.alpha, state.delta, models.coeffs)
    rates = los_rates(state, geom, a_m, state.a_t)
    bracket = (geom.v_lam + a_tn * tau_t * -np.expm1(-geom.tgo / tau_t)
               + _projected_rate(row, models, state))
    return bracket * rates.v_r_dot * geom.r / (geom.v_r * geom.v_r)


def zem_integrated(state: EngagementState, geom: RelGeometry, models: LinearModels,
                   row=None) -> ZemBreakdown:
    """ZEM from measured geometry, target acceleration and airframe state.

    ``row`` may carry a precomputed first transition row for the same ``tgo``.
    """
    tgo = geom.tgo
    tau_t = models.tau_t
    row = _row(models, tgo, row)
    a_tn = target_normal_accel(state.a_t, state.gamma_t, models.lambda0)
    p = psi(tgo, tau_t)
    kinematic = -geom.v_r * tgo * tgo * geom.lam_dot
    target_lag = a_tn * tau_t * tau_t * p
    airframe = _airframe_term(row, state)
    drift = _drift(state, geom, models, row, a_tn)
    return ZemBreakdown(kinematic + target_lag + airframe, kinematic, target_lag,
                        airframe, p, row[5], drift)


def sigma_dot_terms(state: EngagementState, geom: RelGeometry, models: LinearModels,
                    delta_cmd=0.0, a_t_cmd=0.0, row=None, *, delta_a_tn=0.0,
                    delta_i=0.0, eps_gain: float = EPS_GAIN) -> SigmaDotTerms:
    """Split the sliding-surface rate into drift, control and target parts.

    ``delta_cmd`` is accepted for symmetry with the call site; the command
    enters only through ``control_gain``. ``delta_a_tn`` and ``delta_i`` are
    the target-model and lumped integrated-model errors.
    """
    tgo = geom.tgo
    tau_t = models.tau_t
    row = _row(models, tgo, row)
    a_tn = target_normal_accel(state.a_t, state.gamma_t, models.lambda0)
    a_tn_cmd = target_normal_accel(a_t_cmd, state.gamma_t, models.lambda0)
    drift = _drift(state, geom, models, row, a_tn)
    gain = row[5] / models.tau_s
    target = tau_t * (a_tn_cmd + tau_t * delta_a_tn) * psi(tgo, tau_t)
    return SigmaDotTerms(drift, gain, target, delta_i, np.abs(row[5]) < eps_gain)
