"""Nonlinear planar engagement model: relative kinematics, target lag, airframe.

Frame conventions (vertical plane, no gravity, constant speeds):

* UAV velocity is ``V_M (cos gamma_M, sin gamma_M)``.
* Target velocity is ``V_T (-cos gamma_T, sin gamma_T)``, so ``gamma_T = 0``
  with ``lambda = 0`` is a target flying straight at the UAV.
* The LOS angle is ``lambda = atan2(z_T - z_M, x_T - x_M)``.

With these conventions the closing and LOS-normal speeds, their rates and
the time-to-go relations below are exact time derivatives of the position
geometry, not approximations.

The kinematic functions accept numpy arrays as well as floats, so that a
batch of engagements can be advanced in lockstep; coefficients may then be
given as a ``PlantBatch`` of per-run arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Callable, NamedTuple, Sequence, Union

import numpy as np

G0 = 9.81
R_EPS = 0.5  # m, terminal proximity threshold

# Layout of the integrated state vector used by the integrator.
STATE_NAMES = (
    "x_m", "z_m", "gamma_m", "alpha", "q", "theta", "delta",
    "x_t", "z_t", "gamma_t", "a_t",
)
IX = {name: i for i, name in enumerate(STATE_NAMES)}


class EngagementTerminal(Exception):
    """Range fell below the proximity threshold; not a fault."""


class DegenerateClosing(Exception):
    """Closing speed is exactly zero, time-to-go rate is undefined."""


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class VehicleCoeffs:
    """Speeds, normalized aerodynamic derivatives, time constants and limits.

    Lift derivatives are per unit mass (m/s^2 per rad) and moment derivatives
    per unit pitch inertia, so mass, inertia, thrust and drag do not appear.
    """

    v_m: float = 380.0
    v_t: float = 380.0
    l_alpha: float = 1190.0
    l_delta: float = 80.0
    m_alpha: float = -234.0
    m_q: float = -5.0
    m_delta: float = 160.0
    tau_s: float = 0.02
    tau_t: float = 0.1
    tau_m: float = 0.1
    a_m_max: float = 40.0 * G0
    a_t_max: float = 20.0 * G0
    delta_max: float = math.radians(30.0)
    delta_rate_max: float = math.radians(30.0)

    def __post_init__(self):
        bad = [f.name for f in fields(self) if not math.isfinite(getattr(self, f.name))]
        if bad:
            raise ConfigurationError(f"non-finite coefficients: {', '.join(bad)}")
        bad = [
            name
            for name in ("v_m", "tau_s", "tau_t", "tau_m",
                         "a_m_max", "a_t_max", "delta_max", "delta_rate_max")
            if getattr(self, name) <= 0.0
        ]
        # a stationary target (v_t == 0) is allowed as a sanity scenario
        if self.v_t < 0.0:
            bad.append("v_t")
        if bad:
            raise ConfigurationError(f"coefficients must be positive: {', '.join(bad)}")


class PlantBatch(NamedTuple):
    """Per-run coefficient arrays with the field names of ``VehicleCoeffs``."""

    v_m: np.ndarray
    v_t: np.ndarray
    l_alpha: np.ndarray
    l_delta: np.ndarray
    m_alpha: np.ndarray
    m_q: np.ndarray
    m_delta: np.ndarray
    tau_s: np.ndarray
    tau_t: np.ndarray
    tau_m: np.ndarray
    a_m_max: np.ndarray
    a_t_max: np.ndarray
    delta_max: np.ndarray
    delta_rate_max: np.ndarray

    @classmethod
    def stack(cls, coeffs: Sequence[VehicleCoeffs]) -> "PlantBatch":
        return cls(*(np.array([getattr(c, name) for c in coeffs], dtype=float)
                     for name in cls._fields))


def _identity(x: float) -> float:
    return x


def _canard_term(alpha: float, delta: float) -> float:
    return delta


@dataclass(frozen=True)
class Aerodynamics:
    """Shape functions of the lift and moment model.

    ``f1(alpha)`` and ``f2(delta)`` scale lift, ``f3(alpha)`` the static
    moment and ``f4(alpha, delta)`` the canard moment. The defaults give the
    linear airframe used by the controller's model; pass
    ``f4=lambda a, d: a + d`` for a moment driven by local canard incidence.
    """

    f1: Callable[[float], float] = _identity
    f2: Callable[[float], float] = _identity
    f3: Callable[[float], float] = _identity
    f4: Callable[[float, float], float] = _canard_term


LINEAR_AERO = Aerodynamics()

Signal = Union[float, Callable[[float], float]]


@dataclass(frozen=True)
class PitchDisturbance:
    """Additive pitch acceleration and lift disturbances with declared bounds.

    Values may be constants or functions of time. Evaluating a value whose
    magnitude exceeds its bound raises ``ConfigurationError``.
    """

    delta_q: Signal = 0.0
    delta_a: Signal = 0.0
    delta_q_bound: float = math.inf
    delta_a_bound: float = math.inf

    def evaluate(self, t: float) -> tuple[float, float]:
        dq = self.delta_q(t) if callable(self.delta_q) else self.delta_q
        da = self.delta_a(t) if callable(self.delta_a) else self.delta_a
        if abs(dq) > self.delta_q_bound:
            raise ConfigurationError(
                f"pitch disturbance {dq} exceeds bound {self.delta_q_bound}")
        if abs(da) > self.delta_a_bound:
            raise ConfigurationError(
                f"lift disturbance {da} exceeds bound {self.delta_a_bound}")
        return dq, da


NO_DISTURBANCE = PitchDisturbance()


@dataclass
class EngagementState:
    x_m: float = 0.0
    z_m: float = 0.0
    gamma_m: float = 0.0
    alpha: float = 0.0
    q: float = 0.0
    theta: float = 0.0
    delta: float = 0.0
    x_t: float = 3000.0
    z_t: float = 0.0
    gamma_t: float = 0.0
    a_t: float = 0.0
    t: float = field(default=0.0)

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in STATE_NAMES])

    @classmethod
    def from_array(cls, y, t: float = 0.0) -> "EngagementState":
        return cls(*(float(v) for v in y), t=t)


class RelGeometry(NamedTuple):
    r: float
    lam: float
    v_r: float
    v_lam: float
    tgo: float

    @property
    def lam_dot(self) -> float:
        return self.v_lam / self.r


class LosRates(NamedTuple):
    lam_ddot: float
    v_r_dot: float
    v_lam_dot: float
    tgo_dot: float


def closing_speeds(gamma_m: float, gamma_t: float, lam: float,
                   v_m: float, v_t: float) -> tuple[float, float]:
    """Return ``(V_r, V_lambda)`` for the given angles and speeds."""
    v_r = -(v_m * np.cos(gamma_m - lam) + v_t * np.cos(gamma_t + lam))
    v_lam = -v_m * np.sin(gamma_m - lam) + v_t * np.sin(gamma_t + lam)
    return v_r, v_lam


def geometry(state: EngagementState, coeffs) -> RelGeometry:
    """Relative geometry without terminal checks; ``tgo`` is 0 once opening."""
    dx = state.x_t - state.x_m
    dz = state.z_t - state.z_m
    r = np.hypot(dx, dz)
    lam = np.arctan2(dz, dx)
    v_r, v_lam = closing_speeds(state.gamma_m, state.gamma_t, lam, coeffs.v_m, coeffs.v_t)
    if np.all(v_r < 0.0):
        tgo = -r / v_r
    else:
        closing = v_r < 0.0
        tgo = np.where(closing, -r / np.where(closing, v_r, -1.0), 0.0)
    if np.ndim(tgo) == 0:
        r, lam, v_r, v_lam, tgo = (float(v) for v in (r, lam, v_r, v_lam, tgo))
    return RelGeometry(r, lam, v_r, v_lam, tgo)


def rel_geometry(state: EngagementState, coeffs: VehicleCoeffs,
                 r_eps: float = R_EPS) -> RelGeometry:
    geom = geometry(state, coeffs)
    if np.any(geom.r <= r_eps):
        raise EngagementTerminal(f"range {np.min(geom.r):.4g} m below {r_eps} m")
    return geom


def target_derivs(a_t: float, a_t_cmd: float, gamma_t: float,
                  coeffs: VehicleCoeffs) -> tuple[float, float]:
    """First-order lag on the target's normal acceleration and its turn rate."""
    a_t_dot = (a_t_cmd - a_t) / coeffs.tau_t
    v_t = coeffs.v_t
    if np.all(v_t > 0.0):
        return a_t_dot, a_t / v_t
    # a stationary target does not turn
    gamma_t_dot = np.where(v_t > 0.0, a_t / np.where(v_t > 0.0, v_t, 1.0), 0.0)
    return a_t_dot, float(gamma_t_dot) if np.ndim(gamma_t_dot) == 0 else gamma_t_dot


class UavDerivs(NamedTuple):
    x_m_dot: float
    z_m_dot: float
    gamma_m_dot: float
    alpha_dot: float
    q_dot: float
    theta_dot: float
    delta_dot: float
    a_m: float


def uav_lift_accel(alpha: float, delta: float, coeffs: VehicleCoeffs,
                   aero: Aerodynamics = LINEAR_AERO) -> float:
    """Normal acceleration from lift without disturbance."""
    return coeffs.l_alpha * aero.f1(alpha) + coeffs.l_delta * aero.f2(delta)


def uav_derivs(state: EngagementState, delta_cmd: float, coeffs: VehicleCoeffs,
               disturbance: PitchDisturbance = NO_DISTURBANCE,
               aero: Aerodynamics = LINEAR_AERO) -> UavDerivs:
    dq, da = disturbance.evaluate(state.t)
    a_m = uav_lift_accel(state.alpha, state.delta, coeffs, aero) + da
    alpha_dot = state.q - a_m / coeffs.v_m
    q_dot = (coeffs.m_alpha * aero.f3(state.alpha) + coeffs.m_q * state.q
             + coeffs.m_delta * aero.f4(state.alpha, state.delta) + dq)
    delta_dot = (delta_cmd - state.delta) / coeffs.tau_s
    return UavDerivs(
        coeffs.v_m * np.cos(state.gamma_m),
        coeffs.v_m * np.sin(state.gamma_m),
        a_m / coeffs.v_m,
        alpha_dot,
        q_dot,
        state.q,
        delta_dot,
        a_m,
    )


def los_rates(state: EngagementState, geom: RelGeometry, a_m: float,
              a_t: float) -> LosRates:
    """LOS angular acceleration, closing and LOS-normal accelerations and the
    rate of ``tgo = -r / V_r``. Array inputs are not checked for degeneracy."""
    r, lam, v_r, v_lam = geom.r, geom.lam, geom.v_r, geom.v_lam
    scalar = np.ndim(r) == 0
    if scalar and r <= 0.0:
        raise EngagementTerminal("zero range")
    v_r_dot = (v_lam * v_lam / r + a_m * np.sin(state.gamma_m - lam)
               + a_t * np.sin(state.gamma_t + lam))
    v_lam_dot = (-v_lam * v_r / r - a_m * np.cos(state.gamma_m - lam)
                 + a_t * np.cos(state.gamma_t + lam))
    lam_ddot = v_lam_dot / r - v_lam * v_r / (r * r)
    if scalar and v_r == 0.0:
        raise DegenerateClosing("closing speed is zero")
    tgo_dot = -1.0 + v_r_dot * r / (v_r * v_r)
    return LosRates(lam_ddot, v_r_dot, v_lam_dot, tgo_dot)


def derivatives(y: np.ndarray, t: float, delta_cmd, a_t_cmd,
                coeffs: VehicleCoeffs | PlantBatch,
                disturbance: PitchDisturbance = NO_DISTURBANCE,
                aero: Aerodynamics = LINEAR_AERO) -> np.ndarray:
    """Time derivative of the full state laid out as ``STATE_NAMES``.

    ``y`` has the state index first: shape ``(11,)`` for one engagement or
    ``(11, n)`` for a batch, with commands and coefficients of shape ``(n,)``.
    """
    (x_m, z_m, gamma_m, alpha, q, theta, delta,
     x_t, z_t, gamma_t, a_t) = y
    if disturbance is NO_DISTURBANCE:
        dq = da = 0.0
    else:
        dq, da = disturbance.evaluate(t)
    v_m = coeffs.v_m
    if aero is LINEAR_AERO:
        a_m = coeffs.l_alpha * alpha + coeffs.l_delta * delta + da
        q_dot = coeffs.m_alpha * alpha + coeffs.m_q * q + coeffs.m_delta * delta + dq
    else:
        a_m = coeffs.l_alpha * aero.f1(alpha) + coeffs.l_delta * aero.f2(delta) + da
        q_dot = (coeffs.m_alpha * aero.f3(alpha) + coeffs.m_q * q
                 + coeffs.m_delta * aero.f4(alpha, delta) + dq)
    a_t_dot, gamma_t_dot = target_derivs(a_t, a_t_cmd, gamma_t, coeffs)
    v_t = coeffs.v_t
    gamma_m_dot = a_m / v_m
    return np.array([
        v_m * np.cos(gamma_m),
        v_m * np.sin(gamma_m),
        gamma_m_dot,
        q - gamma_m_dot,
        q_dot,
        q,
        (delta_cmd - delta) / coeffs.tau_s,
        -v_t * np.cos(gamma_t),
        v_t * np.sin(gamma_t),
        gamma_t_dot,
        a_t_dot,
    ])
