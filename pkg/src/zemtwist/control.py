"""Sliding-mode controllers on the ZEM surface: SMC, twisting and adaptive twisting.

The canard command is ``u_eq + u_D``. The equivalent control cancels the
drift of the sliding-surface rate under the nominal model; ``u_D`` is the
discontinuous part. The command enters the surface rate through the
transition entry ``phi16 / tau_s``, which is negative and varies by orders
of magnitude with time-to-go, so ``u_D`` divides a demanded surface rate by
that gain (see ``Controller``).

The gain laws work elementwise on floats or per-run arrays.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .dynamics import EngagementState, RelGeometry, VehicleCoeffs
from .linmodel import LinearModels
from .zem import (EPS_GAIN, ZemBreakdown, sigma_dot_terms, transition_row,
                  zem_integrated)


class Mode(str, enum.Enum):
    SMC = "smc"
    TSMC = "tsmc"
    ATSMC = "atsmc"


@dataclass(frozen=True)
class AtsmcParams:
    """Controller gains. Defaults follow the published gain table; ``rho``,
    ``beta_star`` and the boundary layer are not tabulated there."""

    mu: float = 0.7
    mu_i: float = 0.7
    gamma: float = 0.25
    rho: float = 0.5
    epsilon: float = 0.6
    omega_bar: float = 80.65
    eta: float = 0.05
    beta_star: float = 0.005
    beta_m: float = 0.01
    beta_max: float = 1.57
    beta0: float = 1.57
    boundary_layer: float = 0.0
    sigma_rate_scale: float = 200.0  # m/s of initial surface rate per unit switching output

    def validate(self) -> list[str]:
        """Return the names of fields that break the gain invariants."""
        bad = []
        if not 0.0 < self.mu < 1.0:
            bad.append("mu")
        if not 0.0 < self.beta_m < self.beta0 <= self.beta_max:
            bad.extend(["beta_m", "beta0", "beta_max"])
        for name in ("rho", "epsilon", "gamma", "beta_star", "sigma_rate_scale"):
            if not getattr(self, name) > 0.0:
                bad.append(name)
        for name in ("omega_bar", "eta", "boundary_layer", "mu_i"):
            if not getattr(self, name) >= 0.0:
                bad.append(name)
        return bad


def sign(x):
    """Sign with ``sign(0) = 0``; floats in, float out."""
    if np.ndim(x) == 0:
        return 1.0 if x > 0.0 else (-1.0 if x < 0.0 else 0.0)
    return np.sign(x)


def _scalar(v):
    return float(v) if np.ndim(v) == 0 else v


def twisting(sigma, sigma_dot, beta, mu: float):
    gain = np.where(sigma * sigma_dot <= 0.0, mu * beta, beta)
    return _scalar(-gain * sign(sigma))


def baseline_smc(sigma, beta, boundary_layer: float = 0.0):
    if boundary_layer > 0.0:
        inside = np.abs(sigma) < boundary_layer
        return _scalar(np.where(inside, -beta * sigma / boundary_layer, -beta * sign(sigma)))
    return _scalar(-beta * sign(sigma))


def baseline_tsmc(sigma, sigma_dot, params: AtsmcParams):
    return twisting(sigma, sigma_dot, params.beta0, params.mu)


def accelerated_gain(sigma, params: AtsmcParams):
    return _scalar(np.maximum(params.beta_star, params.gamma * np.abs(sigma) ** params.rho))


def gain_rate(beta, sigma, params: AtsmcParams):
    s = np.abs(sigma)
    adapt = params.omega_bar * s * sign(s ** params.rho - params.epsilon)
    return _scalar(np.where(beta <= params.beta_m, params.eta, adapt))


def adapt_gain(beta, sigma, dt: float, params: AtsmcParams):
    """One forward-Euler step of the adaptive gain law, projected onto
    ``[beta_m, beta_max]``."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    beta = beta + dt * gain_rate(beta, sigma, params)
    return _scalar(np.minimum(np.maximum(beta, params.beta_m), params.beta_max))


def compose_command(u_eq, u_d, delta_prev, dt: float, coeffs: VehicleCoeffs):
    """Sum the control parts and apply canard magnitude then rate limits."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    lim = coeffs.delta_max
    u = np.minimum(np.maximum(u_eq + u_d, -lim), lim)
    step = coeffs.delta_rate_max * dt
    return _scalar(np.minimum(np.maximum(u, delta_prev - step), delta_prev + step))


def equivalent_control(state: EngagementState, geom: RelGeometry, models: LinearModels,
                       row=None) -> float:
    """Canard command that zeroes the nominal sliding-surface rate.

    Raises ``LossOfAuthority`` when the command no longer reaches the surface
    (time-to-go near zero).
    """
    terms = sigma_dot_terms(state, geom, models, row=row)
    if np.any(terms.authority_lost):
        raise LossOfAuthority(f"transition entry below threshold at tgo={geom.tgo}")
    return _scalar(-terms.drift / terms.control_gain)


class LossOfAuthority(Exception):
    """The sliding surface is insensitive to the canard command."""


@dataclass(frozen=True)
class DiagnosticBounds:
    """Assumed bounds on the target-command, target-lag and model-error terms."""

    da_tnc: float = 0.0
    da_tn_tau: float = 0.0
    delta_i: float = 0.0


class LyapunovDiag(NamedTuple):
    v: float
    v_dot_bound: float
    condition_satisfied: bool


def lyapunov_diag(sigma: float, beta: float, params: AtsmcParams,
                  bounds: DiagnosticBounds) -> LyapunovDiag:
    v = 0.5 * sigma * sigma + (beta - params.beta_max) ** 2 / (2.0 * params.gamma)
    margin = params.mu_i - bounds.da_tnc - bounds.da_tn_tau - bounds.delta_i
    v_dot = (-abs(sigma) * margin
             + params.omega_bar / (params.gamma * params.mu) * (beta - params.beta_max)
             * sign(abs(sigma) ** params.rho - params.epsilon))
    return LyapunovDiag(v, v_dot, margin > 0.0)


class ControlOutput(NamedTuple):
    delta_cmd: np.ndarray
    u_eq: np.ndarray
    u_d: np.ndarray
    sigma: np.ndarray
    sigma_dot: np.ndarray
    beta: np.ndarray
    zem: ZemBreakdown
    control_gain: np.ndarray


def atsmc_gain(beta, sigma, params: AtsmcParams):
    """Twisting gain flown by ATSMC: the adaptive gain, raised to the
    accelerated profile while that is larger, never above ``beta_max``."""
    return _scalar(np.minimum(np.maximum(beta, accelerated_gain(sigma, params)),
                              params.beta_max))


class Controller:
    """Controller state and the step-wise control law for a batch of runs.

    Every run has its own mode, adaptive gain and surface-rate estimate; all
    runs share the nominal linear models. The surface rate used by the
    twisting switch is a backward difference of ``sigma`` smoothed by a
    first-order filter with time constant ``5 dt``.

    The switching output ``u_T`` is dimensionless. It is turned into a canard
    command with the fixed factor ``sigma_rate_scale / b_0``, where ``b_0`` is
    the command-to-surface-rate gain ``phi16 / tau_s`` at the first step. At
    the start of the engagement ``u_T = 1`` therefore asks for a surface rate
    of ``sigma_rate_scale`` (m/s); later the same deflection buys less, as the
    transition entry shrinks with time-to-go. When the entry falls below
    ``EPS_GAIN`` the last valid ``u_eq`` is held.
    """

    def __init__(self, modes, params: AtsmcParams, models: LinearModels, dt: float):
        modes = [Mode(m) for m in ([modes] if isinstance(modes, (str, Mode)) else modes)]
        n = len(modes)
        self.modes = modes
        self.params = params
        self.models = models
        self.dt = dt
        self.is_smc = np.array([m is Mode.SMC for m in modes])
        self.is_atsmc = np.array([m is Mode.ATSMC for m in modes])
        self.beta = np.full(n, params.beta0)
        self.sigma_prev: np.ndarray | None = None
        self.sigma_dot_est = np.zeros(n)
        self.u_eq_last = np.zeros(n)
        self.gain_ref: np.ndarray | None = None
        self.delta_cmd = np.zeros(n)
        self._filter = math.exp(-1.0 / 5.0)

    def _sigma_rate(self, sigma: np.ndarray) -> np.ndarray:
        if self.sigma_prev is not None:
            raw = (sigma - self.sigma_prev) / self.dt
            a = self._filter
            self.sigma_dot_est = a * self.sigma_dot_est + (1.0 - a) * raw
        self.sigma_prev = sigma
        return self.sigma_dot_est

    def switching_gain(self, sigma: np.ndarray) -> np.ndarray:
        """Gain of the switching term for each run at this step."""
        p = self.params
        return np.where(self.is_atsmc, atsmc_gain(self.beta, sigma, p), p.beta0)

    def command(self, state: EngagementState, geom: RelGeometry) -> ControlOutput:
        p = self.params
        models = self.models
        row = transition_row(models, geom.tgo)
        zb = zem_integrated(state, geom, models, row)
        sigma = zb.z
        sigma_dot = self._sigma_rate(sigma)

        gain = row[5] / models.tau_s
        live = np.abs(row[5]) >= EPS_GAIN
        safe = np.where(live, gain, 1.0)
        self.u_eq_last = np.where(live, -zb.drift_no_control / safe, self.u_eq_last)
        u_eq = self.u_eq_last
        if self.gain_ref is None:
            self.gain_ref = np.where(live, gain, np.nan)

        beta = self.switching_gain(sigma)
        switched = np.where(self.is_smc, baseline_smc(sigma, beta, p.boundary_layer),
                            twisting(sigma, sigma_dot, beta, p.mu))
        ref = self.gain_ref
        has_ref = np.isfinite(ref)
        u_d = np.where(has_ref, p.sigma_rate_scale * switched / np.where(has_ref, ref, 1.0), 0.0)
        self.beta = np.where(self.is_atsmc, adapt_gain(self.beta, sigma, self.dt, p),
                             self.beta)

        self.delta_cmd = compose_command(u_eq, u_d, self.delta_cmd, self.dt, models.coeffs)
        return ControlOutput(self.delta_cmd, u_eq, u_d, sigma, sigma_dot, beta, zb, gain)
