"""Frozen linear models about the initial engagement geometry.

Three models are built from the same coefficients:

* guidance model, state ``[z, z_dot, a_TN, a_MN]`` with a first-order UAV lag,
* airframe model, state ``[alpha, q, delta]`` driven by the canard command,
* integrated model, state ``[z, z_dot, a_TN, alpha, q, delta]``, where the
  airframe drives the relative deviation through ``C_M``.

Only the integrated model is flown by the controllers. The airframe
eigen-decomposition is kept alongside so that the first row of the
integrated transition matrix can be evaluated in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import VehicleCoeffs


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LinearModels:
    AG: np.ndarray
    BG: np.ndarray
    GG: np.ndarray
    AM: np.ndarray
    BM: np.ndarray
    CM: np.ndarray
    AI: np.ndarray
    BI: np.ndarray
    GI: np.ndarray
    gamma_m0: float
    lambda0: float
    coeffs: VehicleCoeffs
    # airframe modes: eigenvalues and C_M-weighted left eigenvectors
    am_eigvals: np.ndarray | None = None
    am_weights: np.ndarray | None = None

    @property
    def tau_s(self) -> float:
        return self.coeffs.tau_s

    @property
    def tau_t(self) -> float:
        return self.coeffs.tau_t

    @property
    def tau_m(self) -> float:
        return self.coeffs.tau_m

    @property
    def cos_offset(self) -> float:
        return math.cos(self.gamma_m0 - self.lambda0)


def guidance_block(tau_t: float) -> np.ndarray:
    """Relative-motion block: double integrator plus target acceleration lag."""
    return np.array([
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0 / tau_t],
    ])


def build_models(coeffs: VehicleCoeffs, gamma_m0: float, lambda0: float) -> LinearModels:
    c = coeffs
    ag11 = guidance_block(c.tau_t)

    ag = np.zeros((4, 4))
    ag[:3, :3] = ag11
    ag[1, 3] = -1.0
    ag[3, 3] = -1.0 / c.tau_m
    bg = np.array([0.0, 0.0, 0.0, 1.0 / c.tau_m])
    gg = np.array([0.0, 0.0, 1.0 / c.tau_t, 0.0])

    am = np.array([
        [-c.l_alpha / c.v_m, 1.0, -c.l_delta / c.v_m],
        [c.m_alpha, c.m_q, c.m_delta],
        [0.0, 0.0, -1.0 / c.tau_s],
    ])
    bm = np.array([0.0, 0.0, 1.0 / c.tau_s])
    cm = np.array([c.l_alpha, 0.0, c.l_delta]) * math.cos(gamma_m0 - lambda0)

    ai = np.zeros((6, 6))
    ai[:3, :3] = ag11
    ai[1, 3:] = -cm
    ai[3:, 3:] = am
    bi = np.zeros(6)
    bi[5] = 1.0 / c.tau_s
    gi = np.zeros(6)
    gi[2] = 1.0 / c.tau_t

    eigvals, weights = airframe_modes(am, cm)
    return LinearModels(
        AG=_frozen(ag), BG=_frozen(bg), GG=_frozen(gg),
        AM=_frozen(am), BM=_frozen(bm), CM=_frozen(cm),
        AI=_frozen(ai), BI=_frozen(bi), GI=_frozen(gi),
        gamma_m0=float(gamma_m0), lambda0=float(lambda0), coeffs=coeffs,
        am_eigvals=eigvals, am_weights=weights,
    )


MODAL_COND_MAX = 1e6


def airframe_modes(am: np.ndarray, cm: np.ndarray):
    """Eigenvalues ``l_k`` of ``A_M`` and weights ``w_k = (C_M v_k) u_k``.

    ``v_k`` are right eigenvectors and ``u_k`` the rows of their inverse, so
    ``C_M exp(A_M s) = sum_k exp(l_k s) w_k``. Returns ``(None, None)`` when
    the eigenbasis is too ill-conditioned for that expansion to be accurate.
    """
    lam, v = np.linalg.eig(am)
    if not np.isfinite(np.linalg.cond(v)) or np.linalg.cond(v) > MODAL_COND_MAX:
        return None, None
    u = np.linalg.inv(v)
    w = (cm @ v)[:, None] * u
    lam.setflags(write=False)
    w.setflags(write=False)
    return lam, w


def uav_normal_accel(x_m, models: LinearModels, delta_cmd: float | None = None) -> float:
    """UAV acceleration normal to the initial LOS, ``C_M . [alpha, q, delta]``.

    Passing ``delta_cmd`` selects the literal variant that applies ``C_M`` to
    the airframe state derivative ``A_M x_M + B_M delta_cmd`` instead; it is
    kept only for comparison and is dimensionally inconsistent.
    """
    x_m = np.asarray(x_m, dtype=float)
    if delta_cmd is None:
        return float(models.CM @ x_m)
    x_m_dot = models.AM @ x_m + models.BM * delta_cmd
    return float(models.CM @ x_m_dot)
