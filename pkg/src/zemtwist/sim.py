"""Engagement execution and Monte Carlo campaigns.

One engagement is a fixed-step loop: geometry, ZEM and control at the start
of each step, then a classical RK4 step of the nonlinear plant with the
canard and target commands held. Engagements are flown in lockstep batches
(a single run is a batch of one), which keeps the per-step interpreter cost
shared across runs. Campaigns run many engagements with perturbed plants;
the controller always works from the nominal coefficients.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .control import AtsmcParams, Controller, DiagnosticBounds, Mode
from .dynamics import (
    G0, IX, LINEAR_AERO, NO_DISTURBANCE, R_EPS, STATE_NAMES, Aerodynamics,
    EngagementState, PitchDisturbance, PlantBatch, VehicleCoeffs, derivatives, geometry,
)
from .linmodel import build_models

log = logging.getLogger(__name__)

ALL_MODES = (Mode.SMC, Mode.TSMC, Mode.ATSMC)
SAMPLED_COEFFS = ("l_alpha", "l_delta", "m_alpha", "m_q", "m_delta")
ALPHA_GUARD = 0.5  # rad, linear-aerodynamics validity


class NumericalDivergence(RuntimeError):
    """The integrated state left the finite/physical envelope."""

    def __init__(self, message: str, trace: "Trace | None" = None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class Geometry:
    r0: float = 3000.0
    lambda0: float = 0.0
    heading_error: float = math.radians(5.0)
    gamma_t0: float = 0.0


@dataclass(frozen=True)
class Maneuver:
    period: float = 1.0
    phase: float = 0.0
    amplitude: float = 20.0 * G0


@dataclass(frozen=True)
class Uncertainty:
    fraction: float = 0.0
    clip_sigma: float = 3.0
    tau_t_range: tuple[float, float] = (0.05, 0.2)
    seed: int = 0


@dataclass(frozen=True)
class Integrator:
    dt: float = 1e-3
    t_max: float = 20.0


@dataclass(frozen=True)
class ScenarioConfig:
    geometry: Geometry = field(default_factory=Geometry)
    coeffs: VehicleCoeffs = field(default_factory=VehicleCoeffs)
    params: AtsmcParams = field(default_factory=AtsmcParams)
    maneuver: Maneuver = field(default_factory=Maneuver)
    uncertainty: Uncertainty = field(default_factory=Uncertainty)
    integrator: Integrator = field(default_factory=Integrator)
    mode: Mode = Mode.ATSMC
    disturbance: PitchDisturbance = NO_DISTURBANCE
    bounds: DiagnosticBounds = field(default_factory=DiagnosticBounds)

    def validate(self) -> list[str]:
        """Names of fields that violate scenario invariants (empty if valid)."""
        bad = []
        dt, t_max = self.integrator.dt, self.integrator.t_max
        if not (math.isfinite(dt) and dt > 0.0):
            bad.append("integrator.dt")
        if not (math.isfinite(t_max) and t_max > 0.0):
            bad.append("integrator.t_max")
        if not self.geometry.r0 > R_EPS:
            bad.append("geometry.r0")
        m = self.maneuver
        if not m.period > 0.0:
            bad.append("maneuver.period")
        if not 0.0 <= m.phase <= m.period:
            bad.append("maneuver.phase")
        u = self.uncertainty
        if not 0.0 <= u.fraction < 1.0:
            bad.append("uncertainty.fraction")
        if not u.clip_sigma > 0.0:
            bad.append("uncertainty.clip_sigma")
        lo, hi = u.tau_t_range
        if not 0.0 < lo <= hi:
            bad.append("uncertainty.tau_t_range")
        bad.extend(f"controller.{name}" for name in self.params.validate())
        return bad

    def warnings(self) -> list[str]:
        out = []
        if self.integrator.dt > self.coeffs.tau_s / 10.0:
            out.append(f"dt={self.integrator.dt} s exceeds tau_s/10; the canard lag is "
                       "under-resolved and the integration may diverge")
        return out


def target_command(t: float, maneuver: Maneuver, phase=None):
    """Square-wave target acceleration command.

    The command is ``-A`` before ``phase`` and then alternates ``+A``/``-A``
    every half period. ``phase`` defaults to ``maneuver.phase`` and may be a
    per-run array.
    """
    phase = maneuver.phase if phase is None else phase
    a = maneuver.amplitude
    shifted = t - np.asarray(phase, dtype=float)
    first_half = np.fmod(np.maximum(shifted, 0.0), maneuver.period) < 0.5 * maneuver.period
    cmd = np.where((shifted >= 0.0) & first_half, a, -a)
    if a == 0.0:
        cmd = np.zeros_like(cmd)
    return float(cmd) if np.ndim(cmd) == 0 else cmd


def sample_coeffs(nominal: VehicleCoeffs, rng: np.random.Generator, fraction: float = 0.2,
                  clip_sigma: float = 3.0,
                  tau_t_range: tuple[float, float] = (0.05, 0.2)) -> VehicleCoeffs:
    """Perturbed plant coefficients.

    The five aerodynamic derivatives get independent normal errors with
    standard deviation ``fraction * |nominal|``, clipped at ``clip_sigma``
    deviations; the target lag is uniform on ``tau_t_range``. With
    ``fraction == 0`` the nominal coefficients are returned unchanged.
    """
    if fraction == 0.0:
        return nominal
    draws = {}
    for name in SAMPLED_COEFFS:
        mean = getattr(nominal, name)
        sd = fraction * abs(mean)
        x = rng.normal(mean, sd)
        draws[name] = float(min(max(x, mean - clip_sigma * sd), mean + clip_sigma * sd))
    draws["tau_t"] = float(rng.uniform(*tau_t_range))
    return replace(nominal, **draws)


def collision_heading(gamma_t: float, lam: float, v_m: float, v_t: float) -> float:
    """UAV flight-path angle that nulls the LOS rate."""
    s = v_t * math.sin(gamma_t + lam) / v_m
    if abs(s) > 1.0:
        raise ValueError("no collision course: target too fast for this aspect")
    return lam + math.asin(s)


def initial_state(scenario: ScenarioConfig) -> EngagementState:
    g = scenario.geometry
    c = scenario.coeffs
    gamma_m = collision_heading(g.gamma_t0, g.lambda0, c.v_m, c.v_t) + g.heading_error
    return EngagementState(
        x_m=0.0, z_m=0.0, gamma_m=gamma_m, alpha=0.0, q=0.0, theta=gamma_m, delta=0.0,
        x_t=g.r0 * math.cos(g.lambda0), z_t=g.r0 * math.sin(g.lambda0),
        gamma_t=g.gamma_t0, a_t=0.0, t=0.0,
    )


def step(y: np.ndarray, t: float, delta_cmd, a_t_cmd,
         coeffs: VehicleCoeffs | PlantBatch, dt: float,
         disturbance: PitchDisturbance = NO_DISTURBANCE,
         aero: Aerodynamics = LINEAR_AERO) -> np.ndarray:
    """Classical RK4 step with both commands held over the step."""
    h2 = 0.5 * dt
    k1 = derivatives(y, t, delta_cmd, a_t_cmd, coeffs, disturbance, aero)
    k2 = derivatives(y + h2 * k1, t + h2, delta_cmd, a_t_cmd, coeffs, disturbance, aero)
    k3 = derivatives(y + h2 * k2, t + h2, delta_cmd, a_t_cmd, coeffs, disturbance, aero)
    k4 = derivatives(y + dt * k3, t + dt, delta_cmd, a_t_cmd, coeffs, disturbance, aero)
    return y + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


TRACE_COLUMNS = (
    ("t", "s"),
    *((name, unit) for name, unit in zip(
        STATE_NAMES, ("m", "m", "rad", "rad", "rad/s", "rad", "rad", "m", "m", "rad", "m/s^2"))),
    ("r", "m"), ("lambda", "rad"), ("v_r", "m/s"), ("v_lambda", "m/s"), ("tgo", "s"),
    ("zem", "m"), ("sigma_dot", "m/s"), ("beta", "-"), ("u_eq", "rad"), ("u_d", "rad"),
    ("delta_cmd", "rad"), ("a_t_cmd", "m/s^2"),
)


@dataclass
class Trace:
    """Sampled engagement plus its terminal record.

    ``columns`` maps each name of ``TRACE_COLUMNS`` to an array with one
    entry per control step.
    """

    columns: dict[str, np.ndarray]
    miss_distance: float
    intercept_time: float
    termination: str
    warnings: list[str] = field(default_factory=list)
    plant: VehicleCoeffs | None = None

    def __len__(self) -> int:
        return len(self.columns["t"])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def terminal_zem_overshoot(self, window: float = 0.5) -> float:
        """Largest |ZEM| over the final ``window`` seconds.

        Samples where the LOS-normal speed exceeds the closing speed are
        skipped: there the straight-line time-to-go, and with it the ZEM,
        blows up as the closing speed passes through zero beside the target.
        If a wide miss leaves no valid sample in the final window, the window
        ends at the last valid sample instead.
        """
        t = self.columns["t"]
        z = self.columns["zem"]
        valid = np.abs(self.columns["v_lambda"]) < np.abs(self.columns["v_r"])
        if not valid.any():
            return math.nan
        sel = valid & (t >= t[-1] - window)
        if not sel.any():
            t_end = t[np.flatnonzero(valid)[-1]]
            sel = valid & (t >= t_end - window) & (t <= t_end)
        return float(np.max(np.abs(z[sel])))

    def canard_reversals(self) -> int:
        """Number of sign changes of the commanded canard rate."""
        d = np.diff(self.columns["delta_cmd"])
        s = np.sign(d[d != 0.0])
        return int(np.count_nonzero(s[1:] != s[:-1]))


def closest_approach(t: np.ndarray, r: np.ndarray) -> tuple[float, float]:
    """Minimum range and its time from sampled ranges.

    A parabola is fitted to ``r**2`` over the three samples around the
    smallest one; ``r**2`` is exactly quadratic in time for straight-line
    relative motion, so the result does not depend on the step size. When
    the smallest sample is the last one the vertex may lie up to one step
    beyond it.
    """
    n = len(r)
    i = int(np.argmin(r))
    if n < 3:
        return float(r[i]), float(t[i])
    j = min(max(i - 1, 0), n - 3)
    tt = t[j:j + 3]
    h = tt[1] - tt[0]
    f0, f1, f2 = (r[j:j + 3] ** 2).tolist()
    a = 0.5 * (f2 - 2.0 * f1 + f0) / (h * h)
    b = (f2 - f0) / (2.0 * h)
    if a <= 0.0:
        return float(r[i]), float(t[i])
    s = -b / (2.0 * a)  # offset from the middle sample
    s = min(max(s, -h), 2.0 * h if j + 3 == n else h)
    r2 = f1 + b * s + a * s * s
    return math.sqrt(max(r2, 0.0)), float(tt[1] + s)


def straight_line_cpa(y: np.ndarray, coeffs: VehicleCoeffs) -> tuple[float, float]:
    """Closest approach ahead of state ``y`` if both vehicles fly straight.

    Used once the range is inside the proximity threshold, where the
    remaining flight time is a fraction of a step.
    """
    px = y[IX["x_t"]] - y[IX["x_m"]]
    pz = y[IX["z_t"]] - y[IX["z_m"]]
    vx = -coeffs.v_t * math.cos(y[IX["gamma_t"]]) - coeffs.v_m * math.cos(y[IX["gamma_m"]])
    vz = coeffs.v_t * math.sin(y[IX["gamma_t"]]) - coeffs.v_m * math.sin(y[IX["gamma_m"]])
    vv = vx * vx + vz * vz
    t_star = max(0.0, -(px * vx + pz * vz) / vv) if vv > 0.0 else 0.0
    return math.hypot(px + vx * t_star, pz + vz * t_star), t_star


def _divergence(y: np.ndarray, coeffs) -> np.ndarray:
    """Per-run reason codes: 0 healthy, 1 non-finite, 2 canard, 3 incidence."""
    code = np.zeros(y.shape[1:], dtype=int)
    # the canard lags a bounded command and cannot legitimately exceed it
    wild_delta = np.abs(y[IX["delta"]]) > 2.0 * coeffs.delta_max
    wild_alpha = np.abs(y[IX["alpha"]]) > 0.5 * math.pi
    finite = np.isfinite(y).all(axis=0)
    if finite.all() and not wild_delta.any() and not wild_alpha.any():
        return code
    code = np.where(wild_alpha, 3, code)
    code = np.where(np.abs(y[IX["delta"]]) > 2.0 * coeffs.delta_max, 2, code)
    code = np.where(~np.all(np.isfinite(y), axis=0), 1, code)
    return code


_DIVERGENCE_REASONS = {1: "non-finite state", 2: "canard deflection outside the actuator "
                       "envelope", 3: "angle of attack beyond 90 deg"}


class Job(NamedTuple):
    """One engagement of a batch: controller mode, plant and maneuver phase."""

    mode: Mode
    plant: VehicleCoeffs
    phase: float


def simulate(scenario: ScenarioConfig, jobs: Sequence[Job],
             aero: Aerodynamics = LINEAR_AERO) -> list[Trace]:
    """Fly a batch of engagements in lockstep and return one trace per job.

    All jobs share the scenario geometry, nominal model and step size; each
    has its own mode, plant coefficients and maneuver phase. A job stops
    recording at its own terminal event; a diverged job gets termination
    ``"diverged"``. Every run's numbers are independent of the rest of the
    batch.
    """
    n = len(jobs)
    if n == 0:
        return []
    nominal = scenario.coeffs
    dt = scenario.integrator.dt
    t_max = scenario.integrator.t_max
    s0 = initial_state(scenario)
    models = build_models(nominal, s0.gamma_m, scenario.geometry.lambda0)
    ctrl = Controller([j.mode for j in jobs], scenario.params, models, dt)
    plant = PlantBatch.stack([j.plant for j in jobs])
    phases = np.array([j.phase for j in jobs], dtype=float)
    maneuver = scenario.maneuver
    base_warnings = list(scenario.warnings())

    y = np.repeat(s0.to_array()[:, None], n, axis=1)
    active = np.ones(n, dtype=bool)
    rows_done = np.zeros(n, dtype=int)
    termination = ["timeout"] * n
    notes: list[list[str]] = [[] for _ in range(n)]
    alpha_flagged = np.zeros(n, dtype=bool)
    records: list[np.ndarray] = []
    ranges: list[np.ndarray] = []
    k = 0
    with np.errstate(all="ignore"):
        while True:
            t = k * dt
            state = EngagementState(*y, t=t)
            geom = geometry(state, nominal)
            ranges.append(geom.r)
            for mask, reason in ((geom.r <= R_EPS, "proximity"),
                                 (geom.v_r >= 0.0, "range-min"),
                                 (np.full(n, t > t_max), "timeout")):
                hit = active & mask
                if hit.any():
                    for i in np.flatnonzero(hit):
                        termination[i] = reason
                    active &= ~mask
            if not active.any():
                break
            a_t_cmd = target_command(t, maneuver, phases)
            out = ctrl.command(state, geom)
            records.append(np.stack((
                np.full(n, t), *y, geom.r, geom.lam, geom.v_r, geom.v_lam, geom.tgo,
                out.sigma, out.sigma_dot, out.beta, out.u_eq, out.u_d,
                out.delta_cmd, a_t_cmd)))
            rows_done[active] += 1
            flag = active & ~alpha_flagged & (np.abs(y[IX["alpha"]]) > ALPHA_GUARD)
            if flag.any():
                for i in np.flatnonzero(flag):
                    notes[i].append(f"|alpha| exceeded {ALPHA_GUARD} rad at t={t:.3f} s")
                alpha_flagged |= flag
            y_next = step(y, t, out.delta_cmd, a_t_cmd, plant, dt, scenario.disturbance, aero)
            y = np.where(active, y_next, y)
            k += 1
            code = np.where(active, _divergence(y, plant), 0)
            if code.any():
                for i in np.flatnonzero(code):
                    termination[i] = "diverged"
                    notes[i].append(f"{_DIVERGENCE_REASONS[int(code[i])]} at t={k * dt:.4f} s")
                active &= code == 0

    rec = np.array(records) if records else np.zeros((0, len(TRACE_COLUMNS), n))
    rng = np.array(ranges)
    times = np.arange(len(ranges)) * dt
    traces = []
    for i, job in enumerate(jobs):
        m = rows_done[i]
        columns = {name: rec[:m, c, i].copy() for c, (name, _) in enumerate(TRACE_COLUMNS)}
        # the terminal sample has a range but no control row
        n_r = m if termination[i] == "diverged" else m + 1
        if termination[i] == "proximity":
            miss, t_cpa = straight_line_cpa(y[:, i], job.plant)
            t_hit = times[m] + t_cpa
        elif n_r:
            miss, t_hit = closest_approach(times[:n_r], rng[:n_r, i])
        else:
            miss, t_hit = math.nan, math.nan
        traces.append(Trace(columns, miss, t_hit, termination[i],
                            base_warnings + notes[i], job.plant))
    return traces


def run_engagement(scenario: ScenarioConfig, mode: Mode | str | None = None,
                   plant: VehicleCoeffs | None = None,
                   aero: Aerodynamics = LINEAR_AERO) -> Trace:
    """Fly one engagement.

    ``plant`` overrides the coefficients of the simulated vehicle and target
    lag; the controller always uses ``scenario.coeffs``. When omitted, the
    plant is drawn from ``scenario.uncertainty`` (nominal if the fraction is 0).
    Raises ``NumericalDivergence``, carrying the partial trace, if the state
    leaves the physical envelope.
    """
    mode = Mode(mode if mode is not None else scenario.mode)
    if plant is None:
        u = scenario.uncertainty
        plant = sample_coeffs(scenario.coeffs, np.random.default_rng(u.seed), u.fraction,
                              u.clip_sigma, u.tau_t_range)
    trace = simulate(scenario, [Job(mode, plant, scenario.maneuver.phase)], aero)[0]
    if trace.termination == "diverged":
        raise NumericalDivergence(trace.warnings[-1], trace)
    return trace


# ---------------------------------------------------------------- campaigns

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def run_seed(seed: int, index: int) -> int:
    """Independent per-run seed derived from the campaign seed and run index."""
    return splitmix64(splitmix64(seed & MASK64) ^ (index & MASK64))


class RunDraw(NamedTuple):
    index: int
    seed: int
    plant: VehicleCoeffs
    phase: float


def draw_run(scenario: ScenarioConfig, seed: int, index: int) -> RunDraw:
    s = run_seed(seed, index)
    rng = np.random.default_rng(s)
    u = scenario.uncertainty
    plant = sample_coeffs(scenario.coeffs, rng, u.fraction, u.clip_sigma, u.tau_t_range)
    phase = float(rng.uniform(0.0, scenario.maneuver.period))
    return RunDraw(index, s, plant, phase)


class RunResult(NamedTuple):
    index: int
    mode: Mode
    miss_distance: float
    intercept_time: float
    termination: str
    zem_overshoot: float
    canard_reversals: int
    beta_integral: float
    diverged: bool


def summarize_run(index: int, mode: Mode, trace: Trace, diverged: bool = False) -> RunResult:
    t = trace["t"]
    beta = trace["beta"]
    beta_int = float(np.sum(beta) * (t[1] - t[0])) if len(t) > 1 else 0.0
    return RunResult(index, mode, trace.miss_distance, trace.intercept_time,
                     trace.termination, trace.terminal_zem_overshoot(),
                     trace.canard_reversals(), beta_int, diverged)


CHUNK_DRAWS = 64  # draws per lockstep batch; fixed so results never depend on workers


def _campaign_task(args) -> list[RunResult]:
    scenario, draws, modes = args
    pairs = [(d, Job(mode, d.plant, d.phase)) for d in draws for mode in modes]
    traces = simulate(scenario, [job for _, job in pairs])
    return [summarize_run(d.index, job.mode, trace, trace.termination == "diverged")
            for (d, job), trace in zip(pairs, traces)]


@dataclass
class ModeStats:
    mode: Mode
    completed: int
    diverged: int
    mean: float
    median: float
    std: float
    max: float
    p50: float
    p90: float
    p95: float
    mean_zem_overshoot: float

    @property
    def completion_rate(self) -> float:
        total = self.completed + self.diverged
        return self.completed / total if total else math.nan


@dataclass
class CampaignStats:
    seed: int
    n: int
    runs: list[RunResult]
    draws: list[RunDraw]
    per_mode: dict[Mode, ModeStats]


def _mode_stats(mode: Mode, runs: Sequence[RunResult]) -> ModeStats:
    ok = [r for r in runs if not r.diverged]
    miss = np.array([r.miss_distance for r in ok])
    over = np.array([r.zem_overshoot for r in ok])
    nan = math.nan
    if len(miss) == 0:
        return ModeStats(mode, 0, len(runs), nan, nan, nan, nan, nan, nan, nan, nan)
    q50, q90, q95 = np.quantile(miss, [0.5, 0.9, 0.95]).tolist()
    # a run whose ZEM never had a valid time-to-go has no overshoot value
    mean_over = float(np.nanmean(over)) if np.isfinite(over).any() else nan
    return ModeStats(mode, len(ok), len(runs) - len(ok), float(miss.mean()),
                     float(np.median(miss)), float(miss.std()), float(miss.max()),
                     q50, q90, q95, mean_over)


def campaign_workers() -> int:
    env = os.environ.get("ZEMTWIST_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def monte_carlo(scenario: ScenarioConfig, n: int, seed: int,
                modes: Iterable[Mode | str] = ALL_MODES,
                workers: int | None = None) -> CampaignStats:
    """Paired campaign: run ``i`` uses the same plant and maneuver phase for every mode."""
    if n < 1:
        raise ValueError("n must be at least 1")
    modes = tuple(Mode(m) for m in modes)
    draws = [draw_run(scenario, seed, i) for i in range(n)]
    tasks = [(scenario, draws[i:i + CHUNK_DRAWS], modes) for i in range(0, n, CHUNK_DRAWS)]
    workers = min(workers or campaign_workers(), len(tasks))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_campaign_task, tasks))
    else:
        chunks = [_campaign_task(task) for task in tasks]
    runs = sorted((r for chunk in chunks for r in chunk),
                  key=lambda r: (r.index, modes.index(r.mode)))
    per_mode = {m: _mode_stats(m, [r for r in runs if r.mode is m]) for m in modes}
    return CampaignStats(seed, n, runs, draws, per_mode)
