"""Command-line front end: scenario files, single runs, comparisons, campaigns.

Scenario files are JSON. SI quantities use plain keys (``dt`` in s, ``r0`` in
m, ``v_m`` in m/s); quantities quoted in degrees or g's carry the unit in the
key (``delta_max_deg``, ``delta_rate_max_deg_s``, ``amplitude_g``). Each of
those also has an SI spelling (``_rad``, ``_rad_s``, ``_mps2``), which the
emitter uses only when the converted value would not reproduce the internal
float exactly. Unknown keys are rejected.

Outputs are CSV files with a ``#`` header block (manifest hash, units) and a
``manifest.json`` per output directory. Exit codes: 0 success, 1 configuration
error, 2 numerical divergence.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .control import AtsmcParams, DiagnosticBounds, Mode
from .dynamics import G0, ConfigurationError, PitchDisturbance, VehicleCoeffs
from .sim import (ALL_MODES, SAMPLED_COEFFS, Geometry, Integrator, Job, Maneuver,
                  NumericalDivergence, ScenarioConfig, Trace, TRACE_COLUMNS, Uncertainty,
                  monte_carlo, run_engagement, sample_coeffs, simulate)

log = logging.getLogger("zemtwist")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2


class ScenarioError(ValueError):
    """Unreadable or invalid scenario file; ``fields`` names the offenders."""

    def __init__(self, message: str, fields: list[str] | None = None):
        super().__init__(message)
        self.fields = fields or []


# ------------------------------------------------------------------ schema

class Unit:
    """Boundary unit of a field: file value times ``scale`` is the SI value."""

    def __init__(self, suffix: str, scale: float, si_suffix: str):
        self.suffix = suffix
        self.scale = scale
        self.si_suffix = si_suffix

    def to_si(self, v: float) -> float:
        return v * self.scale

    def from_si(self, x: float) -> float | None:
        """File value that converts back to ``x`` exactly, if one exists."""
        guess = x / self.scale
        for cand in (round(guess, 12), guess):
            if self.to_si(cand) == x:
                return cand
        lo = hi = guess
        for _ in range(8):
            lo, hi = math.nextafter(lo, -math.inf), math.nextafter(hi, math.inf)
            for cand in (lo, hi):
                if self.to_si(cand) == x:
                    return cand
        return None


DEG = Unit("_deg", math.pi / 180.0, "_rad")
DEG_S = Unit("_deg_s", math.pi / 180.0, "_rad_s")
GEE = Unit("_g", G0, "_mps2")

# (section, dataclass, {field: unit or None}); field order is the file order
SECTIONS: list[tuple[str, type, dict[str, Unit | None]]] = [
    ("geometry", Geometry, {"r0": None, "lambda0": DEG, "heading_error": DEG,
                            "gamma_t0": DEG}),
    ("vehicle", VehicleCoeffs, {
        "v_m": None, "v_t": None, "l_alpha": None, "l_delta": None, "m_alpha": None,
        "m_q": None, "m_delta": None, "tau_s": None, "tau_t": None, "tau_m": None,
        "a_m_max": GEE, "a_t_max": GEE, "delta_max": DEG, "delta_rate_max": DEG_S}),
    ("controller", AtsmcParams, {f.name: None for f in dataclasses.fields(AtsmcParams)}),
    ("maneuver", Maneuver, {"period": None, "phase": None, "amplitude": GEE}),
    ("uncertainty", Uncertainty, {"fraction": None, "clip_sigma": None,
                                  "tau_t_range": None, "seed": None}),
    ("integrator", Integrator, {"dt": None, "t_max": None}),
    ("disturbance", PitchDisturbance, {"delta_q": None, "delta_a": None,
                                       "delta_q_bound": None, "delta_a_bound": None}),
    ("diagnostic_bounds", DiagnosticBounds, {"da_tnc": None, "da_tn_tau": None,
                                             "delta_i": None}),
]
SCENARIO_ATTR = {"geometry": "geometry", "vehicle": "coeffs", "controller": "params",
                 "maneuver": "maneuver", "uncertainty": "uncertainty",
                 "integrator": "integrator", "disturbance": "disturbance",
                 "diagnostic_bounds": "bounds"}
INT_FIELDS = {"seed"}
NULLABLE_INF = {"delta_q_bound", "delta_a_bound"}


def _number(section: str, key: str, v: Any) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"{section}.{key}: expected a number, got {v!r}",
                            [f"{section}.{key}"])
    return float(v)


def _parse_section(section: str, cls: type, units: dict[str, Unit | None],
                   data: Any) -> Any:
    if not isinstance(data, dict):
        raise ScenarioError(f"{section}: expected an object", [section])
    accepted: dict[str, tuple[str, Callable[[float], float]]] = {}
    for name, unit in units.items():
        if unit is None:
            accepted[name] = (name, lambda v: v)
        else:
            accepted[name + unit.suffix] = (name, unit.to_si)
            accepted[name + unit.si_suffix] = (name, lambda v: v)
    unknown = sorted(set(data) - set(accepted))
    if unknown:
        names = [f"{section}.{k}" for k in unknown]
        raise ScenarioError(f"unknown keys: {', '.join(names)}", names)
    values: dict[str, Any] = {}
    for key, raw in data.items():
        name, conv = accepted[key]
        if name in values:
            raise ScenarioError(f"{section}.{name} given in two units",
                                [f"{section}.{name}"])
        if name in INT_FIELDS:
            if isinstance(raw, bool) or not isinstance(raw, int) or raw < 0:
                raise ScenarioError(f"{section}.{key}: expected a non-negative integer",
                                    [f"{section}.{key}"])
            values[name] = raw
        elif name == "tau_t_range":
            if not (isinstance(raw, list) and len(raw) == 2):
                raise ScenarioError(f"{section}.{key}: expected [low, high]",
                                    [f"{section}.{key}"])
            values[name] = tuple(_number(section, key, v) for v in raw)
        elif name in NULLABLE_INF and raw is None:
            values[name] = math.inf
        else:
            values[name] = conv(_number(section, key, raw))
    try:
        return cls(**values)
    except ConfigurationError as exc:
        raise ScenarioError(f"{section}: {exc}", [section]) from exc


def scenario_from_dict(data: Any) -> ScenarioConfig:
    """Build and validate a scenario; missing fields take their defaults."""
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a JSON object")
    known = {name for name, _, _ in SECTIONS} | {"mode"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ScenarioError(f"unknown keys: {', '.join(unknown)}", unknown)
    kwargs: dict[str, Any] = {}
    for section, cls, units in SECTIONS:
        if section in data:
            kwargs[SCENARIO_ATTR[section]] = _parse_section(section, cls, units,
                                                            data[section])
    if "mode" in data:
        try:
            kwargs["mode"] = Mode(data["mode"])
        except ValueError as exc:
            raise ScenarioError(f"mode: unknown controller {data['mode']!r}",
                                ["mode"]) from exc
    scenario = ScenarioConfig(**kwargs)
    bad = scenario.validate()
    if bad:
        raise ScenarioError(f"invalid fields: {', '.join(bad)}", bad)
    return scenario


def scenario_to_dict(scenario: ScenarioConfig) -> dict[str, Any]:
    """Every field of ``scenario`` in file units; inverse of ``scenario_from_dict``."""
    out: dict[str, Any] = {"mode": scenario.mode.value}
    for section, _, units in SECTIONS:
        obj = getattr(scenario, SCENARIO_ATTR[section])
        block: dict[str, Any] = {}
        for name, unit in units.items():
            v = getattr(obj, name)
            if callable(v):
                raise ScenarioError(f"{section}.{name} is a function and cannot be written")
            if name == "tau_t_range":
                block[name] = [float(x) for x in v]
            elif name in INT_FIELDS:
                block[name] = int(v)
            elif name in NULLABLE_INF and math.isinf(v):
                block[name] = None
            elif unit is None:
                block[name] = float(v)
            else:
                fv = unit.from_si(float(v))
                if fv is None:
                    block[name + unit.si_suffix] = float(v)
                else:
                    block[name + unit.suffix] = fv
        out[section] = block
    return out


def emit_scenario(scenario: ScenarioConfig) -> str:
    return json.dumps(scenario_to_dict(scenario), indent=2) + "\n"


def parse_scenario(path: str | Path | None) -> ScenarioConfig:
    """Read a scenario file; ``None`` gives the default scenario."""
    if path is None:
        return scenario_from_dict({})
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: not valid JSON ({exc})") from exc
    return scenario_from_dict(data)


# ------------------------------------------------------------------ outputs

def _fmt(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def manifest_hash(manifest: dict[str, Any]) -> str:
    """SHA-256 of the reproducible part of a manifest (no timing, no paths)."""
    text = json.dumps(manifest["inputs"], sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def make_manifest(command: str, scenario: ScenarioConfig, seed: int,
                  modes: list[Mode], extra: dict[str, Any] | None = None) -> dict[str, Any]:
    inputs = {"schema_version": SCHEMA_VERSION, "tool_version": __version__,
              "command": command, "seed": seed, "modes": [m.value for m in modes],
              "scenario": scenario_to_dict(scenario)}
    inputs.update(extra or {})
    return {"inputs": inputs, "outputs": [], "wall_clock_s": None}


def write_table(path: Path, header: list[str], units: list[str], rows, digest: str,
                meta: dict[str, Any] | None = None) -> None:
    buf = io.StringIO()
    buf.write(f"# manifest_sha256: {digest}\n")
    for k, v in (meta or {}).items():
        buf.write(f"# {k}: {_fmt(v)}\n")
    buf.write("# units: " + ",".join(units) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())


def write_trace(path: Path, trace: Trace, mode: Mode, digest: str) -> None:
    names = [name for name, _ in TRACE_COLUMNS]
    units = [unit for _, unit in TRACE_COLUMNS]
    cols = np.column_stack([trace[name] for name in names]) if len(trace) else np.zeros((0, 0))
    meta = {"mode": mode.value, "termination": trace.termination,
            "miss_distance_m": trace.miss_distance, "intercept_time_s": trace.intercept_time}
    write_table(path, names, units, cols.tolist(), digest, meta)


def finish_manifest(out: Path, manifest: dict[str, Any], files: list[Path],
                    start: float) -> None:
    manifest["outputs"] = [p.name for p in files]
    manifest["manifest_sha256"] = manifest_hash(manifest)
    manifest["wall_clock_s"] = round(time.perf_counter() - start, 3)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


COMPARE_COLUMNS = (("mode", "-"), ("termination", "-"), ("miss_distance", "m"),
                   ("intercept_time", "s"), ("terminal_zem_overshoot", "m"),
                   ("canard_reversals", "count"), ("max_abs_delta", "rad"))


def summary_row(mode: Mode, trace: Trace) -> list[Any]:
    max_delta = float(np.max(np.abs(trace["delta"]))) if len(trace) else math.nan
    return [mode.value, trace.termination, trace.miss_distance, trace.intercept_time,
            trace.terminal_zem_overshoot(), trace.canard_reversals(), max_delta]


# ------------------------------------------------------------------ commands

def _resolve(args) -> ScenarioConfig:
    scenario = parse_scenario(args.scenario)
    changes: dict[str, Any] = {}
    if getattr(args, "dt", None) is not None:
        changes["integrator"] = dataclasses.replace(scenario.integrator, dt=args.dt)
    if getattr(args, "mode", None) is not None:
        changes["mode"] = Mode(args.mode)
    if changes:
        scenario = dataclasses.replace(scenario, **changes)
        bad = scenario.validate()
        if bad:
            raise ScenarioError(f"invalid fields: {', '.join(bad)}", bad)
    for w in scenario.warnings():
        log.warning(w)
    return scenario


def _seed(args, scenario: ScenarioConfig) -> int:
    return scenario.uncertainty.seed if args.seed is None else args.seed


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _plant(scenario: ScenarioConfig, seed: int) -> VehicleCoeffs:
    u = scenario.uncertainty
    return sample_coeffs(scenario.coeffs, np.random.default_rng(seed), u.fraction,
                         u.clip_sigma, u.tau_t_range)


def cmd_run(args) -> int:
    start = time.perf_counter()
    scenario = _resolve(args)
    seed = _seed(args, scenario)
    mode = scenario.mode
    out = _out_dir(args)
    manifest = make_manifest("run", scenario, seed, [mode])
    digest = manifest_hash(manifest)
    code = EXIT_OK
    try:
        trace = run_engagement(scenario, mode, _plant(scenario, seed))
    except NumericalDivergence as exc:
        log.error("numerical divergence: %s", exc)
        trace, code = exc.trace, EXIT_DIVERGED
    path = out / f"trace_{mode.value}.csv"
    write_trace(path, trace, mode, digest)
    finish_manifest(out, manifest, [path], start)
    for w in trace.warnings:
        if w not in scenario.warnings():
            log.warning(w)
    if len(trace):
        t = trace["t"]
        final = t >= t[-1] - 0.5
        print(f"mode                 {mode.value}")
        print(f"termination          {trace.termination}")
        print(f"miss distance        {trace.miss_distance:.4f} m")
        print(f"intercept time       {trace.intercept_time:.4f} s")
        print(f"max |delta|          {math.degrees(np.max(np.abs(trace['delta']))):.3f} deg")
        print(f"terminal sigma       {trace['zem'][-1]:.4f} m")
        print(f"max |sigma| last 0.5 s {np.max(np.abs(trace['zem'][final])):.4f} m")
    return code


def cmd_compare(args) -> int:
    start = time.perf_counter()
    scenario = _resolve(args)
    seed = _seed(args, scenario)
    out = _out_dir(args)
    modes = list(ALL_MODES)
    manifest = make_manifest("compare", scenario, seed, modes)
    digest = manifest_hash(manifest)
    plant = _plant(scenario, seed)
    traces = simulate(scenario, [Job(m, plant, scenario.maneuver.phase) for m in modes])
    files = []
    for mode, trace in zip(modes, traces):
        path = out / f"trace_{mode.value}.csv"
        write_trace(path, trace, mode, digest)
        files.append(path)
    rows = [summary_row(m, tr) for m, tr in zip(modes, traces)]
    path = out / "summary.csv"
    write_table(path, [c for c, _ in COMPARE_COLUMNS], [u for _, u in COMPARE_COLUMNS],
                rows, digest)
    files.append(path)
    finish_manifest(out, manifest, files, start)
    print(f"{'mode':6} {'end':10} {'miss m':>10} {'zem ovs m':>10} {'reversals':>9}")
    for r in rows:
        print(f"{r[0]:6} {r[1]:10} {r[2]:10.4f} {r[4]:10.4f} {r[5]:9d}")
    diverged = [m.value for m, tr in zip(modes, traces) if tr.termination == "diverged"]
    if diverged:
        log.error("numerical divergence in: %s", ", ".join(diverged))
        return EXIT_DIVERGED
    return EXIT_OK


RUN_COLUMNS = (("index", "-"), ("mode", "-"), ("termination", "-"), ("diverged", "bool"),
               ("miss_distance", "m"), ("intercept_time", "s"),
               ("terminal_zem_overshoot", "m"), ("canard_reversals", "count"),
               ("beta_integral", "s"))
STATS_COLUMNS = (("mode", "-"), ("completed", "count"), ("diverged", "count"),
                 ("completion_rate", "-"), ("mean", "m"), ("median", "m"), ("std", "m"),
                 ("max", "m"), ("p50", "m"), ("p90", "m"), ("p95", "m"),
                 ("mean_zem_overshoot", "m"))
COEFF_UNITS = {"l_alpha": "m/s^2/rad", "l_delta": "m/s^2/rad", "m_alpha": "1/s^2",
               "m_q": "1/s", "m_delta": "1/s^2", "tau_t": "s"}


def cmd_montecarlo(args) -> int:
    start = time.perf_counter()
    scenario = _resolve(args)
    if args.n < 1:
        raise ScenarioError("--n must be at least 1", ["n"])
    seed = _seed(args, scenario)
    out = _out_dir(args)
    modes = list(ALL_MODES)
    manifest = make_manifest("montecarlo", scenario, seed, modes, {"n": args.n})
    digest = manifest_hash(manifest)
    stats = monte_carlo(scenario, args.n, seed, modes)

    files = [out / "runs.csv", out / "stats.csv", out / "coefficients.csv"]
    write_table(files[0], [c for c, _ in RUN_COLUMNS], [u for _, u in RUN_COLUMNS],
                ([r.index, r.mode.value, r.termination, r.diverged, r.miss_distance,
                  r.intercept_time, r.zem_overshoot, r.canard_reversals, r.beta_integral]
                 for r in stats.runs), digest, {"seed": seed, "n": args.n})
    stat_rows = []
    for m in modes:
        s = stats.per_mode[m]
        stat_rows.append([m.value, s.completed, s.diverged, s.completion_rate, s.mean,
                          s.median, s.std, s.max, s.p50, s.p90, s.p95,
                          s.mean_zem_overshoot])
    write_table(files[1], [c for c, _ in STATS_COLUMNS], [u for _, u in STATS_COLUMNS],
                stat_rows, digest, {"seed": seed, "n": args.n})
    names = [*SAMPLED_COEFFS, "tau_t"]
    write_table(files[2], ["index", "seed", "phase", *names],
                ["-", "-", "s", *(COEFF_UNITS[k] for k in names)],
                ([d.index, d.seed, d.phase, *(getattr(d.plant, k) for k in names)]
                 for d in stats.draws), digest, {"seed": seed, "n": args.n})
    finish_manifest(out, manifest, files, start)
    print(f"{'mode':6} {'done':>5} {'div':>4} {'mean m':>9} {'median m':>9} "
          f"{'p90 m':>9} {'zem ovs m':>10}")
    for r in stat_rows:
        print(f"{r[0]:6} {r[1]:5d} {r[2]:4d} {r[4]:9.3f} {r[5]:9.3f} {r[9]:9.3f} {r[11]:10.3f}")
    return EXIT_OK


def cmd_validate(args) -> int:
    scenario = _resolve(args)
    sys.stdout.write(emit_scenario(scenario))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zemtwist", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--scenario", help="JSON scenario file (defaults if omitted)")
        sp.add_argument("--dt", type=float, help="integration step override, s")
        sp.add_argument("--seed", type=int, help="uncertainty seed override")
        if out:
            sp.add_argument("--out", default="out", help="output directory")

    sp = sub.add_parser("run", help="fly one engagement and write its trace")
    common(sp)
    sp.add_argument("--mode", choices=[m.value for m in Mode])
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("compare", help="fly SMC, TSMC and ATSMC on the same plant")
    common(sp)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("montecarlo", help="paired Monte Carlo campaign")
    common(sp)
    sp.add_argument("--n", type=int, default=100, help="number of runs")
    sp.set_defaults(func=cmd_montecarlo)

    sp = sub.add_parser("validate", help="check a scenario and print it fully resolved")
    common(sp, out=False)
    sp.add_argument("--mode", choices=[m.value for m in Mode])
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s",
                        stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
