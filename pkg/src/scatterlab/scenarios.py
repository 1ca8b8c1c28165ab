"""Scenario configuration, initial-condition sources and the run driver.

A scenario is a YAML mapping::

    kind: delay                  # scatter | delay | calabi | verify
    seed: 7
    workers: 1
    tolerance_profile: default   # fast | default | strict
    system:
      kind: dispersive           # dispersive | tube | poincare-ball
      n: 2                       # tube: number of transverse directions
      dispersion: quadratic      # dispersive only
      confinement: smooth        # tube only
      eps_crit: 1.0e-6
      potential: {centers: [[0.0, 0.0]], radii: [1.0], amplitudes: [0.5]}
    integrator: {rel_tol: 1.0e-11}          # optional overrides of the profile
    initial_conditions:
      inline: [[-3.0, 0.0, 1.0, 0.0]]       # or file: points.csv
                                            # or grid: {energies, impacts, directions, distance}
                                            # or random: {count, energy, impact, distance}
    delay: {r_grid: [2.0, 4.0, 8.0], tol: 1.0e-3}
    scatter: {diagnostics: false, check_horizon: true}
    calabi: {E_grid: [0.8, 1.0, 1.2], dE: 0.05, N: 1000000, level: 7, n_angles: 8}
    verify: {n_points: 200, n_scatter: 10}
    output: {dir: out}

Everything is validated by :func:`load_scenario` before any computation.
"""

from __future__ import annotations

import copy
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import io
from .calabi import ENERGY_SCAN_HEADER, calabi_consistency
from .dynamics import INTEGRATORS, FlowConfig, profile
from .geometry import PhasePoint
from .errors import ConfigurationError, DomainError, ScatterLabError
from .oracles import head_on_delay
from .scattering import record_header, record_row, scatter_batch
from .systems import DispersiveSystem, PoincareBallSystem, TubeSystem, system_from_dict
from .timedelay import SCAN_TOL, delay_scan_batch, scan_header, scan_rows

KINDS = ("scatter", "delay", "calabi", "verify")
TOP_LEVEL = {"kind", "seed", "workers", "tolerance_profile", "system", "integrator",
             "initial_conditions", "delay", "scatter", "calabi", "verify", "output"}
SECTIONS = {
    "delay": {"r_grid": None, "tol": SCAN_TOL},
    "scatter": {"diagnostics": False, "check_horizon": True},
    "calabi": {"E_grid": [0.8, 1.0, 1.2], "dE": 0.05, "N": 1_000_000, "section": "grid", "level": 7,
               "n_angles": 8, "section_samples": 2000, "check_window": True, "xi_method": "conditional"},
    "verify": {"n_points": 200, "n_scatter": 10},
    "output": {"dir": "out"},
}
IC_SOURCES = ("inline", "file", "grid", "random")
EXIT_OK, EXIT_CONFIG, EXIT_BUDGET, EXIT_INVARIANT = 0, 1, 2, 3


@dataclass
class ScenarioConfig:
    """A validated scenario (see the module docstring for the schema)."""

    kind: str
    system: object
    flow: FlowConfig
    seed: int | None
    workers: int
    tolerance_profile: str
    points: list = field(default_factory=list)
    params: dict = field(default_factory=dict)
    out_dir: Path = Path("out")
    resolved: dict = field(default_factory=dict)


def _fail(name, msg):
    raise ConfigurationError(f"{name}: {msg}")


def _as_int(name, v, minimum=None):
    if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
        _fail(name, f"expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        _fail(name, f"must be >= {minimum}")
    return int(v)


def _as_float(name, v, positive=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(name, f"expected a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v) or (positive and not v > 0):
        _fail(name, "must be a finite" + (" positive" if positive else "") + " number")
    return v


def _float_list(name, v, length=None):
    if not isinstance(v, (list, tuple)) or not v:
        _fail(name, "expected a non-empty list of numbers")
    out = [_as_float(f"{name}[{i}]", x) for i, x in enumerate(v)]
    if length is not None and len(out) != length:
        _fail(name, f"expected {length} numbers, got {len(out)}")
    return out


def _section(data, name):
    given = data.get(name) or {}
    if not isinstance(given, dict):
        _fail(name, "expected a mapping")
    extra = set(given) - set(SECTIONS[name])
    if extra:
        _fail(name, f"unknown field(s) {sorted(extra)}")
    merged = dict(SECTIONS[name])
    merged.update(given)
    return merged


# ---------------------------------------------------------------------------
# initial conditions


def _center(system):
    pot = system.potential
    if pot.is_zero:
        return np.zeros(system.n)
    lo, hi = pot.bounding_box()
    return 0.5 * (lo.min(axis=0) + hi.max(axis=0))


def _unit(rng, n):
    u = rng.normal(size=n)
    return u / np.linalg.norm(u)


def _incoming(system, E, u, b_vec, s):
    """Free state with direction ``u``, transverse offset ``b_vec`` and longitudinal offset ``s``."""
    if isinstance(system, DispersiveSystem):
        k = float(system.dispersion.level_momentum(E))
        if not k > 0:
            raise ConfigurationError(f"initial_conditions: energy {E} is below the range of h")
        return PhasePoint(_center(system) + b_vec + s * u, k * u)
    if isinstance(system, PoincareBallSystem):
        # closest approach of a geodesic at Euclidean distance |b_vec| from the origin
        b2 = float(b_vec @ b_vec)
        if b2 >= 1.0:
            raise ConfigurationError("initial_conditions: impact outside the unit ball")
        return PhasePoint(b_vec, math.sqrt(8.0 * E) / (1.0 - b2) * u)
    raise TypeError(system)


def _tube_point(system, E, sign, q_perp, s):
    if not E > 0:
        raise ConfigurationError("initial_conditions: tube energies must be positive")
    q = np.concatenate([[s], q_perp])
    p = np.zeros(system.n)
    p[0] = sign * math.sqrt(2.0 * E)
    return PhasePoint(q, p)


def random_initial_conditions(system, rng, count, energy=(0.5, 2.0), impact=None, distance=3.0) -> list:
    """Random free initial conditions aimed at the support of ``V``.

    Directions are uniform on the sphere, energies uniform in ``energy`` and
    transverse offsets uniform in the ``(n-1)``-ball of radius ``impact``
    (default ``R_V``, at least 1) around the centre of the support. The
    longitudinal offset is uniform in ``[-distance, distance]``. On the
    Poincare ball ``impact`` is a Euclidean radius of closest approach
    (default 0.5) and the point is taken at closest approach. Tube points
    travel along the tube axis with a transverse offset of norm below 0.4.
    """
    lo, hi = energy
    n = system.n
    out = []
    for _ in range(count):
        E = float(rng.uniform(lo, hi))
        if isinstance(system, TubeSystem):
            qp = rng.uniform(-0.4, 0.4, size=n - 1) / math.sqrt(max(n - 1, 1))
            s = float(rng.uniform(-distance, distance))
            out.append(_tube_point(system, E, 1.0 if rng.random() < 0.5 else -1.0, qp, s))
            continue
        u = _unit(rng, n)
        w = rng.normal(size=n)
        w -= (w @ u) * u
        if n > 1:
            w /= np.linalg.norm(w)
        rad = impact if impact is not None else (
            0.5 if isinstance(system, PoincareBallSystem) else max(system.support_radius, 1.0))
        b_vec = (rad * rng.random() ** (1.0 / max(n - 1, 1))) * w if n > 1 else np.zeros(1)
        s = float(rng.uniform(-distance, distance))
        out.append(_incoming(system, E, u, b_vec, s))
    return out


def grid_initial_conditions(system, energies, impacts, directions=1, distance=3.0) -> list:
    """Deterministic grid: every energy x impact x direction.

    Direction ``k`` of ``directions`` is the angle ``2 pi k / directions`` in
    the ``(q1, q2)`` plane and the impact is measured along its left normal;
    ``distance`` is how far before closest approach the point starts. For the
    tube the impact is the offset in the first transverse direction.
    """
    n = system.n
    out = []
    for E in energies:
        for b in impacts:
            for k in range(directions):
                if isinstance(system, TubeSystem):
                    qp = np.zeros(n - 1)
                    qp[0] = b
                    out.append(_tube_point(system, E, 1.0, qp, -distance))
                    continue
                th = 2.0 * math.pi * k / directions
                u = np.zeros(n)
                nrm = np.zeros(n)
                u[0], u[1 % n] = math.cos(th), math.sin(th)
                if n == 1:
                    u[0], nrm[0] = (1.0 if math.cos(th) >= 0 else -1.0), 0.0
                else:
                    nrm[0], nrm[1] = -math.sin(th), math.cos(th)
                out.append(_incoming(system, E, u, b * nrm, -distance))
    return out


def _initial_conditions(data, system, seed):
    src = data.get("initial_conditions")
    if src is None:
        return []
    if not isinstance(src, dict) or len(src) != 1 or next(iter(src)) not in IC_SOURCES:
        _fail("initial_conditions", f"expected exactly one of {list(IC_SOURCES)}")
    (key, val), = src.items()
    name = f"initial_conditions.{key}"
    width = 2 * system.n
    if key == "inline":
        if not isinstance(val, list) or not val:
            _fail(name, "expected a non-empty list of points")
        pts = [_float_list(f"{name}[{i}]", p, width) for i, p in enumerate(val)]
    elif key == "file":
        if not isinstance(val, str):
            _fail(name, "expected a path")
        pts = io.read_points_csv(val, system.n)
        if not pts:
            _fail(name, "file has no rows")
    elif key == "grid":
        if not isinstance(val, dict):
            _fail(name, "expected a mapping")
        extra = set(val) - {"energies", "impacts", "directions", "distance"}
        if extra:
            _fail(name, f"unknown field(s) {sorted(extra)}")
        pts = grid_initial_conditions(system, _float_list(f"{name}.energies", val.get("energies")),
                                      _float_list(f"{name}.impacts", val.get("impacts", [0.0])),
                                      _as_int(f"{name}.directions", val.get("directions", 1), 1),
                                      _as_float(f"{name}.distance", val.get("distance", 3.0)))
    else:
        if not isinstance(val, dict):
            _fail(name, "expected a mapping")
        extra = set(val) - {"count", "energy", "impact", "distance"}
        if extra:
            _fail(name, f"unknown field(s) {sorted(extra)}")
        if seed is None:
            _fail("seed", "a seed is required for random initial conditions")
        energy = _float_list(f"{name}.energy", val.get("energy", [0.5, 2.0]), 2)
        impact = val.get("impact")
        impact = None if impact is None else _as_float(f"{name}.impact", impact, positive=True)
        pts = random_initial_conditions(system, np.random.default_rng(seed),
                                        _as_int(f"{name}.count", val.get("count", 10), 1),
                                        energy, impact, _as_float(f"{name}.distance", val.get("distance", 3.0)))
    pts = [m if isinstance(m, PhasePoint) else PhasePoint.from_y(m) for m in pts]
    for i, m in enumerate(pts):
        try:
            system.check_point(m.q, m.p)
        except ScatterLabError as exc:
            _fail(f"{name}[{i}]", str(exc))
    return pts


# ---------------------------------------------------------------------------
# loading


def parse_scenario(data: dict, kind=None, seed=None, workers=None, tolerance_profile=None,
                   out_dir=None) -> ScenarioConfig:
    """Validate a scenario mapping; keyword arguments override the file."""
    data = copy.deepcopy(data)
    extra = set(data) - TOP_LEVEL
    if extra:
        _fail("config", f"unknown top-level field(s) {sorted(extra)}")
    file_kind = data.get("kind")
    if kind is not None and file_kind is not None and file_kind != kind:
        _fail("kind", f"config is for {file_kind!r} but the {kind!r} subcommand was used")
    kind = kind or file_kind
    if kind not in KINDS:
        _fail("kind", f"expected one of {list(KINDS)}, got {kind!r}")
    if seed is None and data.get("seed") is not None:
        seed = _as_int("seed", data["seed"], 0)
    if workers is None:
        workers = _as_int("workers", data.get("workers", 1), 1)
    workers = _as_int("workers", workers, 1)
    prof = tolerance_profile or data.get("tolerance_profile", "default")
    if prof not in ("fast", "default", "strict"):
        _fail("tolerance_profile", f"expected fast, default or strict, got {prof!r}")
    if "system" not in data:
        _fail("system", "required")
    try:
        system = system_from_dict(data["system"])
    except ConfigurationError as exc:
        msg = str(exc)
        raise ConfigurationError(msg if msg.startswith("system") else f"system: {msg}") from None
    except (TypeError, ValueError, KeyError) as exc:
        _fail("system", str(exc))

    over = data.get("integrator") or {}
    if not isinstance(over, dict):
        _fail("integrator", "expected a mapping")
    allowed = {"integrator", "step", "rel_tol", "abs_tol", "max_time", "event_tol"}
    if set(over) - allowed:
        _fail("integrator", f"unknown field(s) {sorted(set(over) - allowed)}")
    if "integrator" in over and over["integrator"] not in INTEGRATORS:
        _fail("integrator.integrator", f"expected one of {list(INTEGRATORS)}")
    for key in allowed - {"integrator"}:
        if key in over:
            _as_float(f"integrator.{key}", over[key], positive=True)
    flow = profile(prof, system)
    if over:
        tuned = replace(flow, **{k: (v if k == "integrator" else float(v)) for k, v in over.items()})
        flow = tuned if tuned == flow else replace(tuned, profile="custom")
    try:
        flow = flow.validate(system)
    except ConfigurationError as exc:
        _fail("integrator", str(exc))

    params = {k: _section(data, k) for k in ("delay", "scatter", "calabi", "verify")}
    output = _section(data, "output")
    if out_dir is not None:
        output["dir"] = str(out_dir)
    if not isinstance(output["dir"], str):
        _fail("output.dir", "expected a path")

    points = _initial_conditions(data, system, seed)
    if kind in ("scatter", "delay") and not points:
        _fail("initial_conditions", f"required for {kind} runs")
    if kind in ("calabi", "verify") and seed is None:
        _fail("seed", f"required for {kind} runs")

    d = params["delay"]
    if d["r_grid"] is not None:
        r = _float_list("delay.r_grid", d["r_grid"])
        if any(b <= a for a, b in zip(r, r[1:])) or len(r) < 2:
            _fail("delay.r_grid", "must be strictly increasing with at least two radii")
        if not r[0] > system.support_radius:
            _fail("delay.r_grid", f"all radii must exceed R_V = {system.support_radius!r}")
        d["r_grid"] = r
    d["tol"] = _as_float("delay.tol", d["tol"], positive=True)
    for key in ("diagnostics", "check_horizon"):
        if not isinstance(params["scatter"][key], bool):
            _fail(f"scatter.{key}", "expected true or false")
    c = params["calabi"]
    if kind == "calabi":
        if not isinstance(system, (DispersiveSystem, PoincareBallSystem)) or system.n < 2:
            _fail("system", "calabi runs need a dispersive or Poincare-ball system with n >= 2")
        c["E_grid"] = _float_list("calabi.E_grid", c["E_grid"])
        c["dE"] = _as_float("calabi.dE", c["dE"], positive=True)
        c["N"] = _as_int("calabi.N", c["N"], 1)
        c["level"] = _as_int("calabi.level", c["level"], 1)
        c["n_angles"] = _as_int("calabi.n_angles", c["n_angles"], 1)
        c["section_samples"] = _as_int("calabi.section_samples", c["section_samples"], 1)
        if c["section"] not in ("grid", "mc"):
            _fail("calabi.section", "expected grid or mc")
        if c["xi_method"] not in ("conditional", "phase-space"):
            _fail("calabi.xi_method", "expected conditional or phase-space")
        if not isinstance(c["check_window"], bool):
            _fail("calabi.check_window", "expected true or false")
        E = sorted(c["E_grid"])
        if len(E) > 1 and c["dE"] >= 0.5 * min(b - a for a, b in zip(E, E[1:])):
            _fail("calabi.dE", "must be below half the grid spacing")
    v = params["verify"]
    v["n_points"] = _as_int("verify.n_points", v["n_points"], 1)
    v["n_scatter"] = _as_int("verify.n_scatter", v["n_scatter"], 1)

    resolved = {"kind": kind, "seed": seed, "workers": workers, "tolerance_profile": prof,
                "system": system.to_dict(), "integrator": {k: v for k, v in flow.to_dict().items() if k != "profile"},
                "initial_conditions": {"inline": [[float(x) for x in m.y] for m in points]},
                kind: params[kind] if kind in params else {}, "output": output}
    if not points:
        del resolved["initial_conditions"]
    return ScenarioConfig(kind, system, flow, seed, workers, prof, points, params[kind] if kind in params else {},
                          Path(output["dir"]), resolved)


def load_scenario(path, **overrides) -> ScenarioConfig:
    return parse_scenario(io.load_yaml(path), **overrides)


def resolved_hash(cfg: ScenarioConfig) -> str:
    """Hash of the resolved configuration, excluding the worker count and output directory."""
    body = {k: v for k, v in cfg.resolved.items() if k not in ("workers", "output")}
    return io.config_hash(body)


# ---------------------------------------------------------------------------
# runners


def head_on_oracle(system, y) -> float:
    """1D quadrature delay for a line through the centre of a single bump, else nan."""
    if not isinstance(system, DispersiveSystem) or len(system.potential.radii) != 1:
        return math.nan
    if system.dispersion.name not in ("quadratic", "relativistic"):
        return math.nan
    n = system.n
    q, p = np.asarray(y[:n]), np.asarray(y[n:])
    u = p / np.linalg.norm(p)
    c = system.potential.centers[0]
    rel = q - c
    if np.linalg.norm(rel - (rel @ u) * u) > 1e-12:
        return math.nan
    E = float(system.H0(q, p))
    try:
        return head_on_delay(E, float(system.potential.amplitudes[0]), float(system.potential.radii[0]),
                             system.dispersion.name)
    except ValueError:
        return math.nan


def _run_scatter(cfg, out):
    from .verify import BUDGETS
    p = cfg.params
    recs = scatter_batch(cfg.system, cfg.points, cfg.flow, cfg.workers, diagnostics=p["diagnostics"],
                         check_horizon=p["check_horizon"])
    n = cfg.system.n
    io.write_csv(out / "scatter.csv", record_header(n), [record_row(i, r, n) for i, r in enumerate(recs)])
    io.write_json(out / "scatter.json", [_record_json(i, r) for i, r in enumerate(recs)])
    bud = BUDGETS[cfg.tolerance_profile]
    limits = {"energy": bud["energy"], "energy_in": bud["energy"], "intertwining": bud["algebra"],
              "commutation": bud["algebra"], "symplectic_defect": bud["symplectic"]}
    bad = [i for i, r in enumerate(recs) if not r.ok
           or any(r.residuals.get(k, 0.0) >= v for k, v in limits.items())]
    summary = {"points": len(recs), "ok": sum(r.ok for r in recs), "flagged": bad}
    return (EXIT_BUDGET if bad else EXIT_OK), summary


def _record_json(i, r):
    return {"index": i, "status": r.status, "message": r.message, "m_minus": r.m_minus.y,
            "m_plus": None if r.m_plus is None else r.m_plus.y, "T": r.T, "t_entry": r.t_entry,
            "t_exit": r.t_exit, "t_star": r.t_star, "residuals": dict(sorted(r.residuals.items()))}


def _run_delay(cfg, out):
    p = cfg.params
    scans = delay_scan_batch(cfg.system, cfg.points, p["r_grid"], cfg.flow, cfg.workers, p["tol"])
    header = scan_header(cfg.system.n) + ["tau_oracle"]
    rows = []
    for s in scans:
        orc = head_on_oracle(cfg.system, s.m_minus.y)
        rows.extend(row + [orc] for row in scan_rows(s))
    io.write_csv(out / "delay.csv", header, rows)
    objs = [{"index": i, "status": s.status, "message": s.message, "m_minus": s.m_minus.y,
             "m_plus": None if s.m_plus is None else s.m_plus.y, "r_grid": s.r_grid, "tau_sym": s.tau_sym,
             "tau_in": s.tau_in, "tau_free": s.tau_free, "tau_limit": s.tau_limit, "converged": s.converged,
             "convergence_r": s.convergence_r, "monotone": s.monotone, "tau_sym_limit": s.tau_sym_lim,
             "tau_in_limit": s.tau_in_lim, "tau_in_converged": s.in_converged,
             "velocity_change": s.velocity_change, "tau_oracle": head_on_oracle(cfg.system, s.m_minus.y),
             "report": s.report()} for i, s in enumerate(scans)]
    io.write_json(out / "delay.json", objs)
    bad = [i for i, s in enumerate(scans) if s.status != "ok" or not s.converged]
    return (EXIT_BUDGET if bad else EXIT_OK), {"points": len(scans), "not_converged": bad,
                                                "reports": [s.report() for s in scans]}


def _run_calabi(cfg, out):
    c = cfg.params
    try:
        res = calabi_consistency(cfg.system, c["E_grid"], c["dE"], c["N"], cfg.seed, cfg.flow, cfg.workers,
                                 section=c["section"], level=c["level"], n_angles=c["n_angles"],
                                 section_samples=c["section_samples"], check_window=c["check_window"],
                                 xi_method=c["xi_method"])
    except DomainError as exc:
        raise ConfigurationError(f"calabi.E_grid: {exc}") from None
    header = ENERGY_SCAN_HEADER + ["combined_err", "xi_derivative", "xi_derivative_err", "n_failed"]
    rows = [row + [float(res.combined_err[i]), float(res.xi_derivative[i]),
                   float(res.xi_derivative_err[i]), int(res.n_failed[i])]
            for i, row in enumerate(res.rows())]
    io.write_csv(out / "calabi.csv", header, rows)
    io.write_json(out / "calabi.json", [dict(zip(header, r)) for r in rows])
    agree = [bool(a) for a in res.agreement]
    return (EXIT_OK if all(agree) else EXIT_BUDGET), {"agreement": agree}


def _run_verify(cfg, out):
    from .verify import run_suite
    v = cfg.params
    checks = run_suite(cfg.system, cfg.flow, v["n_points"], v["n_scatter"], cfg.seed,
                       profile_name=cfg.tolerance_profile)
    io.write_csv(out / "verify.csv", ["check", "value", "budget", "passed"],
                 [[c.name, c.value, c.budget, int(c.passed)] for c in checks])
    io.write_json(out / "verify.json", [c.__dict__ for c in checks])
    lines = [c.line() for c in checks]
    return (EXIT_OK if all(c.passed for c in checks) else EXIT_INVARIANT), {"checks": lines}


RUNNERS = {"scatter": _run_scatter, "delay": _run_delay, "calabi": _run_calabi, "verify": _run_verify}


def run_scenario(cfg: ScenarioConfig) -> tuple:
    """Run a validated scenario; returns ``(exit_code, summary)`` and writes its artifacts.

    Artifacts in ``cfg.out_dir``: ``<kind>.csv``, ``<kind>.json``, the
    resolved ``config.yaml`` and ``manifest.json``.
    """
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    t0 = time.perf_counter()
    io.dump_yaml(cfg.resolved, out / "config.yaml")
    code, summary = RUNNERS[cfg.kind](cfg, out)
    wall = time.perf_counter() - t0
    files = sorted(f.name for f in out.iterdir() if f.name.startswith(cfg.kind + ".") or f.name == "config.yaml")
    manifest = {"kind": cfg.kind, "config_hash": resolved_hash(cfg), "seed": cfg.seed, "workers": cfg.workers,
                "tolerance_profile": cfg.tolerance_profile, "versions": io.versions(),
                "wall_time_s": wall, "started_unix": started, "exit_code": code,
                "outputs": {f: io.file_hash(out / f) for f in files}, "summary": summary}
    io.write_json(out / "manifest.json", manifest)
    return code, summary
