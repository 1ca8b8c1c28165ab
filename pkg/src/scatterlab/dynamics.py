"""Time evolution of the free and perturbed flows.

Three integrators are available: Stormer-Verlet (kick-drift-kick, for
separable Hamiltonians), implicit midpoint (also restricted to separable
systems, as its fixed step offers no error control) and an adaptive
Dormand-Prince 8(5,3) method with dense output (scipy's ``DOP853``).

Every integrator is exposed as a stream of steps; the public functions
``free_flow``, ``full_flow``, ``trajectory`` and ``integrate_until`` consume it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Optional

import numpy as np
from scipy.integrate import DOP853

from .errors import ConfigurationError, IntegrationError, MaxTimeExceeded
from .geometry import PhasePoint

INTEGRATORS = ("stormer-verlet", "implicit-midpoint", "adaptive-rk")

#: bisection tolerance (time units) for event location
EVENT_TOL = 1e-10


@dataclass(frozen=True)
class FlowConfig:
    """Integrator settings.

    Parameters
    ----------
    integrator : {"stormer-verlet", "implicit-midpoint", "adaptive-rk"}
    step : float
        Nominal step of the fixed-step methods.
    rel_tol, abs_tol : float
        Local error tolerances of the adaptive method.
    max_time : float
        Largest admissible ``|t|`` for one integration.
    event_tol : float
        Bisection tolerance for ``integrate_until``.
    """

    integrator: str = "stormer-verlet"
    step: float = 2e-3
    rel_tol: float = 1e-10
    abs_tol: float = 1e-10
    max_time: float = 1e4
    event_tol: float = EVENT_TOL
    profile: str = "custom"

    def __post_init__(self):
        if self.integrator not in INTEGRATORS:
            raise ConfigurationError(f"unknown integrator {self.integrator!r}")
        for name in ("step", "rel_tol", "abs_tol", "max_time", "event_tol"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"FlowConfig.{name} must be positive")

    @property
    def fixed_step(self) -> bool:
        return self.integrator != "adaptive-rk"

    def validate(self, system) -> "FlowConfig":
        if self.fixed_step and not system.separable:
            raise ConfigurationError(f"{self.integrator} needs a separable Hamiltonian; "
                                     f"{system.kind} systems require adaptive-rk")
        return self

    @property
    def tolerance(self) -> float:
        """Representative accuracy, used to scale residual budgets."""
        return self.step ** 2 if self.fixed_step else max(self.rel_tol, self.abs_tol)

    def to_dict(self) -> dict:
        return {"integrator": self.integrator, "step": self.step, "rel_tol": self.rel_tol,
                "abs_tol": self.abs_tol, "max_time": self.max_time, "event_tol": self.event_tol,
                "profile": self.profile}


# profile -> (fixed step for separable systems or None, adaptive tolerance)
PROFILES = {
    "fast": (1e-2, 1e-8),
    "default": (2e-3, 1e-10),
    "strict": (None, 1e-12),
}


def profile(name: str, system=None, max_time: float = 1e4) -> FlowConfig:
    """Flow configuration of a named tolerance profile.

    Separable systems get Stormer-Verlet under ``fast`` and ``default``;
    ``strict`` and every non-separable system use the adaptive method.
    """
    if name not in PROFILES:
        raise ConfigurationError(f"unknown tolerance profile {name!r}")
    step, tol = PROFILES[name]
    if step is not None and (system is None or system.separable):
        return FlowConfig("stormer-verlet", step=step, rel_tol=tol, abs_tol=tol,
                          max_time=max_time, profile=name)
    return FlowConfig("adaptive-rk", step=step or 1e-3, rel_tol=tol, abs_tol=tol,
                      max_time=max_time, profile=name)


def resolve_config(system, cfg) -> FlowConfig:
    """Accept a FlowConfig, a profile name or ``None`` (the default profile)."""
    if cfg is None:
        cfg = "default"
    if isinstance(cfg, str):
        cfg = profile(cfg, system)
    return cfg.validate(system)


@dataclass
class Trajectory:
    """Realised curve ``t -> m_t`` with its energy drift."""

    samples: list
    energy_drift: float
    steps_taken: int
    perturbed: bool = True

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.samples])

    @property
    def states(self) -> np.ndarray:
        return np.array([m.y for _, m in self.samples])

    @property
    def final(self) -> PhasePoint:
        return self.samples[-1][1]

    def to_csv(self, path, system):
        """Write ``t,q1..qn,p1..pn,H,H0`` rows."""
        n = system.n
        header = ["t"] + [f"q{i + 1}" for i in range(n)] + [f"p{i + 1}" for i in range(n)] + ["H", "H0"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for t, m in self.samples:
                w.writerow([repr(float(t))] + [repr(float(x)) for x in m.y]
                           + [repr(float(system.H(m.q, m.p))), repr(float(system.H0(m.q, m.p)))])


# ---------------------------------------------------------------------------
# steppers


@dataclass
class _Step:
    t0: float
    y0: np.ndarray
    t1: float
    y1: np.ndarray
    interp: Callable[[float], np.ndarray]
    fixed: bool = False


def _verlet(system, q, p, dt, perturbed):
    p = p - 0.5 * dt * system.potential_grad(q, perturbed)
    q = q + dt * system.kinetic_grad(p)
    p = p - 0.5 * dt * system.potential_grad(q, perturbed)
    return q, p


def _midpoint(system, y, dt, perturbed, tol=1e-15, max_iter=200):
    f = lambda z: system.rhs(z, perturbed)
    k = f(y)
    for _ in range(max_iter):
        k_new = f(y + 0.5 * dt * k)
        if np.max(np.abs(k_new - k)) <= tol * (1.0 + np.max(np.abs(k_new))):
            return y + dt * k_new
        k = k_new
    raise IntegrationError("implicit midpoint iteration did not converge; reduce the step")


def _fixed_step(system, y, dt, perturbed, method):
    n = system.n
    if method == "stormer-verlet":
        q, p = _verlet(system, y[:n], y[n:], dt, perturbed)
        return np.concatenate([q, p])
    return _midpoint(system, y, dt, perturbed)


def _length_scale(system, perturbed):
    scale = math.inf
    if perturbed and not system.potential.is_zero:
        scale = system.potential.min_radius()
    if system.kind == "tube":
        scale = min(scale, 0.25)
    return scale


def _check_state(y):
    if not np.all(np.isfinite(y)):
        raise IntegrationError("non-finite state; the trajectory left the admissible domain")


def _steps(system, y0, t_bound, cfg: FlowConfig, perturbed, uniform=False) -> Iterator[_Step]:
    """Yield integration steps from ``t = 0`` towards ``t_bound`` (either sign).

    With ``uniform`` fixed-step methods split ``[0, t_bound]`` into equal
    steps that land exactly on ``t_bound``.
    """
    y0 = np.asarray(y0, dtype=float)
    if t_bound == 0:
        return
    sign = 1.0 if t_bound > 0 else -1.0
    if cfg.fixed_step:
        method = cfg.integrator
        if uniform:
            count = max(1, math.ceil(abs(t_bound) / cfg.step))
            dt = t_bound / count
        else:
            dt = sign * cfg.step
            count = math.ceil(abs(t_bound) / cfg.step)
        t, y = 0.0, y0
        for i in range(count):
            t1 = t_bound if (uniform and i == count - 1) else t + dt
            y1 = _fixed_step(system, y, t1 - t, perturbed, method)
            _check_state(y1)
            ta, ya = t, y
            yield _Step(ta, ya, t1, y1,
                        lambda s, ta=ta, ya=ya: _fixed_step(system, ya, s - ta, perturbed, method),
                        True)
            t, y = t1, y1
        return

    n = system.n
    scale = _length_scale(system, perturbed)
    speed = system.speed_bound(y0[:n], y0[n:]) if math.isfinite(scale) else 1.0
    max_step = 0.5 * scale / max(speed, 1e-12) if math.isfinite(scale) else np.inf
    solver = DOP853(lambda t, y: system.rhs(y, perturbed), 0.0, y0, t_bound,
                    rtol=cfg.rel_tol, atol=cfg.abs_tol, max_step=max_step)
    while solver.status == "running":
        ta, ya = solver.t, solver.y.copy()
        msg = solver.step()
        if solver.status == "failed":
            raise IntegrationError(f"adaptive integrator failed: {msg}")
        _check_state(solver.y)
        dense = solver.dense_output()
        yield _Step(ta, ya, solver.t, solver.y.copy(), dense)


def _adaptive_segment(system, y, dt, cfg, perturbed):
    """Accurate state after a short time ``dt`` (used to refine event states)."""
    if dt == 0:
        return y.copy()
    last = None
    for last in _steps(system, y, dt, cfg, perturbed):
        pass
    return last.y1


# ---------------------------------------------------------------------------
# public flows


def _as_point(system, m):
    if not isinstance(m, PhasePoint):
        m = PhasePoint(*m)
    system.check_point(m.q, m.p)
    return m


def _flow(system, m, t, cfg, perturbed, on_step=None):
    if abs(t) > cfg.max_time:
        raise MaxTimeExceeded(f"|t| = {abs(t)} exceeds max_time = {cfg.max_time}")
    y = m.y
    for st in _steps(system, y, t, cfg, perturbed, uniform=True):
        if on_step is not None:
            on_step(st)
        y = st.y1
    return PhasePoint.from_y(y)


def free_flow(system, m, t, cfg=None) -> PhasePoint:
    """``phi0_t(m)``: exact for dispersive systems, integrated otherwise.

    For the tube the longitudinal motion ``q^1 + t p_1`` is imposed exactly on
    top of the integrated transverse motion.
    """
    m = _as_point(system, m)
    t = float(t)
    if t == 0.0:
        return m
    exact = system.exact_free_flow(m.q, m.p, t)
    if exact is not None:
        return PhasePoint(*exact)
    cfg = resolve_config(system, cfg)
    out = _flow(system, m, t, cfg, perturbed=False)
    if system.kind == "tube":
        q = out.q.copy()
        p = out.p.copy()
        q[0] = m.q[0] + t * m.p[0]
        p[0] = m.p[0]
        out = PhasePoint(q, p)
    return out


def full_flow(system, m, t, cfg=None, on_step=None) -> PhasePoint:
    """``phi_t(m)`` for the perturbed Hamiltonian ``H = H0 + V``.

    ``on_step`` is invoked for every integration step (see
    :func:`integrate_until`); it is not called when the flow is evaluated in
    closed form (``V = 0`` on a dispersive system).
    """
    m = _as_point(system, m)
    t = float(t)
    if t == 0.0:
        return m
    if system.potential.is_zero and system.exact_free_flow(m.q, m.p, t) is not None:
        return free_flow(system, m, t, cfg)
    return _flow(system, m, t, resolve_config(system, cfg), not system.potential.is_zero, on_step)


def trajectory(system, m, t, cfg=None, perturbed=True, n_samples: Optional[int] = None) -> Trajectory:
    """Record the flow from ``0`` to ``t``.

    Without ``n_samples`` every integrator step is recorded; otherwise the
    curve is sampled at ``n_samples`` equally spaced times (dense output or
    partial steps).
    """
    m = _as_point(system, m)
    cfg = resolve_config(system, cfg)
    t = float(t)
    if abs(t) > cfg.max_time:
        raise MaxTimeExceeded(f"|t| = {abs(t)} exceeds max_time = {cfg.max_time}")
    energy = system.H if perturbed else system.H0
    e0 = energy(m.q, m.p)
    samples = [(0.0, m)]
    steps = 0
    grid = None if n_samples is None else np.linspace(0.0, t, max(int(n_samples), 2))[1:]
    gi = 0
    for st in _steps(system, m.y, t, cfg, perturbed, uniform=True):
        steps += 1
        if grid is None:
            samples.append((st.t1, PhasePoint.from_y(st.y1)))
            continue
        lo, hi = sorted((st.t0, st.t1))
        while gi < grid.size and lo <= grid[gi] <= hi:
            y = st.y1 if grid[gi] == st.t1 else st.interp(grid[gi])
            samples.append((float(grid[gi]), PhasePoint.from_y(y)))
            gi += 1
    drift = max(abs(energy(s.q, s.p) - e0) for _, s in samples)
    if not math.isfinite(drift):
        raise IntegrationError("energy drift is not finite")
    return Trajectory(samples, float(drift), steps, perturbed)


def integrate_until(system, m, direction, predicate, cfg=None, perturbed=True, t_max=None,
                    on_step=None):
    """First time (in ``direction``) at which ``predicate(m_t)`` becomes true.

    The event is bracketed by integration steps and then located by bisection
    to ``cfg.event_tol``; the returned state is recomputed by a fresh short
    integration to the located time.

    Parameters
    ----------
    direction : {1, -1}
    predicate : callable
        ``PhasePoint -> bool``.
    on_step : callable, optional
        Called as ``on_step(step)`` for each completed step, where ``step`` has
        attributes ``t0, y0, t1, y1`` and ``interp(t)``. Used to detect level
        crossings without a second pass.

    Returns
    -------
    (t_star, m_star)

    Raises
    ------
    MaxTimeExceeded
        If the predicate stays false up to ``t_max`` (default ``cfg.max_time``).
    """
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    m = _as_point(system, m)
    cfg = resolve_config(system, cfg)
    if predicate(m):
        return 0.0, m
    t_max = cfg.max_time if t_max is None else min(float(t_max), cfg.max_time)
    flow_perturbed = perturbed and not system.potential.is_zero
    for st in _steps(system, m.y, direction * t_max, cfg, flow_perturbed):
        if on_step is not None:
            on_step(st)
        if not predicate(PhasePoint.from_y(st.y1)):
            continue
        a, b = st.t0, st.t1
        while abs(b - a) > cfg.event_tol:
            mid = 0.5 * (a + b)
            if predicate(PhasePoint.from_y(st.interp(mid))):
                b = mid
            else:
                a = mid
        if b == st.t1:
            y = st.y1
        elif cfg.fixed_step:
            y = st.interp(b)
        else:
            y = _adaptive_segment(system, st.y0, b - st.t0, cfg, flow_perturbed)
        return b, PhasePoint.from_y(y)
    raise MaxTimeExceeded(f"predicate not satisfied within |t| <= {t_max}")


class LevelCrossings:
    """Step callback recording the times at which ``|Phi|`` crosses given levels.

    Each adaptive step is sampled at ``samples`` interior points of its dense
    output; fixed steps are short and only their end points are compared.
    Sign changes are refined by bisection to ``tol``. Times are reported as
    ``t + offset`` so that consecutive integration segments share one clock.

    Attributes
    ----------
    crossings : list of lists
        ``crossings[k]`` holds ``(t, direction)`` pairs for ``levels[k]``;
        ``direction`` is +1 when ``|Phi|`` increases through the level.
    """

    def __init__(self, system, levels, offset=0.0, samples=8, tol=EVENT_TOL):
        self.system = system
        self.levels = np.atleast_1d(np.asarray(levels, dtype=float))
        self.offset = offset
        self.samples = samples
        self.tol = tol
        self.crossings = [[] for _ in self.levels]
        self.steps = 0

    def _norm(self, y):
        return self.system.phi_norm(y)

    def __call__(self, st: _Step):
        self.steps += 1
        if st.fixed:
            ts = np.array([st.t0, st.t1])
            ys = [st.y0, st.y1]
        else:
            ts = np.linspace(st.t0, st.t1, self.samples + 1)
            inner = st.interp(ts[1:-1])
            ys = [st.y0] + [inner[:, i] for i in range(inner.shape[1])] + [st.y1]
        g = np.array([self._norm(y) for y in ys])
        for k, level in enumerate(self.levels):
            inside = g <= level
            for i in np.nonzero(inside[:-1] != inside[1:])[0]:
                a, b = ts[i], ts[i + 1]
                leaving = bool(inside[i])
                while abs(b - a) > self.tol:
                    mid = 0.5 * (a + b)
                    if (self._norm(st.interp(mid)) <= level) == leaving:
                        a = mid
                    else:
                        b = mid
                self.crossings[k].append((0.5 * (a + b) + self.offset, 1 if leaving else -1))
