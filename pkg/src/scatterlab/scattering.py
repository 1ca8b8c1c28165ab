"""Wave maps and the scattering map ``S = W+^{-1} o W-``.

Because ``V`` is supported in ``{|Phi| <= R_V}`` and ``Phi`` grows linearly
along the free flow, the limits defining the wave maps are reached after a
finite time:

* ``W-(m) = phi_T(phi0_{-T}(m))`` with ``T = (R_V + |Phi(m)| + margin) / |grad H0(m)|``;
* ``W+^{-1}(m) = phi0_{-t}(phi_t(m))`` for any ``t`` after which the perturbed
  trajectory is outside ``{|Phi| <= R_V + margin}`` and moving outwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Optional

import numpy as np

from .dynamics import LevelCrossings, free_flow, full_flow, integrate_until, resolve_config
from .errors import CaptureSuspected, CriticalPointError, HorizonError, IntegrationError, MaxTimeExceeded, ScatterLabError
from .geometry import PhasePoint, symplectic_defect
from .parallel import pmap
from .systems import virial_profile


@dataclass
class ScatteringRecord:
    """Outcome of one scattering computation.

    Times are measured on the clock of the interacting trajectory
    ``t -> phi_t(W-(m_minus))``. ``x_start`` is its state at ``-T`` (it
    coincides with ``phi0_{-T}(m_minus)``) and ``x_star`` its state at
    ``t_star``, after which it moves freely. ``crossings`` lists, for each
    tracked level ``r``, the times at which ``|Phi|`` crosses ``r`` on
    ``[-T, t_star]``. ``status`` is one of ``"ok"``, ``"captured"``,
    ``"critical"``, ``"horizon"``, ``"failed"`` or ``"diagnostics-failed"``.
    """

    m_minus: PhasePoint
    interacting_in: Optional[PhasePoint] = None
    m_plus: Optional[PhasePoint] = None
    t_entry: float = math.nan
    t_exit: float = math.nan
    T: float = math.nan
    t_star: float = math.nan
    x_start: Optional[PhasePoint] = None
    x_star: Optional[PhasePoint] = None
    levels: tuple = ()
    crossings: list = field(default_factory=list)
    residuals: dict = field(default_factory=dict)
    status: str = "ok"
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def free_horizon(system, m: PhasePoint) -> float:
    """``T`` such that ``phi0_{-t}(m)`` stays outside ``{|Phi| <= R_V + margin}`` for ``t >= T``."""
    grad = system.nabla_H0(m.q, m.p)
    speed = float(np.linalg.norm(grad))
    if speed < system.eps_crit:
        raise CriticalPointError(f"|grad H0| = {speed:.3g} < eps_crit at {m}")
    phi = float(np.linalg.norm(system.phi(m.q, m.p)))
    return (system.support_radius + phi + system.margin) / speed


def exit_predicate(system):
    """``|Phi| > R_V + margin`` and ``Phi . grad H0 > 0``."""
    rho = system.support_radius + system.margin

    def outside_outgoing(m):
        phi = system.phi(m.q, m.p)
        return bool(np.linalg.norm(phi) > rho and phi @ system.nabla_H0(m.q, m.p) > 0)

    return outside_outgoing


def horizon_budget(cfg) -> float:
    """Largest accepted movement of ``W-(m)`` when the horizon is doubled."""
    return max(1e-8, 1e4 * cfg.tolerance)


def _wave_minus_at(system, m, T, cfg, on_step=None):
    start = free_flow(system, m, -T, cfg)
    return start, full_flow(system, start, T, cfg, on_step=on_step)


def wave_map_minus(system, m_minus, cfg=None, check=True, return_details=False):
    """``W-(m_minus) = phi_T(phi0_{-T}(m_minus))``.

    With ``check`` the computation is repeated at horizon ``2T`` and a
    :class:`HorizonError` is raised if the two results differ by more than
    :func:`horizon_budget`. ``return_details`` gives ``(W, T, shift)``.
    """
    cfg = resolve_config(system, cfg)
    m = system.point(*m_minus)
    T = free_horizon(system, m)
    _, w = _wave_minus_at(system, m, T, cfg)
    shift = math.nan
    if check:
        _, w2 = _wave_minus_at(system, m, 2.0 * T, cfg)
        shift = w.distance(w2)
        if not shift <= horizon_budget(cfg):
            raise HorizonError(f"W- moved by {shift:.3g} when doubling T; tighten the tolerances")
    return (w, T, shift) if return_details else w


def wave_map_plus_inverse(system, m, cfg=None, on_step=None, t_max=None):
    """``W+^{-1}(m)`` together with the exit time ``t_star`` and ``phi_{t_star}(m)``.

    Raises
    ------
    CaptureSuspected
        When the exit condition is not met within ``t_max``.
    """
    cfg = resolve_config(system, cfg)
    try:
        t_star, x_star = integrate_until(system, m, 1, exit_predicate(system), cfg,
                                         t_max=t_max, on_step=on_step)
    except MaxTimeExceeded as exc:
        raise CaptureSuspected(f"no outgoing exit from the support region: {exc}") from None
    return free_flow(system, x_star, -t_star, cfg), t_star, x_star


def scattering_map(system, m_minus, cfg=None, check_horizon=True, levels=None, t_max=None,
                   raise_errors=True) -> ScatteringRecord:
    """Compute ``S(m_minus)`` and the data of its interacting trajectory.

    Parameters
    ----------
    levels : sequence of float, optional
        Extra ``|Phi|`` levels whose crossing times are recorded (used for
        sojourn times). ``R_V`` is always tracked and yields ``t_entry`` and
        ``t_exit``.
    raise_errors : bool
        If false, capture, critical points, horizon and integration failures are reported
        through ``status`` instead of raised.
    """
    cfg = resolve_config(system, cfg)
    m = system.point(*m_minus)
    rec = ScatteringRecord(m_minus=m)
    rv = system.support_radius
    lv = (rv,) + tuple(float(r) for r in (levels or ()))
    rec.levels = lv
    try:
        T = free_horizon(system, m)
        rec.T = T
        tracker = LevelCrossings(system, lv, offset=-T)
        start, w = _wave_minus_at(system, m, T, cfg, on_step=tracker)
        incoming_steps = tracker.steps
        rec.x_start, rec.interacting_in = start, w
        if check_horizon:
            _, w2 = _wave_minus_at(system, m, 2.0 * T, cfg)
            rec.residuals["horizon_shift"] = w.distance(w2)
            if not rec.residuals["horizon_shift"] <= horizon_budget(cfg):
                raise HorizonError(f"W- moved by {rec.residuals['horizon_shift']:.3g} when doubling T")
        tracker.offset = 0.0
        m_plus, t_star, x_star = wave_map_plus_inverse(system, w, cfg, on_step=tracker, t_max=t_max)
        rec.m_plus, rec.t_star, rec.x_star = m_plus, t_star, x_star
        rec.crossings = tracker.crossings
        if incoming_steps == 0:
            # [-T, 0] was evaluated in closed form (V = 0): no steps were seen
            extra = _free_line_crossings(system, start, -T, T, lv)
            rec.crossings = [sorted(a + b) for a, b in zip(extra, rec.crossings)]
        times = [t for t, _ in rec.crossings[0]]
        if times:
            rec.t_entry, rec.t_exit = min(times), max(times)
        e0 = system.H0(m.q, m.p)
        rec.residuals["energy"] = abs(system.H0(m_plus.q, m_plus.p) - e0)
        rec.residuals["energy_in"] = abs(system.H(w.q, w.p) - e0)
        speed = float(np.linalg.norm(system.nabla_H0(m_plus.q, m_plus.p)))
        if speed < system.eps_crit:
            raise CriticalPointError(f"S(m_minus) is critical: |grad H0| = {speed:.3g}")
    except CaptureSuspected as exc:
        rec.status, rec.message = "captured", str(exc)
        if raise_errors:
            raise
    except CriticalPointError as exc:
        rec.status, rec.message = "critical", str(exc)
        if raise_errors:
            raise
    except HorizonError as exc:
        rec.status, rec.message = "horizon", str(exc)
        if raise_errors:
            raise
    except IntegrationError as exc:
        # e.g. the incoming horizon itself exceeds max_time
        rec.status, rec.message = "failed", str(exc)
        if raise_errors:
            raise
    return rec


def _free_line_crossings(system, start, t0, duration, levels):
    """Crossings of ``|Phi|`` along a free segment (closed form, ``Phi`` is affine)."""
    phi0 = system.phi(start.q, start.p)
    v = system.nabla_H0(start.q, start.p)
    a, b = float(v @ v), float(phi0 @ v)
    out = []
    for r in levels:
        c = float(phi0 @ phi0) - r * r
        disc = b * b - a * c
        found = []
        if disc > 0:
            s = math.sqrt(disc)
            for root, direction in (((-b - s) / a, -1), ((-b + s) / a, 1)):
                if 0.0 < root < duration:
                    found.append((t0 + root, direction))
        out.append(found)
    return out


def scattering_operator(system, cfg=None, check_horizon=False):
    """The map ``m -> S(m)`` as a plain callable (for Jacobians and compositions)."""
    cfg = resolve_config(system, cfg)

    def S(m):
        return scattering_map(system, m, cfg, check_horizon=check_horizon).m_plus

    return S


def commutation_residual(system, m_minus, t, cfg=None) -> float:
    """``|S(phi0_t(m)) - phi0_t(S(m))|`` in the max-norm."""
    cfg = resolve_config(system, cfg)
    if t == 0:
        return 0.0
    S = scattering_operator(system, cfg)
    m = system.point(*m_minus)
    return S(free_flow(system, m, t, cfg)).distance(free_flow(system, S(m), t, cfg))


def intertwining_residual(system, m_minus, t, cfg=None) -> float:
    """``|phi_t(W-(m)) - W-(phi0_t(m))|`` in the max-norm."""
    cfg = resolve_config(system, cfg)
    if t == 0:
        return 0.0
    m = system.point(*m_minus)
    lhs = full_flow(system, wave_map_minus(system, m, cfg, check=False), t, cfg)
    rhs = wave_map_minus(system, free_flow(system, m, t, cfg), cfg, check=False)
    return lhs.distance(rhs)


def kinetic_norm_residual(system, rec: ScatteringRecord) -> float:
    """``| |grad H0(S m)|^2 - |grad H0(m)|^2 |``."""
    a = system.nabla_H0(rec.m_minus.q, rec.m_minus.p)
    b = system.nabla_H0(rec.m_plus.q, rec.m_plus.p)
    return abs(float(b @ b) - float(a @ a))


def diagnose(system, rec: ScatteringRecord, cfg=None, t_commute=1.5, t_intertwine=None,
             h_jac=1e-5, symplectic=True, seed=0) -> ScatteringRecord:
    """Fill ``rec.residuals`` with the algebraic checks of one record.

    ``t_intertwine`` defaults to a value drawn uniformly from ``[-5, 5]``
    with a generator seeded by ``seed``.
    """
    cfg = resolve_config(system, cfg)
    if not rec.ok:
        return rec
    if t_intertwine is None:
        t_intertwine = float(np.random.default_rng(seed).uniform(-5.0, 5.0))
    m = rec.m_minus
    rec.residuals["intertwining"] = intertwining_residual(system, m, t_intertwine, cfg)
    rec.residuals["commutation"] = commutation_residual(system, m, t_commute, cfg)
    rec.residuals["kinetic_norm"] = kinetic_norm_residual(system, rec)
    if symplectic:
        rec.residuals["symplectic_defect"] = symplectic_defect(
            scattering_operator(system, cfg), m, h_jac).defect
    return rec


def _batch_one(args, system, cfg, diagnostics, check_horizon, levels):
    index, m = args
    rec = scattering_map(system, m, cfg, check_horizon=check_horizon, levels=levels,
                         raise_errors=False)
    if diagnostics and rec.ok:
        try:
            diagnose(system, rec, cfg, seed=index)
        except ScatterLabError as exc:
            rec.status, rec.message = "diagnostics-failed", str(exc)
    return rec


def scatter_batch(system, points, cfg=None, workers=1, diagnostics=False, check_horizon=True,
                  levels=None) -> list:
    """Scattering records for many initial conditions, in input order.

    Captured or critical points do not abort the batch; they carry a
    non-``"ok"`` status.
    """
    cfg = resolve_config(system, cfg)
    fn = partial(_batch_one, system=system, cfg=cfg, diagnostics=diagnostics,
                 check_horizon=check_horizon, levels=levels)
    return pmap(fn, list(enumerate(points)), workers)


RECORD_RESIDUALS = ("energy", "energy_in", "horizon_shift", "intertwining", "commutation",
                    "kinetic_norm", "symplectic_defect")


def record_header(n) -> list:
    q = [f"q{i + 1}" for i in range(n)]
    p = [f"p{i + 1}" for i in range(n)]
    return (["index", "status"] + [f"{x}_minus" for x in q + p] + [f"{x}_plus" for x in q + p]
            + ["T", "t_entry", "t_exit", "t_star"] + list(RECORD_RESIDUALS))


def record_row(index, rec: ScatteringRecord, n) -> list:
    plus = rec.m_plus.y if rec.m_plus is not None else [math.nan] * (2 * n)
    return ([index, rec.status] + list(rec.m_minus.y) + list(plus)
            + [rec.T, rec.t_entry, rec.t_exit, rec.t_star]
            + [rec.residuals.get(k, math.nan) for k in RECORD_RESIDUALS])


# ---------------------------------------------------------------------------
# virial window certification


@dataclass
class WindowReport:
    """Numerical certificate for conditions (i) and (ii) on ``H0^{-1}(E_interval)``.

    ``violating`` names a sample that breaks one of them (``None`` if none did).
    """

    E_interval: tuple
    delta: float
    n_samples: int
    min_virial: float
    argmin_virial: Optional[PhasePoint]
    min_grad: float
    argmin_grad: Optional[PhasePoint]
    ok: bool
    violating: Optional[PhasePoint] = None
    reason: str = ""


def _shell_norm(system, q, E, u):
    """``s > 0`` with ``H0(q, s u) = E`` (0 if the shell is empty at ``q``)."""
    disp = getattr(system, "dispersion", None)
    if disp is None or disp.radial:
        return float(system.momentum_ball_radius(q[None, :], E, perturbed=False)[0])
    from scipy.optimize import brentq
    f = lambda s: system.H0(q, s * u) - E
    hi = 1.0
    while f(hi) < 0:
        hi *= 2.0
        if hi > 1e8:
            return 0.0
    return brentq(f, 0.0, hi, xtol=1e-14) if f(0.0) < 0 else 0.0


def _window_q_box(system):
    box = system.q_box()
    n = system.n
    if box is None:
        lo, hi = -np.ones(n), np.ones(n)
    else:
        lo, hi = box[0].min(axis=0), box[1].max(axis=0)
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        lo, hi = mid - 1.25 * half, mid + 1.25 * half
    return lo, hi


def window_check(system, E_interval, delta, N=2000, seed=0) -> WindowReport:
    """Sample ``H0^{-1}(E_interval)`` and report the minima of the virial profile and ``|grad H0|``.

    Positions are drawn uniformly from the support box of ``V`` enlarged by
    25% (outside the support the virial profile equals ``|grad H0|^2``),
    energies uniformly from the interval (an infinite upper end is replaced
    by ``max(2 lo, lo + 1)``) and momentum directions uniformly from the
    sphere. Inadmissible draws are discarded.
    """
    rng = np.random.default_rng(seed)
    lo_e, hi_e = float(E_interval[0]), float(E_interval[1])
    if not math.isfinite(hi_e):
        hi_e = max(2.0 * lo_e, lo_e + 1.0)
    qlo, qhi = _window_q_box(system)
    n = system.n
    best_v, arg_v = math.inf, None
    best_g, arg_g = math.inf, None
    used = 0
    attempts = 0
    while used < N and attempts < 50 * N:
        attempts += 1
        q = rng.uniform(qlo, qhi)
        u = rng.normal(size=n)
        u /= np.linalg.norm(u)
        E = rng.uniform(lo_e, hi_e)
        if not system.admissible(q, u, 1e-3):
            continue
        s = _shell_norm(system, q, E, u)
        if not s > 0:
            continue
        m = PhasePoint(q, s * u)
        if not system.admissible(m.q, m.p, 1e-3):
            continue
        used += 1
        v = virial_profile(system, m)
        g = float(np.linalg.norm(system.nabla_H0(m.q, m.p)))
        if v < best_v:
            best_v, arg_v = v, m
        if g < best_g:
            best_g, arg_g = g, m
    ok = used > 0 and best_v > delta and best_g >= system.eps_crit
    violating, reason = None, ""
    if best_v <= delta:
        violating, reason = arg_v, f"virial profile {best_v:.6g} <= delta = {delta}"
    elif best_g < system.eps_crit:
        violating, reason = arg_g, f"|grad H0| = {best_g:.3g} < eps_crit"
    elif used == 0:
        reason = "no admissible samples on the energy shell"
    return WindowReport((lo_e, hi_e), delta, used, best_v, arg_v, best_g, arg_g, ok, violating, reason)
