"""Sojourn times, time delays and the time of arrival.

All free quantities are closed-form, because ``Phi`` is affine along the
free flow: the free trajectory through ``m`` stays in ``{|Phi| <= r}``
during the chord ``{s : |Phi(m) + s grad H0(m)| <= r}``. The perturbed
sojourn time combines the same chords on the free tails of the interacting
trajectory with event-detected crossings on its interacting segment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Optional

import numpy as np

from .dynamics import resolve_config
from .errors import ConfigurationError, CriticalPointError
from .geometry import PhasePoint
from .parallel import pmap
from .scattering import ScatteringRecord, scattering_map

#: default accuracy required of ``tau_sym(r) - tau_limit`` (time units)
SCAN_TOL = 1e-3


def _velocity(system, m):
    v = np.asarray(system.nabla_H0(m.q, m.p), dtype=float)
    if float(np.linalg.norm(v)) < system.eps_crit:
        raise CriticalPointError(f"|grad H0| < eps_crit at {m}")
    return v


def arrival_time(system, m) -> float:
    """``T(m) = Phi(m) . grad H0(m) / |grad H0(m)|^2``."""
    m = system.point(*m)
    v = _velocity(system, m)
    return float(system.phi(m.q, m.p) @ v) / float(v @ v)


def chord(phi, v, r):
    """Interval ``(s1, s2)`` of ``s`` with ``|phi + s v| <= r``, or ``None`` if empty."""
    phi = np.asarray(phi, dtype=float)
    v = np.asarray(v, dtype=float)
    a = float(v @ v)
    b = float(phi @ v)
    c = float(phi @ phi) - r * r
    disc = b * b - a * c
    if disc <= 0.0:
        return None
    root = math.sqrt(disc)
    mid = -b / a
    return mid - root / a, mid + root / a


def _overlap(interval, lo, hi):
    if interval is None:
        return 0.0
    return max(0.0, min(interval[1], hi) - max(interval[0], lo))


def sojourn_free(system, m, r) -> float:
    """``T_r^0(m)``: time the free trajectory through ``m`` spends in ``{|Phi| <= r}``."""
    if not r > 0:
        raise ValueError("r must be positive")
    m = system.point(*m)
    ch = chord(system.phi(m.q, m.p), _velocity(system, m), r)
    return 0.0 if ch is None else ch[1] - ch[0]


def half_sojourns(system, m, r) -> tuple:
    """Free sojourn split into ``(forward, backward)`` parts (``t >= 0`` and ``t <= 0``)."""
    ch = chord(system.phi(m.q, m.p), _velocity(system, m), r)
    return _overlap(ch, 0.0, math.inf), _overlap(ch, -math.inf, 0.0)


def sojourn_from_record(system, rec: ScatteringRecord, r) -> float:
    """``T_r(m_minus)`` from a record whose crossings include level ``r``."""
    if not rec.ok:
        raise ConfigurationError(f"record status is {rec.status!r}")
    try:
        k = rec.levels.index(r)
    except ValueError:
        raise ConfigurationError(f"level {r} was not tracked") from None
    # incoming free tail (t <= -T) and outgoing free tail (t >= t_star)
    s, x = rec.x_start, rec.x_star
    tail_in = _overlap(chord(system.phi(s.q, s.p), system.nabla_H0(s.q, s.p), r), -math.inf, 0.0)
    tail_out = _overlap(chord(system.phi(x.q, x.p), system.nabla_H0(x.q, x.p), r), 0.0, math.inf)
    # interacting segment [-T, t_star]
    t0, t1 = -rec.T, rec.t_star
    inside = system.phi_norm(s.y) <= r
    entered = t0
    total = 0.0
    # the last integration step may run past t_star; later crossings belong to the free tail
    for t, direction in sorted(c for c in rec.crossings[k] if t0 <= c[0] <= t1):
        if direction > 0 and inside:
            total += t - entered
            inside = False
        elif direction < 0 and not inside:
            entered = t
            inside = True
    if inside:
        total += t1 - entered
    return tail_in + total + tail_out


def tau_components(system, rec: ScatteringRecord, r) -> dict:
    """``tau_sym``, ``tau_in`` and ``tau_free`` at radius ``r`` from one record."""
    m, mp = rec.m_minus, rec.m_plus
    Tr = sojourn_from_record(system, rec, r)
    T0 = sojourn_free(system, m, r)
    T0s = sojourn_free(system, mp, r)
    fwd_s, bwd_s = half_sojourns(system, mp, r)
    fwd, bwd = half_sojourns(system, m, r)
    return {"tau_sym": Tr - 0.5 * (T0 + T0s), "tau_in": Tr - T0,
            "tau_free": 0.5 * ((fwd_s - bwd_s) - (fwd - bwd))}


def _record(system, m_minus, r_levels, cfg):
    rec = scattering_map(system, m_minus, cfg, check_horizon=False, levels=r_levels)
    return rec


def _check_r(system, r, strict=True):
    if strict and not r > system.support_radius:
        raise ValueError(f"r = {r} must exceed R_V = {system.support_radius}")


def sojourn_full(system, m_minus, r, cfg=None) -> float:
    """``T_r(m_minus)``: sojourn time of ``t -> phi_t(W-(m_minus))`` in ``{|Phi| <= r}``."""
    cfg = resolve_config(system, cfg)
    if not r > 0:
        raise ValueError("r must be positive")
    return sojourn_from_record(system, _record(system, m_minus, (r,), cfg), r)


def tau_sym(system, m_minus, r, cfg=None) -> float:
    """``tau_r = T_r - (T_r^0 + T_r^0 o S) / 2``."""
    _check_r(system, r)
    cfg = resolve_config(system, cfg)
    return tau_components(system, _record(system, m_minus, (r,), cfg), r)["tau_sym"]


def tau_in(system, m_minus, r, cfg=None) -> float:
    """``tau_r^in = T_r - T_r^0``."""
    _check_r(system, r)
    cfg = resolve_config(system, cfg)
    return tau_components(system, _record(system, m_minus, (r,), cfg), r)["tau_in"]


def tau_free_aux(system, m_minus, r, cfg=None) -> float:
    """Auxiliary free delay: half the forward-minus-backward sojourn of ``S(m)``
    minus that of ``m`` (ray-ball intersection lengths)."""
    if not r > 0:
        raise ValueError("r must be positive")
    cfg = resolve_config(system, cfg)
    rec = scattering_map(system, m_minus, cfg, check_horizon=False)
    fwd_s, bwd_s = half_sojourns(system, rec.m_plus, r)
    fwd, bwd = half_sojourns(system, rec.m_minus, r)
    return 0.5 * ((fwd_s - bwd_s) - (fwd - bwd))


def default_r_grid(system, kmax=8) -> np.ndarray:
    """``R_V 2^k`` for ``k = 1..kmax`` (``R_V`` replaced by 1 when ``V = 0``)."""
    rv = system.support_radius if system.support_radius > 0 else 1.0
    return rv * 2.0 ** np.arange(1, kmax + 1)


def default_noise_floor(cfg) -> float:
    """Tolerated non-monotone wiggle of ``|tau_r - tau_limit|`` between grid points."""
    return max(1e-9, 1e3 * cfg.tolerance)


def richardson_limit(r_grid, values) -> float:
    """Limit ``r -> inf`` from the last two grid values, eliminating a ``1/r`` term.

    The free chords expand in odd powers of ``1/r``, so the residual error is
    ``O(r^-3)``. Values that are already constant are returned unchanged.
    """
    r1, r2 = float(r_grid[-2]), float(r_grid[-1])
    v1, v2 = float(values[-2]), float(values[-1])
    return (r2 * v2 - r1 * v1) / (r2 - r1)


def eventually_monotone(errors, count=3, noise=0.0) -> bool:
    """True if the last ``count`` errors are non-increasing up to ``noise``."""
    tail = list(errors)[-count:]
    return len(tail) == count and all(b <= a + noise for a, b in zip(tail, tail[1:]))


@dataclass
class DelayScan:
    """Time delays of one initial condition over a grid of radii."""

    m_minus: PhasePoint
    r_grid: np.ndarray
    tau_sym: np.ndarray
    tau_in: np.ndarray
    tau_free: np.ndarray
    tau_limit: float
    converged: bool
    convergence_r: float
    monotone: bool = False
    tau_sym_lim: float = math.nan
    tau_in_lim: float = math.nan
    in_converged: bool = False
    velocity_change: float = math.nan
    m_plus: Optional[PhasePoint] = None
    status: str = "ok"
    message: str = ""

    @property
    def errors(self) -> np.ndarray:
        return np.abs(self.tau_sym - self.tau_limit)

    def report(self) -> str:
        """One-line human-readable summary."""
        if self.status != "ok":
            return f"{self.m_minus}: {self.status} ({self.message})"
        line = (f"{self.m_minus}: tau_limit={self.tau_limit:.10g} "
                f"|tau_r - tau_limit| at r={self.r_grid[-1]:g}: {self.errors[-1]:.3g} "
                f"converged={self.converged}")
        if not self.in_converged:
            line += (f"; tau_in does not converge (tau_in spread {np.ptp(self.tau_in[-3:]):.3g} over the "
                     f"last radii, | |grad H0(S m)|^2 - |grad H0(m)|^2 | = {self.velocity_change:.3g})")
        return line


def _scan_from_record(system, rec, r_grid, tol, noise):
    m = rec.m_minus
    comps = [tau_components(system, rec, r) for r in r_grid]
    ts = np.array([c["tau_sym"] for c in comps])
    ti = np.array([c["tau_in"] for c in comps])
    tf = np.array([c["tau_free"] for c in comps])
    limit = arrival_time(system, m) - arrival_time(system, rec.m_plus)
    err = np.abs(ts - limit)
    monotone = eventually_monotone(err, 3, noise)
    converged = bool(monotone and np.all(err[-3:] < tol))
    conv_r = math.nan
    for i in range(len(r_grid)):
        if np.all(err[i:] < tol):
            conv_r = float(r_grid[i])
            break
    ts_lim = richardson_limit(r_grid, ts)
    ti_lim = richardson_limit(r_grid, ti)
    a = system.nabla_H0(m.q, m.p)
    b = system.nabla_H0(rec.m_plus.q, rec.m_plus.p)
    dv = abs(float(b @ b) - float(a @ a))
    in_err = np.abs(ti - ti_lim)
    in_conv = bool(abs(ti_lim - ts_lim) < tol and in_err[-1] < tol)
    return DelayScan(m, np.asarray(r_grid, dtype=float), ts, ti, tf, limit, converged, conv_r,
                     monotone, ts_lim, ti_lim, in_conv, dv, rec.m_plus)


def delay_scan(system, m_minus, r_grid=None, cfg=None, tol=SCAN_TOL, noise_floor=None,
               record=None) -> DelayScan:
    """Scan ``tau_r``, ``tau_r^in`` and ``tau_r^free`` over ``r_grid``.

    The scan has converged when the last three values of
    ``|tau_r - tau_limit|`` are below ``tol`` and non-increasing up to
    ``noise_floor`` (above the support ``tau_r`` is constant, so a strict
    decrease would only test round-off). ``tau_limit`` is computed
    independently as ``T(m_minus) - T(S(m_minus))``.
    """
    cfg = resolve_config(system, cfg)
    r_grid = default_r_grid(system) if r_grid is None else np.asarray(r_grid, dtype=float)
    if r_grid.ndim != 1 or r_grid.size < 2 or np.any(np.diff(r_grid) <= 0):
        raise ValueError("r_grid must be strictly increasing with at least two radii")
    if not r_grid[0] > system.support_radius:
        raise ValueError(f"all radii must exceed R_V = {system.support_radius}")
    noise = default_noise_floor(cfg) if noise_floor is None else noise_floor
    m = system.point(*m_minus)
    if record is None or tuple(record.levels[1:]) != tuple(float(r) for r in r_grid):
        record = scattering_map(system, m, cfg, check_horizon=False, levels=tuple(r_grid),
                                raise_errors=False)
    if not record.ok:
        nan = np.full(r_grid.size, math.nan)
        return DelayScan(m, r_grid, nan, nan, nan, math.nan, False, math.nan,
                         status=record.status, message=record.message)
    return _scan_from_record(system, record, r_grid, tol, noise)


def _scan_one(m, system, r_grid, cfg, tol, noise_floor):
    return delay_scan(system, m, r_grid, cfg, tol, noise_floor)


def delay_scan_batch(system, points, r_grid=None, cfg=None, workers=1, tol=SCAN_TOL,
                     noise_floor=None) -> list:
    """``delay_scan`` over many initial conditions, in input order."""
    cfg = resolve_config(system, cfg)
    r_grid = default_r_grid(system) if r_grid is None else np.asarray(r_grid, dtype=float)
    fn = partial(_scan_one, system=system, r_grid=r_grid, cfg=cfg, tol=tol, noise_floor=noise_floor)
    return pmap(fn, points, workers)


def scan_header(n) -> list:
    return ([f"q{i + 1}" for i in range(n)] + [f"p{i + 1}" for i in range(n)]
            + ["r", "tau_sym", "tau_in", "tau_free", "tau_limit", "converged"])


def scan_rows(scan: DelayScan) -> list:
    y = list(scan.m_minus.y)
    return [y + [float(r), float(a), float(b), float(c), float(scan.tau_limit), int(scan.converged)]
            for r, a, b, c in zip(scan.r_grid, scan.tau_sym, scan.tau_in, scan.tau_free)]
