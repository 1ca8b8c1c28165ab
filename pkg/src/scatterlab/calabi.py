"""Fixed-energy delays, the regularised phase-space volume and their relation.

On the section ``Gamma_E = {H0 = E, Phi . grad H0 = 0}`` the fixed-energy
delay is ``tau_E(m0) = -T(S(m0))``. Its integral against
``omega^{n-1}/(n-1)!`` is the average delay ``T_E``, which must equal
``-xi'(E)`` where

    xi(E) = int (chi{H0 <= E} - chi{H <= E}) omega^n / n!.

Section measure
---------------
For ``H0 = h(|p|)`` the section is parametrised by ``p_hat`` on the sphere and
``q`` in the hyperplane orthogonal to it, with ``|p| = k(E)`` fixed. The
restriction of ``omega`` is ``k sum dq_perp ^ dp_hat``, so that
``omega^{n-1}/(n-1)! = k^{n-1} d p_hat d q_perp``. For the two-dimensional
Poincare ball (``p = K(s) u(theta)``, ``q = s u(theta)^perp``) the density is
``sqrt(8E) (1 + s^2) / (1 - s^2)^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Optional

import numpy as np
from scipy.special import gammaln

from .dynamics import FlowConfig, resolve_config
from .errors import ConfigurationError, DomainError, ScatterLabError
from .geometry import PhasePoint
from .parallel import pmap
from .scattering import scattering_map, window_check
from .systems import DispersiveSystem, PoincareBallSystem
from .timedelay import arrival_time

#: tolerance for the defining constraints of section samples
SECTION_TOL = 1e-9
#: Monte Carlo samples per independently seeded chunk
CHUNK = 1 << 16


@dataclass(frozen=True)
class SectionSample:
    """Point of ``Gamma_E`` with a quadrature weight for ``omega^{n-1}/(n-1)!``.

    ``coarse_weight`` is the weight of the same node in the embedded coarse
    rule of a grid (0 if the node is not part of it); it is ``None`` for
    Monte Carlo samples.
    """

    m0: PhasePoint
    weight: float
    coarse_weight: Optional[float] = None


def _require_dim(system):
    if system.n < 2:
        raise ConfigurationError("Calabi computations need dim(M) >= 4 (n >= 2)")


def section_project(system, m, alpha=0.0, cfg=None, tol=SECTION_TOL):
    """Project ``m`` along the free flow onto ``{Phi . grad H0 = alpha}``.

    Returns ``(m0, t0)`` with ``t0 = (Phi . grad H0 (m) - alpha) / |grad H0(m)|^2``
    and ``m0 = phi0_{-t0}(m)``.
    """
    from .dynamics import free_flow

    m = system.point(*m)
    v = system.nabla_H0(m.q, m.p)
    a = float(v @ v)
    if math.sqrt(a) < system.eps_crit:
        from .errors import CriticalPointError
        raise CriticalPointError(f"|grad H0| < eps_crit at {m}")
    psi = float(system.phi(m.q, m.p) @ v)
    t0 = (psi - alpha) / a
    if t0 == 0.0:
        return m, 0.0
    m0 = free_flow(system, m, -t0, cfg)
    psi0 = float(system.phi(m0.q, m0.p) @ system.nabla_H0(m0.q, m0.p))
    if abs(psi0 - alpha) > tol * max(1.0, abs(psi)):
        raise DomainError(f"projection missed the section: Phi.grad H0 = {psi0}")
    return m0, t0


# ---------------------------------------------------------------------------
# section geometry


def _level_momentum(system, E):
    if isinstance(system, DispersiveSystem):
        if not system.dispersion.radial:
            raise ConfigurationError("section sampling needs a radial dispersion relation")
        k = float(system.dispersion.level_momentum(E))
        if not k > 0:
            raise DomainError(f"energy {E} is below the range of h")
        return k
    raise ConfigurationError(f"no product parametrisation of Gamma_E for {system.kind} systems")


def _perp_basis(u):
    """Orthonormal basis (rows) of the hyperplane orthogonal to the unit vector ``u``."""
    n = u.size
    if n == 2:
        return np.array([[-u[1], u[0]]])
    # Householder reflection mapping e_n to u; its other columns span u^perp
    e = np.zeros(n)
    e[-1] = 1.0
    w = u - e
    nw = float(w @ w)
    Hm = np.eye(n) - (2.0 / nw) * np.outer(w, w) if nw > 1e-30 else np.eye(n)
    return Hm[:, :-1].T.copy()


def section_radius(system) -> float:
    """Half-width ``R_V + margin`` of the ``q_perp`` region where ``tau_E`` can be non-zero."""
    return system.support_radius + system.margin


def _sphere_area(n):
    return 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)


def _ball_volume(n, r):
    r = np.asarray(r, dtype=float)
    return np.exp(0.5 * n * math.log(math.pi) - gammaln(0.5 * n + 1.0)) * r ** n


def sample_gamma_E(system, E, N, seed=0) -> list:
    """Monte Carlo samples of ``Gamma_E`` with equal weights.

    Dispersive systems: ``p_hat`` uniform on the sphere, ``q_perp`` uniform in
    the cube ``[-rho, rho]^{n-1}`` of the orthogonal hyperplane (outside of
    which ``S = id`` and ``tau_E = 0``). Two-dimensional Poincare ball:
    ``theta`` uniform and ``s`` uniform on ``[-tanh(rho/2), tanh(rho/2)]``,
    with the density folded into the weights. Tube systems are rejected:
    their section has no product parametrisation.
    """
    _require_dim(system)
    if N < 1:
        raise ValueError("N must be >= 1")
    rng = np.random.default_rng(seed)
    rho = section_radius(system)
    n = system.n
    out = []
    if isinstance(system, PoincareBallSystem):
        if n != 2:
            raise ConfigurationError("Poincare-ball sections are implemented for n = 2 only")
        smax = math.tanh(0.5 * rho)
        c = math.sqrt(8.0 * E)
        for _ in range(N):
            th = rng.uniform(0.0, 2.0 * math.pi)
            s = rng.uniform(-smax, smax)
            out.append(_ball_node(E, th, s, 2.0 * math.pi * 2.0 * smax / N, None))
        return out
    k = _level_momentum(system, E)
    vol = _sphere_area(n) * (2.0 * rho) ** (n - 1) * k ** (n - 1)
    for _ in range(N):
        u = rng.normal(size=n)
        u /= np.linalg.norm(u)
        x = rng.uniform(-rho, rho, size=n - 1)
        q = x @ _perp_basis(u)
        out.append(SectionSample(PhasePoint(q, k * u), vol / N))
    return out


def _ball_node(E, th, s, w, wc):
    u = np.array([math.cos(th), math.sin(th)])
    nrm = np.array([-u[1], u[0]])
    c = math.sqrt(8.0 * E)
    dens = c * (1.0 + s * s) / (1.0 - s * s) ** 2
    m0 = PhasePoint(s * nrm, c / (1.0 - s * s) * u)
    return SectionSample(m0, w * dens, None if wc is None else wc * dens)


def _trap_nested(a, b, level):
    """Nodes and (fine, coarse) weights of the trapezoid rule on ``2^level + 1`` nodes."""
    m = 2 ** level
    x = np.linspace(a, b, m + 1)
    h = (b - a) / m
    w = np.full(m + 1, h)
    w[0] = w[-1] = 0.5 * h
    wc = np.zeros(m + 1)
    wc[::2] = 2.0 * h
    wc[0] = wc[-1] = h
    return x, w, wc


def _periodic_nested(count):
    if count % 2:
        raise ValueError("the number of angles must be even")
    x = 2.0 * math.pi * np.arange(count) / count
    w = np.full(count, 2.0 * math.pi / count)
    wc = np.zeros(count)
    wc[::2] = 4.0 * math.pi / count
    return x, w, wc


def _direction_rule(n, n_angles):
    """Quadrature on the unit sphere: ``(directions, fine weights, coarse weights)``."""
    if n == 2:
        th, w, wc = _periodic_nested(n_angles)
        return np.stack([np.cos(th), np.sin(th)], axis=1), w, wc
    if n == 3:
        ct, wt = np.polynomial.legendre.leggauss(max(1, n_angles // 2))
        ph, wp, wpc = _periodic_nested(n_angles)
        dirs, w, wc = [], [], []
        for c, a in zip(ct, wt):
            st = math.sqrt(1.0 - c * c)
            for f, b, bc in zip(ph, wp, wpc):
                dirs.append([st * math.cos(f), st * math.sin(f), c])
                w.append(a * b)
                wc.append(a * bc)
        return np.array(dirs), np.array(w), np.array(wc)
    raise ConfigurationError("grid sections are available for n = 2 and n = 3; use sample_gamma_E")


def section_grid(system, E, level=7, n_angles=8) -> list:
    """Deterministic quadrature nodes on ``Gamma_E`` with an embedded coarse rule.

    ``q_perp`` runs over a tensor trapezoid grid with ``2^level + 1`` nodes
    per axis on ``[-rho, rho]^{n-1}``. The integrand is smooth and vanishes
    to all orders near the edge, so the rule converges spectrally and the
    coarse rule (every other node) gives a conservative error estimate.
    Directions use ``n_angles`` equispaced angles (``n = 2``) or a
    Gauss-Legendre times equispaced product rule (``n = 3``). For the
    two-dimensional Poincare ball the coordinates are ``(theta, s)``.
    """
    _require_dim(system)
    rho = section_radius(system)
    n = system.n
    out = []
    if isinstance(system, PoincareBallSystem):
        if n != 2:
            raise ConfigurationError("Poincare-ball sections are implemented for n = 2 only")
        smax = math.tanh(0.5 * rho)
        th, wt, wtc = _periodic_nested(n_angles)
        s, ws, wsc = _trap_nested(-smax, smax, level)
        for a, b, bc in zip(th, wt, wtc):
            for x, c, cc in zip(s, ws, wsc):
                out.append(_ball_node(E, a, x, b * c, bc * cc))
        return out
    k = _level_momentum(system, E)
    dirs, wd, wdc = _direction_rule(n, n_angles)
    x, wx, wxc = _trap_nested(-rho, rho, level)
    grids = np.meshgrid(*([x] * (n - 1)), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    wq = np.ones(pts.shape[0])
    wqc = np.ones(pts.shape[0])
    for axis, g in enumerate(np.meshgrid(*([np.arange(x.size)] * (n - 1)), indexing="ij")):
        wq *= wx[g.ravel()]
        wqc *= wxc[g.ravel()]
    scale = k ** (n - 1)
    for u, a, ac in zip(dirs, wd, wdc):
        basis = _perp_basis(u)
        for xq, b, bc in zip(pts, wq, wqc):
            out.append(SectionSample(PhasePoint(xq @ basis, k * u), scale * a * b, scale * ac * bc))
    return out


def check_sample(system, sample: SectionSample, E, tol=SECTION_TOL):
    """Raise :class:`DomainError` unless the sample satisfies the section constraints."""
    m = sample.m0
    if abs(system.H0(m.q, m.p) - E) > tol * max(1.0, abs(E)):
        raise DomainError(f"H0 = {system.H0(m.q, m.p)} != E = {E}")
    v = system.nabla_H0(m.q, m.p)
    if abs(float(system.phi(m.q, m.p) @ v)) > tol * max(1.0, float(np.linalg.norm(v))):
        raise DomainError("Phi . grad H0 != 0 at a section sample")


# ---------------------------------------------------------------------------
# fixed-energy delay and its average


def _support_missed(system, m0):
    """True when the free line through ``m0`` stays outside ``{|Phi| <= R_V}``.

    On the section ``Phi(m0)`` is orthogonal to ``grad H0`` so ``|Phi(m0)|``
    is the distance of closest approach; beyond ``R_V`` the particle never
    meets the support of ``V`` and ``S(m0) = m0``.
    """
    return float(np.linalg.norm(system.phi(m0.q, m0.p))) > system.support_radius


def tau_E(system, sample, cfg=None) -> float:
    """``tau_E(m0) = -T(S(m0))`` (``T(m0) = 0`` on the section)."""
    cfg = resolve_config(system, cfg)
    m0 = sample.m0 if isinstance(sample, SectionSample) else system.point(*sample)
    if system.potential.is_zero or _support_missed(system, m0):
        return 0.0
    rec = scattering_map(system, m0, cfg, check_horizon=False)
    return -arrival_time(system, rec.m_plus)


def _tau_E_safe(sample, system, cfg):
    try:
        return tau_E(system, sample, cfg)
    except ScatterLabError:
        return math.nan


@dataclass
class AverageDelay:
    """``T_E`` with its error bar.

    ``quadrature_error`` is ``|Q_fine - Q_coarse|`` for grid rules or the
    standard error for Monte Carlo samples; ``integrator_error`` compares
    against a run with looser integrator settings (grid rules only).
    """

    E: float
    value: float
    error: float
    quadrature_error: float
    integrator_error: float
    n_used: int
    n_failed: int
    taus: np.ndarray = field(repr=False, default=None)


def _weighted_sums(samples, taus):
    ok = np.isfinite(taus)
    fine = math.fsum(s.weight * t for s, t, g in zip(samples, taus, ok) if g)
    if samples and samples[0].coarse_weight is not None:
        coarse = math.fsum(s.coarse_weight * t for s, t, g in zip(samples, taus, ok) if g)
        return fine, abs(fine - coarse)
    vals = np.array([s.weight * t * len(samples) for s, t, g in zip(samples, taus, ok) if g])
    se = float(np.std(vals, ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else math.inf
    return fine, se


def loosened(cfg: FlowConfig) -> FlowConfig:
    """Integrator settings with roughly 100 times larger error (for error estimates)."""
    from dataclasses import replace
    if cfg.fixed_step:
        return replace(cfg, step=2.0 * cfg.step)
    return replace(cfg, rel_tol=100.0 * cfg.rel_tol, abs_tol=100.0 * cfg.abs_tol)


def average_time_delay(system, E, samples, cfg=None, workers=1, integrator_check=True) -> AverageDelay:
    """``T_E = int tau_E omega^{n-1}/(n-1)!`` from section samples.

    Failed samples (suspected captures) are excluded and counted. For grid
    rules the integrator contribution to the error is estimated by
    re-evaluating the coarse rule with :func:`loosened` settings; for the
    fixed-step method the difference is divided by 3 (second order).
    """
    cfg = resolve_config(system, cfg)
    samples = list(samples)
    for s in samples:
        check_sample(system, s, E)
    taus = np.array(pmap(partial(_tau_E_safe, system=system, cfg=cfg), samples, workers))
    n_failed = int(np.sum(~np.isfinite(taus)))
    value, qerr = _weighted_sums(samples, taus)
    ierr = 0.0
    grid = bool(samples) and samples[0].coarse_weight is not None
    if grid and integrator_check and not system.potential.is_zero:
        sub = [(i, s) for i, s in enumerate(samples) if s.coarse_weight]
        loose = loosened(cfg)
        t2 = pmap(partial(_tau_E_safe, system=system, cfg=loose), [s for _, s in sub], workers)
        a = math.fsum(s.coarse_weight * taus[i] for (i, s) in sub if np.isfinite(taus[i]))
        b = math.fsum(s.coarse_weight * t for (_, s), t in zip(sub, t2) if np.isfinite(t))
        ierr = abs(a - b) / (3.0 if cfg.fixed_step else 1.0)
    err = math.hypot(qerr, ierr)
    return AverageDelay(float(E), value, err, qerr, ierr, int(taus.size - n_failed), n_failed, taus)


# ---------------------------------------------------------------------------
# regularised phase-space volume


def xi_box(system):
    """Axis-aligned box in configuration space that contains ``supp V``."""
    box = system.q_box()
    if box is None:
        return None
    lo, hi = box[0].min(axis=0), box[1].max(axis=0)
    if isinstance(system, PoincareBallSystem):
        lo, hi = np.maximum(lo, -1.0), np.minimum(hi, 1.0)
    return lo, hi


def _momentum_shell_radius(system, lo, hi, E):
    """Bound on ``|p|`` for ``H0 <= E + max|V|`` over the box (phase-space sampling)."""
    emax = E + system.potential.max_abs_bound()
    if isinstance(system, DispersiveSystem):
        return float(system.dispersion.level_momentum(emax))
    if isinstance(system, PoincareBallSystem):
        corner = np.max(np.maximum(np.abs(lo), np.abs(hi)) ** 2)
        rq = min(system.potential.support_norm_bound(), math.sqrt(corner))
        return math.sqrt(8.0 * emax) / (1.0 - rq * rq)
    return math.sqrt(2.0 * emax)


def _xi_chunk(task, system, energies, dE, method):
    """Per-chunk sums for ``xi`` at ``energies`` and for central differences ``+-dE``, ``+-2dE``."""
    seed_seq, size = task
    rng = np.random.default_rng(seed_seq)
    lo, hi = xi_box(system)
    n = system.n
    vol_q = float(np.prod(hi - lo))
    Q = rng.uniform(lo, hi, size=(size, n))
    if method == "phase-space":
        P_r = _momentum_shell_radius(system, lo, hi, max(energies) + 2.0 * dE)
        Pm = rng.normal(size=(size, n))
        Pm /= np.linalg.norm(Pm, axis=1)[:, None]
        Pm *= P_r * rng.uniform(size=(size, 1)) ** (1.0 / n)
        vol = vol_q * float(_ball_volume(n, P_r))
        H0 = np.array([system.H0(q, p) if system.admissible(q, p) else np.inf for q, p in zip(Q, Pm)])
        V = system.potential.value(Q)

        def delta(E):
            return vol * ((H0 <= E).astype(float) - (H0 + V <= E).astype(float))
    else:
        admissible = system.admissible_q(Q)

        def delta(E):
            r0 = system.momentum_ball_radius(Q, E, perturbed=False)
            r1 = system.momentum_ball_radius(Q, E, perturbed=True)
            d = vol_q * (_ball_volume(n, r0) - _ball_volume(n, r1))
            return np.where(admissible, d, 0.0)

    out = []
    for E in energies:
        d0 = delta(E)
        dp1, dm1 = delta(E + dE), delta(E - dE)
        dp2, dm2 = delta(E + 2 * dE), delta(E - 2 * dE)
        der = (dp1 - dm1) / (2.0 * dE)
        der2 = (dp2 - dm2) / (4.0 * dE)
        out.append([math.fsum(d0), math.fsum(d0 * d0), math.fsum(der), math.fsum(der * der),
                    math.fsum(der2)])
    return np.array(out)


@dataclass
class XiEstimate:
    """Monte Carlo estimates at each energy, with paired central differences."""

    E: np.ndarray
    xi: np.ndarray
    xi_err: np.ndarray
    derivative: np.ndarray
    derivative_err: np.ndarray
    derivative_trunc: np.ndarray
    N: int
    method: str


def _chunks(N, seed):
    count = max(1, math.ceil(N / CHUNK))
    children = np.random.SeedSequence(seed).spawn(count)
    sizes = [CHUNK] * (count - 1) + [N - CHUNK * (count - 1)]
    return list(zip(children, sizes))


def xi_scan(system, energies, N, seed=0, dE=0.05, method="conditional", workers=1) -> XiEstimate:
    """``xi(E)`` and ``xi'(E)`` for several energies from one set of random numbers.

    ``method="conditional"`` samples ``q`` uniformly in a box containing
    ``supp V`` and integrates the momentum variables exactly (the sets
    ``{p : H(q, p) <= E}`` are balls for all built-in systems).
    ``method="phase-space"`` samples ``(q, p)`` uniformly in the box times a
    momentum ball covering ``{H0 <= E + max|V|}`` and averages indicator
    differences. Derivatives are central differences over ``+-dE`` of the
    same samples (common random numbers); ``derivative_trunc`` compares the
    ``dE`` and ``2 dE`` differences as an estimate of the truncation error.

    The sample stream is split into fixed chunks seeded by
    ``SeedSequence(seed).spawn``; chunk sums are combined with ``math.fsum``
    in chunk order, so results do not depend on ``workers``.
    """
    _require_dim(system)
    energies = np.atleast_1d(np.asarray(energies, dtype=float))
    if method not in ("conditional", "phase-space"):
        raise ConfigurationError(f"unknown xi method {method!r}")
    if N < 2:
        raise ValueError("N must be >= 2")
    zeros = np.zeros(energies.size)
    if system.potential.is_zero:
        return XiEstimate(energies, zeros, zeros, zeros, zeros, zeros, int(N), method)
    fn = partial(_xi_chunk, system=system, energies=tuple(energies), dE=dE, method=method)
    parts = pmap(fn, _chunks(int(N), seed), workers)
    tot = np.array([[math.fsum(p[i, j] for p in parts) for j in range(5)] for i in range(energies.size)])
    mean = tot[:, 0] / N
    var = np.maximum(tot[:, 1] / N - mean ** 2, 0.0) * N / (N - 1)
    dmean = tot[:, 2] / N
    dvar = np.maximum(tot[:, 3] / N - dmean ** 2, 0.0) * N / (N - 1)
    d2mean = tot[:, 4] / N
    trunc = np.abs(d2mean - dmean) / 3.0
    return XiEstimate(energies, mean, np.sqrt(var / N), dmean, np.sqrt(dvar / N), trunc, int(N), method)


def xi(system, E, N, seed=0, method="conditional", workers=1) -> tuple:
    """``(xi(E), standard error)``; see :func:`xi_scan`."""
    est = xi_scan(system, [E], N, seed, method=method, workers=workers)
    return float(est.xi[0]), float(est.xi_err[0])


# ---------------------------------------------------------------------------
# consistency scan


@dataclass
class EnergyScanResult:
    """Both sides of ``T_E = -xi'(E)`` over an energy grid."""

    E_grid: np.ndarray
    xi: np.ndarray
    xi_err: np.ndarray
    T_E: np.ndarray
    T_E_err: np.ndarray
    cal_derivative: np.ndarray
    xi_derivative: np.ndarray
    xi_derivative_err: np.ndarray
    discrepancy: np.ndarray
    combined_err: np.ndarray
    n_failed: np.ndarray
    N: int
    dE: float

    @property
    def agreement(self) -> np.ndarray:
        """``|T_E + xi'| <= 2 sigma_combined`` per energy."""
        return self.discrepancy <= 2.0 * self.combined_err

    def rows(self) -> list:
        return [[float(e), float(a), float(b), float(c), float(d), float(f), float(g)]
                for e, a, b, c, d, f, g in zip(self.E_grid, self.xi, self.xi_err, self.T_E,
                                               self.T_E_err, self.cal_derivative, self.discrepancy)]


ENERGY_SCAN_HEADER = ["E", "xi", "xi_err", "T_E", "T_E_err", "cal_derivative", "discrepancy"]


def calabi_consistency(system, E_grid, dE=0.05, N=1_000_000, seed=0, cfg=None, workers=1,
                       section="grid", level=7, n_angles=8, section_samples=2000,
                       check_window=True, xi_method="conditional") -> EnergyScanResult:
    """Compare ``T_E`` (section quadrature) with ``-xi'(E)`` (Monte Carlo) on ``E_grid``.

    ``section="grid"`` uses :func:`section_grid` (``level``, ``n_angles``);
    ``section="mc"`` uses ``section_samples`` points of :func:`sample_gamma_E`.
    ``cal_derivative`` is ``-T_E``. The combined error adds in quadrature the
    section-quadrature error, the Monte Carlo error of ``xi'`` and its
    finite-difference truncation estimate.
    """
    _require_dim(system)
    cfg = resolve_config(system, cfg)
    E_grid = np.atleast_1d(np.asarray(E_grid, dtype=float))
    if E_grid.size > 1 and dE >= 0.5 * float(np.min(np.diff(np.sort(E_grid)))):
        raise ConfigurationError("dE must be small relative to the grid spacing")
    if check_window and not system.potential.is_zero:
        for E in E_grid:
            rep = window_check(system, (E - 2 * dE, E + 2 * dE), 0.0, N=500, seed=seed)
            if not rep.ok:
                raise DomainError(f"virial window fails near E = {E}: {rep.reason}")
    est = xi_scan(system, E_grid, N, seed, dE=dE, method=xi_method, workers=workers)
    T, Terr, fails = [], [], []
    for i, E in enumerate(E_grid):
        if section == "grid":
            samples = section_grid(system, E, level, n_angles)
        elif section == "mc":
            samples = sample_gamma_E(system, E, section_samples, seed + 1 + i)
        else:
            raise ConfigurationError(f"unknown section rule {section!r}")
        avg = average_time_delay(system, E, samples, cfg, workers)
        T.append(avg.value)
        Terr.append(avg.error)
        fails.append(avg.n_failed)
    T = np.array(T)
    Terr = np.array(Terr)
    disc = np.abs(T + est.derivative)
    comb = np.sqrt(Terr ** 2 + est.derivative_err ** 2 + est.derivative_trunc ** 2)
    return EnergyScanResult(E_grid, est.xi, est.xi_err, T, Terr, -T, est.derivative, est.derivative_err,
                            disc, comb, np.array(fails), int(N), float(dE))
