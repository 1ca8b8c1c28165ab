"""Canonical phase-space geometry.

Points of ``T*R^n`` (or an open subset of it) in canonical coordinates, scalar
observables, the Poisson bracket, the velocity observable ``{Phi, H0}`` and a
finite-difference test of the symplectic property of a numerically realised map.

Every function here is pure; ``system`` arguments are only consulted for
analytic derivatives and for the admissible domain.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError

EPS = np.finfo(float).eps
#: default central-difference step factor (error balance for first derivatives)
H_CENTRAL = EPS ** (1.0 / 3.0)
#: step factor for the Richardson-extrapolated (fourth-order) stencil
H_RICHARDSON = EPS ** (1.0 / 5.0)

#: default bound below which |grad H0| counts as critical (system units)
EPS_CRIT = 1e-6


@dataclass(frozen=True, eq=False)
class PhasePoint:
    """A point ``m = (q, p)`` of phase space in canonical coordinates."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float).reshape(-1)
        p = np.array(self.p, dtype=float).reshape(-1)
        if q.shape != p.shape or q.size == 0:
            raise ValueError(f"q and p must have equal positive length, got {q.size} and {p.size}")
        q.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def n(self) -> int:
        return self.q.size

    @property
    def y(self) -> np.ndarray:
        """State vector ``(q, p)`` of length ``2n`` (a fresh copy)."""
        return np.concatenate([self.q, self.p])

    @classmethod
    def from_y(cls, y) -> "PhasePoint":
        y = np.asarray(y, dtype=float)
        n = y.size // 2
        return cls(y[:n], y[n:])

    def distance(self, other: "PhasePoint") -> float:
        """Max-norm distance in phase space."""
        return float(np.max(np.abs(self.y - other.y)))

    def __iter__(self):
        yield self.q
        yield self.p

    def __repr__(self):
        return f"PhasePoint(q={self.q.tolist()}, p={self.p.tolist()})"


GradFn = Callable[[np.ndarray, np.ndarray], tuple]


@dataclass(frozen=True)
class Observable:
    """Scalar function on phase space, optionally with an analytic gradient.

    ``grad(q, p)`` must return the pair ``(df/dq, df/dp)``. Without it, brackets
    fall back to central finite differences.
    """

    fn: Callable[[np.ndarray, np.ndarray], float]
    grad: Optional[GradFn] = None
    name: str = "f"

    def __call__(self, q, p) -> float:
        return self.fn(q, p)


def coordinate(j: int) -> Observable:
    """The observable ``q^j`` (zero-based index)."""

    def grad(q, p):
        dq = np.zeros_like(q)
        dq[j] = 1.0
        return dq, np.zeros_like(p)

    return Observable(lambda q, p: float(q[j]), grad, f"q{j + 1}")


def momentum(j: int) -> Observable:
    """The observable ``p_j`` (zero-based index)."""

    def grad(q, p):
        dp = np.zeros_like(p)
        dp[j] = 1.0
        return np.zeros_like(q), dp

    return Observable(lambda q, p: float(p[j]), grad, f"p{j + 1}")


def product(f: Observable, g: Observable) -> Observable:
    """Pointwise product ``f g``; analytic gradient when both factors have one."""
    grad = None
    if f.grad is not None and g.grad is not None:
        def grad(q, p):
            fq, fp = f.grad(q, p)
            gq, gp = g.grad(q, p)
            fv, gv = f(q, p), g(q, p)
            return fv * gq + gv * fq, fv * gp + gv * fp
    return Observable(lambda q, p: f(q, p) * g(q, p), grad, f"({f.name}*{g.name})")


def _check(system, q, p, width=0.0):
    if system is not None:
        system.check_point(q, p, width)


def fd_gradient(f, q, p, h=None, richardson=False, system=None):
    """Central-difference gradient ``(df/dq, df/dp)`` of ``f`` at ``(q, p)``.

    The step for coordinate ``x`` is ``h * (1 + |x|)``. With ``richardson`` the
    estimates at steps ``h`` and ``h/2`` are combined into a fourth-order one.
    When ``system`` is given, the stencil is checked against its admissible
    domain before any evaluation.
    """
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    n = q.size
    x = np.concatenate([q, p])
    if h is None:
        h = H_RICHARDSON if richardson else H_CENTRAL
    steps = h * (1.0 + np.abs(x))
    _check(system, q, p, float(np.max(steps[:n])) if n else 0.0)
    out = np.empty(2 * n)
    for i in range(2 * n):
        def central(step):
            xp = x.copy()
            xm = x.copy()
            xp[i] += step
            xm[i] -= step
            return (f(xp[:n], xp[n:]) - f(xm[:n], xm[n:])) / (2.0 * step)

        d1 = central(steps[i])
        if richardson:
            d2 = central(0.5 * steps[i])
            out[i] = (4.0 * d2 - d1) / 3.0
        else:
            out[i] = d1
    return out[:n], out[n:]


def gradient(f: Observable, q, p, h=None, richardson=False, system=None):
    """Analytic gradient of ``f`` if available, else :func:`fd_gradient`."""
    if f.grad is not None:
        dq, dp = f.grad(q, p)
        return np.asarray(dq, dtype=float), np.asarray(dp, dtype=float)
    return fd_gradient(f, q, p, h=h, richardson=richardson, system=system)


def _bracket_qp(system, f, g, q, p, h=None, richardson=False):
    fq, fp = gradient(f, q, p, h, richardson, system)
    gq, gp = gradient(g, q, p, h, richardson, system)
    return float(np.dot(fq, gp) - np.dot(fp, gq))


def poisson_bracket(system, f: Observable, g: Observable, m: PhasePoint, h_fd=None,
                    richardson=False) -> float:
    """Canonical Poisson bracket ``{f, g}(m) = sum_j df/dq^j dg/dp_j - df/dp_j dg/dq^j``.

    Raises
    ------
    DomainError
        If ``m`` (or a finite-difference stencil point) is not admissible.
    """
    _check(system, m.q, m.p)
    return _bracket_qp(system, f, g, m.q, m.p, h_fd, richardson)


def bracket_observable(system, f: Observable, g: Observable, richardson=False) -> Observable:
    """The observable ``{f, g}``, evaluated pointwise; it carries no gradient, so
    using it inside another bracket triggers (Richardson) finite differences."""
    return Observable(lambda q, p: _bracket_qp(system, f, g, q, p, None, richardson),
                      None, "{%s,%s}" % (f.name, g.name))


def nested_bracket(system, f: Observable, g: Observable, k: Observable, m: PhasePoint) -> float:
    """``{{f, g}, k}(m)``: inner bracket pointwise, outer by Richardson differences."""
    inner = bracket_observable(system, f, g)
    return poisson_bracket(system, inner, k, m, richardson=True)


def nabla_H0(system, m: PhasePoint, analytic=True) -> np.ndarray:
    """Velocity observable ``({Phi_1, H0}, ..., {Phi_d, H0})`` at ``m``."""
    _check(system, m.q, m.p)
    if analytic:
        return np.asarray(system.nabla_H0(m.q, m.p), dtype=float)
    H0 = system.H0_obs
    return np.array([poisson_bracket(system, phi, H0, m) for phi in system.phi_obs])


def is_critical(system, m: PhasePoint, eps_crit=EPS_CRIT) -> bool:
    """True iff ``|grad H0(m)| < eps_crit``."""
    return bool(np.linalg.norm(system.nabla_H0(m.q, m.p)) < eps_crit)


def asscom_residual(system, m: PhasePoint) -> float:
    """``max_j |{{Phi_j, H0}, H0}(m)|``; zero when the position-observable
    assumption holds, up to finite-difference noise."""
    H0 = system.H0_obs
    return max(abs(nested_bracket(system, phi, H0, H0, m)) for phi in system.phi_obs)


def canonical_omega(n: int) -> np.ndarray:
    """Matrix of the canonical two-form ``sum dq^j ^ dp_j`` in ``(q, p)`` order."""
    eye = np.eye(n)
    zero = np.zeros((n, n))
    return np.block([[zero, eye], [-eye, zero]])


@dataclass(frozen=True)
class SymplecticDefectReport:
    point: PhasePoint
    jacobian_step: float
    defect: float
    jacobian: np.ndarray


def fd_jacobian(fmap: Callable[[PhasePoint], PhasePoint], m: PhasePoint, h_jac: float) -> np.ndarray:
    """``2n x 2n`` central-difference Jacobian of a phase map (``4n`` evaluations)."""
    x = m.y
    dim = x.size
    jac = np.empty((dim, dim))
    for i in range(dim):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h_jac
        xm[i] -= h_jac
        jac[:, i] = (fmap(PhasePoint.from_y(xp)).y - fmap(PhasePoint.from_y(xm)).y) / (2.0 * h_jac)
    return jac


def symplectic_defect(fmap: Callable[[PhasePoint], PhasePoint], m: PhasePoint,
                      h_jac: float = 1e-5) -> SymplecticDefectReport:
    """Max-norm of ``J^T Omega J - Omega`` for the finite-difference Jacobian ``J``."""
    if not h_jac > 0:
        raise ValueError("h_jac must be positive")
    jac = fd_jacobian(fmap, m, h_jac)
    omega = canonical_omega(m.n)
    defect = float(np.max(np.abs(jac.T @ omega @ jac - omega)))
    return SymplecticDefectReport(m, h_jac, defect, jac)


def as_points(rows: Sequence) -> list:
    """Convert rows ``(q1..qn, p1..pn)`` into phase points."""
    return [PhasePoint.from_y(r) for r in rows]
