"""Concrete scattering systems ``(M, H0, V, Phi)``.

Three free Hamiltonians are built in, each with its position observable:

* ``DispersiveSystem``: ``H0 = h(p)`` on ``T*R^n`` with ``Phi = q``;
* ``TubeSystem``: a particle in ``R x B_1`` confined by ``v0(|q_perp|^2)``,
  with ``Phi = q^1``;
* ``PoincareBallSystem``: the geodesic flow of the Poincare ball, with ``Phi``
  the signed geodesic distance to the point of closest approach to the origin.

Perturbations are sums of smooth compactly supported bumps
``A exp(1 / ((|q - c| / R)^2 - 1))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, ClassVar, Optional

import numpy as np

from .errors import ConfigurationError, DomainError
from .geometry import (EPS_CRIT, Observable, PhasePoint, bracket_observable, gradient,
                       nested_bracket, poisson_bracket, product)


# ---------------------------------------------------------------------------
# potentials


@dataclass(frozen=True)
class PotentialSpec:
    """Sum of smooth bumps; an empty spec is the trivial potential ``V = 0``."""

    centers: tuple = ()
    radii: tuple = ()
    amplitudes: tuple = ()

    def __post_init__(self):
        centers = tuple(tuple(float(x) for x in c) for c in self.centers)
        radii = tuple(float(r) for r in self.radii)
        amps = tuple(float(a) for a in self.amplitudes)
        if not (len(centers) == len(radii) == len(amps)):
            raise ConfigurationError("centers, radii and amplitudes must have equal length")
        if any(r <= 0 for r in radii):
            raise ConfigurationError("bump radii must be positive")
        if len({len(c) for c in centers}) > 1:
            raise ConfigurationError("all bump centers must have the same dimension")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "_c", np.array(centers, dtype=float).reshape(len(centers), -1)
                           if centers else np.zeros((0, 0)))
        object.__setattr__(self, "_r", np.array(radii, dtype=float))
        object.__setattr__(self, "_a", np.array(amps, dtype=float))

    @classmethod
    def bump(cls, center, radius, amplitude) -> "PotentialSpec":
        return cls((tuple(center),), (radius,), (amplitude,))

    @property
    def is_zero(self) -> bool:
        return all(a == 0.0 for a in self.amplitudes)

    @property
    def dim(self) -> Optional[int]:
        return len(self.centers[0]) if self.centers else None

    def value(self, q):
        """``V(q)`` for one point (shape ``(n,)``) or many (shape ``(N, n)``)."""
        q = np.asarray(q, dtype=float)
        if q.ndim == 1:
            total = 0.0
            for c, r, a in zip(self._c, self._r, self._a):
                d = q - c
                u = float(d @ d) / (r * r)
                if u < 1.0:
                    total += a * math.exp(1.0 / (u - 1.0))
            return total
        out = np.zeros(q.shape[0])
        for c, r, a in zip(self._c, self._r, self._a):
            d = q - c
            u = np.einsum("ij,ij->i", d, d) / (r * r)
            inside = u < 1.0
            out[inside] += a * np.exp(1.0 / (u[inside] - 1.0))
        return out

    def grad(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        g = np.zeros_like(q)
        for c, r, a in zip(self._c, self._r, self._a):
            d = q - c
            u = float(d @ d) / (r * r)
            if u < 1.0:
                s = u - 1.0
                g -= (a * math.exp(1.0 / s) / (s * s) * 2.0 / (r * r)) * d
        return g

    def hess(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        n = q.size
        out = np.zeros((n, n))
        for c, r, a in zip(self._c, self._r, self._a):
            d = q - c
            u = float(d @ d) / (r * r)
            if u < 1.0:
                s = u - 1.0
                f = a * math.exp(1.0 / s)
                df = -f / (s * s)
                ddf = f / s ** 4 + 2.0 * f / s ** 3
                du = 2.0 * d / (r * r)
                out += ddf * np.outer(du, du) + df * 2.0 / (r * r) * np.eye(n)
        return out

    def support_norm_bound(self) -> float:
        """``max_k |c_k| + R_k`` (0 for no bumps)."""
        if not self.centers:
            return 0.0
        return float(max(np.linalg.norm(c) + r for c, r in zip(self._c, self._r)))

    def max_abs_bound(self) -> float:
        """Upper bound for ``sup |V|`` (bump peak value is ``|A| / e``)."""
        return float(np.sum(np.abs(self._a))) / math.e

    def bounding_box(self):
        """Per-bump axis-aligned boxes ``(lo, hi)``, arrays of shape ``(k, n)``; ``None`` if ``V = 0``."""
        if not self.centers:
            return None
        return self._c - self._r[:, None], self._c + self._r[:, None]

    def min_radius(self) -> float:
        return float(np.min(self._r)) if self.radii else math.inf

    def to_dict(self) -> dict:
        return {"centers": [list(c) for c in self.centers], "radii": list(self.radii),
                "amplitudes": list(self.amplitudes)}

    @classmethod
    def from_dict(cls, d) -> "PotentialSpec":
        if d is None:
            return cls()
        try:
            return cls(tuple(tuple(c) for c in d.get("centers", ())), tuple(d.get("radii", ())),
                       tuple(d.get("amplitudes", ())))
        except (TypeError, AttributeError) as exc:
            raise ConfigurationError(f"potential: {exc}") from None


ZERO_POTENTIAL = PotentialSpec()


# ---------------------------------------------------------------------------
# dispersion relations


@dataclass(frozen=True)
class Dispersion:
    """Kinetic energy ``h(p)`` with gradient and Hessian.

    For radial kinds (``h`` a function of ``|p|`` increasing in it) the level
    sets are spheres and ``level_momentum(E)`` gives their radius.
    """

    name: str
    h: Callable
    grad: Callable
    hess: Optional[Callable] = None
    level_momentum: Optional[Callable] = None  # E -> |p| with h(p) = E (nan below range)
    g1: Optional[Callable] = None  # lower bound of |grad h|^2 as function of h
    g2: Optional[Callable] = None  # upper bound of max |d_i d_j h| as function of h

    @property
    def radial(self) -> bool:
        return self.level_momentum is not None

    def __reduce__(self):
        # the built-in relations hold lambdas; pickle them by name
        if DISPERSIONS.get(self.name) is self:
            return (_named_dispersion, (self.name,))
        return super().__reduce__()


def _quadratic_level(E):
    E = np.asarray(E, dtype=float)
    return np.sqrt(np.where(E > 0, 2.0 * E, np.nan))


def _relativistic_level(E):
    E = np.asarray(E, dtype=float)
    return np.sqrt(np.where(E > 1, E * E - 1.0, np.nan))


QUADRATIC = Dispersion(
    "quadratic",
    h=lambda p: 0.5 * float(p @ p),
    grad=lambda p: np.array(p, dtype=float),
    hess=lambda p: np.eye(p.size),
    level_momentum=_quadratic_level,
    g1=lambda x: 2.0 * x,
    g2=lambda x: 1.0,
)

RELATIVISTIC = Dispersion(
    "relativistic",
    h=lambda p: math.sqrt(1.0 + float(p @ p)),
    grad=lambda p: p / math.sqrt(1.0 + float(p @ p)),
    hess=lambda p: (np.eye(p.size) - np.outer(p, p) / (1.0 + float(p @ p))) / math.sqrt(1.0 + float(p @ p)),
    level_momentum=_relativistic_level,
    g1=lambda x: 1.0 - x ** -2,
    g2=lambda x: 1.0 / x,
)

DISPERSIONS = {"quadratic": QUADRATIC, "relativistic": RELATIVISTIC}


def _named_dispersion(name):
    return DISPERSIONS[name]


# ---------------------------------------------------------------------------
# systems


@dataclass(frozen=True)
class SystemSpec:
    """Common machinery; subclasses define ``H0``, ``Phi`` and the domain."""

    potential: PotentialSpec = ZERO_POTENTIAL
    eps_crit: float = EPS_CRIT

    kind: ClassVar[str] = "abstract"
    separable: ClassVar[bool] = False
    n: ClassVar[int]
    d: ClassVar[int]

    # -- Hamiltonians ------------------------------------------------------
    def H0(self, q, p) -> float:
        raise NotImplementedError

    def grad_H0(self, q, p):
        raise NotImplementedError

    def V(self, q) -> float:
        return self.potential.value(q)

    def grad_V(self, q) -> np.ndarray:
        return self.potential.grad(q)

    def H(self, q, p) -> float:
        return self.H0(q, p) + self.V(q)

    def grad_H(self, q, p):
        dq, dp = self.grad_H0(q, p)
        return dq + self.grad_V(q), dp

    def phi(self, q, p) -> np.ndarray:
        raise NotImplementedError

    def grad_phi(self, q, p):
        """``(dPhi/dq, dPhi/dp)``, both of shape ``(d, n)``."""
        raise NotImplementedError

    def nabla_H0(self, q, p) -> np.ndarray:
        raise NotImplementedError

    def phi_norm(self, y) -> float:
        """``|Phi|`` at the state vector ``y = (q, p)``."""
        n = self.n
        return float(np.linalg.norm(self.phi(y[:n], y[n:])))

    def rhs(self, y, perturbed=True) -> np.ndarray:
        """Hamiltonian vector field ``(dH/dp, -dH/dq)`` for ``H`` or ``H0``."""
        n = y.size // 2
        q, p = y[:n], y[n:]
        dq, dp = self.grad_H(q, p) if perturbed else self.grad_H0(q, p)
        return np.concatenate([dp, -dq])

    # -- splitting interface for fixed-step symplectic methods -------------
    def kinetic_grad(self, p) -> np.ndarray:
        raise ConfigurationError(f"{self.kind} system is not separable")

    def potential_grad(self, q, perturbed=True) -> np.ndarray:
        raise ConfigurationError(f"{self.kind} system is not separable")

    def exact_free_flow(self, q, p, t):
        """Closed-form free flow, or ``None`` when it must be integrated."""
        return None

    # -- domain ------------------------------------------------------------
    def check_point(self, q, p, width=0.0):
        """Raise :class:`DomainError` unless ``(q, p)``, widened by ``width``, is admissible."""
        q = np.asarray(q)
        p = np.asarray(p)
        if q.size != self.n or p.size != self.n:
            raise DomainError(f"expected {self.n} coordinates, got q:{q.size} p:{p.size}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise DomainError("non-finite phase point")

    def admissible_q(self, Q) -> np.ndarray:
        """Vectorised test that configuration points (rows of ``Q``) lie in the domain."""
        return np.all(np.isfinite(np.atleast_2d(Q)), axis=1)

    def admissible(self, q, p, width=0.0) -> bool:
        try:
            self.check_point(q, p, width)
        except DomainError:
            return False
        return True

    # -- derived quantities --------------------------------------------------
    @property
    def support_radius(self) -> float:
        """``R_V``: bound of ``|Phi|`` on the support of ``V``."""
        raise NotImplementedError

    @property
    def margin(self) -> float:
        """Safety distance beyond ``R_V`` in Phi units."""
        return max(0.1, 0.01 * self.support_radius)

    def __getstate__(self):
        # cached observables hold closures; they are rebuilt on demand
        state = dict(self.__dict__)
        for key in ("H0_obs", "H_obs", "V_obs", "phi_obs"):
            state.pop(key, None)
        return state

    @cached_property
    def H0_obs(self) -> Observable:
        return Observable(self.H0, self.grad_H0, "H0")

    @cached_property
    def H_obs(self) -> Observable:
        return Observable(self.H, self.grad_H, "H")

    @cached_property
    def V_obs(self) -> Observable:
        return Observable(lambda q, p: self.V(q),
                          lambda q, p: (self.grad_V(q), np.zeros_like(p)), "V")

    @cached_property
    def phi_obs(self) -> list:
        def make(j):
            def grad(q, p):
                gq, gp = self.grad_phi(q, p)
                return gq[j], gp[j]
            return Observable(lambda q, p: float(self.phi(q, p)[j]), grad, f"Phi{j + 1}")
        return [make(j) for j in range(self.d)]

    def momentum_ball_radius(self, Q, E, perturbed):
        """Radius of ``{p : H(q, p) <= E}`` (or ``H0``) for each row of ``Q``; 0 if empty."""
        raise NotImplementedError

    def q_box(self):
        """Box in configuration space containing the support of ``V``."""
        return self.potential.bounding_box()

    def speed_bound(self, q, p) -> float:
        """Upper bound of ``|dq/dt|`` along the orbit through ``(q, p)``."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def point(self, q, p) -> PhasePoint:
        m = PhasePoint(q, p)
        self.check_point(m.q, m.p)
        return m


@dataclass(frozen=True)
class DispersiveSystem(SystemSpec):
    n: int = 2
    dispersion: Dispersion = QUADRATIC

    kind: ClassVar[str] = "dispersive"
    separable: ClassVar[bool] = True

    @property
    def d(self):
        return self.n

    def H0(self, q, p):
        return self.dispersion.h(np.asarray(p, dtype=float))

    def grad_H0(self, q, p):
        return np.zeros(len(q)), np.asarray(self.dispersion.grad(np.asarray(p, dtype=float)), dtype=float)

    def phi(self, q, p):
        return np.array(q, dtype=float)

    def grad_phi(self, q, p):
        return np.eye(self.n), np.zeros((self.n, self.n))

    def nabla_H0(self, q, p):
        return np.asarray(self.dispersion.grad(np.asarray(p, dtype=float)), dtype=float)

    def phi_norm(self, y):
        return math.sqrt(float(y[:self.n] @ y[:self.n]))

    def kinetic_grad(self, p):
        return self.dispersion.grad(p)

    def potential_grad(self, q, perturbed=True):
        return self.potential.grad(q) if perturbed else np.zeros_like(q)

    def rhs(self, y, perturbed=True):
        n = self.n
        q, p = y[:n], y[n:]
        out = np.empty_like(y)
        out[:n] = self.dispersion.grad(p)
        out[n:] = -self.potential.grad(q) if perturbed else 0.0
        return out

    def exact_free_flow(self, q, p, t):
        return q + t * self.dispersion.grad(p), p.copy()

    @property
    def support_radius(self):
        return self.potential.support_norm_bound()

    def momentum_ball_radius(self, Q, E, perturbed):
        if not self.dispersion.radial:
            raise ConfigurationError("momentum volumes need a radial dispersion")
        Q = np.atleast_2d(Q)
        level = E - (self.potential.value(Q) if perturbed else np.zeros(Q.shape[0]))
        k = self.dispersion.level_momentum(level)
        return np.nan_to_num(k, nan=0.0)

    def speed_bound(self, q, p):
        name = self.dispersion.name
        if name == "relativistic":
            return 1.0
        if name == "quadratic":
            return math.sqrt(2.0 * max(self.H(q, p), 0.0) + 2.0 * self.potential.max_abs_bound())
        return 2.0 * float(np.linalg.norm(self.dispersion.grad(np.asarray(p, dtype=float)))) + 1e-3

    def to_dict(self):
        if self.dispersion.name not in DISPERSIONS:
            raise ConfigurationError("custom dispersions cannot be serialised")
        return {"kind": self.kind, "n": self.n, "dispersion": self.dispersion.name,
                "potential": self.potential.to_dict(), "eps_crit": self.eps_crit}


def _v0_smooth(x):
    s = x - 0.5
    if s <= 0:
        return 0.0, 0.0
    b = 1.0 - x
    e = math.exp(-1.0 / s)
    return e / (b * b), e * (1.0 / (s * s * b * b) + 2.0 / b ** 3)


def _v0_quadratic(x):
    a = x - 0.5
    if a <= 0:
        return 0.0, 0.0
    b = 1.0 - x
    return (a / b) ** 2, a / b ** 3


CONFINEMENTS = {"smooth": _v0_smooth, "quadratic": _v0_quadratic}


@dataclass(frozen=True)
class TubeSystem(SystemSpec):
    """Particle in the tube ``R x B_1`` (transverse dimension ``n_transverse``)."""

    n_transverse: int = 1
    confinement: str = "smooth"

    kind: ClassVar[str] = "tube"
    separable: ClassVar[bool] = True
    d: ClassVar[int] = 1

    def __post_init__(self):
        if self.confinement not in CONFINEMENTS:
            raise ConfigurationError(f"unknown confinement {self.confinement!r}")

    @property
    def n(self):
        return 1 + self.n_transverse

    def v0(self, x):
        """Confinement profile and its derivative at ``x = |q_perp|^2``."""
        if x >= 1.0:
            return math.inf, math.inf
        return CONFINEMENTS[self.confinement](x)

    def _confining_grad(self, q):
        qp = q[1:]
        x = float(qp @ qp)
        g = np.zeros_like(q, dtype=float)
        _, dv = self.v0(x)
        g[1:] = 2.0 * dv * qp
        return g

    def H0(self, q, p):
        p = np.asarray(p, dtype=float)
        qp = np.asarray(q, dtype=float)[1:]
        return 0.5 * float(p @ p) + self.v0(float(qp @ qp))[0]

    def grad_H0(self, q, p):
        return self._confining_grad(np.asarray(q, dtype=float)), np.asarray(p, dtype=float)

    def phi(self, q, p):
        return np.array([q[0]], dtype=float)

    def grad_phi(self, q, p):
        gq = np.zeros((1, self.n))
        gq[0, 0] = 1.0
        return gq, np.zeros((1, self.n))

    def nabla_H0(self, q, p):
        return np.array([p[0]], dtype=float)

    def phi_norm(self, y):
        return abs(float(y[0]))

    def kinetic_grad(self, p):
        return p

    def potential_grad(self, q, perturbed=True):
        g = self._confining_grad(q)
        if perturbed:
            g = g + self.potential.grad(q)
        return g

    def check_point(self, q, p, width=0.0):
        super().check_point(q, p, width)
        if np.linalg.norm(np.asarray(q)[1:]) + width >= 1.0:
            raise DomainError("point (or stencil) outside the tube R x B_1")

    def admissible_q(self, Q):
        Q = np.atleast_2d(Q)
        return super().admissible_q(Q) & (np.einsum("ij,ij->i", Q[:, 1:], Q[:, 1:]) < 1.0)

    @property
    def support_radius(self):
        if not self.potential.centers:
            return 0.0
        return float(max(abs(c[0]) + r for c, r in zip(self.potential.centers, self.potential.radii)))

    def momentum_ball_radius(self, Q, E, perturbed):
        Q = np.atleast_2d(Q)
        x = np.einsum("ij,ij->i", Q[:, 1:], Q[:, 1:])
        v0 = np.array([self.v0(xi)[0] for xi in x])
        level = E - v0 - (self.potential.value(Q) if perturbed else 0.0)
        return np.sqrt(np.clip(2.0 * level, 0.0, None))

    def q_box(self):
        box = self.potential.bounding_box()
        if box is None:
            return None
        lo, hi = box
        lo = lo.copy()
        hi = hi.copy()
        lo[:, 1:] = np.maximum(lo[:, 1:], -1.0)
        hi[:, 1:] = np.minimum(hi[:, 1:], 1.0)
        return lo, hi

    def speed_bound(self, q, p):
        return math.sqrt(2.0 * max(self.H(q, p), 0.0) + 2.0 * self.potential.max_abs_bound())

    def to_dict(self):
        return {"kind": self.kind, "n": self.n_transverse, "confinement": self.confinement,
                "potential": self.potential.to_dict(), "eps_crit": self.eps_crit}


@dataclass(frozen=True)
class PoincareBallSystem(SystemSpec):
    """Kinetic energy ``|p|^2 (1 - |q|^2)^2 / 8`` of the Poincare ball."""

    n: int = 2

    kind: ClassVar[str] = "poincare-ball"
    d: ClassVar[int] = 1

    def H0(self, q, p):
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        c = 1.0 - float(q @ q)
        return 0.125 * float(p @ p) * c * c

    def grad_H0(self, q, p):
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        c = 1.0 - float(q @ q)
        return -0.5 * float(p @ p) * c * q, 0.25 * c * c * p

    def _w(self, q, p):
        return 2.0 * float(p @ q) / (math.sqrt(float(p @ p)) * (1.0 + float(q @ q)))

    def phi(self, q, p):
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        return np.array([math.atanh(self._w(q, p))])

    def grad_phi(self, q, p):
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        pq = float(p @ q)
        pn = math.sqrt(float(p @ p))
        a = 1.0 + float(q @ q)
        w = 2.0 * pq / (pn * a)
        dwdq = 2.0 * p / (pn * a) - 4.0 * pq * q / (pn * a * a)
        dwdp = 2.0 * q / (pn * a) - 2.0 * pq * p / (pn ** 3 * a)
        s = 1.0 / (1.0 - w * w)
        return (s * dwdq)[None, :], (s * dwdp)[None, :]

    def nabla_H0(self, q, p):
        return np.array([math.sqrt(2.0 * self.H0(q, p))])

    def check_point(self, q, p, width=0.0):
        super().check_point(q, p, width)
        if np.linalg.norm(q) + width >= 1.0:
            raise DomainError("point (or stencil) outside the open unit ball")
        if np.linalg.norm(p) <= width:
            raise DomainError("p = 0 is excluded from the Poincare-ball phase space")

    def admissible_q(self, Q):
        Q = np.atleast_2d(Q)
        return super().admissible_q(Q) & (np.einsum("ij,ij->i", Q, Q) < 1.0)

    @property
    def support_radius(self):
        # hyperbolic radius of the Euclidean ball containing supp(V)
        return 2.0 * math.atanh(self.potential.support_norm_bound())

    def momentum_ball_radius(self, Q, E, perturbed):
        Q = np.atleast_2d(Q)
        c = 1.0 - np.einsum("ij,ij->i", Q, Q)
        level = E - (self.potential.value(Q) if perturbed else np.zeros(Q.shape[0]))
        ok = (c > 0) & (level > 0)
        out = np.zeros(Q.shape[0])
        out[ok] = np.sqrt(8.0 * level[ok]) / c[ok]
        return out

    def speed_bound(self, q, p):
        # |dq/dt| = sqrt(8 H0) (1 - |q|^2) / 4 <= sqrt(H0 / 2)
        return math.sqrt(0.5 * (max(self.H(q, p), 0.0) + self.potential.max_abs_bound()))

    def to_dict(self):
        return {"kind": self.kind, "n": self.n, "potential": self.potential.to_dict(),
                "eps_crit": self.eps_crit}


# ---------------------------------------------------------------------------
# constructors


def _check_potential_dim(potential, n):
    if potential.dim is not None and potential.dim != n:
        raise ConfigurationError(f"potential centers have dimension {potential.dim}, system has {n}")


def make_dispersive(h_kind="quadratic", n=2, potential=ZERO_POTENTIAL, *, h=None, grad=None,
                    hess=None, eps_crit=EPS_CRIT) -> DispersiveSystem:
    """Purely kinetic ``H0 = h(p)`` on ``T*R^n`` with ``Phi = q``.

    ``h_kind`` is ``"quadratic"`` (``|p|^2/2``), ``"relativistic"``
    (``sqrt(1 + |p|^2)``) or ``"custom"``, in which case ``h`` and ``grad`` are
    required (``hess`` is optional; it is needed only by the closed-form virial).
    """
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    _check_potential_dim(potential, n)
    if h_kind == "custom":
        if h is None or grad is None:
            raise ConfigurationError("custom dispersion needs both h and its gradient")
        disp = Dispersion("custom", h, grad, hess)
    elif h_kind in DISPERSIONS:
        disp = DISPERSIONS[h_kind]
    else:
        raise ConfigurationError(f"unknown dispersion {h_kind!r}")
    return DispersiveSystem(potential=potential, eps_crit=eps_crit, n=n, dispersion=disp)


def make_tube(n_transverse=1, potential=ZERO_POTENTIAL, *, confinement="smooth",
              eps_crit=EPS_CRIT) -> TubeSystem:
    """Particle in the straight tube ``R x B_1``; ``Phi = q^1`` and ``grad H0 = p_1``."""
    if n_transverse < 1:
        raise ConfigurationError("n_transverse must be >= 1")
    _check_potential_dim(potential, 1 + n_transverse)
    for c, r in zip(potential.centers, potential.radii):
        if np.linalg.norm(c[1:]) + r >= 1.0:
            raise ConfigurationError("potential support touches the tube boundary")
    return TubeSystem(potential=potential, eps_crit=eps_crit, n_transverse=n_transverse,
                      confinement=confinement)


def make_poincare_ball(n=2, potential=ZERO_POTENTIAL, *, eps_crit=EPS_CRIT) -> PoincareBallSystem:
    """Geodesic flow on the Poincare ball perturbed by ``V(q)`` supported in ``B_r``, ``r < 1``."""
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    _check_potential_dim(potential, n)
    if potential.support_norm_bound() >= 1.0:
        raise ConfigurationError("potential support must lie inside the open unit ball")
    return PoincareBallSystem(potential=potential, eps_crit=eps_crit, n=n)


def system_from_dict(d: dict) -> SystemSpec:
    """Inverse of ``SystemSpec.to_dict``."""
    if not isinstance(d, dict) or "kind" not in d:
        raise ConfigurationError("system: 'kind' is required")
    known = {"kind", "n", "dispersion", "potential", "eps_crit", "confinement"}
    extra = set(d) - known
    if extra:
        raise ConfigurationError(f"system: unknown field(s) {sorted(extra)}")
    pot = PotentialSpec.from_dict(d.get("potential"))
    eps = float(d.get("eps_crit", EPS_CRIT))
    kind = d["kind"]
    try:
        n = int(d.get("n", 2))
    except (TypeError, ValueError):
        raise ConfigurationError("system.n must be an integer") from None
    if kind == "dispersive":
        return make_dispersive(d.get("dispersion", "quadratic"), n, pot, eps_crit=eps)
    if kind == "tube":
        return make_tube(n, pot, confinement=d.get("confinement", "smooth"), eps_crit=eps)
    if kind == "poincare-ball":
        return make_poincare_ball(n, pot, eps_crit=eps)
    raise ConfigurationError(f"system.kind: unknown kind {kind!r}")


# ---------------------------------------------------------------------------
# virial quantities


def _phi_dot_nabla(system) -> Observable:
    return Observable(lambda q, p: float(system.phi(q, p) @ system.nabla_H0(q, p)), None, "Phi.gradH0")


def virial_profile(system, m: PhasePoint, closed_form=True) -> float:
    """``{Phi . grad H0, H}(m)``.

    Dispersive systems use ``|grad h(p)|^2 - q^T Hess h(p) grad V(q)`` unless
    ``closed_form`` is false; everything else goes through nested brackets.
    """
    system.check_point(m.q, m.p)
    if closed_form and isinstance(system, DispersiveSystem) and system.dispersion.hess is not None:
        g = system.dispersion.grad(m.p)
        return float(g @ g - m.q @ system.dispersion.hess(m.p) @ system.grad_V(m.q))
    return poisson_bracket(system, _phi_dot_nabla(system), system.H_obs, m, richardson=True)


def virial_identity_residual(system, m: PhasePoint) -> float:
    """``|LHS - RHS|`` of the virial identity for ``1/2 {{|Phi|^2, H}, H}``.

    Both sides are assembled from independent nested brackets; the right side is
    ``|grad H0|^2 + |{Phi,V}|^2 + Phi.{{Phi,V},V} + {Phi.{Phi,V},H0} + {Phi.grad H0, V}``.
    """
    system.check_point(m.q, m.p)
    H, H0, V = system.H_obs, system.H0_obs, system.V_obs
    phis = system.phi_obs

    phi2 = Observable(lambda q, p: float(system.phi(q, p) @ system.phi(q, p)),
                      _phi2_grad(system), "|Phi|^2")
    lhs = 0.5 * nested_bracket(system, phi2, H, H, m)

    grad0 = system.nabla_H0(m.q, m.p)
    phival = system.phi(m.q, m.p)
    phiV = np.array([poisson_bracket(system, f, V, m) for f in phis])
    term_vv = sum(phival[j] * nested_bracket(system, f, V, V, m) for j, f in enumerate(phis))
    inner = [bracket_observable(system, f, V) for f in phis]
    phi_dot_phiV = Observable(
        lambda q, p: float(sum(system.phi(q, p)[j] * inner[j](q, p) for j in range(system.d))),
        None, "Phi.{Phi,V}")
    term_h0 = poisson_bracket(system, phi_dot_phiV, H0, m, richardson=True)
    term_v = poisson_bracket(system, _phi_dot_nabla(system), V, m, richardson=True)
    rhs = float(grad0 @ grad0 + phiV @ phiV + term_vv + term_h0 + term_v)
    return abs(lhs - rhs)


def _phi2_grad(system):
    def grad(q, p):
        val = system.phi(q, p)
        gq, gp = system.grad_phi(q, p)
        return 2.0 * val @ gq, 2.0 * val @ gp
    return grad


def _support_samples(potential, rng, count):
    """Uniform samples inside the union of bump balls (rejection from the bounding box)."""
    box = potential.bounding_box()
    if box is None:
        return np.zeros((0, 1))
    lo, hi = box[0].min(axis=0), box[1].max(axis=0)
    out = []
    total = 0
    while total < count:
        Q = rng.uniform(lo, hi, size=(2 * count, lo.size))
        keep = np.zeros(Q.shape[0], dtype=bool)
        for c, r in zip(potential._c, potential._r):
            keep |= np.einsum("ij,ij->i", Q - c, Q - c) < r * r
        out.append(Q[keep])
        total += int(keep.sum())
    return np.concatenate(out)[:count]


def virial_constants(system, n_samples=20000, seed=0, safety=1.1) -> dict:
    """Sampled sup-constants controlling the virial lower bounds.

    * dispersive: ``c_V = sup |q| |grad V(q)|``;
    * tube: ``K_V = sup |q^1 d_1 V(q)|``;
    * Poincare ball: ``K_V = sup |sqrt(2 H0) {Phi, V}| + |Phi {sqrt(2 H0), V}|``
      (both terms are independent of ``|p|``).

    Maxima are multiplied by ``safety``.
    """
    rng = np.random.default_rng(seed)
    pot = system.potential
    if pot.is_zero:
        return {"c_V": 0.0, "K_V": 0.0}
    Q = _support_samples(pot, rng, n_samples)
    out = {}
    if isinstance(system, DispersiveSystem):
        vals = [np.linalg.norm(q) * np.linalg.norm(pot.grad(q)) for q in Q]
        out["c_V"] = safety * float(max(vals))
    elif isinstance(system, TubeSystem):
        vals = [abs(q[0] * pot.grad(q)[0]) for q in Q]
        out["K_V"] = safety * float(max(vals))
    elif isinstance(system, PoincareBallSystem):
        Q = Q[np.linalg.norm(Q, axis=1) < 1.0]
        P = rng.normal(size=Q.shape)
        P /= np.linalg.norm(P, axis=1)[:, None]
        best = 0.0
        for q, p in zip(Q, P):
            gV = pot.grad(q)
            _, dphi_dp = system.grad_phi(q, p)
            c = 1.0 - float(q @ q)
            speed = math.sqrt(2.0 * system.H0(q, p))
            dspeed_dp = 0.5 * c * p / math.sqrt(float(p @ p))
            t1 = abs(speed * float(-dphi_dp[0] @ gV))
            t2 = abs(system.phi(q, p)[0] * float(-dspeed_dp @ gV))
            best = max(best, t1 + t2)
        out["K_V"] = safety * float(best)
    return out


def energy_window(system, delta, constants=None) -> tuple:
    """Open interval ``U_delta`` of energies on which the virial condition holds.

    Returns ``(lo, hi)``; ``hi`` may be ``inf``. The tube has no such window
    (its virial condition is stated on ``|p_1|^2 > K_V + delta``), so a
    :class:`ConfigurationError` is raised for it.
    """
    constants = constants if constants is not None else virial_constants(system)
    if isinstance(system, DispersiveSystem):
        disp = system.dispersion
        c = constants.get("c_V", 0.0)
        n = system.n
        if disp.name == "quadratic":
            return ((n * c + delta) / 2.0, math.inf)
        if disp.name == "relativistic":
            if delta >= 1.0:
                return (math.inf, math.inf)
            y = (-n * c + math.sqrt((n * c) ** 2 + 4.0 * (1.0 - delta))) / 2.0
            return (1.0 / y, math.inf)
        raise ConfigurationError("energy window needs g1, g2 bounds (named dispersion)")
    if isinstance(system, PoincareBallSystem):
        return ((constants.get("K_V", 0.0) + delta) / 2.0, math.inf)
    raise ConfigurationError(f"no energy window for {system.kind} systems")


# ---------------------------------------------------------------------------
# sampling helpers


def sample_admissible(system, rng, count, q_scale=2.0, p_scale=2.0, interior=0.9) -> list:
    """Random admissible, non-critical phase points (rejection sampling).

    ``interior`` caps ``|q_perp|`` (tube) or ``|q|`` (ball) away from the boundary.
    """
    pts = []
    n = system.n
    while len(pts) < count:
        if isinstance(system, TubeSystem):
            q = np.empty(n)
            q[0] = rng.uniform(-q_scale, q_scale)
            q[1:] = rng.uniform(-interior, interior, size=n - 1)
        elif isinstance(system, PoincareBallSystem):
            q = rng.uniform(-interior, interior, size=n)
        else:
            q = rng.uniform(-q_scale, q_scale, size=n)
        p = rng.uniform(-p_scale, p_scale, size=n)
        if isinstance(system, TubeSystem) and np.linalg.norm(q[1:]) >= interior:
            continue
        if isinstance(system, PoincareBallSystem) and np.linalg.norm(q) >= interior:
            continue
        if not system.admissible(q, p, 1e-3):
            continue
        if np.linalg.norm(system.nabla_H0(q, p)) < 0.05:
            continue
        pts.append(PhasePoint(q, p))
    return pts
