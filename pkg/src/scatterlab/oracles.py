"""Independent one-dimensional reference values.

Along a line through the centre of a radial bump the motion is
one-dimensional and energy conservation gives the velocity as a function
of position, so crossing times and delays reduce to quadratures.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import quad


def _bump(x, amplitude, radius):
    u = (x / radius) ** 2
    return amplitude * math.exp(1.0 / (u - 1.0)) if u < 1.0 else 0.0


def _speed(x, E, amplitude, radius, kind):
    V = _bump(x, amplitude, radius)
    if kind == "quadratic":
        if E - V <= 0:
            raise ValueError("the particle is reflected: E <= max V")
        return math.sqrt(2.0 * (E - V))
    if kind == "relativistic":
        k2 = (E - V) ** 2 - 1.0
        if k2 <= 0:
            raise ValueError("the particle is reflected")
        k = math.sqrt(k2)
        return k / (E - V)
    raise ValueError(f"unsupported dispersion {kind!r}")


def crossing_time(E, amplitude, radius, a, b, kind="quadratic") -> float:
    """``int_a^b dx / |v(x)|`` for a head-on trajectory at energy ``E``."""
    val, _ = quad(lambda x: 1.0 / _speed(x, E, amplitude, radius, kind), a, b,
                  epsabs=1e-13, epsrel=1e-13, limit=200)
    return val


def head_on_delay(E, amplitude, radius, kind="quadratic") -> float:
    """Time delay ``int (1/|v(x)| - 1/|v_0|) dx`` of a central passage through a bump."""
    v0 = _speed(2.0 * radius, E, 0.0, radius, kind)
    val, _ = quad(lambda x: 1.0 / _speed(x, E, amplitude, radius, kind) - 1.0 / v0,
                  -radius, radius, epsabs=1e-13, epsrel=1e-13, limit=200)
    return val


def free_exit_time(q, v, R) -> float:
    """Positive root of ``|q + t v| = R`` (requires ``|q| < R``)."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    a, b, c = float(v @ v), float(q @ v), float(q @ q) - R * R
    return (-b + math.sqrt(b * b - a * c)) / a
