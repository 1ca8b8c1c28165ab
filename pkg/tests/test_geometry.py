import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scatterlab.geometry import (Observable, PhasePoint, asscom_residual, canonical_omega, coordinate,
                                 fd_gradient, gradient, is_critical, momentum, nabla_H0, nested_bracket,
                                 poisson_bracket, product, symplectic_defect)
from scatterlab.errors import DomainError
from scatterlab.systems import sample_admissible

coords = st.floats(-3, 3, allow_nan=False)


def test_phase_point_basics():
    m = PhasePoint([1, 2], [3, 4])
    assert m.n == 2
    assert m.y.tolist() == [1, 2, 3, 4]
    assert PhasePoint.from_y(m.y).distance(m) == 0.0
    q, p = m
    assert q.tolist() == [1.0, 2.0]
    with pytest.raises(ValueError):
        m.q[0] = 5.0
    with pytest.raises(ValueError):
        PhasePoint([1.0], [1.0, 2.0])


def test_canonical_brackets(free_system):
    m = PhasePoint([0.3, -0.2], [1.0, 0.5])
    for i in range(2):
        for j in range(2):
            assert poisson_bracket(free_system, coordinate(i), momentum(j), m) == (1.0 if i == j else 0.0)
            assert poisson_bracket(free_system, coordinate(i), coordinate(j), m) == 0.0


def test_fd_gradient_matches_analytic():
    f = lambda q, p: math.sin(q[0]) * p[1] ** 2 + q[1] * p[0]
    q, p = np.array([0.4, -1.0]), np.array([0.7, 1.3])
    gq, gp = fd_gradient(f, q, p)
    exact_q = [math.cos(0.4) * 1.3 ** 2, 0.7]
    exact_p = [-1.0, 2 * math.sin(0.4) * 1.3]
    assert np.allclose(gq, exact_q, atol=1e-9) and np.allclose(gp, exact_p, atol=1e-9)
    gq, gp = fd_gradient(f, q, p, richardson=True)
    assert np.allclose(gq, exact_q, atol=1e-11) and np.allclose(gp, exact_p, atol=1e-11)


def test_gradient_prefers_analytic():
    obs = Observable(lambda q, p: 0.0, lambda q, p: (np.ones(1), np.full(1, 2.0)))
    gq, gp = gradient(obs, np.zeros(1), np.zeros(1))
    assert gq[0] == 1.0 and gp[0] == 2.0


@given(y=st.lists(coords, min_size=4, max_size=4))
def test_bracket_antisymmetry_and_leibniz(y, free_system):
    m = PhasePoint.from_y(y)
    f = Observable(lambda q, p: q[0] * p[1] + math.sin(q[1]))
    g = Observable(lambda q, p: p[0] ** 2 - q[0] * q[1])
    k = Observable(lambda q, p: math.cos(p[1]) + q[0])
    fg = poisson_bracket(free_system, f, g, m)
    assert abs(fg + poisson_bracket(free_system, g, f, m)) < 1e-7
    lhs = poisson_bracket(free_system, product(f, g), k, m)
    rhs = f(*m) * poisson_bracket(free_system, g, k, m) + g(*m) * poisson_bracket(free_system, f, k, m)
    assert abs(lhs - rhs) < 1e-6 * (1 + abs(lhs))


def test_product_gradient_analytic():
    f = product(coordinate(0), momentum(1))
    gq, gp = f.grad(np.array([2.0, 0.0]), np.array([0.0, 3.0]))
    assert gq.tolist() == [3.0, 0.0] and gp.tolist() == [0.0, 2.0]


def test_nabla_h0_is_bracket(bump_system, tube_system, ball_system, rng):
    for system in (bump_system, tube_system, ball_system):
        for m in sample_admissible(system, rng, 5):
            exact = nabla_H0(system, m)
            fd = nabla_H0(system, m, analytic=False)
            assert np.allclose(exact, fd, atol=1e-8)


def test_nested_bracket_of_quadratic(free_system):
    # {{q1, H0}, H0} = {p1, H0} = 0 for free motion
    m = PhasePoint([0.5, 0.1], [0.3, -0.8])
    H0 = free_system.H0_obs
    assert abs(nested_bracket(free_system, coordinate(0), H0, H0, m)) < 1e-8
    assert asscom_residual(free_system, m) < 1e-8


def test_is_critical(free_system):
    assert is_critical(free_system, PhasePoint([0.0, 0.0], [0.0, 0.0]))
    assert not is_critical(free_system, PhasePoint([0.0, 0.0], [1e-3, 0.0]))


def test_domain_error_outside_ball(ball_system):
    with pytest.raises(DomainError):
        poisson_bracket(ball_system, coordinate(0), momentum(0), PhasePoint([1.2, 0.0], [1.0, 0.0]))


def test_symplectic_defect_linear_maps():
    n = 2
    omega = canonical_omega(n)
    assert np.array_equal(omega.T, -omega)
    # shear (q, p) -> (q + A p, p) with symmetric A is symplectic
    A = np.array([[2.0, 0.5], [0.5, -1.0]])
    shear = lambda m: PhasePoint(m.q + A @ m.p, m.p)
    assert symplectic_defect(shear, PhasePoint([0.1, 0.2], [0.3, 0.4])).defect < 1e-9
    stretch = lambda m: PhasePoint(2.0 * m.q, m.p)
    assert symplectic_defect(stretch, PhasePoint([0.1, 0.2], [0.3, 0.4])).defect > 0.5
    with pytest.raises(ValueError):
        symplectic_defect(shear, PhasePoint([0.0], [0.0]), h_jac=0.0)
