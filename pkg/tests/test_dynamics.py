import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scatterlab.dynamics import (FlowConfig, LevelCrossings, full_flow, free_flow, integrate_until, profile,
                                 resolve_config, trajectory)
from scatterlab.errors import ConfigurationError, MaxTimeExceeded
from scatterlab.geometry import PhasePoint
from scatterlab.oracles import free_exit_time
from scatterlab.systems import make_dispersive

from conftest import BUMP

STRICT = FlowConfig("adaptive-rk", rel_tol=1e-12, abs_tol=1e-12)
BUMP_SYS = make_dispersive("quadratic", 2, BUMP)
FREE_SYS = make_dispersive("quadratic", 2)


def test_profiles():
    assert profile("default", BUMP_SYS).integrator == "stormer-verlet"
    assert profile("strict", BUMP_SYS).integrator == "adaptive-rk"
    with pytest.raises(ConfigurationError):
        profile("extreme")
    assert resolve_config(BUMP_SYS, None) == profile("default", BUMP_SYS)


def test_config_validation(ball_system):
    with pytest.raises(ConfigurationError):
        FlowConfig("euler")
    with pytest.raises(ConfigurationError):
        FlowConfig(step=-1.0)
    with pytest.raises(ConfigurationError):
        resolve_config(ball_system, FlowConfig("stormer-verlet"))
    with pytest.raises(ConfigurationError):
        resolve_config(ball_system, FlowConfig("implicit-midpoint"))
    assert profile("fast", ball_system).integrator == "adaptive-rk"


@given(t1=st.floats(-5, 5), t2=st.floats(-5, 5))
def test_free_flow_group_property(t1, t2):
    m = PhasePoint([0.3, -1.0], [0.7, 0.2])
    a = free_flow(FREE_SYS, free_flow(FREE_SYS, m, t1), t2)
    b = free_flow(FREE_SYS, m, t1 + t2)
    assert a.distance(b) < 1e-12


def test_free_flow_relativistic(rel_system):
    m = PhasePoint([0.0, 0.0], [1.0, 1.0])
    out = free_flow(rel_system, m, 2.0)
    assert np.allclose(out.q, 2.0 * np.array([1, 1]) / math.sqrt(3))


def test_tube_free_flow(tube_system):
    m = PhasePoint([-1.0, 0.6], [0.8, 0.5])
    out = free_flow(tube_system, m, 3.0, STRICT)
    assert out.q[0] == -1.0 + 3.0 * 0.8 and out.p[0] == 0.8
    assert tube_system.H0(out.q, out.p) == pytest.approx(tube_system.H0(m.q, m.p), abs=1e-10)


def test_ball_free_flow_moves_phi_linearly(ball_system):
    m = PhasePoint([0.2, -0.1], [0.5, 1.0])
    speed = ball_system.nabla_H0(m.q, m.p)[0]
    phi0 = ball_system.phi(m.q, m.p)[0]
    for t in (0.5, 2.0, -1.5):
        out = free_flow(ball_system, m, t, STRICT)
        assert ball_system.phi(out.q, out.p)[0] == pytest.approx(phi0 + t * speed, abs=1e-9)
        assert ball_system.H0(out.q, out.p) == pytest.approx(ball_system.H0(m.q, m.p), rel=1e-10)


@pytest.mark.parametrize("integrator,step,budget", [
    ("stormer-verlet", 1e-3, 1e-6), ("implicit-midpoint", 1e-3, 1e-6), ("adaptive-rk", 1e-3, 1e-10)])
def test_energy_conservation(integrator, step, budget):
    cfg = FlowConfig(integrator, step=step, rel_tol=1e-12, abs_tol=1e-12)
    m = PhasePoint([-2.0, 0.3], [1.0, 0.1])
    tr = trajectory(BUMP_SYS, m, 4.0, cfg)
    assert tr.energy_drift < budget


def test_verlet_second_order():
    m = PhasePoint([-1.5, 0.2], [1.0, 0.0])
    ref = full_flow(BUMP_SYS, m, 3.0, STRICT)
    errs = [full_flow(BUMP_SYS, m, 3.0, FlowConfig("stormer-verlet", step=h)).distance(ref)
            for h in (4e-3, 2e-3, 1e-3)]
    rates = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert all(1.8 < r < 2.2 for r in rates)


def test_time_reversibility(ball_system):
    m = PhasePoint([0.1, 0.0], [0.3, 1.0])
    back = full_flow(ball_system, full_flow(ball_system, m, 2.0, STRICT), -2.0, STRICT)
    assert back.distance(m) < 1e-9
    mb = PhasePoint([-1.0, 0.2], [0.9, 0.1])
    cfg = FlowConfig("stormer-verlet", step=1e-3)
    assert full_flow(BUMP_SYS, full_flow(BUMP_SYS, mb, 2.0, cfg), -2.0, cfg).distance(mb) < 1e-12


def test_integrate_until_exit_time():
    m = PhasePoint([0.3, -0.4], [0.8, 0.6])
    pred = lambda x: float(np.linalg.norm(x.q)) >= 2.0
    t, out = integrate_until(FREE_SYS, m, 1, pred, STRICT, perturbed=False)
    assert t == pytest.approx(free_exit_time(m.q, m.p, 2.0), abs=1e-9)
    assert np.linalg.norm(out.q) == pytest.approx(2.0, abs=1e-9)
    t_back, _ = integrate_until(FREE_SYS, m, -1, pred, STRICT, perturbed=False)
    assert t_back == pytest.approx(-free_exit_time(m.q, -m.p, 2.0), abs=1e-9)
    with pytest.raises(ValueError):
        integrate_until(FREE_SYS, m, 0, pred)


def test_max_time():
    m = PhasePoint([0.0, 0.0], [1.0, 0.0])
    with pytest.raises(MaxTimeExceeded):
        integrate_until(BUMP_SYS, m, 1, lambda x: False, profile("fast", BUMP_SYS), t_max=1.0)
    with pytest.raises(MaxTimeExceeded):
        full_flow(BUMP_SYS, m, 2e4)


def test_level_crossings_on_free_line():
    # |q + t v| with v = (1, 0) starting at (-3, 0.5): crossings of radius r at t = 3 -+ sqrt(r^2 - 0.25)
    m = PhasePoint([-3.0, 0.5], [1.0, 0.0])
    levels = [0.8, 1.5, 2.0]
    for cfg in (STRICT, FlowConfig("stormer-verlet", step=1e-2)):
        lc = LevelCrossings(BUMP_SYS, levels)
        with pytest.raises(MaxTimeExceeded):
            integrate_until(BUMP_SYS, m, 1, lambda x: False, cfg, perturbed=False, t_max=6.0, on_step=lc)
        for r, cr in zip(levels, lc.crossings):
            w = math.sqrt(r * r - 0.25)
            assert [d for _, d in cr] == [-1, 1]
            assert cr[0][0] == pytest.approx(3 - w, abs=1e-8)
            assert cr[1][0] == pytest.approx(3 + w, abs=1e-8)


def test_trajectory_sampling_and_csv(tmp_path):
    m = PhasePoint([-2.0, 0.1], [1.0, 0.0])
    tr = trajectory(BUMP_SYS, m, 2.0, STRICT, n_samples=11)
    assert np.allclose(tr.times, np.linspace(0, 2, 11))
    assert tr.final.distance(full_flow(BUMP_SYS, m, 2.0, STRICT)) < 1e-9
    path = tmp_path / "traj.csv"
    tr.to_csv(path, BUMP_SYS)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "q1", "q2", "p1", "p2", "H", "H0"]
    assert len(rows) == 12 and float(rows[-1][0]) == 2.0
