"""Acceptance criteria, each at its stated tolerance and runtime budget.

Every test records one ``PASS``/``FAIL`` line, printed in the terminal summary
of the pytest run. Runtimes are measured on the machine running the suite.
"""

import math
import time

import numpy as np
import pytest

from scatterlab.calabi import calabi_consistency, sample_gamma_E, section_grid, average_time_delay, tau_E, xi
from scatterlab.cli import main
from scatterlab.geometry import PhasePoint, asscom_residual
from scatterlab.oracles import head_on_delay
from scatterlab.parallel import default_workers
from scatterlab.scattering import diagnose, scattering_map
from scatterlab.scenarios import grid_initial_conditions, random_initial_conditions
from scatterlab.systems import (PotentialSpec, make_dispersive, make_poincare_ball, make_tube, sample_admissible,
                                virial_identity_residual)
from scatterlab.timedelay import default_r_grid, delay_scan

from conftest import ACCEPTANCE_LINES, BUMP


def _report(number, passed, text, runtime=None):
    line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {text}"
    if runtime is not None:
        line += f" [{runtime:.1f} s]"
    ACCEPTANCE_LINES[number] = line
    print(line)
    assert passed, line


@pytest.fixture(scope="module")
def strict_batch():
    """100 random non-captured records plus a head-on subfamily, strict profile."""
    system = make_dispersive("quadratic", 2, BUMP)
    levels = tuple(default_r_grid(system))
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    recs, n_captured = [], 0
    while len(recs) < 100:
        m = random_initial_conditions(system, rng, 1)[0]
        rec = scattering_map(system, m, "strict", levels=levels, raise_errors=False)
        if rec.status == "captured":
            n_captured += 1
            continue
        recs.append(rec)
    head_on = [scattering_map(system, m, "strict", levels=levels, raise_errors=False)
               for m in grid_initial_conditions(system, [0.6, 1.0, 1.5, 2.0, 3.0], [0.0], directions=2)]
    for i, rec in enumerate(recs + head_on):
        diagnose(system, rec, "strict", seed=i)
    return {"system": system, "records": recs, "head_on": head_on, "captured": n_captured,
            "runtime": time.perf_counter() - t0}


def test_criterion_1_position_observable():
    t0 = time.perf_counter()
    systems = {"dispersive": make_dispersive("quadratic", 2, BUMP),
               "tube": make_tube(1, PotentialSpec(((0.0, 0.25),), (0.4,), (0.6,))),
               "poincare-ball": make_poincare_ball(2, PotentialSpec(((0.0, 0.0),), (0.4,), (0.3,)))}
    worst = {}
    for name, system in systems.items():
        pts = sample_admissible(system, np.random.default_rng(1), 1000)
        worst[name] = max(asscom_residual(system, m) for m in pts)
    dt = time.perf_counter() - t0
    ok = all(v < 1e-6 for v in worst.values()) and dt < 10
    _report(1, ok, "max asscom residual " + ", ".join(f"{k} {v:.2e}" for k, v in worst.items())
            + " (< 1e-6, < 10 s)", dt)


def test_criterion_2_virial_identity():
    system = make_dispersive("quadratic", 2, BUMP)
    t0 = time.perf_counter()
    pts = sample_admissible(system, np.random.default_rng(2), 1000)
    worst = max(virial_identity_residual(system, m) for m in pts)
    dt = time.perf_counter() - t0
    _report(2, worst < 1e-4 and dt < 30, f"max virial identity residual {worst:.2e} (< 1e-4, < 30 s)", dt)


def test_criterion_3_scattering_algebra(strict_batch):
    recs = strict_batch["records"]
    ok = [r for r in recs if r.ok]
    worst = {k: max(r.residuals[k] for r in ok)
             for k in ("energy", "intertwining", "commutation", "symplectic_defect", "horizon_shift")}
    limits = {"energy": 1e-8, "intertwining": 1e-6, "commutation": 1e-6, "symplectic_defect": 1e-5,
              "horizon_shift": 1e-8}
    dt = strict_batch["runtime"]
    passed = len(ok) == 100 and all(worst[k] < limits[k] for k in limits) and dt < 120
    _report(3, passed, f"{len(ok)}/100 records, " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
            + f" ({strict_batch['captured']} captured draws skipped)", dt)


def test_criterion_4_delay_convergence(strict_batch):
    system = strict_batch["system"]
    grid = default_r_grid(system)
    t0 = time.perf_counter()
    scans = [delay_scan(system, r.m_minus, grid, "strict", record=r) for r in strict_batch["records"]]
    heads = [delay_scan(system, r.m_minus, grid, "strict", record=r) for r in strict_batch["head_on"]]
    dt = time.perf_counter() - t0 + strict_batch["runtime"]
    converged = sum(s.converged for s in scans + heads)
    worst = max(float(s.errors[-1]) for s in scans + heads)
    orc = max(abs(s.tau_limit - head_on_delay(system.H0(s.m_minus.q, s.m_minus.p), 0.5, 1.0)) for s in heads)
    total = len(scans) + len(heads)
    passed = converged == total and worst < 1e-3 and orc < 1e-4 and dt < 120
    _report(4, passed, f"{converged}/{total} scans converged and eventually monotone, "
            f"max |tau_r - tau_limit| at r = 2^8 R_V {worst:.1e}, head-on vs quadrature {orc:.1e} "
            "(runtime includes the shared records)", dt)


def test_criterion_5_incoming_delay(strict_batch):
    system = strict_batch["system"]
    grid = default_r_grid(system)
    scans = [delay_scan(system, r.m_minus, grid, "strict", record=r) for r in strict_batch["records"]]
    gap = max(abs(s.tau_in_lim - s.tau_sym_lim) for s in scans)
    speed = max(s.velocity_change for s in scans)
    tube = make_tube(1, PotentialSpec(((0.0, 0.25),), (0.4,), (0.6,)))
    tscan = delay_scan(tube, PhasePoint([-3.0, 0.0], [1.2, 0.5]))
    report = tscan.report()
    print(report)
    passed = gap < 1e-3 and "does not converge" in report
    _report(5, passed, f"max |lim tau_in - lim tau_r| {gap:.1e} (velocity norm change {speed:.1e}); "
            f"tube report: {report.split('; ')[-1]}")


def test_criterion_6_section_identity():
    system = make_dispersive("quadratic", 2, BUMP)
    t0 = time.perf_counter()
    samples = sample_gamma_E(system, 1.0, 200, seed=6)
    diffs = []
    for s in samples:
        scan = delay_scan(system, s.m0)
        diffs.append(abs(tau_E(system, s) - scan.tau_limit))
    dt = time.perf_counter() - t0
    worst = max(diffs)
    _report(6, worst < 1e-4 and dt < 60, f"max |tau_E - tau_limit| {worst:.1e} over 200 samples at E = 1", dt)


@pytest.mark.slow
def test_criterion_7_calabi_consistency():
    system = make_dispersive("quadratic", 2, BUMP)
    workers = default_workers()
    t0 = time.perf_counter()
    res = calabi_consistency(system, [0.8, 1.0, 1.2], dE=0.05, N=1_000_000, seed=7, cfg="default",
                             workers=workers, level=7, n_angles=8)
    dt = time.perf_counter() - t0
    rows = []
    ok = True
    for E, T, d, s in zip(res.E_grid, res.T_E, res.xi_derivative, res.combined_err):
        good = abs(T + d) <= 2 * s and s < 0.05 * max(abs(T), 0.01)
        ok &= bool(good)
        rows.append(f"E={E:g}: T_E={T:.2e} xi'={d:.2e} sigma={s:.1e}")
    # the runtime budget is stated for 8 workers; this machine may have fewer
    ok &= dt < 15 * 60 * max(1.0, 8 / workers)
    _report(7, ok, "; ".join(rows) + f" ({workers} worker(s))", dt)


def test_criterion_8_trivial_potential():
    system = make_dispersive("quadratic", 2)
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    pts = random_initial_conditions(system, rng, 20)
    worst = 0.0
    for m in pts:
        rec = scattering_map(system, m, levels=tuple(default_r_grid(system)))
        worst = max(worst, rec.m_plus.distance(m))
        scan = delay_scan(system, m, record=rec)
        worst = max(worst, float(np.max(np.abs(scan.tau_sym))), float(np.max(np.abs(scan.tau_in))),
                    abs(scan.tau_limit))
    samples = section_grid(system, 1.0, level=3, n_angles=4)
    worst = max(worst, max(abs(tau_E(system, s)) for s in samples[::5]))
    worst = max(worst, abs(xi(system, 1.0, 10_000, seed=8)[0]))
    res = calabi_consistency(system, [1.0], N=10_000, seed=8, level=2, n_angles=4)
    worst = max(worst, abs(res.T_E[0]), abs(res.xi_derivative[0]))
    dt = time.perf_counter() - t0
    _report(8, worst < 1e-9 and dt < 10, f"largest |S m - m|, delay, tau_E, xi, T_E with V = 0: {worst:.1e}",
            dt)


def test_criterion_9_determinism(tmp_path):
    import yaml
    system = {"kind": "dispersive", "n": 2, "dispersion": "quadratic",
              "potential": {"centers": [[0.0, 0.0]], "radii": [1.0], "amplitudes": [0.5]}}
    cases = {
        "scatter": {"seed": 9, "system": system, "initial_conditions": {"random": {"count": 6}},
                    "scatter": {"diagnostics": True}},
        "delay": {"seed": 9, "system": system, "initial_conditions": {"random": {"count": 6}}},
        "calabi": {"seed": 9, "tolerance_profile": "fast", "system": system,
                   "calabi": {"E_grid": [1.0], "N": 100_000, "level": 3, "n_angles": 4}},
    }
    same = {}
    for kind, data in cases.items():
        cfg = tmp_path / f"{kind}.yaml"
        cfg.write_text(yaml.safe_dump({"kind": kind, **data}))
        outs = []
        for w in (1, 3):
            out = tmp_path / f"{kind}-{w}"
            main([kind, "--config", str(cfg), "--out", str(out), "--workers", str(w)])
            outs.append((out / f"{kind}.csv").read_bytes())
        same[kind] = outs[0] == outs[1] and len(outs[0]) > 0
    _report(9, all(same.values()), "CSV byte-identical for workers 1 vs 3: "
            + ", ".join(f"{k} {v}" for k, v in same.items()))
