"""Invariant suite: the identities every system and integrator setting must satisfy."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import resolve_config
from .geometry import asscom_residual
from .scattering import diagnose, horizon_budget, scattering_map
from .systems import PoincareBallSystem, _support_samples, sample_admissible, virial_identity_residual
from .timedelay import delay_scan

#: residual budgets per tolerance profile
BUDGETS = {
    "fast": {"energy": 1e-3, "algebra": 1e-2, "symplectic": 1e-1, "delay": 1e-2},
    "default": {"energy": 1e-5, "algebra": 1e-4, "symplectic": 1e-2, "delay": 1e-3},
    "strict": {"energy": 1e-8, "algebra": 1e-6, "symplectic": 1e-5, "delay": 1e-3},
}


@dataclass
class CheckResult:
    name: str
    value: float
    budget: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        state = "PASS" if self.passed else "FAIL"
        return f"{state} {self.name}: {self.value:.3g} (budget {self.budget:.3g}) {self.detail}".rstrip()


def _check(name, values, budget, detail=""):
    values = [v for v in values if v is not None]
    worst = max(values) if values else 0.0
    return CheckResult(name, float(worst), budget, bool(worst < budget or worst == 0.0), detail)


def support_consistency(system, count=10_000, seed=0) -> float:
    """Largest ``|Phi| - R_V`` over samples of ``supp V`` (should be <= 0)."""
    if system.potential.is_zero:
        return -math.inf
    rng = np.random.default_rng(seed)
    Q = _support_samples(system.potential, rng, count)
    if isinstance(system, PoincareBallSystem):
        P = rng.normal(size=Q.shape)
        vals = [float(np.abs(system.phi(q, p)[0])) for q, p in zip(Q, P) if np.linalg.norm(q) < 1]
    else:
        vals = [float(np.linalg.norm(system.phi(q, np.ones(system.n)))) for q in Q]
    return max(vals) - system.support_radius


def incoming_points(system, rng, count, energy=(0.5, 2.0), impact=None, distance=3.0):
    """Random free initial conditions aimed near the support of ``V``."""
    from .scenarios import random_initial_conditions
    return random_initial_conditions(system, rng, count, energy=energy, impact=impact, distance=distance)


def run_suite(system, cfg="default", n_points=200, n_scatter=10, seed=0, profile_name=None,
              energy=(0.5, 2.0)) -> list:
    """Run the invariant checks and return one :class:`CheckResult` per invariant."""
    cfg = resolve_config(system, cfg)
    name = profile_name or (cfg.profile if cfg.profile in BUDGETS else "default")
    bud = BUDGETS[name]
    rng = np.random.default_rng(seed)
    out = []
    pts = sample_admissible(system, rng, n_points)
    out.append(_check("position-observable assumption", [asscom_residual(system, m) for m in pts], 1e-6))
    out.append(_check("virial identity", [virial_identity_residual(system, m) for m in pts[: max(1, n_points // 4)]],
                      1e-4))
    sc = support_consistency(system, seed=seed)
    out.append(CheckResult("support consistency |Phi| <= R_V", sc, 1e-12, sc <= 1e-12))
    recs = []
    for m in incoming_points(system, rng, n_scatter, energy=energy):
        rec = scattering_map(system, m, cfg, raise_errors=False)
        if rec.ok:
            diagnose(system, rec, cfg, seed=len(recs))
        recs.append(rec)
    good = [r for r in recs if r.ok]
    out.append(CheckResult("scattering records computed", float(len(recs) - len(good)), 0.5,
                           len(good) == len(recs), f"{len(good)}/{len(recs)} ok"))
    res = lambda key: [r.residuals.get(key) for r in good]
    out.append(_check("energy H0 o S = H0", res("energy"), bud["energy"]))
    out.append(_check("energy H o W- = H0", res("energy_in"), bud["energy"]))
    out.append(_check("horizon doubling", res("horizon_shift"), horizon_budget(cfg)))
    out.append(_check("intertwining", res("intertwining"), bud["algebra"]))
    out.append(_check("commutation with free flow", res("commutation"), bud["algebra"]))
    out.append(_check("symplectic defect of S", res("symplectic_defect"), bud["symplectic"]))
    errs = []
    for r in good:
        scan = delay_scan(system, r.m_minus, cfg=cfg)
        errs.append(float(scan.errors[-1]) if scan.status == "ok" else math.inf)
    out.append(_check("symmetrised delay -> T - T o S", errs, bud["delay"]))
    return out
