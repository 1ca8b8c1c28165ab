"""Sojourn-time delays of a repulsive bump converging as the radius grows.

Run with ``python3 demos/delay_convergence.py``. Prints the symmetrised and
the incoming-only delay on the default radius grid, next to the limit
``T(m) - T(S m)``. Around a radial bump at the origin both are constant
outside the support (the outgoing line keeps the impact parameter). An
off-centre bump breaks that symmetry and ``tau_in`` approaches the limit
like ``1/r``.
"""

from scatterlab.geometry import PhasePoint
from scatterlab.oracles import head_on_delay
from scatterlab.systems import PotentialSpec, make_dispersive
from scatterlab.timedelay import delay_scan

centred = make_dispersive("quadratic", 2, PotentialSpec(((0.0, 0.0),), (1.0,), (0.5,)))
shifted = make_dispersive("quadratic", 2, PotentialSpec(((0.4, 0.2),), (0.8,), (0.5,)))

for label, system, m in [("head-on", centred, PhasePoint([-3.0, 0.0], [1.0, 0.0])),
                         ("impact 0.6", centred, PhasePoint([-3.0, 0.6], [1.0, 0.0])),
                         ("off-centre bump", shifted, PhasePoint([-3.0, 0.35], [1.1, 0.0]))]:
    scan = delay_scan(system, m)
    print(f"{label}: tau_limit = {scan.tau_limit:.10f}")
    for r, a, b in zip(scan.r_grid, scan.tau_sym, scan.tau_in):
        print(f"  r = {r:6g}  tau_r = {a:.10f}  tau_in = {b:.10f}")
    if label == "head-on":
        print(f"  quadrature oracle: {head_on_delay(0.5, 0.5, 1.0):.10f}")
