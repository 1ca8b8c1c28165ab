"""A waveguide trajectory whose incoming-only delay does not converge.

The bump sits off the tube axis, so the particle trades longitudinal for
transverse momentum. Its longitudinal speed changes, the free comparison
sojourn no longer matches, and ``tau_r^in`` keeps drifting with ``r`` while
the symmetrised delay still settles.
"""

from scatterlab.geometry import PhasePoint
from scatterlab.systems import PotentialSpec, make_tube
from scatterlab.timedelay import delay_scan

tube = make_tube(1, PotentialSpec(((0.0, 0.25),), (0.4,), (0.6,)))
scan = delay_scan(tube, PhasePoint([-3.0, 0.0], [1.2, 0.5]))
for r, a, b in zip(scan.r_grid, scan.tau_sym, scan.tau_in):
    print(f"r = {r:7g}  tau_r = {a:+.6f}  tau_in = {b:+.6f}")
print(scan.report())
