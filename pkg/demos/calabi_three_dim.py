"""Average time delay against the interaction volume in three dimensions.

For ``h = |p|^2/2`` in the plane the volume difference does not depend on
the energy, so both sides vanish. In three dimensions they do not, which
makes this the more telling comparison. Takes about twenty seconds.
"""

from scatterlab.calabi import calabi_consistency
from scatterlab.systems import PotentialSpec, make_dispersive

system = make_dispersive("quadratic", 3, PotentialSpec(((0.0, 0.0, 0.0),), (1.0,), (0.5,)))
res = calabi_consistency(system, [0.8, 1.2], dE=0.02, N=400_000, seed=1, cfg="fast", section="mc",
                         section_samples=1500, check_window=False)
for E, T, dT, d, s in zip(res.E_grid, res.T_E, res.T_E_err, res.xi_derivative, res.combined_err):
    print(f"E = {E:g}: T_E = {T:+.4f} +- {dT:.4f}   -xi'(E) = {-d:+.4f}   sigma = {s:.4f}   "
          f"agree = {abs(T + d) <= 2 * s}")
