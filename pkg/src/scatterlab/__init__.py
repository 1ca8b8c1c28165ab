"""Numerical classical scattering: wave maps, scattering maps, time delays and
the Calabi-invariant derivative on concrete Hamiltonian systems."""

__version__ = "0.1.0"
