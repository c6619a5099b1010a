"""Simulation and analysis of the disordered discrete nonlinear Schrodinger equation
(DANSE) in an absorbing box: survival probabilities, effective wavepacket
length fits and scaling with the initial-state width."""

__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: E402
