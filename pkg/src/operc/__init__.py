"""Oriented site percolation on the triangular lattice: simulation and exact oracles."""

__version__ = "0.1.0"
