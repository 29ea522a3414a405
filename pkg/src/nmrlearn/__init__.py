"""Hamiltonian learning for NMR spin clusters."""

__version__ = "0.1.0"
