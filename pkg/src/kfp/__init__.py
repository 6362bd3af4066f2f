"""Solvers and oracles for Dirichlet problems of Kolmogorov-Fokker-Planck type."""
__version__ = "0.1.0"
