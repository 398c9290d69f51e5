"""Tau-leap kernels for chemical reaction networks, with exact oracles and convergence checks."""

__version__ = "0.1.0"
