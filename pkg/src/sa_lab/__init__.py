"""Desk-scale laboratory for nonasymptotic CLTs of stochastic approximation."""
__version__ = "0.1.0"
