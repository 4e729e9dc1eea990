"""
cqlab: numerical laboratory for the classical-quantum limit of the
two-particle Schrödinger equation.
"""

__version__ = "0.4.0"
