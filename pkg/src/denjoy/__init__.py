"""Finite-stage construction of a circle homeomorphism with a flat half-critical point and a wandering interval."""

__version__ = "0.1.0"
