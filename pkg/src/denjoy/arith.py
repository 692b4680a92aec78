"""Swappable scalar arithmetic for orbit-level computations.

Grid scans always run in numpy float64.  Scalar work (evaluating a lift at a
point, iterating orbits, propagating interval lengths) goes through one of
the backends below, so the same code runs in binary64 or in mpmath at any
precision.
"""

from __future__ import annotations

import math

import mpmath
from scipy.special import exp1 as _exp1


class Float64Backend:
    """IEEE binary64 via :mod:`math`."""

    name = "float64"
    bits = 53

    def num(self, x):
        return float(x)

    exp = staticmethod(math.exp)
    log = staticmethod(math.log)
    floor = staticmethod(math.floor)

    def e1(self, z):
        return float(_exp1(z))

    def to_float(self, x) -> float:
        return float(x)

    def quad(self, f, a, b):
        raise NotImplementedError("float64 backend integrates with fixed tables")


class MPBackend:
    """mpmath at a fixed binary precision (private context)."""

    name = "mpmath"

    def __init__(self, bits: int = 113):
        if bits < 53:
            raise ValueError("precision below binary64 is not supported")
        self.ctx = mpmath.MPContext()
        self.ctx.prec = int(bits)
        self.bits = int(bits)

    def num(self, x):
        return self.ctx.mpf(x)

    def exp(self, x):
        return self.ctx.exp(x)

    def log(self, x):
        return self.ctx.log(x)

    def floor(self, x):
        return int(self.ctx.floor(x))

    def e1(self, z):
        return self.ctx.e1(z)

    def to_float(self, x) -> float:
        return float(x)

    def quad(self, f, a, b):
        return self.ctx.quad(f, [a, b])


FLOAT64 = Float64Backend()


def backend_for(bits: int):
    """Return the backend for a requested precision in bits."""
    if bits <= 53:
        return FLOAT64
    return MPBackend(bits)
