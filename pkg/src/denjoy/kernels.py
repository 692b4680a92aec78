"""Exp-type smooth kernels and their closed-form derivatives.

Two kernels drive every lift in the package:

* the one-sided kernel ``exp(-h/s)`` (``s > 0``), flat to all orders at 0,
  used for the base profile derivative;
* the bump kernel ``exp(-h/(s(1-s)))`` on ``(0, 1)``, used for the
  perturbation pairs.

Both are of the form ``exp(-h/D(s))`` with ``D`` a polynomial, so the k-th
derivative is ``exp(-h/D) * P_k(s) / D(s)**(2k)`` with the polynomial
recurrence

    P_{k+1} = P_k' D^2 - 2k P_k D' D + h P_k D'.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.special import exp1

DEFAULT_MAX_ORDER = 12


class CapabilityError(ValueError):
    """Requested derivative order exceeds the supported symbolic depth."""


class ExpKernel:
    """``exp(-h / D(s))`` on the set where ``D(s) > 0``, zero elsewhere.

    Parameters
    ----------
    denominator : sequence of float
        Coefficients of ``D`` in increasing degree.
    sharpness : float
        The constant ``h > 0``.
    max_order : int
        Highest derivative order for which the recurrence is built.
    """

    def __init__(self, denominator, sharpness: float, max_order: int = DEFAULT_MAX_ORDER):
        if sharpness <= 0:
            raise ValueError("sharpness must be positive")
        self.h = float(sharpness)
        self.max_order = int(max_order)
        self._D = np.asarray(denominator, dtype=float)
        self._dD = npoly.polyder(self._D)
        self._P = [np.array([1.0])]
        D2 = npoly.polymul(self._D, self._D)
        DdD = npoly.polymul(self._D, self._dD)
        for k in range(self.max_order):
            P = self._P[-1]
            nxt = npoly.polyadd(
                npoly.polyadd(npoly.polymul(npoly.polyder(P), D2),
                              -2.0 * k * npoly.polymul(P, DdD)),
                self.h * npoly.polymul(P, self._dD),
            )
            self._P.append(npoly.polytrim(nxt))

    def check_order(self, k: int) -> None:
        if k < 0 or k > self.max_order:
            raise CapabilityError(
                f"derivative order {k} outside supported range 0..{self.max_order}"
            )

    def derivative(self, s, k: int = 0):
        """k-th derivative of the kernel at ``s`` (vectorized, zero off support)."""
        self.check_order(k)
        s = np.asarray(s, dtype=float)
        D = npoly.polyval(s, self._D)
        out = np.zeros_like(s)
        pos = D > 0
        if not np.any(pos):
            return out
        sp, Dp = s[pos], D[pos]
        expo = -self.h / Dp
        if k == 0:
            out[pos] = np.exp(expo)
            return out
        P = npoly.polyval(sp, self._P[k])
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            mag = np.exp(expo + np.log(np.abs(P)) - 2 * k * np.log(Dp))
        out[pos] = np.where(P == 0, 0.0, np.sign(P) * mag)
        return out

    def scalar(self, s, k: int, ar):
        """k-th derivative at a scalar ``s`` in the arithmetic of backend ``ar``."""
        D = _polyval(self._D, s, ar)
        if D <= 0:
            return ar.num(0)
        val = ar.exp(-self.h / D)
        if k == 0 or val == 0:
            return val
        return val * _polyval(self._P[k], s, ar) / D ** (2 * k)


def _polyval(coeffs, s, ar):
    acc = ar.num(0)
    for c in reversed(coeffs):
        acc = acc * s + ar.num(float(c))
    return acc


@lru_cache(maxsize=None)
def bump_kernel(sharpness: float, max_order: int = DEFAULT_MAX_ORDER) -> "BumpKernel":
    return BumpKernel(sharpness, max_order)


@lru_cache(maxsize=None)
def edge_kernel(sharpness: float, max_order: int = DEFAULT_MAX_ORDER) -> "EdgeKernel":
    return EdgeKernel(sharpness, max_order)


# Gauss-Legendre nodes for the short-range corrections of the bump integral.
_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)
_TABLE_CELLS = 4096
_GL_PAIRS = tuple(zip(_GL_X.tolist(), _GL_W.tolist()))


class BumpKernel(ExpKernel):
    """``psi(s) = exp(-h/(s(1-s)))`` with cumulative integral and sup norms."""

    def __init__(self, sharpness: float, max_order: int = DEFAULT_MAX_ORDER):
        super().__init__([0.0, 1.0, -1.0], sharpness, max_order)
        edges = np.linspace(0.0, 1.0, _TABLE_CELLS + 1)
        lo, hi = edges[:-1], edges[1:]
        nodes = 0.5 * (hi - lo)[:, None] * (_GL_X[None, :] + 1.0) + lo[:, None]
        # 4096 cells x 10 nodes resolves the kernel to roundoff for h >= 1e-2.
        cell = (0.5 * (hi - lo)) * (self.derivative(nodes) @ _GL_W)
        self._table = np.concatenate([[0.0], np.cumsum(cell)])
        self.mass = float(self._table[-1])
        self._sup = {}

    def integral(self, s):
        """``Psi(s) = int_0^s psi``, clamped to ``[0, mass]`` outside ``[0, 1]``."""
        s = np.asarray(s, dtype=float)
        out = np.where(s >= 1.0, self.mass, 0.0)
        inside = (s > 0.0) & (s < 1.0)
        if not np.any(inside):
            return out
        si = s[inside]
        idx = np.minimum((si * _TABLE_CELLS).astype(np.int64), _TABLE_CELLS - 1)
        left = idx / _TABLE_CELLS
        half = 0.5 * (si - left)
        nodes = half[:, None] * (_GL_X + 1.0) + left[:, None]
        out[inside] = self._table[idx] + half * (self.derivative(nodes) @ _GL_W)
        return out

    def integral_scalar(self, s, ar):
        """Scalar ``Psi(s)`` in backend ``ar`` (table + Gauss-Legendre for binary64)."""
        if s <= 0:
            return ar.num(0)
        if s >= 1:
            s = ar.num(1)
        if ar.bits > 53:
            return ar.quad(lambda u: self.scalar(u, 0, ar), ar.num(0), s)
        idx = min(int(s * _TABLE_CELLS), _TABLE_CELLS - 1)
        left = idx / _TABLE_CELLS
        half = 0.5 * (s - left)
        if half == 0.0:
            return float(self._table[idx])
        acc = 0.0
        h = self.h
        for xg, wg in _GL_PAIRS:
            u = half * (xg + 1.0) + left
            D = u * (1.0 - u)
            if D > 0:
                acc += wg * math.exp(-h / D)
        return float(self._table[idx]) + half * acc

    def sup_norm(self, k: int) -> float:
        """``sup_s |psi^(k)(s)|`` by dense sampling plus local refinement."""
        if k not in self._sup:
            self.check_order(k)
            s = np.linspace(0.0, 1.0, 1 << 15)
            v = np.abs(self.derivative(s, k))
            i = int(np.argmax(v))
            for _ in range(3):
                lo = s[max(i - 1, 0)]
                hi = s[min(i + 1, s.size - 1)]
                s = np.linspace(lo, hi, 257)
                v = np.abs(self.derivative(s, k))
                i = int(np.argmax(v))
            self._sup[k] = float(v[i])
        return self._sup[k]


class EdgeKernel(ExpKernel):
    """``beta(s) = exp(-h/s)`` for ``s > 0`` with closed-form antiderivative."""

    def __init__(self, sharpness: float, max_order: int = DEFAULT_MAX_ORDER):
        super().__init__([0.0, 1.0], sharpness, max_order)

    def integral(self, s):
        """``B(s) = int_0^s exp(-h/u) du = s exp(-h/s) - h E1(h/s)``."""
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        pos = s > 0
        sp = s[pos]
        out[pos] = sp * np.exp(-self.h / sp) - self.h * exp1(self.h / sp)
        return out

    def integral_scalar(self, s, ar):
        if s <= 0:
            return ar.num(0)
        return s * ar.exp(-self.h / s) - self.h * ar.e1(self.h / s)
