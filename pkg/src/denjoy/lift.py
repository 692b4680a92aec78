"""Closed-form degree-one lifts with one flat half-critical point.

A :class:`Lift` is ``F(x) = base(x) + sum(terms)(x) + shift`` on ``[0, 1)``,
extended by ``F(x + k) = F(x) + k``.  The base profile is flat on
``[flat_left, flat_right]`` and every perturbation term integrates a pair of
bumps with zero net mass, so degree one holds by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

from .arith import FLOAT64
from .kernels import DEFAULT_MAX_ORDER, CapabilityError, bump_kernel, edge_kernel

BASE_SHARPNESS = 0.01
BUMP_SHARPNESS = 0.1
FLAT_TOL = 1e-300

LEFT, RIGHT = "left", "right"


class RefinementError(RuntimeError):
    """Grid refinement did not stabilise within the allowed budget."""


class Interval(NamedTuple):
    lo: float
    hi: float

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def contains(self, x, margin: float = 0.0) -> bool:
        return self.lo + margin <= x <= self.hi - margin


@dataclass(frozen=True)
class GridSpec:
    """Sampling policy for sup/min scans on ``[0, 1]``.

    ``points`` is the initial uniform resolution, doubled up to ``max_points``
    until two successive refinements agree within ``rtol``.
    """

    points: int = 4096
    max_points: int = 1 << 20
    rtol: float = 0.01

    def scaled(self, factor: int) -> "GridSpec":
        return replace(self, points=self.points * factor,
                       max_points=max(self.max_points, self.points * factor))


@dataclass(frozen=True)
class BaseProfile:
    """Initial map: ``F'`` flat on ``[flat_left, flat_right]``, ``exp(-h/s)`` edge.

    On the positive arc ``s = (x - flat_right) mod 1`` ranges over
    ``(0, 1 - (flat_right - flat_left))`` and ``F'(x) = c * exp(-h/s)``
    with ``c`` normalising the total mass to 1.  ``F(0) = 0``.
    """

    flat_left: float = 0.5
    flat_right: float = 0.75
    sharpness: float = BASE_SHARPNESS

    def __post_init__(self):
        if not 0.0 < self.flat_left < self.flat_right < 1.0:
            raise ValueError("need 0 < flat_left < flat_right < 1")

    @cached_property
    def kernel(self):
        return edge_kernel(self.sharpness)

    @property
    def arc(self) -> float:
        return 1.0 - (self.flat_right - self.flat_left)

    @cached_property
    def norm(self) -> float:
        return 1.0 / float(self.kernel.integral(self.arc))

    @cached_property
    def _offset(self) -> float:
        return self.norm * float(self.kernel.integral(1.0 - self.flat_right))

    @property
    def plateau(self) -> float:
        """Value of the base on its flat interval."""
        return 1.0 - self._offset

    def _arc_coord(self, f):
        return np.where(f >= self.flat_right, f - self.flat_right, f + 1.0 - self.flat_right)

    def values(self, f):
        f = np.asarray(f, dtype=float)
        s = self._arc_coord(f)
        body = self.norm * self.kernel.integral(s)
        return np.where(f < self.flat_left, body - self._offset,
                        np.where(f <= self.flat_right, self.plateau, self.plateau + body))

    def derivatives(self, f, k: int, side: str = RIGHT):
        f = np.asarray(f, dtype=float)
        s = self._arc_coord(f)
        d = self.norm * self.kernel.derivative(s, k - 1)
        flat = (f > self.flat_left) & (f <= self.flat_right)
        if side == RIGHT:
            flat |= f == self.flat_left
        return np.where(flat, 0.0, d)

    def value(self, f, ar=FLOAT64):
        if f < self.flat_left:
            s = f + (1.0 - self.flat_right)
            return self.norm * self.kernel.integral_scalar(s, ar) - self._offset
        if f <= self.flat_right:
            return ar.num(self.plateau)
        return self.plateau + self.norm * self.kernel.integral_scalar(f - self.flat_right, ar)

    def derivative(self, f, k: int, side: str = RIGHT, ar=FLOAT64):
        if f > self.flat_left and f <= self.flat_right:
            return ar.num(0)
        if f == self.flat_left:
            if side == RIGHT:
                return ar.num(0)
            s = ar.num(self.arc)
        elif f < self.flat_left:
            s = f + (1.0 - self.flat_right)
        else:
            s = f - self.flat_right
        return self.norm * self.kernel.scalar(s, k - 1, ar)

    def to_dict(self) -> dict:
        return {"flat_left": self.flat_left.hex(), "flat_right": self.flat_right.hex(),
                "sharpness": self.sharpness.hex()}

    @classmethod
    def from_dict(cls, d: dict) -> "BaseProfile":
        return cls(*(float.fromhex(d[k]) for k in ("flat_left", "flat_right", "sharpness")))


@dataclass(frozen=True)
class BumpTerm:
    """``scale * int_0^x (phi_up - phi_down)`` with zero total mass.

    ``phi_up = amp_up * psi((x - a)/(b - a))`` and likewise for the down
    bump.  ``kappa`` and ``c_n`` are the calibration constants; ``scale`` is
    ``delta / (3 kappa c_n)``.
    """

    up: Interval
    down: Interval
    amp_up: float
    amp_down: float
    scale: float
    n: int
    kappa: float
    c_n: float
    sharpness: float = BUMP_SHARPNESS

    def __post_init__(self):
        a, b = self.up
        d, e = self.down
        if not (0.0 < a < b < 1.0 and 0.0 < d < e < 1.0):
            raise ValueError("bump supports must be subintervals of (0, 1)")
        if not (b <= d or e <= a):
            raise ValueError("up and down supports overlap")
        object.__setattr__(self, "up", Interval(*self.up))
        object.__setattr__(self, "down", Interval(*self.down))

    @cached_property
    def kernel(self):
        return bump_kernel(self.sharpness)

    @property
    def mass(self) -> float:
        """Common integral ``amp * width`` of both bumps (exact zero sum)."""
        return self.amp_down * (self.down.hi - self.down.lo)

    @property
    def moved(self) -> float:
        """Total displacement ``scale * int phi_up`` carried by the term."""
        return self.scale * self.mass * self.kernel.mass

    def values(self, f):
        f = np.asarray(f, dtype=float)
        wu = self.up.hi - self.up.lo
        wd = self.down.hi - self.down.lo
        # each bump carries its own mass, so the values stay the antiderivative
        # of :meth:`derivatives` even for a record whose pair is not zero-sum
        iu = self.kernel.integral((f - self.up.lo) / wu)
        idn = self.kernel.integral((f - self.down.lo) / wd)
        return self.scale * (self.amp_up * wu * iu - self.amp_down * wd * idn)

    def derivatives(self, f, k: int):
        """k-th derivative (k >= 1) of the term, vectorized."""
        f = np.asarray(f, dtype=float)
        wu = self.up.hi - self.up.lo
        wd = self.down.hi - self.down.lo
        up = self.amp_up * self.kernel.derivative((f - self.up.lo) / wu, k - 1) / wu ** (k - 1)
        dn = self.amp_down * self.kernel.derivative((f - self.down.lo) / wd, k - 1) / wd ** (k - 1)
        return self.scale * (up - dn)

    def value(self, f, ar=FLOAT64):
        a, b = self.up
        d, e = self.down
        if f <= a and f <= d:
            return ar.num(0)
        iu = self.kernel.integral_scalar((f - a) / (b - a), ar)
        idn = self.kernel.integral_scalar((f - d) / (e - d), ar)
        return self.scale * (self.amp_up * (b - a) * iu - self.amp_down * (e - d) * idn)

    def derivative(self, f, k: int, ar=FLOAT64):
        a, b = self.up
        d, e = self.down
        if a < f < b:
            w = b - a
            return self.scale * self.amp_up * self.kernel.scalar((f - a) / w, k - 1, ar) / w ** (k - 1)
        if d < f < e:
            w = e - d
            return -self.scale * self.amp_down * self.kernel.scalar((f - d) / w, k - 1, ar) / w ** (k - 1)
        return ar.num(0)

    def breakpoints(self) -> tuple:
        return (*self.up, *self.down)

    def to_dict(self) -> dict:
        return {
            "up": [v.hex() for v in self.up],
            "down": [v.hex() for v in self.down],
            "amp_up": self.amp_up.hex(),
            "amp_down": self.amp_down.hex(),
            "scale": self.scale.hex(),
            "n": self.n,
            "kappa": self.kappa.hex(),
            "c_n": self.c_n.hex(),
            "sharpness": self.sharpness.hex(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BumpTerm":
        h = float.fromhex
        return cls(
            up=Interval(*map(h, d["up"])), down=Interval(*map(h, d["down"])),
            amp_up=h(d["amp_up"]), amp_down=h(d["amp_down"]), scale=h(d["scale"]),
            n=int(d["n"]), kappa=h(d["kappa"]), c_n=h(d["c_n"]), sharpness=h(d["sharpness"]),
        )


@dataclass(frozen=True)
class Lift:
    """Degree-one lift ``base + terms + shift``; immutable."""

    base: BaseProfile = field(default_factory=BaseProfile)
    terms: tuple = ()
    shift: float = 0.0
    max_order: int = DEFAULT_MAX_ORDER

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "shift", float(self.shift))

    # -- construction -------------------------------------------------------
    def shifted(self, tau: float) -> "Lift":
        return replace(self, shift=self.shift + tau)

    def with_term(self, term: BumpTerm) -> "Lift":
        return replace(self, terms=self.terms + (term,))

    # -- vectorized evaluation ---------------------------------------------
    def frac_values(self, f):
        """``F`` on fractional inputs ``f`` in ``[0, 1)`` (no integer part)."""
        out = self.base.values(f)
        for t in self.terms:
            out = out + t.values(f)
        return out + self.shift

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        n = np.floor(x)
        return n + self.frac_values(x - n)

    def derivatives(self, x, k: int = 1, side: str = RIGHT):
        if k < 1:
            raise ValueError("derivative order must be >= 1")
        if k - 1 > self.max_order:
            raise CapabilityError(f"order {k} exceeds supported depth {self.max_order + 1}")
        x = np.asarray(x, dtype=float)
        f = x - np.floor(x)
        out = self.base.derivatives(f, k, side)
        for t in self.terms:
            out = out + t.derivatives(f, k)
        return out

    # -- scalar evaluation through an arithmetic backend -------------------
    def value(self, x, ar=FLOAT64):
        n = ar.floor(x)
        f = x - n
        acc = self.base.value(f, ar)
        for t in self.terms:
            acc = acc + t.value(f, ar)
        return n + (acc + self.shift)

    def derivative(self, x, k: int = 1, side: str = RIGHT, ar=FLOAT64):
        if k < 1:
            raise ValueError("derivative order must be >= 1")
        if k - 1 > self.max_order:
            raise CapabilityError(f"order {k} exceeds supported depth {self.max_order + 1}")
        f = x - ar.floor(x)
        acc = self.base.derivative(f, k, side, ar)
        for t in self.terms:
            acc = acc + t.derivative(f, k, ar)
        return acc

    def breakpoints(self) -> list:
        pts = {self.base.flat_left, self.base.flat_right}
        for t in self.terms:
            pts.update(t.breakpoints())
        return sorted(pts)

    # -- serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "base": self.base.to_dict(),
            "terms": [t.to_dict() for t in self.terms],
            "shift": self.shift.hex(),
            "max_order": self.max_order,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Lift":
        return cls(
            base=BaseProfile.from_dict(d["base"]),
            terms=tuple(BumpTerm.from_dict(t) for t in d["terms"]),
            shift=float.fromhex(d["shift"]),
            max_order=int(d.get("max_order", DEFAULT_MAX_ORDER)),
        )


@dataclass(frozen=True)
class Rotation:
    """Rigid rotation ``x -> x + rho``; a test double sharing the lift interface."""

    rho: float

    def shifted(self, tau: float) -> "Rotation":
        return Rotation(self.rho + tau)

    def __call__(self, x):
        return np.asarray(x, dtype=float) + self.rho

    def frac_values(self, f):
        return np.asarray(f, dtype=float) + self.rho

    def derivatives(self, x, k: int = 1, side: str = RIGHT):
        x = np.asarray(x, dtype=float)
        return np.full_like(x, 1.0 if k == 1 else 0.0)

    def value(self, x, ar=FLOAT64):
        n = ar.floor(x)
        return n + ((x - n) + self.rho)

    def derivative(self, x, k: int = 1, side: str = RIGHT, ar=FLOAT64):
        return ar.num(1 if k == 1 else 0)

    def breakpoints(self) -> list:
        return []


# -- module-level operations ------------------------------------------------

def evaluate(lift, x, ar=FLOAT64):
    """``F(x)`` for scalar ``x``; integer part handled exactly."""
    return lift.value(ar.num(x) if ar is not FLOAT64 else float(x), ar)


def deriv(lift, x, k: int = 1, side: str = RIGHT, ar=FLOAT64):
    """k-th one-sided derivative of ``F`` at ``x``."""
    if side not in (LEFT, RIGHT):
        raise ValueError("side must be 'left' or 'right'")
    return lift.derivative(ar.num(x) if ar is not FLOAT64 else float(x), k, side, ar)


def iterate(lift, x, n: int, ar=FLOAT64):
    """``F^n(x)`` keeping the accumulated integer part exact."""
    if n < 1:
        raise ValueError("n must be >= 1")
    x = ar.num(x)
    k = ar.floor(x)
    f = x - k
    for _ in range(n):
        y = lift.value(f, ar)
        m = ar.floor(y)
        f = y - m
        k += m
    return k + f


def _term_diff(l1, l2):
    """Terms present in one lift but not the other, with signs, plus shift gap."""
    if isinstance(l1, Rotation) or isinstance(l2, Rotation):
        raise ValueError("norm differences need two closed-form lifts")
    if l1.base != l2.base:
        raise ValueError("lifts must share the base profile")
    i = 0
    while i < min(len(l1.terms), len(l2.terms)) and l1.terms[i] == l2.terms[i]:
        i += 1
    signed = [(1.0, t) for t in l1.terms[i:]] + [(-1.0, t) for t in l2.terms[i:]]
    return signed, l1.shift - l2.shift


def _sample_points(signed, points: int) -> np.ndarray:
    grids = [np.linspace(0.0, 1.0, points + 1)]
    for _, t in signed:
        for lo, hi in (t.up, t.down):
            grids.append(np.linspace(lo, hi, points + 1))
    return np.unique(np.concatenate(grids))


def _order_sups(signed, dshift: float, n: int, x: np.ndarray) -> np.ndarray:
    sups = np.empty(n + 1)
    v = np.full_like(x, dshift)
    for sgn, t in signed:
        v = v + sgn * t.values(x)
    sups[0] = np.max(np.abs(v))
    for k in range(1, n + 1):
        d = np.zeros_like(x)
        for sgn, t in signed:
            d = d + sgn * t.derivatives(x, k)
        sups[k] = np.max(np.abs(d)) if signed else 0.0
    return sups


def order_sups(l1, l2, n: int, grid: GridSpec = GridSpec()) -> np.ndarray:
    """Refined ``sup|D^(k)|`` for ``k = 0..n`` where ``D = F1 - F2``."""
    signed, dshift = _term_diff(l1, l2)
    if n > l1.max_order + 1:
        raise CapabilityError(f"order {n} exceeds supported depth")
    points = grid.points
    prev = _order_sups(signed, dshift, n, _sample_points(signed, points))
    if not signed:
        return prev
    while True:
        points *= 2
        if points > grid.max_points:
            raise RefinementError(f"C^{n} norm did not stabilise by {grid.max_points} points")
        cur = _order_sups(signed, dshift, n, _sample_points(signed, points))
        if np.all(np.abs(cur - prev) <= grid.rtol * np.maximum(np.abs(cur), 1e-300)):
            return cur
        prev = cur


def cn_norm(sups: Sequence[float], n: int) -> float:
    """Combine per-order sups into ``max_{1<=i<=n} sup|D^(i)| + sup|D|``."""
    sups = np.asarray(sups)
    return float(sups[0] + (np.max(sups[1:n + 1]) if n >= 1 else 0.0))


def cn_norm_diff(l1, l2, n: int, grid: GridSpec = GridSpec()) -> float:
    """Upper estimate of ``||F1 - F2||_{C^n}`` (sup form, orders 1..n plus values)."""
    if n < 0:
        raise ValueError("n must be >= 0")
    return cn_norm(order_sups(l1, l2, n, grid), n)


def flat_set(lift, tol: float = FLAT_TOL, grid: GridSpec = GridSpec()) -> list:
    """Maximal runs of grid points in ``[0, 1)`` where ``|F'| <= tol``.

    Runs are returned as ``Interval(first, last)`` grid points; a run starting
    at the half-critical point reads as ``(1/2, last]``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    x = np.arange(grid.points) / grid.points
    # a negative slope is a monotonicity defect, not flatness
    flat = np.abs(lift.derivatives(x, 1, RIGHT)) <= tol
    runs = []
    i = 0
    n = x.size
    while i < n:
        if flat[i]:
            j = i
            while j + 1 < n and flat[j + 1]:
                j += 1
            runs.append(Interval(float(x[i]), float(x[j])))
            i = j + 1
        else:
            i += 1
    if len(runs) > 1 and runs[0].lo == 0.0 and runs[-1].hi == x[-1]:
        runs[0] = Interval(runs[-1].lo, runs[0].hi + 1.0)
        runs.pop()
    return runs


def min_slope(lift, region: Sequence[Interval], grid: GridSpec = GridSpec()) -> float:
    """Grid minimum of ``F'`` over a union of closed intervals, refined to stability."""
    points = grid.points
    prev = None
    while points <= grid.max_points:
        xs = np.concatenate([np.linspace(lo, hi, points + 1) for lo, hi in region])
        cur = float(np.min(lift.derivatives(xs, 1, RIGHT)))
        if prev is not None and abs(cur - prev) <= grid.rtol * abs(cur):
            return min(cur, prev)
        prev = cur
        points *= 2
    raise RefinementError("slope minimum did not stabilise")

