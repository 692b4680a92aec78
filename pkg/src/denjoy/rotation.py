"""Rotation numbers of monotone degree-one lifts.

Comparisons against rationals ``p/q`` are certified with the monotone grid
enclosure: for non-decreasing ``G = F^q`` and ``x`` in ``[x_i, x_{i+1}]``,

    G(x_i) - x_{i+1}  <=  G(x) - x  <=  G(x_{i+1}) - x_i.

Enclosures of ``rho`` are built from comparisons against the convergents of
the target continued fraction, and :func:`tune_translation` bisects on a
translation parameter, which moves ``rho`` monotonically.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator

import numpy as np

from .arith import FLOAT64

GRID_START = 1 << 12
GRID_MAX = 1 << 20
MAX_DENOMINATOR = 10 ** 6


class Undecidable(RuntimeError):
    """Grid refinement could not separate ``rho`` from ``p/q``."""

    def __init__(self, message: str, p: int = 0, q: int = 1, gap: tuple = ()):
        super().__init__(message)
        self.p, self.q, self.gap = p, q, gap


class BudgetExceeded(RuntimeError):
    """No translation within the budget reaches the requested depth."""


class Side(enum.Enum):
    LESS = "less"
    GREATER = "greater"
    CONTAINS = "contains"


_NAMED = {
    "golden": ((), (1,)),
    "sqrt2m1": ((), (2,)),
    "sqrt3m1": ((), (1, 2)),
}


@dataclass(frozen=True)
class ContinuedFraction:
    """``rho = [0; a1, a2, ...]`` as a finite prefix plus optional period.

    ``period=()`` means the expansion is finite (a rational target).
    """

    prefix: tuple = ()
    period: tuple = ()
    tag: str = "custom"

    def __post_init__(self):
        if any(int(a) < 1 for a in self.prefix + self.period):
            raise ValueError("partial quotients must be positive integers")
        if not self.prefix and not self.period:
            raise ValueError("empty continued fraction")

    @classmethod
    def named(cls, name: str) -> "ContinuedFraction":
        prefix, period = _NAMED[name]
        return cls(prefix, period, name)

    @classmethod
    def parse(cls, text: str) -> "ContinuedFraction":
        """Parse ``golden``/``sqrt2m1``/``sqrt3m1`` or ``a1,a2,...[;p1,p2,...]``."""
        text = text.strip()
        if text in _NAMED:
            return cls.named(text)
        head, _, tail = text.partition(";")
        prefix = tuple(int(v) for v in head.split(",") if v.strip())
        period = tuple(int(v) for v in tail.split(",") if v.strip())
        # a leading 0 stands for the integer part of [0; a1, ...]
        if prefix and prefix[0] == 0:
            prefix = prefix[1:]
        return cls(prefix, period)

    def __str__(self) -> str:
        if self.tag in _NAMED:
            return self.tag
        s = ",".join(map(str, self.prefix))
        if self.period:
            s += ";" + ",".join(map(str, self.period))
        return s

    @property
    def is_irrational(self) -> bool:
        return bool(self.period)

    def quotients(self) -> Iterator[int]:
        yield from self.prefix
        if self.period:
            yield from itertools.cycle(self.period)

    def partial_quotients(self, k: int) -> list:
        return list(itertools.islice(self.quotients(), k))

    def value(self) -> float:
        conv = convergents(self, 40 if self.is_irrational else len(self.prefix))
        return float(conv[-1])


def convergents(rho: ContinuedFraction, K: int) -> list:
    """First ``K`` convergents ``p_k/q_k`` (fewer if the expansion is finite)."""
    if K < 1:
        raise ValueError("K must be >= 1")
    p_prev, p = 1, 0
    q_prev, q = 0, 1
    out = []
    for a in itertools.islice(rho.quotients(), K):
        p_prev, p = p, a * p + p_prev
        q_prev, q = q, a * q + q_prev
        out.append(Fraction(p, q))
    return out


def rho_estimate(lift, n: int, x0: float = 0.0, ar=FLOAT64) -> tuple:
    """``((F^n(x0) - x0)/n, 1/n)``; the error bound holds for monotone lifts."""
    if n < 1:
        raise ValueError("n must be >= 1")
    x = ar.num(x0)
    k = ar.floor(x)
    f = x - k
    for _ in range(n):
        y = lift.value(f, ar)
        m = ar.floor(y)
        f = y - m
        k += m
    return ar.to_float(((k - ar.floor(ar.num(x0))) + (f - (x0 - math.floor(x0)))) / n), 1.0 / n


def _power_on_grid(lift, x: np.ndarray, q: int) -> np.ndarray:
    y = x.copy()
    for _ in range(q):
        y = lift(y)
    return y


def _roundoff(q: int) -> float:
    return 64.0 * q * np.finfo(float).eps


@dataclass(frozen=True)
class Comparison:
    side: Side
    lower: float  # certified lower bound of min_x F^q(x) - x - p
    upper: float  # certified upper bound of max_x F^q(x) - x - p
    points: int


def rho_compare_detail(lift, p: int, q: int, grid_start: int = GRID_START,
                       grid_max: int = GRID_MAX) -> Comparison:
    """Certified comparison of ``rho(F)`` against ``p/q`` with bounds."""
    if q < 1:
        raise ValueError("q must be positive")
    if q > MAX_DENOMINATOR:
        raise ValueError("denominator exceeds the iteration cap")
    if math.gcd(p, q) != 1:
        raise ValueError("p/q must be in lowest terms")
    slack = _roundoff(q)
    N = grid_start
    while True:
        x = np.arange(N + 1) / N
        g = _power_on_grid(lift, x, q) - p
        vals = g - x
        if vals.min() <= slack and vals.max() >= -slack:
            return Comparison(Side.CONTAINS, float(vals.min()), float(vals.max()), N)
        lower = float(np.min(g[:-1] - x[1:]))
        upper = float(np.max(g[1:] - x[:-1]))
        if lower > slack:
            return Comparison(Side.GREATER, lower, upper, N)
        if upper < -slack:
            return Comparison(Side.LESS, lower, upper, N)
        if 2 * N > grid_max:
            raise Undecidable(f"cannot separate rho from {p}/{q} at {N} points",
                              p, q, (lower, upper))
        N *= 2


def rho_compare(lift, p: int, q: int, grid_start: int = GRID_START,
                grid_max: int = GRID_MAX) -> Side:
    """``GREATER`` iff ``F^q(x) - x - p > 0`` for all x (certified), etc."""
    return rho_compare_detail(lift, p, q, grid_start, grid_max).side


@dataclass(frozen=True)
class RotationEnclosure:
    lo: Fraction
    hi: Fraction
    depth: int
    iterations_used: int

    @property
    def width(self) -> Fraction:
        return self.hi - self.lo

    def contains(self, value: float) -> bool:
        return float(self.lo) <= value <= float(self.hi)


def _expected(k: int) -> Side:
    # convergents of [0; a1, ...] start above rho and alternate
    return Side.LESS if k % 2 == 1 else Side.GREATER


def rho_enclosure(lift, target: ContinuedFraction, K: int,
                  grid_start: int = GRID_START, grid_max: int = GRID_MAX) -> RotationEnclosure:
    """Enclose ``rho(F)`` by comparing against the first ``K`` convergents.

    ``depth`` counts leading convergents on the same side as for the target.
    The scan stops at the first disagreement.
    """
    lo, hi = Fraction(0), Fraction(1)
    used = 0
    for p, q, want in ((0, 1, Side.GREATER), (1, 1, Side.LESS)):
        side = rho_compare(lift, p, q, grid_start, grid_max)
        used += q
        if side != want:
            v = Fraction(p, q)
            if side == Side.CONTAINS:
                return RotationEnclosure(v, v, 0, used)
            return RotationEnclosure(*((v, v + 1) if p == 1 else (v - 1, v)), 0, used)
    depth = 0
    for k, c in enumerate(convergents(target, K), start=1):
        side = rho_compare(lift, c.numerator, c.denominator, grid_start, grid_max)
        used += c.denominator
        if side == Side.CONTAINS:
            return RotationEnclosure(c, c, depth, used)
        if side == Side.GREATER:
            lo = max(lo, c)
        else:
            hi = min(hi, c)
        if side != _expected(k):
            break
        depth += 1
    return RotationEnclosure(lo, hi, depth, used)


def _direction(lift, target, K, grid_start, grid_max):
    """0 if depth >= K, -1 if rho is too low, +1 if too high."""
    enc = rho_enclosure(lift, target, K, grid_start, grid_max)
    if enc.depth >= K:
        return 0, enc
    conv = convergents(target, enc.depth + 1)[-1] if enc.depth < K else None
    # the failing convergent sits on the wrong side: compare positions
    if enc.hi <= conv and _expected(enc.depth + 1) == Side.GREATER:
        return -1, enc
    if enc.lo >= conv and _expected(enc.depth + 1) == Side.LESS:
        return +1, enc
    if enc.depth == 0 and enc.hi <= 0:
        return -1, enc
    if enc.depth == 0 and enc.lo >= 1:
        return +1, enc
    # rho equals a rational on the wrong side of the target convergent
    return (-1 if enc.hi < Fraction(target.value()) else +1), enc


@dataclass(frozen=True)
class TuneResult:
    lift: object
    tau: float
    enclosure: RotationEnclosure
    comparisons: int


def tune_translation_detail(lift, target: ContinuedFraction, K: int, budget: float,
                            grid_start: int = GRID_START, grid_max: int = GRID_MAX,
                            max_steps: int = 200) -> TuneResult:
    """Bisect on ``tau`` in ``[-budget, budget]`` until depth >= K."""
    if budget <= 0:
        raise ValueError("budget must be positive")
    calls = 0

    def probe(tau):
        nonlocal calls
        calls += 1
        return _direction(lift.shifted(tau) if tau else lift, target, K, grid_start, grid_max)

    d, enc = probe(0.0)
    if d == 0:
        return TuneResult(lift, 0.0, enc, calls)
    lo, hi = (-budget, 0.0) if d > 0 else (0.0, budget)
    d_end, enc_end = probe(lo if d > 0 else hi)
    if d_end == 0:
        tau = lo if d > 0 else hi
        return TuneResult(lift.shifted(tau), tau, enc_end, calls)
    if d_end == d:
        raise BudgetExceeded(f"|tau| <= {budget} cannot reach depth {K}")
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        try:
            d, enc = probe(mid)
        except Undecidable:
            # plateau edge: nudge off the boundary and retry once
            mid = lo + 0.375 * (hi - lo)
            d, enc = probe(mid)
        if d == 0:
            return TuneResult(lift.shifted(mid), mid, enc, calls)
        if d < 0:
            lo = mid
        else:
            hi = mid
    raise BudgetExceeded(f"translation bisection collapsed before depth {K}")


def tune_translation(lift, target: ContinuedFraction, K: int, budget: float,
                     grid_start: int = GRID_START, grid_max: int = GRID_MAX):
    """Return ``lift + tau`` with ``|tau| <= budget`` and enclosure depth >= K."""
    return tune_translation_detail(lift, target, K, budget, grid_start, grid_max).lift
