"""Independent certification of the nine per-stage conditions.

Every quantity is recomputed from the serialized lifts alone: flat sets,
norms, orbits and rotation enclosures.  The builder's own bookkeeping is
trusted only for the declared data that the conditions talk about
(``I_n``, ``J_0`` and the return times), and even ``I_n`` is re-derived
from the lift before it is used in conditions (5) and (8).

Conditions, for stage ``i`` with lift ``F_i``:

1. ``F_i`` is non-decreasing and of degree one;
2. the rotation number agrees with the target up to convergent depth ``K``;
3. ``F_i' = 0`` exactly on ``I_i``;
4. the left derivative at ``1/2`` is positive;
5. ``|I_i| < |I_{i-1}| / 2``;
6. ``||F_i - F_{i-1}||_{C^{i-1}} < 2^{-i}``;
7. ``0 < |f_i^j(J_0)| < 2^{-(k-1)}`` for ``r_{k-1} <= j < r_k``, ``k <= i``;
8. ``f_i^j(J_0)`` misses the closure of ``I_i`` for ``j < r_i`` and
   ``f_i^{r_i}(J_0)`` lies compactly inside ``I_i``;
9. ``|F_{i-1}' - F_i'| < 2^{-i}`` outside the closure of ``I_{i-1}``.

Condition 9 relates two consecutive stages; it is reported at the later
one, so that a defect introduced at stage ``i`` shows up in the report of
stage ``i``.  At stage 0 conditions 5, 6, 7 and 9 are vacuous.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .arith import backend_for
from .lift import (
    FLAT_TOL,
    LEFT,
    RIGHT,
    GridSpec,
    Interval,
    RefinementError,
    cn_norm_diff,
    flat_set,
)
from .rotation import ContinuedFraction, Undecidable, rho_enclosure

VERIFY_GRID_FACTOR = 4
CONDITIONS = tuple(range(1, 10))
CONDITION_NAMES = {
    1: "non-decreasing degree-one map",
    2: "rotation number (convergent depth)",
    3: "derivative vanishes exactly on I_i",
    4: "positive left derivative at 1/2",
    5: "|I_i| < |I_(i-1)| / 2",
    6: "||F_i - F_(i-1)||_C^(i-1) < 2^-i",
    7: "seed orbit length staircase",
    8: "seed orbit avoids I_i, then lands inside it",
    9: "|F_(i-1)' - F_i'| < 2^-i off I_(i-1)",
}
_SUPPORT_POINTS = 512


@dataclass(frozen=True)
class VerifyParams:
    """Tolerances and targets of a verification run."""

    target: ContinuedFraction
    depth: int
    grid: GridSpec = GridSpec().scaled(VERIFY_GRID_FACTOR)
    margin: float = 1e-3
    flat_tol: float = FLAT_TOL
    cauchy_orders: int = 3
    precision: int = 53

    @classmethod
    def from_build(cls, params) -> "VerifyParams":
        """Verification settings matching a :class:`~denjoy.builder.BuildParams`."""
        return cls(target=params.target, depth=params.K,
                   grid=params.grid.scaled(VERIFY_GRID_FACTOR), margin=params.margin,
                   precision=params.precision)


@dataclass
class ConditionResult:
    """Verdict on one condition: ``measured`` is compared against ``bound``.

    ``margin`` is positive exactly when the condition holds with room to
    spare; its sign convention is stated per condition in ``detail``.
    """

    condition: int
    passed: bool
    measured: float
    bound: float
    margin: float
    detail: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["name"] = CONDITION_NAMES[self.condition]
        return d


@dataclass
class VerificationReport:
    """All nine verdicts for one stage, plus its seed-orbit table."""

    stage: int
    conditions: list
    orbit: list = field(default_factory=list)
    cauchy: list = field(default_factory=list)
    flat: Optional[tuple] = None
    wall_time: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions)

    def failures(self) -> list:
        return [c.condition for c in self.conditions if not c.passed]

    def condition(self, k: int) -> ConditionResult:
        return next(c for c in self.conditions if c.condition == k)

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "passed": self.passed,
            "conditions": [c.to_dict() for c in self.conditions],
            "flat": None if self.flat is None else list(self.flat),
            "orbit": [list(row) for row in self.orbit],
            "cauchy": list(self.cauchy),
            "wall_time": self.wall_time,
        }


@dataclass
class EvidenceReport:
    """Finite-horizon wandering-interval evidence for the final stage."""

    horizon: int
    disjoint: bool
    min_gap: float
    regimes: list
    staircase: bool
    monotone_regimes: bool

    @property
    def passed(self) -> bool:
        return self.disjoint and self.staircase

    def to_dict(self) -> dict:
        return {**asdict(self), "passed": self.passed}


# -- primitives ---------------------------------------------------------------

def orbit_table(lift, seed: Interval, n: int, bits: int = 53) -> np.ndarray:
    """Rows ``(lo, hi)`` of ``f^j(J)`` for ``j = 0..n`` by endpoint iteration.

    ``lo`` is reduced to ``[0, 1)``; ``hi - lo`` is the exact length computed
    from the lifted endpoints, so an image that straddles 0 has ``hi > 1``.
    With ``bits > 53`` the endpoints are iterated in that precision and only
    the table is rounded to binary64.
    """
    if bits > 53:
        return _orbit_table_mp(lift, seed, n, backend_for(bits))
    rows = np.empty((n + 1, 2))
    ends = np.array([seed.lo, seed.hi], dtype=float)
    for j in range(n + 1):
        k = math.floor(ends[0])
        rows[j] = ends[0] - k, ends[1] - k
        if j < n:
            ends = lift(rows[j])
    return rows


def _orbit_table_mp(lift, seed: Interval, n: int, ar) -> np.ndarray:
    rows = np.empty((n + 1, 2))
    lo, hi = ar.num(seed.lo), ar.num(seed.hi)
    for j in range(n + 1):
        k = ar.floor(lo)
        lo, hi = lo - k, hi - k
        rows[j] = ar.to_float(lo), ar.to_float(lo) + ar.to_float(hi - lo)
        if j < n:
            lo, hi = lift.value(lo, ar), lift.value(hi, ar)
    return rows


def sample_points(lifts: Sequence, grid: GridSpec) -> np.ndarray:
    """Uniform grid plus dense grids on every bump support of ``lifts``."""
    parts = [np.arange(grid.points) / grid.points]
    for lift in lifts:
        for t in getattr(lift, "terms", ()):
            for lo, hi in (t.up, t.down):
                parts.append(np.linspace(lo, hi, _SUPPORT_POINTS + 1))
    return np.unique(np.concatenate(parts))


def derived_flat(lift, grid: GridSpec, tol: float = FLAT_TOL):
    """Runs of ``|F'| <= tol`` on the grid and the refined run at ``1/2``.

    Returns ``(runs, interval)`` where ``runs`` lists ``(first, last)`` grid
    points of every flat run and ``interval`` is ``(1/2, a)`` with ``a``
    refined by bisection between the last flat grid point of the run that
    starts at ``1/2`` and the next grid point (``None`` if no run starts
    there).
    """
    n = grid.points
    runs = [tuple(r) for r in flat_set(lift, tol, grid)]
    start = next((r for r in runs if r[0] == 0.5), None)
    if start is None:
        return runs, None
    lo, hi = start[1], start[1] + 1.0 / n
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if abs(float(lift.derivatives(np.array([mid]), 1, RIGHT)[0])) <= tol:
            lo = mid
        else:
            hi = mid
    return runs, Interval(0.5, hi)


def _meets_closed(rows: np.ndarray, region: Interval) -> np.ndarray:
    lo, hi = rows[:, 0], rows[:, 1]
    hit = (lo <= region.hi) & (hi >= region.lo)
    hit |= (lo <= region.hi + 1.0) & (hi >= region.lo + 1.0)
    return hit


def _result(k, ok, measured, bound, margin, detail="") -> ConditionResult:
    return ConditionResult(k, bool(ok), float(measured), float(bound), float(margin), detail)


def _vacuous(k) -> ConditionResult:
    return ConditionResult(k, True, 0.0, 0.0, math.inf, "vacuous at stage 0")


# -- the nine conditions ----------------------------------------------------------

def _check_monotone(lift, xs) -> ConditionResult:
    slope = float(np.min(lift.derivatives(xs, 1, RIGHT)))
    # degree one: the lift closes up across 0 (F(1^-) = F(0) + 1)
    jump = abs(float(lift.frac_values(np.array([1.0 - 2.0 ** -40]))[0])
               - float(lift.frac_values(np.array([0.0]))[0]) - 1.0)
    ok = slope >= 0.0 and jump < 1e-9
    return _result(1, ok, slope, 0.0, slope,
                   f"min F' on the grid (>= 0 required); degree-one defect {jump:.3g}")


def _check_rotation(lift, params: VerifyParams) -> ConditionResult:
    try:
        enc = rho_enclosure(lift, params.target, params.depth)
    except Undecidable as exc:
        return _result(2, False, 0, params.depth, -params.depth, f"undecidable: {exc}")
    return _result(2, enc.depth >= params.depth, enc.depth, params.depth,
                   enc.depth - params.depth,
                   f"rho in [{float(enc.lo):.12f}, {float(enc.hi):.12f}]")


def _check_flat(record, runs, derived, cell) -> ConditionResult:
    if derived is None:
        return _result(3, False, math.inf, cell, -math.inf, "no flat run starts at 1/2")
    err = abs(derived.hi - record.flat.hi)
    extra = len(runs) - 1
    ok = extra == 0 and record.flat.lo == 0.5 and err <= cell
    return _result(3, ok, err, cell, cell - err,
                   f"|derived a - declared a| vs one grid cell; {extra} extra flat runs")


def _check_left_derivative(lift) -> ConditionResult:
    d = float(lift.derivatives(np.array([0.5]), 1, LEFT)[0])
    return _result(4, d > 0.0, d, 0.0, d, "F'_-(1/2) > 0")


def _check_halving(flat, prev_flat) -> ConditionResult:
    ratio = flat.length / prev_flat.length
    return _result(5, ratio < 0.5, ratio, 0.5, 0.5 - ratio, "|I_i| / |I_(i-1)|")


def _check_norm(lift, prev, i, grid) -> ConditionResult:
    bound = 2.0 ** -i
    try:
        norm = cn_norm_diff(lift, prev, i - 1, grid)
    except (RefinementError, ValueError) as exc:
        return _result(6, False, math.inf, bound, -math.inf, f"norm not computable: {exc}")
    return _result(6, norm < bound, norm, bound, bound - norm, f"C^{i - 1} norm")


def _check_staircase(rows, returns) -> ConditionResult:
    lengths = rows[:, 1] - rows[:, 0]
    worst, shortest = 0.0, math.inf
    for k in range(1, len(returns)):
        seg = lengths[returns[k - 1]:returns[k]]
        if seg.size:
            worst = max(worst, float(np.max(seg)) * 2.0 ** (k - 1))
            shortest = min(shortest, float(np.min(seg)))
    ok = worst < 1.0 and shortest > 0.0
    return _result(7, ok, worst, 1.0, 1.0 - worst,
                   f"max |f^j(J_0)| * 2^(k-1) (< 1 required); shortest {shortest:.3g}")


def _check_return(rows, r, flat, margin) -> ConditionResult:
    closure = Interval(flat.lo, flat.hi)
    early = int(np.count_nonzero(_meets_closed(rows[:r], closure)))
    lo, hi = rows[r]
    pad = margin * flat.length
    room = min(lo - (flat.lo + pad), (flat.hi - pad) - hi) / flat.length
    ok = early == 0 and room > 0.0 and hi > lo
    return _result(8, ok, room, 0.0, room,
                   f"relative room inside I_i after the {margin:g} margin; "
                   f"{early} earlier images meet the closure")


def _check_derivative_gap(lift, prev, prev_flat, i, xs) -> ConditionResult:
    bound = 2.0 ** -i
    outside = (xs < prev_flat.lo) | (xs > prev_flat.hi)
    gap = float(np.max(np.abs(lift.derivatives(xs[outside], 1, RIGHT)
                              - prev.derivatives(xs[outside], 1, RIGHT))))
    return _result(9, gap < bound, gap, bound, bound - gap, "sup |F_(i-1)' - F_i'| off I_(i-1)")


def check_stage(record, previous, params: VerifyParams, prev_flat=None) -> VerificationReport:
    """Verify one stage; ``previous`` is the record of stage ``i - 1`` or ``None``."""
    t0 = time.perf_counter()
    lift, i = record.lift, record.index
    grid = params.grid
    cell = 1.0 / grid.points
    lifts = [lift] if previous is None else [lift, previous.lift]
    xs = sample_points(lifts, grid)
    runs, derived = derived_flat(lift, grid, params.flat_tol)
    flat = derived if derived is not None else record.flat
    r = record.return_times[-1]
    rows = orbit_table(lift, record.seed, r, params.precision)
    res = [_check_monotone(lift, xs), _check_rotation(lift, params),
           _check_flat(record, runs, derived, cell), _check_left_derivative(lift)]
    if previous is None:
        res += [_vacuous(5), _vacuous(6), _vacuous(7)]
    else:
        if prev_flat is None:
            prev_flat = derived_flat(previous.lift, grid, params.flat_tol)[1] or previous.flat
        res += [_check_halving(flat, prev_flat), _check_norm(lift, previous.lift, i, grid),
                _check_staircase(rows, record.return_times)]
    res.append(_check_return(rows, r, flat, params.margin))
    if previous is None:
        res.append(_vacuous(9))
    else:
        res.append(_check_derivative_gap(lift, previous.lift, prev_flat, i, xs))
    orbit = [(j, float(rows[j, 0]), float(rows[j, 1]), float(rows[j, 1] - rows[j, 0]))
             for j in range(r)]
    return VerificationReport(stage=i, conditions=res, orbit=orbit, flat=tuple(flat),
                              wall_time=time.perf_counter() - t0)


def check_conditions(stages: Sequence, params: VerifyParams,
                     cauchy: bool = True) -> list:
    """One :class:`VerificationReport` per stage; failures are entries, not exceptions.

    The final report also carries the Cauchy table when ``cauchy`` is set.
    """
    reports = []
    prev_flat = None
    for n, rec in enumerate(stages):
        previous = stages[n - 1] if n > 0 else None
        rep = check_stage(rec, previous, params, prev_flat)
        prev_flat = Interval(*rep.flat)
        reports.append(rep)
    if cauchy and reports:
        reports[-1].cauchy = cauchy_table(stages, params.cauchy_orders, params.grid)
    return reports


def cauchy_table(stages: Sequence, max_order: int = 3, grid: GridSpec = GridSpec()) -> list:
    """``||F_p - F_q||_{C^n}`` against ``2^{-(q-2)}`` for ``p > q > n``, ``n <= max_order``."""
    rows = []
    for n in range(0, max_order + 1):
        for q in range(n + 1, len(stages)):
            for p in range(q + 1, len(stages)):
                bound = 2.0 ** -(q - 2)
                try:
                    norm = cn_norm_diff(stages[p].lift, stages[q].lift, n, grid)
                except (RefinementError, ValueError):
                    norm = math.inf
                rows.append({"p": p, "q": q, "n": n, "norm": norm, "bound": bound,
                             "passed": bool(norm < bound)})
    return rows


def wandering_evidence(final, horizon: int) -> EvidenceReport:
    """Disjointness and staircase lengths of ``f_N^j(J_0)`` for ``j < horizon``.

    Raises
    ------
    ValueError
        If ``horizon`` is not in ``1..r_N``.
    """
    r = final.return_times[-1]
    if not 1 <= horizon <= r:
        raise ValueError(f"horizon must lie in 1..{r} (the last return time)")
    rows = orbit_table(final.lift, final.seed, horizon - 1)
    order = np.argsort(rows[:, 0], kind="stable")
    srt = rows[order]
    gaps = srt[1:, 0] - srt[:-1, 1]
    wrap = srt[0, 0] + 1.0 - srt[-1, 1]
    all_gaps = np.append(gaps, wrap) if len(srt) > 1 else np.array([math.inf])
    min_gap = float(np.min(all_gaps))
    disjoint = bool(min_gap > 0.0)
    lengths = rows[:, 1] - rows[:, 0]
    regimes = []
    for k in range(1, len(final.return_times)):
        a, b = final.return_times[k - 1], min(final.return_times[k], horizon)
        if a >= b:
            continue
        seg = lengths[a:b]
        bound = 2.0 ** -(k - 1)
        regimes.append({"k": k, "start": a, "stop": b, "max_length": float(np.max(seg)),
                        "min_length": float(np.min(seg)), "bound": bound,
                        "passed": bool(np.min(seg) > 0 and np.max(seg) < bound)})
    staircase = all(g["passed"] for g in regimes)
    maxima = [g["max_length"] for g in regimes]
    monotone = all(b <= a for a, b in zip(maxima, maxima[1:]))
    return EvidenceReport(horizon=horizon, disjoint=disjoint, min_gap=min_gap,
                          regimes=regimes, staircase=staircase, monotone_regimes=monotone)
