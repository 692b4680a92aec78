"""Split and close perturbations of flat intervals.

Both perturbations add one :class:`~denjoy.lift.BumpTerm`

    F + delta/(3 kappa c_n) * int_0^x (phi_up - phi_down),

where ``phi_up`` raises the derivative on a gap inside the flat region and
``phi_down`` removes the same mass from a donor interval on which ``F'`` is
bounded below by ``xi``.

Calibration
-----------
Only the ratio ``amp/(kappa c_n)`` enters the lift.  With bump widths ``W``,
kernel sup norms ``S_j`` and kernel mass ``m`` the added term ``P`` obeys

    sup|P|       = delta m / (3 c_n)
    sup|P^(k)|   = delta / (3 c_n) * S_{k-1} / W_min**k
    sup donor    = delta / (3 c_n) * S_0 / W_down

so ``c_n`` is chosen as the smallest value (at least 1) that keeps the
``C^n`` norm below ``delta / 2`` and the donor bump below ``xi delta / 2``.
The amplitudes then follow from ``c_n = 2 max(|phi_up|_{C^n}, |phi_down|_{C^n})``
and the zero-sum condition ``amp_up * W_up = amp_down * W_down``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .kernels import bump_kernel
from .lift import (
    BUMP_SHARPNESS,
    GridSpec,
    Interval,
    Lift,
    RIGHT,
    RefinementError,
)

NORM_FRACTION = 0.5
"""Target ratio between the analytic ``C^n`` bound of a term and its budget."""


class GeometryError(ValueError):
    """Intervals or margins make the requested perturbation impossible."""


@dataclass(frozen=True)
class CalibrationResult:
    amp_up: float
    amp_down: float
    kappa: float
    c_n: float
    xi: float
    donor: Interval
    norm_bound: float  # analytic C^n bound of the term divided by delta

    def scale(self, delta: float) -> float:
        return delta / (3.0 * self.kappa * self.c_n)


def flat_neighbourhood_eps(c: float) -> float:
    """``eps = min(0.1 (1 - c), 0.01)`` around a flat region ending at ``c``."""
    return min(0.1 * (1.0 - c), 0.01)


def xi_lower_bound(lift: Lift, excluded: Interval, grid: GridSpec = GridSpec()) -> float:
    """Certified ``xi > 0`` with ``F' >= xi`` on ``[0, 1]`` minus ``excluded``.

    The grid minimum is lowered by ``h/2 * sup|F''|`` (mean value bound),
    with the grid refined until this bound is positive.
    """
    lo, hi = max(excluded.lo, 0.0), min(excluded.hi, 1.0)
    region = [r for r in (Interval(0.0, lo), Interval(hi, 1.0)) if r.hi > r.lo]
    if not region or sum(r.length for r in region) <= 0:
        raise GeometryError("nothing remains outside the excluded interval")
    points = grid.points
    while points <= grid.max_points:
        best = np.inf
        for r in region:
            x = np.linspace(r.lo, r.hi, points + 1)
            d1 = lift.derivatives(x, 1, RIGHT)
            d2 = lift.derivatives(x, 2, RIGHT)
            step = (r.hi - r.lo) / points
            # each cell: F' >= min(endpoints) - step/2 * max |F''| at the endpoints,
            # with a factor 2 guarding against F'' peaks between nodes
            curv = np.maximum(np.abs(d2[:-1]), np.abs(d2[1:]))
            cell = np.minimum(d1[:-1], d1[1:]) - step * curv
            best = min(best, float(cell.min()))
        if best > 0:
            return best
        points *= 2
    raise GeometryError("no positive lower bound for F' outside the excluded region")


def default_donor(flat_hull_right: float) -> Interval:
    """Middle third of ``(c + eps, 1)`` for a flat region ending at ``c``."""
    eps = flat_neighbourhood_eps(flat_hull_right)
    lo = flat_hull_right + eps
    third = (1.0 - lo) / 3.0
    return Interval(lo + third, lo + 2.0 * third)


def _q(kernel, width: float, n: int) -> float:
    """``||psi((x - a)/W)||_{C^n}`` in the sup-over-orders form."""
    top = max((kernel.sup_norm(k) / width ** k for k in range(1, n + 1)), default=0.0)
    return kernel.sup_norm(0) + top


def calibrate_pair(up: Interval, down: Interval, cap: float, n: int,
                   delta: float = 1.0, sharpness: float = BUMP_SHARPNESS) -> CalibrationResult:
    """Bump amplitudes, ``kappa`` and ``c_n`` for a zero-sum pair.

    Parameters
    ----------
    up, down : Interval
        Supports of the raising and the donor bump.
    cap : float
        ``xi * delta``; the effective donor bump stays below ``cap / 2``.
    n : int
        Norm order to control.
    delta : float
        Perturbation size the term will be built with.
    """
    up, down = Interval(*up), Interval(*down)
    if not (0.0 < up.lo < up.hi < 1.0 and 0.0 < down.lo < down.hi < 1.0):
        raise GeometryError("supports must lie inside (0, 1)")
    if not (up.hi <= down.lo or down.hi <= up.lo):
        raise GeometryError("up and down supports overlap")
    if cap <= 0 or delta <= 0:
        raise ValueError("cap and delta must be positive")
    if n < 0:
        raise ValueError("n must be >= 0")
    ker = bump_kernel(sharpness)
    wu, wd = up.length, down.length
    wmin = min(wu, wd)
    m = ker.mass
    tail = max((ker.sup_norm(k - 1) / wmin ** k for k in range(1, n + 1)), default=0.0)
    xi = cap / delta
    c_n = max(1.0,
              (m + tail) / (3.0 * NORM_FRACTION),
              2.0 * ker.sup_norm(0) / (3.0 * wd * xi))
    ratio = wd / wu
    big = max(ratio * _q(ker, wu, n), _q(ker, wd, n))
    amp_down = c_n / (2.0 * big)
    amp_up = amp_down * ratio
    kappa = amp_down * wd
    return CalibrationResult(amp_up, amp_down, kappa, c_n, xi, down,
                             (m + tail) / (3.0 * c_n))


def _term(lift: Lift, up: Interval, cal: CalibrationResult, delta: float, n: int):
    from .lift import BumpTerm

    return BumpTerm(up=up, down=cal.donor, amp_up=cal.amp_up, amp_down=cal.amp_down,
                    scale=cal.scale(delta), n=n, kappa=cal.kappa, c_n=cal.c_n,
                    sharpness=BUMP_SHARPNESS)


def _check_common(lift: Lift, delta: float, donor: Interval, grid: GridSpec):
    if not 0.0 < delta < 1.0:
        raise ValueError("perturbation size must lie in (0, 1)")
    hull = lift.base.flat_right
    eps = flat_neighbourhood_eps(hull)
    if donor.lo <= hull + eps or donor.hi >= 1.0:
        raise GeometryError("donor interval meets the flat neighbourhood")
    excluded = Interval(lift.base.flat_left - eps, hull + eps)
    return xi_lower_bound(lift, excluded, grid)


def split_flat(lift: Lift, I1: Interval, J1: Interval, delta: float, n: int,
               donor: Interval, grid: GridSpec = GridSpec()) -> Lift:
    """Split the flat interval ``(1/2, c]`` into ``I1 = (1/2, a]`` and ``J1 = [b, c]``.

    The up bump lives on the gap ``(a, b)``.  Rotation is not retuned.
    """
    I1, J1, donor = Interval(*I1), Interval(*J1), Interval(*donor)
    half = lift.base.flat_left
    if I1.lo != half or not (I1.lo < I1.hi < J1.lo < J1.hi):
        raise GeometryError("need 1/2 = I1.lo < I1.hi < J1.lo < J1.hi")
    gap = Interval(I1.hi, J1.lo)
    probe = np.linspace(gap.lo, gap.hi, 33)[1:-1]
    if np.any(lift.derivatives(probe, 1) != 0.0):
        raise GeometryError("the split gap is not inside the flat interval")
    xi = _check_common(lift, delta, donor, grid)
    cal = calibrate_pair(gap, donor, xi * delta, n, delta)
    return lift.with_term(_term(lift, gap, cal, delta, n))


CLOSE_OVERHANG = 0.05
"""Default overhang of the closing bump past ``J``, relative to ``J.hi - I.hi``."""


def close_extension(I: Interval, J: Interval, overhang: float = CLOSE_OVERHANG,
                    limit: float = 1.0) -> float:
    """Right end of the closing bump: ``J.hi`` plus ``overhang (J.hi - I.hi)``, capped at ``limit``."""
    if overhang <= 0:
        raise ValueError("overhang must be positive")
    return min(J.hi + overhang * (J.hi - I.hi), limit)


def close_flat(lift: Lift, I: Interval, J: Interval, sigma: float, n: int,
               donor: Interval, grid: GridSpec = GridSpec(),
               overhang: float = CLOSE_OVERHANG) -> Lift:
    """Remove the flat interval ``J`` while keeping ``I = (1/2, a]`` flat.

    The up bump is supported on ``(a, J.hi + eta)`` with a small overhang
    ``eta`` past ``J``, so ``F'`` is positive at ``J.hi`` itself.  The
    overhang never leaves the half-width of the flat neighbourhood of the
    base profile, which keeps the ``xi`` bound valid.
    """
    I, J, donor = Interval(*I), Interval(*J), Interval(*donor)
    if not (I.hi < J.lo < J.hi):
        raise GeometryError("need I.hi < J.lo < J.hi")
    hull = lift.base.flat_right
    right = close_extension(I, J, overhang, hull + 0.5 * flat_neighbourhood_eps(hull))
    if right >= donor.lo:
        raise GeometryError("closing bump reaches the donor")
    xi = _check_common(lift, sigma, donor, grid)
    support = Interval(I.hi, right)
    cal = calibrate_pair(support, donor, xi * sigma, n, sigma)
    return lift.with_term(_term(lift, support, cal, sigma, n))


def perturbation_report(before: Lift, after: Lift, n: int, region: Sequence[Interval],
                        grid: GridSpec = GridSpec()) -> dict:
    """Measured ``C^n`` distance and worst relative derivative change on ``region``."""
    from .lift import cn_norm_diff

    xs = np.concatenate([np.linspace(r.lo, r.hi, grid.points + 1) for r in region])
    d0 = before.derivatives(xs, 1)
    d1 = after.derivatives(xs, 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(d0 > 0, np.abs(d1 - d0) / d0, np.inf)
    try:
        norm = cn_norm_diff(after, before, n, grid)
    except RefinementError:
        norm = float("nan")
    return {"norm": norm, "relative": float(np.max(rel)) if rel.size else 0.0}
