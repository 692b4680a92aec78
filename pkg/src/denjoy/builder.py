"""Inductive construction of the stages ``f_0, f_1, ..., f_N``.

Stage ``n`` carries a lift ``f_n`` whose only flat interval is
``I_n = (1/2, c_n]``, a seed interval ``J_0`` and return times
``1 = r_0 < r_1 < ... < r_n`` with ``f_n^{r_n}(J_0)`` compactly inside
``I_n``.  One advance

1. splits ``I_n`` into ``I_{n+1} = (1/2, a)`` and ``J_{n+1} = [b, c_n]``
   and retunes the rotation number,
2. follows the critical value ``f(J_{n+1})`` until it first re-enters the
   closure of ``I_n`` (at time ``m``, inside ``I_{n+1}``),
3. closes ``J_{n+1}`` and retunes again, so that
   ``f_{n+1}^{r_n + m}(J_0)`` lies compactly inside ``I_{n+1}``.

Steering
--------
Within the window of translations that keep the rotation number at the
target convergent depth, the first-entry point of the critical value and the
image ``f^{r_n}(J_0)`` both sweep across ``I_n``.  The split is therefore
searched jointly over the perturbation size (a geometric grid) and the
retuning translation, and ``I_{n+1}``, ``J_{n+1}`` are placed after the
entry point is known.  The close step likewise searches the closing size
together with the retuning translation, aiming for a seed image that fills a
fixed fraction of ``I_{n+1}``; a seed image that is too thin leaves no room
for the following split.

All scans run vectorised over parameter lanes in binary64; every accepted
configuration is rebuilt as a genuine :class:`~denjoy.lift.Lift` and
re-checked point by point before it is recorded.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional

import numpy as np
from scipy.optimize import brentq

from .lift import GridSpec, Interval, Lift
from .perturb import (
    GeometryError,
    default_donor,
    close_flat,
    split_flat,
)
from .rotation import (
    BudgetExceeded,
    ContinuedFraction,
    Undecidable,
    rho_enclosure,
    tune_translation_detail,
)

log = logging.getLogger(__name__)

BUDGET_SLACK = 1.0 - 2.0 ** -10
"""Stage ``i`` may move the lift by at most ``BUDGET_SLACK * 2**-i`` in norm."""

SPLIT_SHARE = 0.25      # delta <= B/4, so the split term costs <= B/8
CLOSE_SHARE = 1.0       # sigma <= B, so the closing term costs <= B/2
SHIFT_SHARE = 0.125     # each retuning translation stays below B/8

_TAU_SPANS = (1e-6, 1e-5, 1e-4, 1e-3)
_TAU_POINTS = 201
_CLOSE_TARGETS = tuple(np.linspace(0.05, 0.9, 18))
_BISECTION_STEPS = 64
SEED_RULES = {
    "upper": ((0.8, 0.95), "image"),
    "middle": ((1.0 / 3.0, 2.0 / 3.0), "domain"),
}
"""Named choices of ``J_0``: ``upper`` is the preimage of the part of ``I_0``
between 80% and 95% of its length, ``middle`` the middle third of
``f_0^{-1}(I_0)``."""

_INVISIBLE_MASS = 2.0 ** -60
_HEALTHY_LEAD = 0.2

SPLIT_CUT = 0.15
"""``I_{n+1}`` ends this fraction of the way from the entry point to the seed image."""
FLAT_CAP = 0.45
"""``|I_{n+1}|`` never exceeds this fraction of ``|I_n|``."""


class BuildError(RuntimeError):
    """A stage could not be built; ``stage`` is the index being constructed."""

    def __init__(self, message: str, stage: int = -1, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.stage = stage
        self.diagnostics = diagnostics or {}


class NonReturn(BuildError):
    """The critical-value orbit did not re-enter the flat interval within the cap."""


class ScanFailure(BuildError):
    """No scanned parameter placed the entry point or the seed image correctly."""


@dataclass(frozen=True)
class BuildParams:
    """Configuration of a build.

    Parameters
    ----------
    target : ContinuedFraction
        Irrational rotation number to realise.
    stages : int
        Number of advances ``N``; the run produces ``N + 1`` records.
    depth : int, optional
        Convergent depth ``K`` of every rotation enclosure (default ``N + 2``).
    grid : GridSpec
        Builder grid; verification uses four times as many points.
    margin : float
        Relative margin of compact containment.
    max_iter : int
        Iteration cap ``M_max`` of the first-return search.
    scan_iter : int
        Iteration cap used inside the vectorised scans.
    delta_steps : int
        ``J_max``: the split scan uses ``delta_max * 2**-j`` for ``j <= J_max``.
    sigma_halvings : int
        Range of the closing size: ``sigma_max * 2**(-k/2)`` for
        ``k <= 2 * sigma_halvings`` (half-octave steps).
    seed : tuple of float
        Fractions spanned by ``J_0``.
    seed_space : {"domain", "image"}
        Whether ``seed`` cuts ``f_0^{-1}(I_0)`` or ``I_0`` (see :func:`seed_interval`).
    overhang : float
        Overhang of the closing bump past ``J_{n+1}``.
    fill : float
        Target length of the seed image relative to ``I_{n+1}`` after a close.
    max_backtracks : int
        Number of times a stage may fall back to an alternative predecessor.
    time_limit : float
        Wall-clock seconds after which the search stops backtracking.
    """

    target: ContinuedFraction = field(default_factory=lambda: ContinuedFraction.named("golden"))
    stages: int = 4
    depth: Optional[int] = None
    grid: GridSpec = GridSpec()
    precision: int = 53
    margin: float = 1e-3
    max_iter: int = 10 ** 6
    scan_iter: int = 3000
    delta_steps: int = 40
    sigma_halvings: int = 40
    seed: tuple = (0.8, 0.95)
    seed_space: str = "image"
    overhang: float = 0.05
    fill: float = 0.3
    max_backtracks: int = 200
    time_limit: float = 600.0

    def __post_init__(self):
        if self.stages < 1:
            raise ValueError("stages must be >= 1")
        if not self.target.is_irrational:
            raise ValueError("target must be irrational (periodic continued fraction)")
        if not 0.0 < self.margin < 0.1:
            raise ValueError("margin must lie in (0, 0.1)")
        lo, hi = self.seed
        if not 0.0 <= lo < hi <= 1.0:
            raise ValueError("seed fractions must satisfy 0 <= lo < hi <= 1")
        if self.seed_space not in ("domain", "image"):
            raise ValueError("seed_space must be 'domain' or 'image'")
        if self.depth is not None and self.depth < 1:
            raise ValueError("depth must be positive")

    @classmethod
    def with_seed_rule(cls, rule: str, **kwargs) -> "BuildParams":
        """Parameters using one of the named :data:`SEED_RULES`."""
        if rule not in SEED_RULES:
            raise ValueError(f"unknown seed rule {rule!r}; choose from {sorted(SEED_RULES)}")
        seed, space = SEED_RULES[rule]
        return cls(seed=seed, seed_space=space, **kwargs)

    @property
    def K(self) -> int:
        return self.depth if self.depth is not None else self.stages + 2


def stage_budget(i: int) -> float:
    """Norm budget for building stage ``i`` (bound ``2**-i`` of condition 6)."""
    return BUDGET_SLACK * 2.0 ** -i


def norm_order(i: int) -> int:
    """``C^n`` order controlled when building stage ``i`` (``i - 1``, at least 1)."""
    return max(i - 1, 1)


@dataclass(frozen=True)
class StageRecord:
    """One stage of the induction.

    ``flat`` is the declared flat interval ``I_n``; ``seed`` is ``J_0``;
    ``budgets`` holds the perturbation sizes and translations that produced
    this stage from its predecessor.
    """

    index: int
    lift: Lift
    flat: Interval
    seed: Interval
    return_times: tuple
    budgets: dict = field(default_factory=dict)
    rho_depth: int = 0
    split: Optional[tuple] = None    # (I_n, J_n) used to build this stage
    entry: Optional[float] = None    # first-entry point of the critical value
    cert: Optional[object] = None

    def to_dict(self) -> dict:
        d = {
            "index": self.index,
            "lift": self.lift.to_dict(),
            "flat": [v.hex() for v in self.flat],
            "seed": [v.hex() for v in self.seed],
            "return_times": list(self.return_times),
            "budgets": {k: float(v).hex() for k, v in sorted(self.budgets.items())},
            "rho_depth": self.rho_depth,
            "split": None if self.split is None else [[v.hex() for v in iv] for iv in self.split],
            "entry": None if self.entry is None else float(self.entry).hex(),
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StageRecord":
        h = float.fromhex
        split = d.get("split")
        return cls(
            index=int(d["index"]),
            lift=Lift.from_dict(d["lift"]),
            flat=Interval(*map(h, d["flat"])),
            seed=Interval(*map(h, d["seed"])),
            return_times=tuple(int(r) for r in d["return_times"]),
            budgets={k: h(v) for k, v in d.get("budgets", {}).items()},
            rho_depth=int(d.get("rho_depth", 0)),
            split=None if split is None else tuple(Interval(*map(h, iv)) for iv in split),
            entry=None if d.get("entry") is None else h(d["entry"]),
        )


# -- orbit helpers ----------------------------------------------------------

def seed_orbit(lift, seed: Interval, n: int) -> np.ndarray:
    """Endpoints of ``f^j(J_0)`` for ``j = 0..n`` as rows ``(lo, hi)``.

    ``lo`` is reduced to ``[0, 1)`` and ``hi = lo + (F^j(b) - F^j(a))`` keeps
    the exact length; ``hi`` may exceed 1 for an image straddling 0.
    """
    out = np.empty((n + 1, 2))
    lo, hi = float(seed.lo), float(seed.hi)
    out[0] = lo, hi
    for j in range(1, n + 1):
        y = lift(np.array([lo, hi]))
        k = math.floor(y[0])
        lo, hi = y[0] - k, y[1] - k
        out[j] = lo, hi
    return out


def meets(orbit: np.ndarray, region: Interval) -> np.ndarray:
    """Rows of ``orbit`` whose closed interval meets ``region`` (mod 1)."""
    lo, hi = orbit[:, 0], orbit[:, 1]
    hit = (lo <= region.hi) & (hi >= region.lo)
    hit |= (lo <= region.hi + 1.0) & (hi >= region.lo + 1.0)
    return hit


def inside(iv, region: Interval, margin: float) -> bool:
    """``iv`` lies in ``region`` with ``margin`` to spare on both sides."""
    return region.lo + margin < iv[0] and iv[1] < region.hi - margin


def first_entry(lift, w: float, region: Interval, cap: int) -> tuple:
    """First ``j >= 1`` with ``f^{j-1}(w)`` in the closed ``region``.

    ``w`` is the critical value ``f(J)``; the returned time counts iterates
    of ``J`` itself.  Raises :class:`NonReturn` past ``cap``.
    """
    x = w - math.floor(w)
    for j in range(1, cap + 1):
        if region.lo <= x <= region.hi:
            return j, x
        y = float(lift(np.array([x]))[0])
        x = y - math.floor(y)
    raise NonReturn(f"critical value did not re-enter the flat interval within {cap} iterates")


def staircase_ok(orbit: np.ndarray, return_times) -> bool:
    """Condition 7 on an orbit table: ``0 < |f^j(J_0)| < 2^{-(k-1)}``."""
    lengths = orbit[:, 1] - orbit[:, 0]
    for k in range(1, len(return_times)):
        seg = lengths[return_times[k - 1]:return_times[k]]
        if seg.size and not (np.all(seg > 0) and np.all(seg < 2.0 ** -(k - 1))):
            return False
    return True


class _Lanes:
    """``F + fm * T + tau`` evaluated lane by lane on arrays."""

    def __init__(self, lift: Lift, term, fm, tau):
        self.lift, self.term = lift, term
        self.fm = np.asarray(fm, dtype=float)
        self.tau = np.asarray(tau, dtype=float)

    def take(self, idx) -> "_Lanes":
        return _Lanes(self.lift, self.term, self.fm[idx], self.tau[idx])

    def __call__(self, x):
        n = np.floor(x)
        f = x - n
        v = self.lift.frac_values(f) + self.tau
        if self.term is not None:
            v = v + self.fm * self.term.values(f)
        return n + v


def _lane_orbit(fam: _Lanes, seed: Interval, n: int):
    """Seed-endpoint orbits for every lane; arrays of shape (n + 1, lanes)."""
    lanes = fam.tau.size
    lo = np.full(lanes, seed.lo)
    hi = np.full(lanes, seed.hi)
    LO = np.empty((n + 1, lanes))
    HI = np.empty((n + 1, lanes))
    LO[0], HI[0] = lo, hi
    for j in range(1, n + 1):
        ylo, yhi = fam(lo), fam(hi)
        k = np.floor(ylo)
        lo, hi = ylo - k, yhi - k
        LO[j], HI[j] = lo, hi
    return LO, HI


def _lane_entry(fam: _Lanes, w: np.ndarray, region: Interval, cap: int):
    """Vectorised :func:`first_entry`; lanes without entry get ``m = 0``."""
    lanes = w.size
    m = np.zeros(lanes, dtype=np.int64)
    p = np.full(lanes, np.nan)
    active = np.arange(lanes)
    x = w - np.floor(w)
    sub = fam
    for j in range(1, cap + 1):
        hit = (x >= region.lo) & (x <= region.hi)
        if np.any(hit):
            m[active[hit]] = j
            p[active[hit]] = x[hit]
            keep = ~hit
            active, x = active[keep], x[keep]
            sub = sub.take(keep)
            if active.size == 0:
                break
        y = sub(x)
        x = y - np.floor(y)
    return m, p


# -- stage 0 ----------------------------------------------------------------

def _preimage(lift: Lift, y: float) -> float:
    """The point ``x`` outside the flat interval with ``F(x) = y`` (mod 1)."""
    lo = lift.base.flat_right
    hi = lift.base.flat_left + 1.0
    v0 = float(lift(np.array([lo]))[0])
    target = y + math.ceil(v0 - y)
    if target >= v0 + 1.0:
        target -= 1.0
    root = brentq(lambda x: float(lift(np.array([x]))[0]) - target, lo, hi,
                  xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return root - math.floor(root)


def seed_interval(lift: Lift, flat: Interval, fractions, space: str = "domain") -> Interval:
    """``J_0`` inside ``f_0^{-1}(I_0)``.

    With ``space="domain"`` the fractions cut the preimage interval itself;
    with ``space="image"`` they cut ``I_0`` and ``J_0`` is the preimage of
    that piece.
    """
    if space == "image":
        u = _preimage(lift, flat.lo + fractions[0] * flat.length)
        v = _preimage(lift, flat.lo + fractions[1] * flat.length)
        if v <= u:
            v += 1.0
        return Interval(u, v) if v < 1.0 else Interval(u - 1.0, v - 1.0) if u >= 1.0 else Interval(u, v)
    if space != "domain":
        raise ValueError("space must be 'domain' or 'image'")
    u = _preimage(lift, flat.lo)
    v = _preimage(lift, flat.hi)
    if v <= u:
        v += 1.0
    lo = u + fractions[0] * (v - u)
    hi = u + fractions[1] * (v - u)
    k = math.floor(lo)
    return Interval(lo - k, hi - k)


def init_stage(params: BuildParams) -> StageRecord:
    """Stage 0: the base profile translated to the target rotation number."""
    base = Lift()
    try:
        tuned = tune_translation_detail(base, params.target, params.K, 1.0)
    except (BudgetExceeded, Undecidable) as exc:
        raise ScanFailure(f"initial tuning failed: {exc}", 0) from exc
    lift = tuned.lift
    flat = Interval(lift.base.flat_left, lift.base.flat_right)
    seed = seed_interval(lift, flat, params.seed, params.seed_space)
    return StageRecord(index=0, lift=lift, flat=flat, seed=seed, return_times=(1,),
                       budgets={"tau_close": tuned.tau}, rho_depth=tuned.enclosure.depth)


# -- one advance --------------------------------------------------------------

@dataclass
class _SplitChoice:
    lift: Lift
    I_next: Interval
    J_next: Interval
    m: int
    entry: float
    delta: float
    tau: float


def choose_subintervals(stage: StageRecord, entry: float, image: Interval) -> tuple:
    """``I_{n+1}``, ``J_{n+1}`` given the entry point and ``f^{r_n}(J_0)``.

    ``I_{n+1} = (1/2, a)`` ends ``SPLIT_CUT`` of the way from the entry
    point to the seed image (and before ``FLAT_CAP`` of ``I_n``);
    ``J_{n+1} = [b, c_n]`` starts halfway between ``a`` and the seed image.
    Keeping ``a`` close to the entry point puts the seed image far into the
    closing bump, where its image separates well from the critical value.
    """
    half, c = stage.flat
    ell = c - half
    if not (half < entry < image.lo <= image.hi < c):
        raise GeometryError("entry point must lie left of the seed image inside I_n")
    a = min(entry + SPLIT_CUT * (image.lo - entry), half + FLAT_CAP * ell)
    b = a + 0.5 * (image.lo - a)
    if not (half < entry < a < b < image.lo):
        raise GeometryError("no room between the entry point and the seed image")
    return Interval(half, a), Interval(b, c)


def _split_candidates(stage: StageRecord, params: BuildParams, donor: Interval):
    """Scan ``(delta, tau)`` lanes; return candidates sorted by preference."""
    i = stage.index + 1
    B = stage_budget(i)
    n_l = norm_order(i)
    F, (half, c), r = stage.lift, stage.flat, stage.return_times[-1]
    ell = c - half
    image = seed_orbit(F, stage.seed, r)[-1]
    g = image[0] - half
    if not g > 0:
        raise ScanFailure("seed image is not inside the flat interval", i)
    ref = split_flat(F, Interval(half, half + 0.3 * g), Interval(half + 0.6 * g, c),
                     SPLIT_SHARE * B, n_l, donor, params.grid)
    term = ref.terms[-1]
    try:
        tau0 = tune_translation_detail(ref, params.target, params.K, SHIFT_SHARE * B).tau
    except (BudgetExceeded, Undecidable) as exc:
        raise ScanFailure(f"retuning after the split failed: {exc}", i) from exc
    fms = [2.0 ** -j for j in range(0, params.delta_steps + 1, 2)] + [0.0]
    # the translation restoring the rotation number scales roughly with the
    # moved mass, so each size gets its own window around fm * tau0
    offsets = np.unique(np.concatenate(
        [np.linspace(-s, s, _TAU_POINTS) for s in _TAU_SPANS]))
    FM, OFF = np.meshgrid(np.array(fms), offsets, indexing="ij")
    TAU = FM * tau0 + OFF
    keep = np.abs(TAU.ravel()) <= SHIFT_SHARE * B
    fam = _Lanes(F, term, FM.ravel()[keep], TAU.ravel()[keep])
    LO, HI = _lane_orbit(fam, stage.seed, r)
    I_closed = Interval(half, c)
    hit = np.zeros(LO.shape[1], dtype=bool)
    for j in range(r):
        hit |= meets(np.stack([LO[j], HI[j]], axis=1), I_closed)
    ok = ~hit & (LO[r] > half) & (HI[r] < c - params.margin * ell)
    jmid = np.full(ok.size, 0.5 * (half + 0.6 * g + c))
    w = fam(jmid)
    m, p = _lane_entry(fam, w, I_closed, params.scan_iter)
    xlo = LO[r]
    offset = (xlo - p) / np.maximum(xlo - half, 1e-300)
    ok &= (m > 0) & (p > half + 0.1 * ell) & (p < half + 0.4 * ell)
    ok &= offset > 3.0 * params.margin
    idx = np.flatnonzero(ok)
    # a healthy lead of the entry point over the seed image leaves room for the
    # next stage; short returns keep the orbit tables small; then the largest
    # next flat interval wins
    a_rel = np.minimum((p - half) + SPLIT_CUT * (xlo - p), FLAT_CAP * ell) / ell
    order = sorted(idx, key=lambda k: (bool(offset[k] < _HEALTHY_LEAD), int(m[k]),
                                       -float(a_rel[k])))
    log.debug("stage %d split scan: %d lanes, %d candidates, tau0=%.3g, seed image "
              "at %.4f..%.4f of I_n", i, ok.size, len(order), tau0,
              (image[0] - half) / ell, (image[1] - half) / ell)
    cands = [(float(fam.fm[k]), float(fam.tau[k]), int(m[k]), float(p[k]),
              Interval(float(LO[r][k]), float(HI[r][k]))) for k in order]
    return cands, term, B, n_l


def _realise_split(stage, params, donor, cand, term, B, n_l) -> Optional[_SplitChoice]:
    fm, tau, m, p, image = cand
    try:
        I_next, J_next = choose_subintervals(stage, p, image)
        probe = split_flat(stage.lift, I_next, J_next, SPLIT_SHARE * B, n_l, donor, params.grid)
    except GeometryError:
        return None
    mu_max = probe.terms[-1].moved
    mu = fm * term.moved if fm > 0 else min(mu_max, _INVISIBLE_MASS)
    if mu > mu_max or mu_max <= 0:
        return None
    delta = SPLIT_SHARE * B * (mu / mu_max)
    if not delta > 0:
        return None
    lift = split_flat(stage.lift, I_next, J_next, delta, n_l, donor, params.grid).shifted(tau)
    r = stage.return_times[-1]
    orbit = seed_orbit(lift, stage.seed, r)
    I_n = stage.flat
    if np.any(meets(orbit[:r], I_n)) or not inside(orbit[r], J_next, 0.0):
        return None
    if not staircase_ok(orbit, stage.return_times):
        return None
    w = float(lift(np.array([0.5 * (J_next.lo + J_next.hi)]))[0])
    m2, p2 = first_entry(lift, w, I_n, params.max_iter)
    # the re-placed split must keep the entry point well inside I_{n+1}
    if not (I_next.lo + params.margin * I_next.length < p2 < I_next.hi - 0.5 * (I_next.hi - p)):
        return None
    if rho_enclosure(lift, params.target, params.K).depth < params.K:
        return None
    return _SplitChoice(lift, I_next, J_next, m2, p2, delta, tau)


def _close_options(stage: StageRecord, split: _SplitChoice, params: BuildParams,
                   donor: Interval) -> Iterator[StageRecord]:
    """Closed stages built from one split, best first."""
    i = stage.index + 1
    B = stage_budget(i)
    n_l = norm_order(i)
    S, I_next, J_next = split.lift, split.I_next, split.J_next
    r_new = stage.return_times[-1] + split.m
    returns = stage.return_times + (r_new,)
    ell = I_next.length
    sigma_max = CLOSE_SHARE * B
    full = close_flat(S, I_next, J_next, sigma_max, n_l, donor, params.grid, params.overhang)
    term = full.terms[-1]
    base = replace(full, terms=full.terms[:-1])
    fs = 2.0 ** (-0.5 * np.arange(2 * params.sigma_halvings + 1, dtype=float))
    mid = 0.5 * (stage.seed.lo + stage.seed.hi)
    x = mid
    for _ in range(r_new):
        x = float(S(np.array([x]))[0])
    n_ref = math.floor(x)
    # translation lanes: no retuning, plus bisection towards target positions
    FS, CT = np.meshgrid(fs, np.array(_CLOSE_TARGETS), indexing="ij")
    goal = n_ref + half_plus(I_next, CT.ravel())
    lo = np.full(goal.size, -SHIFT_SHARE * B)
    hi = np.full(goal.size, SHIFT_SHARE * B)
    for _ in range(_BISECTION_STEPS):
        md = 0.5 * (lo + hi)
        fam = _Lanes(base, term, FS.ravel(), md)
        y = np.full(goal.size, mid)
        for _ in range(r_new):
            y = fam(y)
        up = y > goal
        hi = np.where(up, md, hi)
        lo = np.where(up, lo, md)
    all_fs = np.concatenate([fs, FS.ravel()])
    all_tau = np.concatenate([np.zeros(fs.size), 0.5 * (lo + hi)])
    fam = _Lanes(base, term, all_fs, all_tau)
    LO, HI = _lane_orbit(fam, stage.seed, r_new)
    hit = np.zeros(all_fs.size, dtype=bool)
    for j in range(r_new):
        hit |= meets(np.stack([LO[j], HI[j]], axis=1), I_next)
    marg = params.margin * ell
    ok = ~hit & (LO[r_new] > I_next.lo + marg) & (HI[r_new] < I_next.hi - marg)
    width = (HI[r_new] - LO[r_new]) / ell
    ok &= width > 0
    lengths = HI - LO
    for k in range(1, len(returns)):
        seg = lengths[returns[k - 1]:returns[k]]
        ok &= np.all(seg > 0, axis=0) & np.all(seg < 2.0 ** -(k - 1), axis=0)
    idx = np.flatnonzero(ok)
    score = np.abs(np.log(width[idx] / params.fill))
    if i < params.stages and idx.size:
        # look ahead: where does the critical value of I_{n+1} first return?
        # An unperturbed next split needs that point well left of the seed image.
        sub = fam.take(idx)
        v = sub(np.full(idx.size, 0.5 * (I_next.lo + I_next.hi)))
        m_next, p_next = _lane_entry(sub, v, I_next, params.scan_iter)
        # The next split may translate the entry point and the seed image
        # together; it needs the entry point in (0.1, 0.4) of I_{n+1} and
        # the seed image inside I_{n+1}.  Score by the largest next flat
        # interval this allows.
        gap = (LO[r_new][idx] - p_next) / ell
        # A healthy lead (gap / seed position >= _HEALTHY_LEAD) caps the entry
        # position at gap * (1 - lead) / lead.
        p_top = np.minimum.reduce([np.full(gap.shape, 0.4),
                                   1.0 - 2.0 * params.margin - width[idx] - gap,
                                   gap * (1.0 - _HEALTHY_LEAD) / _HEALTHY_LEAD])
        a_rel = np.minimum(p_top + SPLIT_CUT * gap, FLAT_CAP)
        # the seed image must also stay short next to the gap, otherwise the
        # following close cannot separate them either
        good = (m_next > 0) & (p_top > 0.1) & (width[idx] < gap)
        # When the critical value misses I_{n+1} at the old return time the
        # next entry point is no longer tied to the seed image; such lanes
        # come next, then everything else.
        unlinked = (m_next > 0) & (m_next != split.m)
        score = np.where(good, -np.nan_to_num(a_rel + gap),
                         np.where(unlinked, 10.0 + score, 100.0 + score))
        log.debug("stage %d close scan: %d admissible lanes, %d with room for the next "
                  "split, %d with a new return time", i, idx.size, int(good.sum()),
                  int(unlinked.sum()))
    # alternatives offered to the backtracking search must differ visibly in
    # the position or the width of the seed image
    pos = (LO[r_new] - I_next.lo) / ell
    offered = []
    for k in idx[np.argsort(score, kind="stable")]:
        if any(abs(pos[k] - p0) < 0.05 and abs(math.log(width[k] / w0)) < 0.5
               for p0, w0 in offered):
            continue
        sigma = sigma_max * all_fs[k]
        try:
            lift = close_flat(S, I_next, J_next, sigma, n_l, donor, params.grid, params.overhang)
        except GeometryError:
            continue
        tau = float(all_tau[k])
        if tau:
            lift = lift.shifted(tau)
        orbit = seed_orbit(lift, stage.seed, r_new)
        if np.any(meets(orbit[:r_new], I_next)) or not inside(orbit[r_new], I_next, marg):
            continue
        if not staircase_ok(orbit, returns):
            continue
        depth = rho_enclosure(lift, params.target, params.K).depth
        if depth < params.K:
            continue
        offered.append((pos[k], width[k]))
        log.debug("stage %d close: sigma=%.3g tau=%.3g seed image %.4f+%.3g of I_next, score %.3g",
                  i, sigma, tau, pos[k], width[k], score[np.searchsorted(idx, k)])
        yield StageRecord(
            index=i, lift=lift, flat=I_next, seed=stage.seed, return_times=returns,
            budgets={"budget": B, "delta": split.delta, "sigma": sigma,
                     "tau_split": split.tau, "tau_close": tau},
            rho_depth=depth, split=(I_next, J_next), entry=split.entry)


def half_plus(I: Interval, frac):
    """``I.lo + frac * |I|`` (vectorised)."""
    return I.lo + np.asarray(frac) * I.length


def advance_options(stage: StageRecord, params: BuildParams) -> Iterator[StageRecord]:
    """Candidate stages ``n + 1`` in order of preference (lazy)."""
    donor = default_donor(stage.lift.base.flat_right)
    cands, term, B, n_l = _split_candidates(stage, params, donor)
    seen = set()
    for cand in cands:
        choice = _realise_split(stage, params, donor, cand, term, B, n_l)
        if choice is None:
            continue
        key = (choice.m, round(choice.entry, 12), choice.I_next)
        if key in seen:
            continue
        seen.add(key)
        ell = stage.flat.length
        log.debug("stage %d split: m=%d entry=%.4f a=%.4f b=%.4f (of I_n) delta=%.3g tau=%.3g",
                  stage.index + 1, choice.m, (choice.entry - 0.5) / ell,
                  (choice.I_next.hi - 0.5) / ell, (choice.J_next.lo - 0.5) / ell,
                  choice.delta, choice.tau)
        yield from _close_options(stage, choice, params, donor)


def find_delta_and_return(stage: StageRecord, params: BuildParams) -> tuple:
    """First admissible split: ``(delta', split lift, m)``.

    Raises :class:`ScanFailure` if no scanned lane qualifies.
    """
    donor = default_donor(stage.lift.base.flat_right)
    cands, term, B, n_l = _split_candidates(stage, params, donor)
    for cand in cands:
        choice = _realise_split(stage, params, donor, cand, term, B, n_l)
        if choice is not None:
            return choice.delta, choice.lift, choice.m
    raise ScanFailure("no split size places the entry point inside I_next",
                      stage.index + 1, {"candidates": len(cands)})


def advance_stage(stage: StageRecord, params: BuildParams) -> StageRecord:
    """The preferred stage ``n + 1`` (first of :func:`advance_options`)."""
    for nxt in advance_options(stage, params):
        return nxt
    raise ScanFailure("no split/close combination certifies the next stage", stage.index + 1)


def run(params: BuildParams, log=None) -> list:
    """Build stages ``0..N`` with bounded backtracking.

    When no admissible stage ``n + 1`` exists, the search returns to stage
    ``n`` and tries its next candidate, at most ``max_backtracks`` times.
    """
    say = log or (lambda msg: None)
    t0 = time.perf_counter()
    path = [init_stage(params)]
    say(f"stage 0: rho depth {path[0].rho_depth}, seed {tuple(path[0].seed)}")
    options = [advance_options(path[0], params)]
    backtracks = 0
    last_error: Optional[Exception] = None
    while len(path) <= params.stages:
        try:
            nxt = next(options[-1])
        except StopIteration:
            nxt = None
        except (ScanFailure, NonReturn, GeometryError, BudgetExceeded, Undecidable) as exc:
            last_error, nxt = exc, None
        if nxt is None:
            failed = len(path)
            out_of_time = time.perf_counter() - t0 > params.time_limit
            if len(path) == 1 or backtracks >= params.max_backtracks or out_of_time:
                msg = f"stage {failed} could not be built"
                if last_error is not None:
                    msg += f": {last_error}"
                err = ScanFailure(msg, failed)
                err.partial = list(path)
                raise err
            backtracks += 1
            options.pop()
            path.pop()
            say(f"stage {failed}: no candidate, back to stage {len(path) - 1}")
            continue
        path.append(nxt)
        say(f"stage {nxt.index}: r={nxt.return_times[-1]} |I|={nxt.flat.length:.3e} "
            f"({time.perf_counter() - t0:.1f}s)")
        if len(path) <= params.stages:
            options.append(advance_options(nxt, params))
    return path
