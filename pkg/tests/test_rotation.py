"""Rotation numbers: continued fractions, estimates, certified comparisons, tuning."""

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from denjoy.lift import Lift, Rotation
from denjoy.rotation import (
    BudgetExceeded,
    ContinuedFraction,
    Side,
    convergents,
    rho_compare,
    rho_compare_detail,
    rho_enclosure,
    rho_estimate,
    tune_translation,
    tune_translation_detail,
)

GOLDEN = ContinuedFraction.named("golden")
GOLDEN_VALUE = (math.sqrt(5) - 1) / 2


# -- continued fractions -------------------------------------------------------

def test_golden_convergents_are_fibonacci_ratios():
    assert convergents(GOLDEN, 4) == [Fraction(1), Fraction(1, 2), Fraction(2, 3), Fraction(3, 5)]


def test_single_quotient():
    assert convergents(ContinuedFraction.parse("0,2"), 5) == [Fraction(1, 2)]


def test_sqrt3_minus_1_prefix():
    cf = ContinuedFraction.named("sqrt3m1")
    assert convergents(cf, 3) == [Fraction(1), Fraction(2, 3), Fraction(3, 4)]
    assert cf.value() == pytest.approx(math.sqrt(3) - 1, abs=1e-15)


def test_named_values():
    assert GOLDEN.value() == pytest.approx(GOLDEN_VALUE, abs=1e-15)
    assert ContinuedFraction.named("sqrt2m1").value() == pytest.approx(math.sqrt(2) - 1, abs=1e-15)


def test_parse_forms():
    cf = ContinuedFraction.parse("1,2;3,4")
    assert cf.prefix == (1, 2) and cf.period == (3, 4) and cf.is_irrational
    assert cf.partial_quotients(7) == [1, 2, 3, 4, 3, 4, 3]
    assert str(cf) == "1,2;3,4"
    assert not ContinuedFraction.parse("0,2").is_irrational
    assert ContinuedFraction.parse(";1").value() == pytest.approx(GOLDEN_VALUE)
    with pytest.raises(ValueError):
        ContinuedFraction.parse("1,0;1")
    with pytest.raises(ValueError):
        ContinuedFraction.parse("")


@given(st.lists(st.integers(1, 9), min_size=1, max_size=6),
       st.lists(st.integers(1, 9), min_size=1, max_size=3))
def test_convergents_alternate_and_grow(prefix, period):
    cf = ContinuedFraction(tuple(prefix), tuple(period))
    conv = convergents(cf, 12)
    value = Fraction(cf.value())
    denominators = [c.denominator for c in conv]
    assert all(b > a for a, b in zip(denominators[1:], denominators[2:]))
    for k, c in enumerate(conv, start=1):
        if c.denominator ** 2 > 1e12:
            break  # closer to the value than binary64 resolves
        # odd convergents lie above, even ones below
        assert (c > value) if k % 2 == 1 else (c < value)


def test_convergents_need_positive_k():
    with pytest.raises(ValueError):
        convergents(GOLDEN, 0)


# -- estimates -----------------------------------------------------------------

def test_rotation_third_is_exact():
    value, err = rho_estimate(Rotation(1 / 3), 999)
    assert value == pytest.approx(1 / 3, abs=1e-15) and err == 1 / 999


def test_golden_rotation_estimate():
    value, _ = rho_estimate(Rotation(GOLDEN_VALUE), 10 ** 5)
    assert abs(value - 0.6180339887) < 1e-5


@settings(max_examples=30, deadline=None)
@given(rho=st.floats(0, 1), x0=st.floats(-2, 2), n=st.sampled_from([10, 100, 1000]))
def test_estimate_error_bound_on_rotations(rho, x0, n):
    value, err = rho_estimate(Rotation(rho), n, x0)
    assert abs(value - rho) <= err


def test_estimate_bound_on_a_nonlinear_lift():
    lift = Lift(shift=0.2)
    ref, _ = rho_estimate(lift, 20000)
    for n in (50, 500):
        value, err = rho_estimate(lift, n, 0.37)
        assert abs(value - ref) <= err + 1 / 20000


def test_estimate_needs_positive_n():
    with pytest.raises(ValueError):
        rho_estimate(Rotation(0.1), 0)


# -- comparisons -----------------------------------------------------------------

def test_compare_examples():
    assert rho_compare(Rotation(0.4), 1, 3) is Side.GREATER
    assert rho_compare(Rotation(1 / 3), 1, 3) is Side.CONTAINS
    assert rho_compare(Rotation(0.3), 1, 3) is Side.LESS


def test_compare_preconditions():
    with pytest.raises(ValueError):
        rho_compare(Rotation(0.4), 2, 4)
    with pytest.raises(ValueError):
        rho_compare(Rotation(0.4), 1, 0)


@settings(max_examples=15, deadline=None)
@given(shift=st.floats(-0.5, 0.5), q=st.integers(1, 4), p=st.integers(0, 4))
def test_compare_is_sound(shift, q, p):
    """A decisive verdict agrees with a fine-grid sign check of ``F^q(x) - x - p``."""
    if p > q or math.gcd(p, q) != 1:
        return
    lift = Lift(shift=shift)
    res = rho_compare_detail(lift, p, q)
    x = np.linspace(0, 1, 100001)
    y = x.copy()
    for _ in range(q):
        y = lift(y)
    g = y - x - p
    if res.side is Side.GREATER:
        assert g.min() > 0 and res.lower <= g.min()
    elif res.side is Side.LESS:
        assert g.max() < 0 and res.upper >= g.max()


# -- enclosures and tuning ----------------------------------------------------------

def test_enclosure_of_golden_rotation():
    enc = rho_enclosure(Rotation(GOLDEN_VALUE), GOLDEN, 5)
    assert enc.depth == 5 and enc.contains(GOLDEN_VALUE)
    assert enc.lo < enc.hi


def test_enclosure_stops_at_first_disagreement():
    enc = rho_enclosure(Rotation(0.5), GOLDEN, 5)
    assert enc.depth < 5


def test_enclosures_shrink_with_depth():
    widths = [rho_enclosure(Rotation(GOLDEN_VALUE), GOLDEN, k).width for k in range(1, 8)]
    assert all(b <= a for a, b in zip(widths, widths[1:]))


def test_enclosure_is_monotone_in_the_lift():
    """``F_1 <= F_2`` never gives an enclosure of ``F_1`` strictly above that of ``F_2``."""
    lo = rho_enclosure(Lift(shift=0.10), GOLDEN, 4)
    hi = rho_enclosure(Lift(shift=0.12), GOLDEN, 4)
    assert not lo.lo > hi.hi


def test_tune_on_target_needs_no_shift():
    res = tune_translation_detail(Rotation(GOLDEN_VALUE), GOLDEN, 10, 0.1)
    assert res.tau == 0.0 and res.comparisons == 1


def test_rational_contact_is_not_a_match():
    """Touching a convergent exactly counts as a miss, so tuning moves off it."""
    assert rho_enclosure(Rotation(0.5), ContinuedFraction.parse("0,2"), 1).depth == 0


def test_tune_rotation_towards_golden():
    res = tune_translation_detail(Rotation(0.6), GOLDEN, 8, 0.1)
    assert res.enclosure.depth >= 8
    assert res.tau == pytest.approx(GOLDEN_VALUE - 0.6, abs=0.01)


def test_tune_base_profile():
    lift = tune_translation(Lift(), GOLDEN, 6, 1.0)
    assert rho_enclosure(lift, GOLDEN, 6).depth >= 6


def test_tune_budget_exceeded():
    with pytest.raises(BudgetExceeded):
        tune_translation(Rotation(0.2), GOLDEN, 5, 0.1)
    with pytest.raises(ValueError):
        tune_translation(Rotation(0.2), GOLDEN, 5, 0.0)
