"""Independent verifier: condition checks, orbit tables, Cauchy table, evidence."""

import dataclasses
import math

import numpy as np
import pytest

from denjoy.lift import GridSpec, Interval, Lift, Rotation
from denjoy.rotation import ContinuedFraction
from denjoy.verify import (
    CONDITION_NAMES,
    CONDITIONS,
    VerifyParams,
    cauchy_table,
    check_conditions,
    derived_flat,
    orbit_table,
    sample_points,
    wandering_evidence,
)


@pytest.fixture(scope="module")
def small_reports(small_run):
    params = small_run.config.verify_params()
    return check_conditions(small_run.stages, params)


def test_small_run_passes_every_condition(small_reports):
    assert len(small_reports) == 2
    for rep in small_reports:
        assert rep.passed, rep.failures()
        assert sorted(c.condition for c in rep.conditions) == list(CONDITIONS)


def test_report_serialisation(small_reports):
    d = small_reports[-1].to_dict()
    assert d["passed"] is True and len(d["conditions"]) == 9
    assert {c["name"] for c in d["conditions"]} == set(CONDITION_NAMES.values())
    assert small_reports[-1].condition(4).passed


def test_failures_are_reported_not_raised(small_run):
    """A stage whose rotation number is wrong fails condition 2 only as an entry."""
    params = small_run.config.verify_params()
    wrong = dataclasses.replace(params, target=ContinuedFraction.named("sqrt2m1"))
    reps = check_conditions(small_run.stages, wrong, cauchy=False)
    assert 2 in reps[0].failures()


def test_verify_params_from_build(small_run):
    bp = small_run.config.build_params()
    vp = VerifyParams.from_build(bp)
    assert vp.depth == bp.K and vp.grid.points == 4 * bp.grid.points


# -- orbit tables ------------------------------------------------------------------

def test_orbit_table_of_a_rotation():
    rows = orbit_table(Rotation(0.25), Interval(0.1, 0.2), 4)
    np.testing.assert_allclose(rows[:, 0], [0.1, 0.35, 0.6, 0.85, 0.1], atol=1e-15)
    np.testing.assert_allclose(rows[:, 1] - rows[:, 0], 0.1, atol=1e-15)


def test_orbit_table_high_precision_agrees(small_run):
    final = small_run.stages[-1]
    n = final.return_times[-1]
    lo = orbit_table(final.lift, final.seed, n)
    hi = orbit_table(final.lift, final.seed, n, bits=113)
    np.testing.assert_allclose(hi, lo, atol=1e-9)


def test_orbit_lo_is_reduced():
    rows = orbit_table(Lift(shift=0.3), Interval(0.9, 0.95), 20)
    assert np.all((rows[:, 0] >= 0) & (rows[:, 0] < 1))
    assert np.all(rows[:, 1] >= rows[:, 0])


def test_sample_points_cover_supports(small_run):
    grid = GridSpec(points=64)
    xs = sample_points([s.lift for s in small_run.stages], grid)
    assert np.all(np.diff(xs) > 0)
    assert len(xs) > 64


def test_derived_flat_of_base():
    runs, hull = derived_flat(Lift(), GridSpec())
    assert runs == [(0.5, 0.75)]
    assert hull.lo == 0.5 and hull.hi == pytest.approx(0.75, abs=1e-3)


# -- Cauchy table and evidence -------------------------------------------------------------

def test_cauchy_table_structure():
    stages = [type("S", (), {"lift": Lift(shift=s)})() for s in (0.0, 0.1, 0.15, 0.175)]
    rows = cauchy_table(stages, max_order=1)
    keys = {(r["p"], r["q"], r["n"]) for r in rows}
    assert keys == {(p, q, n) for n in (0, 1) for q in range(n + 1, 4) for p in range(q + 1, 4)}
    row = next(r for r in rows if (r["p"], r["q"], r["n"]) == (3, 1, 0))
    assert row["norm"] == pytest.approx(0.075) and row["bound"] == 2.0
    assert all(r["passed"] == (r["norm"] < r["bound"]) for r in rows)


def test_wandering_evidence_on_small_run(small_run):
    final = small_run.stages[-1]
    ev = wandering_evidence(final, final.return_times[-1])
    assert ev.passed and ev.disjoint and ev.min_gap > 0
    assert ev.regimes[0]["k"] == 1
    assert ev.to_dict()["passed"] is True


def test_wandering_evidence_horizon_one(small_run):
    ev = wandering_evidence(small_run.stages[-1], 1)
    assert ev.disjoint and ev.min_gap == math.inf and ev.regimes == []


def test_wandering_evidence_horizon_errors(small_run):
    final = small_run.stages[-1]
    with pytest.raises(ValueError):
        wandering_evidence(final, 0)
    with pytest.raises(ValueError):
        wandering_evidence(final, final.return_times[-1] + 1)
