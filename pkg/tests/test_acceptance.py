"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The golden four-stage build is produced once per session by the
``golden_run`` fixture (through :func:`denjoy.cli.cmd_build`); criterion 8
repeats it in a fresh interpreter.
"""

from __future__ import annotations

import csv
import io
import json
import math
import subprocess
import sys

import numpy as np

from conftest import ACCEPTANCE_RESULTS
from denjoy.builder import StageRecord
from denjoy.cli import cmd_export
from denjoy.kernels import DEFAULT_MAX_ORDER
from denjoy.lift import (
    LEFT,
    RIGHT,
    GridSpec,
    Interval,
    Lift,
    Rotation,
    cn_norm_diff,
    deriv,
    flat_set,
)
from denjoy.perturb import (
    close_extension,
    close_flat,
    default_donor,
    flat_neighbourhood_eps,
    split_flat,
)
from denjoy.rotation import Side, rho_compare, rho_estimate
from denjoy.verify import check_conditions, wandering_evidence
from mutations import mutated

TIME_LIMIT = 600.0


def record(k: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS[k] = (bool(ok), detail)
    print(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def _reports(run):
    return json.loads((run.path / "reports.json").read_text())


# -- 1 -----------------------------------------------------------------------

def test_criterion_1_stage_construction(golden_run):
    rep = _reports(golden_run)
    stages = golden_run.stages
    failing = [(s["stage"], c["condition"]) for s in rep["stages"] for c in s["conditions"]
               if not c["passed"]]
    final, first = stages[-1].flat.length, stages[0].flat.length
    ok = (golden_run.exit_code == 0 and golden_run.elapsed < TIME_LIMIT and len(stages) == 5
          and not failing and final < 2.0 ** -4 * first and final < 1 / 64)
    record(1, ok, f"{len(stages)} stages in {golden_run.elapsed:.1f}s, failing {failing}, "
                  f"|I_4| = {final:.4g} (< {2.0 ** -4 * first:.4g})")


# -- 2 -----------------------------------------------------------------------

def test_criterion_2_cauchy_bounds(golden_run):
    cmd_export(golden_run.path, "cauchy", out=io.StringIO())
    with open(golden_run.path / "cauchy.csv") as fh:
        rows = list(csv.DictReader(fh))
    n_stages = len(golden_run.stages)
    expected = sum(1 for n in range(4) for q in range(n + 1, n_stages)
                   for p in range(q + 1, n_stages))
    bad = [r for r in rows
           if not float.fromhex(r["norm_hex"]) < 2.0 ** -(int(r["q"]) - 2)]
    orders = {int(r["n"]) for r in rows}
    ok = len(rows) == expected and not bad and orders <= {0, 1, 2, 3}
    worst = max(float(r["norm"]) / float(r["bound"]) for r in rows)
    record(2, ok, f"{len(rows)} pairs p > q > n, n <= 3; worst norm/bound {worst:.3g}")


# -- 3 -----------------------------------------------------------------------

def test_criterion_3_wandering_evidence(golden_run):
    final = golden_run.stages[-1]
    r = final.return_times[-1]
    ev = wandering_evidence(final, r)
    with open(golden_run.path / "orbit.csv") as fh:
        rows = list(csv.DictReader(fh))
    ok = ev.disjoint and ev.staircase and len(rows) == r
    maxima = ", ".join(f"k={g['k']}: {g['max_length']:.3g}" for g in ev.regimes)
    record(3, ok, f"{r} images disjoint={ev.disjoint} (min gap {ev.min_gap:.3g}), "
                  f"staircase={ev.staircase} [{maxima}]")


# -- 4 -----------------------------------------------------------------------

def _oracle_side(lift, p, q, points=10 ** 6):
    x = np.arange(points) / points
    y = x.copy()
    for _ in range(q):
        y = lift(y)
    g = y - x - p
    if g.min() > 0:
        return Side.GREATER
    if g.max() < 0:
        return Side.LESS
    return Side.CONTAINS


def test_criterion_4_rotation_toolkit():
    rng = np.random.default_rng(20241015)
    worst = 0.0
    est_ok = True
    for rho in rng.uniform(0.0, 1.0, 50):
        lift = Rotation(float(rho))
        for n in (10 ** 3, 10 ** 4, 10 ** 5):
            value, err = rho_estimate(lift, n, float(rng.uniform()))
            worst = max(worst, abs(value - rho) * n)
            est_ok &= err == 1.0 / n and abs(value - rho) <= err
    disagreements = []
    sides = []
    for _ in range(20):
        q = int(rng.integers(1, 6))
        p = int(rng.integers(0, q + 1))
        while math.gcd(p, q) != 1:
            p = int(rng.integers(0, q + 1))
        lift = Lift(shift=float(rng.uniform(-0.5, 0.5)))
        got = rho_compare(lift, p, q)
        want = _oracle_side(lift, p, q)
        sides.append(got.name[0])
        if got != want:
            disagreements.append((p, q, lift.shift, got, want))
    ok = est_ok and not disagreements
    record(4, ok, f"estimate error * n <= {worst:.3g} over 150 runs; rho_compare "
                  f"{''.join(sides)} vs 10^6-point oracle, {len(disagreements)} disagreements")


# -- 5 -----------------------------------------------------------------------

def _geometries(count: int, seed: int = 7):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        a = 0.5 + rng.uniform(0.01, 0.1)
        b = a + rng.uniform(0.01, 0.1)
        yield (Interval(0.5, a), Interval(b, 0.75), float(10 ** rng.uniform(-3, -0.5)),
               float(10 ** rng.uniform(-3, -0.5)), int(rng.integers(1, 4)),
               float(rng.uniform(-0.2, 0.2)))


def _relative_ok(new, old, delta, excluded: Interval, points=10 ** 4):
    x = (np.arange(points) + 0.5) / points
    x = x[(x < excluded.lo) | (x > excluded.hi)]
    d0, d1 = old.derivatives(x, 1, RIGHT), new.derivatives(x, 1, RIGHT)
    return bool(np.all(np.abs(d1 - d0) < delta * d0))


def _flat_matches(lift, targets, grid):
    runs = flat_set(lift, grid=grid)
    cell = 1.0 / grid.points
    if len(runs) != len(targets):
        return False
    return all(abs(r.lo - t.lo) <= cell and abs(r.hi - t.hi) <= cell
               for r, t in zip(runs, targets))


def test_criterion_5_perturbation_lemmas():
    grid = GridSpec()
    donor = default_donor(0.75)
    failures = []
    for g, (I1, J1, delta, sigma, n, shift) in enumerate(_geometries(20)):
        base = Lift(shift=shift)
        left = deriv(base, 0.5, 1, LEFT)
        split = split_flat(base, I1, J1, delta, n, donor)
        closed = close_flat(split, I1, J1, sigma, n, donor)
        reach = close_extension(I1, J1, limit=0.75 + 0.5 * flat_neighbourhood_eps(0.75))
        checks = {
            "split (1)": cn_norm_diff(split, base, n, grid) < delta,
            "split (3)": _relative_ok(split, base, delta, Interval(0.5, 0.75)),
            "split (4)": _flat_matches(split, [I1, J1], grid),
            "split (5)": deriv(split, 0.5, 1, LEFT) == left > 0,
            "close (1)": cn_norm_diff(closed, split, n, grid) < sigma,
            "close (3)": _relative_ok(closed, split, sigma, Interval(0.5, reach)),
            "close (4)": _flat_matches(closed, [I1], grid),
            "close (5)": deriv(closed, 0.5, 1, LEFT) == left > 0,
        }
        failures += [(g, k) for k, v in checks.items() if not v]
    record(5, not failures, f"20 geometries x items (1), (3), (4), (5) of both lemmas; "
                            f"failures {failures}")


# -- 6 -----------------------------------------------------------------------

def test_criterion_6_half_critical_flatness(golden_run):
    orders = range(1, DEFAULT_MAX_ORDER + 2)
    bad = []
    for s in golden_run.stages:
        right = [deriv(s.lift, 0.5, k, RIGHT) for k in orders]
        left = deriv(s.lift, 0.5, 1, LEFT)
        if any(v != 0.0 for v in right) or not left > 0:
            bad.append(s.index)
    lefts = sorted({deriv(s.lift, 0.5, 1, LEFT) for s in golden_run.stages})
    record(6, not bad, f"right derivatives of orders 1..{orders[-1]} vanish at 1/2 in every "
                       f"stage; left slope {lefts}; failing stages {bad}")


# -- 7 -----------------------------------------------------------------------

def test_criterion_7_mutation_sensitivity(golden_run):
    doc = json.loads((golden_run.path / "stages.json").read_text())
    params = golden_run.config.verify_params()
    outcome = {}
    for k in range(1, 10):
        stages = [StageRecord.from_dict(d) for d in mutated(doc, k)["stages"]]
        reports = check_conditions(stages, params, cauchy=False)
        outcome[k] = sorted({c.condition for r in reports for c in r.conditions
                             if not c.passed})
    ok = all(outcome[k] == [k] for k in outcome)
    record(7, ok, "failing conditions per mutation: "
                  + ", ".join(f"{k}->{v}" for k, v in outcome.items()))


# -- 8 -----------------------------------------------------------------------

def test_criterion_8_determinism(golden_run, tmp_path):
    out = tmp_path / "again"
    proc = subprocess.run([sys.executable, "-m", "denjoy", "build", "--rho", "golden",
                           "--stages", "4", "--resolution", "256", "--out", str(out)],
                          capture_output=True, text=True, timeout=TIME_LIMIT)
    first = (golden_run.path / "stages.json").read_bytes()
    second = (out / "stages.json").read_bytes() if proc.returncode == 0 else b""
    ok = proc.returncode == 0 and first == second
    record(8, ok, f"fresh-process rebuild exit {proc.returncode}, stages.json "
                  f"{'byte-identical' if first == second else 'differs'} ({len(first)} bytes)")
