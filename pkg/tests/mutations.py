"""Targeted corruptions of a serialized golden run, one per condition.

Each mutation edits the ``stages.json`` document in place and is designed
so that exactly one of the nine conditions fails.  The amplitudes and
offsets were chosen against the golden four-stage run:

1. a down bump of mass ``1e-40`` where ``F_4'`` is about ``1e-57``, which
   makes the slope negative there without moving any orbit;
2. the stage-0 translation moved by ``1e-3``, leaving the rotation-number
   plateau of the fourth convergent;
3. the declared ``I_4`` widened by 10 %, so it no longer matches ``F_4'``;
4. the base profile's flat interval started ``2^-40`` left of 1/2, which
   kills the left derivative at 1/2 in every stage;
5. stage 4 replaced by a copy of stage 3 (no halving);
6. a pair of touching bumps of width ``1e-6`` and amplitude ``1e-6`` added
   to stage 4: huge third derivative, negligible value and slope change;
7. the stage-4 return times replaced by ``1, 2, ..., 20, r_4``, which puts
   ordinary orbit lengths under the bounds ``2^-(k-1)`` of late regimes;
8. the stage-4 translation moved by ``-1e-6``: the rotation number keeps
   its convergents but ``f_4^{r_4}(J_0)`` leaves ``I_4``;
9. a pair of width ``1e-9`` raising the slope by about 0.67 inserted into
   every stage from 1 on: the ``C^0`` change is below ``1e-9`` and later
   stages differ from each other exactly as before.
"""

from __future__ import annotations

import copy

h = float.hex
u = float.fromhex


def _term(up, down, amp_up, amp_down, scale=1.0, n=1) -> dict:
    return {"up": [h(float(v)) for v in up], "down": [h(float(v)) for v in down],
            "amp_up": h(amp_up), "amp_down": h(amp_down), "scale": h(scale), "n": n,
            "kappa": h(1.0), "c_n": h(1.0), "sharpness": h(0.1)}


def negative_slope(doc):
    s = doc["stages"][4]
    a = u(s["flat"][1])
    lo, hi = a + 2e-6, a + 3e-6
    wu = 0.01
    s["lift"]["terms"].append(_term((0.3, 0.3 + wu), (lo, hi), 1e-40 * (hi - lo) / wu, 1e-40))


def shift_stage0(doc):
    s = doc["stages"][0]
    s["lift"]["shift"] = h(u(s["lift"]["shift"]) + 1e-3)


def widen_declared_flat(doc):
    s = doc["stages"][4]
    lo, hi = map(u, s["flat"])
    s["flat"][1] = h(hi + 0.1 * (hi - lo))


def kill_left_derivative(doc):
    for s in doc["stages"]:
        s["lift"]["base"]["flat_left"] = h(0.5 - 2.0 ** -40)


def repeat_stage(doc):
    s = copy.deepcopy(doc["stages"][3])
    s["index"] = 4
    doc["stages"][4] = s


def rough_pair(doc):
    w, amp = 1e-6, 1e-6
    doc["stages"][4]["lift"]["terms"].append(_term((0.2, 0.2 + w), (0.2 + w, 0.2 + 2 * w),
                                                   amp, amp))


def false_return_times(doc):
    s = doc["stages"][4]
    s["return_times"] = list(range(1, 21)) + [s["return_times"][-1]]


def shift_final(doc):
    s = doc["stages"][4]
    s["lift"]["shift"] = h(u(s["lift"]["shift"]) - 1e-6)


def steep_pair(doc):
    w = 1e-9
    for s in doc["stages"][1:]:
        s["lift"]["terms"].insert(0, _term((0.3, 0.3 + w), (0.3 + w, 0.3 + 2 * w), 1.0, 1.0))


MUTATIONS = {
    1: negative_slope,
    2: shift_stage0,
    3: widen_declared_flat,
    4: kill_left_derivative,
    5: repeat_stage,
    6: rough_pair,
    7: false_return_times,
    8: shift_final,
    9: steep_pair,
}


def mutated(doc: dict, condition: int) -> dict:
    out = copy.deepcopy(doc)
    MUTATIONS[condition](out)
    return out
