"""
A wandering interval, stage by stage
====================================

Each stage hands the next one a lift with a flat interval less than half as
long.  The seed interval ``J_0`` then travels further before it lands in
the flat interval again.  Along the way the images of ``J_0`` stay pairwise disjoint and
shrink in a staircase.  That is the finite-horizon picture of an interval
that never comes back.

Run with a directory written by ``denjoy build`` to inspect it, e.g.::

    denjoy build --stages 4 --out run
    python demos/03_wandering_interval.py run

Without an argument the script builds one stage in memory (a few seconds).
"""

import sys

import numpy as np

from denjoy.builder import BuildParams, run
from denjoy.cli import load_run
from denjoy.verify import VerifyParams, check_conditions, orbit_table, wandering_evidence

# %%
# Load a run or build a short one.
if len(sys.argv) > 1:
    config, stages = load_run(sys.argv[1])
    params = config.verify_params()
else:
    build = BuildParams(stages=1)
    stages = run(build, log=print)
    params = VerifyParams.from_build(build)

# %%
# Flat intervals halve and return times grow.
for s in stages:
    print(f"stage {s.index}: |I| = {s.flat.length:.4e}  return times {list(s.return_times)}")

# %%
# The independent verifier re-derives every condition from the records.
reports = check_conditions(stages, params, cauchy=False)
print("every condition passes:", all(r.passed for r in reports))

# %%
# Orbit of the seed interval under the final lift, up to its last return.
final = stages[-1]
r = final.return_times[-1]
rows = orbit_table(final.lift, final.seed, r)
lengths = rows[:, 1] - rows[:, 0]
print(f"|f^j(J_0)| for j = 0..{r}:")
print(np.array2string(lengths, precision=3, max_line_width=78))
print("lands inside I_N:", final.flat.lo < rows[r, 0] < rows[r, 1] < final.flat.hi)

# %%
# Before the return the images are pairwise disjoint and each regime
# between consecutive return times obeys its own length bound.
ev = wandering_evidence(final, r)
print(f"disjoint: {ev.disjoint} (smallest gap {ev.min_gap:.3g})")
for g in ev.regimes:
    print(f"  regime k={g['k']}: j in [{g['start']}, {g['stop']}), "
          f"max length {g['max_length']:.3g} < {g['bound']:g}")
