"""
Splitting and closing a flat interval
=====================================

The induction shrinks the flat interval with two small surgeries.  A
zero-sum pair of bumps first raises ``F'`` on a gap inside the flat
interval, leaving two flat pieces ``I1`` and ``J1``.  A second pair then
removes ``J1``.  Both pairs take their mass from a donor interval far from
the flat region, so ``F(1) - F(0)`` never changes.
"""

import numpy as np

from denjoy.lift import LEFT, GridSpec, Interval, Lift, cn_norm_diff, deriv, flat_set
from denjoy.perturb import close_flat, default_donor, perturbation_report, split_flat

grid = GridSpec()
base = Lift()
donor = default_donor(base.base.flat_right)
I1, J1 = Interval(0.5, 0.55), Interval(0.6, 0.75)
print("donor interval:", donor)

# %%
# Split with perturbation size delta = 0.1 in the C^2 norm.
split = split_flat(base, I1, J1, 0.1, 2, donor)
print("flat set after the split:", flat_set(split, grid=grid))
print("||split - base||_C2 =", cn_norm_diff(split, base, 2, grid))

# %%
# Close J1 with size sigma = 0.05.  Only I1 stays flat.
closed = close_flat(split, I1, J1, 0.05, 2, donor)
print("flat set after the close:", flat_set(closed, grid=grid))
print("||closed - split||_C2 =", cn_norm_diff(closed, split, 2, grid))

# %%
# Outside the flat neighbourhood the relative change of F' stays below the
# perturbation size, and the left slope at 1/2 is untouched.
away = [Interval(0.0, 0.49), Interval(0.8, 1.0)]
print("relative change of F' away from the flat region:",
      perturbation_report(base, closed, 2, away, grid)["relative"])
print("left slope at 1/2:", deriv(base, 0.5, 1, LEFT), "->", deriv(closed, 0.5, 1, LEFT))

# %%
# Zero sum: the total displacement over one period is unchanged.
ends = np.array([0.0, 1.0])
for name, lift in (("base", base), ("split", split), ("closed", closed)):
    v = lift(ends)
    print(f"{name:>6}: F(1) - F(0) = {float(v[1] - v[0])!r}")
