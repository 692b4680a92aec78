"""
The base profile and its rotation number
========================================

Every stage of the construction starts from one closed-form lift ``F``:
strictly increasing outside the flat interval ``(1/2, 3/4]``, constant on
it, and of degree one.  This script looks at that profile and then steers
its rotation number onto the golden mean with a single translation.
"""

import math

import numpy as np

from denjoy.lift import LEFT, RIGHT, GridSpec, Lift, deriv, flat_set
from denjoy.rotation import ContinuedFraction, convergents, rho_enclosure, rho_estimate, tune_translation_detail

# %%
# The profile.  ``F'`` vanishes exactly on the flat interval; the right
# derivatives at 1/2 vanish to every supported order while the left slope
# stays positive.
base = Lift()
x = np.linspace(0.0, 1.0, 9)
print("x     ", np.round(x, 3))
print("F(x)  ", np.round(base(x), 4))
print("F'(x) ", np.round(base.derivatives(x, 1), 4))
print("flat set on a 4096-point grid:", flat_set(base, grid=GridSpec()))
print("left slope at 1/2:", deriv(base, 0.5, 1, LEFT),
      " right derivatives of orders 1..4:", [deriv(base, 0.5, k, RIGHT) for k in range(1, 5)])

# %%
# Degree one: shifting the argument by an integer shifts the value by the
# same integer.
print("F(0.3 + 2) - F(0.3) =", base(np.array([2.3]))[0] - base(np.array([0.3]))[0])

# %%
# A rotation number estimate from one orbit is accurate to ``1/n``.  The
# untranslated profile fixes 0, so its rotation number is 0.
for n in (10, 100, 1000, 10000):
    value, err = rho_estimate(base, n)
    print(f"n = {n:>5}: rho ~ {value:.6f} +- {err:.0e}")

# %%
# The golden target and its convergents.  Certified comparisons against
# consecutive convergents bracket the rotation number; the depth counts
# how many of them agree with the target.
golden = ContinuedFraction.named("golden")
print("convergents:", [str(c) for c in convergents(golden, 8)])
print("depth of the untuned profile:", rho_enclosure(base, golden, 6).depth)

# %%
# One translation ``tau`` puts the rotation number inside the sixth
# enclosure of the golden mean (the depth a four-stage build uses).  Much
# deeper enclosures run into the plateaus that a flat interval creates at
# every rational rotation number, where comparisons become undecidable.
res = tune_translation_detail(base, golden, 6, 1.0)
enc = res.enclosure
print(f"tau = {res.tau:.12f} after {res.comparisons} comparisons")
print(f"certified: {enc.lo} < rho < {enc.hi} (width {float(enc.width):.2e})")
print("golden mean:", (math.sqrt(5) - 1) / 2)
