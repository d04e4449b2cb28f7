"""Signatures and iterated integrals of solved paths.

Shows the tensor-exponential structure of straight segments, the
multiplicative (concatenation) identity, the shuffle relation at depth
two, time reversal as the group inverse, and the signed-area reading of
the antisymmetric level-two part.
"""

import numpy as np

from linesig.driver import smooth_driver, uniform_mesh
from linesig.geometry import one_form
from linesig.integrals import (
    TensorSeries,
    iterated_line_integral,
    line_integral,
    signature,
)
from linesig.rde import solve
from linesig.systems import identity_fields

mesh = uniform_mesh(1.0, 1024)
TWO_PI = 2 * np.pi

# straight segment: levels are v^(x)k / k!
v = np.array([0.4, -0.9])
seg = signature(np.vstack([[0, 0], v]), 4)
print("straight segment vs tensor exponential:",
      seg.max_abs_diff(TensorSeries.segment(v, 4)))

circle = smooth_driver([f"cos({TWO_PI}*t) - 1", f"sin({TWO_PI}*t)"], mesh)
sig = signature(circle, 4)
left, right = signature(circle.values[:513], 4), signature(circle.values[512:], 4)
print("concatenation identity defect:", left.product(right).max_abs_diff(sig))

l1, l2 = sig.levels[1], sig.levels[2]
print("shuffle defect at depth 2:",
      np.max(np.abs(np.multiply.outer(l1, l1) - (l2 + l2.T))))

rev = signature(circle.values[::-1], 4)
print("reversal is the group inverse:",
      rev.product(sig).max_abs_diff(TensorSeries.identity(2, 4)))

area = 0.5 * (l2[0, 1] - l2[1, 0])
print(f"\nsigned area of the loop from level two: {area:.8f} (pi = {np.pi:.8f})")

# the same number as a line integral against the area form
tr = solve(identity_fields(2), [1.0, 0.0], circle, substeps=2)
area_form = one_form("-y/2", "x/2")
print("area form line integral:   ", line_integral(area_form, tr))

# an ordered iterated integral and its prefix/suffix paths
dx, dy = one_form("1", "0"), one_form("0", "1")
segpath = smooth_driver(["0.7*t", "-1.3*t"], mesh)
trs = solve(identity_fields(2), [0.0, 0.0], segpath, substeps=2)
res = iterated_line_integral([dx, dy], trs)
print(f"\nint dx dy over the ordered simplex along a segment to (a, b): "
      f"{res.value:.6f} = a*b/2 = {0.7 * -1.3 / 2:.6f}")
print("prefix path ends at the dx integral:", res.g[-1, 1])
print("suffix path starts at the dy integral:", res.h[0, 0])
