"""Brackets, frames and coframes on the standard step-two pair.

Walks through the geometric toolkit: Lie brackets, growth vectors, the
greedy frame construction and its dual coframe, and the identities tying
the interior product, Lie derivative and exterior derivative together.
"""

import numpy as np

from linesig.expr import evaluate, parse
from linesig.geometry import (
    build_frame,
    coframe_at,
    coframe_symbolic,
    exterior_derivative_pair,
    growth_vector,
    interior_product,
    lie_bracket,
    one_form,
    gradient_form,
    vector_field,
)
from linesig.systems import engel_fields, heisenberg_fields

v1, v2 = heisenberg_fields()
print("V1 =", v1)
print("V2 =", v2)
print("[V1, V2] =", lie_bracket(v1, v2), " (a constant field: the bracket fills"
      " the missing direction)")

print("\ngrowth vector at a few points:")
for p in ([0, 0, 0], [1.2, -0.4, 3.0]):
    print(f"  {p}: {growth_vector((v1, v2), p)}")

frame = build_frame((v1, v2), [0.0, 0.0, 0.0])
print("\nframe words by level:", [[str(w) for w in lvl] for lvl in frame.levels])
p = [0.7, -0.4, 1.3]
print(f"coframe rows at {p} (third row is (y/2, -x/2, 1/2)):")
print(coframe_at(frame, p))

omega3 = coframe_symbolic(frame)[2]
print("symbolic third coframe row:", omega3)

print("\nduality check on random points: max |W(x) @ coframe(x) - Id| =")
rng = np.random.default_rng(0)
defect = max(
    np.max(np.abs(coframe_at(frame, q) @ frame.matrix_at(q) - np.eye(3)))
    for q in rng.uniform(-2, 2, size=(200, 3))
)
print(f"  {defect:.3e}")

# the two routes to i(V) d(phi): the row identity and the two-form evaluator
phi = one_form("y*z", "x^2", "x*y")
row = interior_product(phi, v1)
coords = [vector_field(*["1" if i == j else "0" for j in range(3)]) for i in range(3)]
worst = 0.0
for q in rng.uniform(-1, 1, size=(100, 3)):
    for j, ej in enumerate(coords):
        two = exterior_derivative_pair(phi, v1, ej, q)
        worst = max(worst, abs(evaluate(row.components[j], q) - two))
print(f"\ninterior product, row formula vs two-form evaluator: {worst:.3e}")

# exact forms are closed
f = gradient_form(parse("sin(x)*y + z^2"), 3)
closed_defect = max(
    abs(exterior_derivative_pair(f, v1, v2, q)) for q in rng.uniform(-1, 1, (50, 3))
)
print(f"d(df) paired with (V1, V2): {closed_defect:.3e}")

e1, e2 = engel_fields()
print("\nstep-three pair on R^4, growth vector:",
      growth_vector((e1, e2), [0.1, 0.2, -0.3, 0.4]))
frame4 = build_frame((e1, e2), [0.1, -0.2, 0.3, 0.05])
print("frame words:", [[str(w) for w in lvl] for lvl in frame4.levels])
