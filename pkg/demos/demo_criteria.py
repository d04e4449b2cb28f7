"""Degeneracy criteria and the constructors that satisfy them.

Non-closedness on the support decides the full-rank case; bracket-generated
systems need the corrected row i(V_a) d(phi) - L_{V_a} Xi to be nonzero
a.e. for some a.  The coefficient recursion c_(i,J) = V_i c_J - V_J c_i
manufactures forms passing the criterion from arbitrary seed functions, and
the flatness-parameter scan produces compactly supported coefficients whose
degenerate set is a measure-zero slice.
"""

from linesig.expr import parse
from linesig.geometry import build_frame, gradient_form, one_form
from linesig.nondeg import (
    Grid,
    construct_elliptic_bump,
    construct_general,
    construct_step2,
    criterion_elliptic,
    criterion_general,
    criterion_step2,
    check_expcond,
    heisenberg_condition,
    sard_lambda_select,
    xi_form,
)
from linesig.geometry import Word
from linesig.systems import heisenberg_fields

grid2 = Grid.cube(-1, 1, 2, 60)
grid3 = Grid.cube(-1, 1, 3, 24)

print("== full-rank case ==")
bump_form = construct_elliptic_bump([(-1, 1), (-1, 1)])
rep = criterion_elliptic(bump_form, grid2)
print(f"planar bump form: {rep.verdict} (fraction_zero {rep.fraction_zero!r})")
closed = gradient_form(parse("bump(x)*bump(y)"), 2)
print("exact form:      ", criterion_elliptic(closed, grid2).verdict)
print("area form:       ", criterion_elliptic(one_form('-y/2', 'x/2'), grid2).verdict)

print("\n== step-two case ==")
v1, v2 = heisenberg_fields()
frame = build_frame((v1, v2), [0.0, 0.0, 0.0])
phi = construct_step2("0", "x^2*y", v1, v2)
print("constructed form components:", phi)
print("correction form of a generic (non-constructed) form:",
      xi_form(one_form("y*z", "x", "x*y"), frame))
print("general criterion:", criterion_general(phi, frame, grid3).verdict)
print("step-two criterion:", criterion_step2(phi, v1, v2, grid3).verdict)
print("planar product test:", heisenberg_condition("0", "x^2*y", grid2).verdict)

print("\n== coefficient recursion and the top-level test ==")
form, table = construct_general(frame, {1: "0", 2: "x^2*y"})
rep = check_expcond(frame, table, alpha=1, j_word=Word((1, 2)), grid=grid3)
print(f"top-level coefficient test: {rep.verdict} ({rep.per_alpha})")

print("\n== flatness scan ==")
sel = sard_lambda_select("0", "0")
print("candidate fractions:", {k: round(v, 4) for k, v in sel.fractions.items()})
print("chosen lambda:", sel.lam)
nd_form = construct_step2(sel.c1, sel.c2, v1, v2)
print("emitted compactly supported form passes:",
      criterion_step2(nd_form, v1, v2, Grid.cube(-1, 1, 3, 20)).verdict)
