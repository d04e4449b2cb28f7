"""Monte Carlo density diagnostics at reduced desk scale.

Two contrasting experiments: the exact form of a compactly supported
function produces an atom at -f(x0) whose mass is the probability of
ending outside the support, while the bump form conditioned on a deep
visit shows no atom and an essentially never-vanishing derivative kernel.
Full-scale versions (10^4 replicates, mesh 2^-10) run in the acceptance
suite and through `linesig density`.
"""

import math

from linesig.expr import evaluate, parse
from linesig.geometry import gradient_form
from linesig.lab import (
    Box,
    ExperimentSpec,
    atom_test,
    default_atom_tol,
    kernel_vanishing_rate,
    run_conditional_samples,
)
from linesig.nondeg import construct_elliptic_bump
from linesig.systems import identity_fields

ids = identity_fields(2)
REPLICATES = 2000

print("== contrast: exact form of a compactly supported function ==")
f = parse("bump(x)*bump(y)*2")
contrast = ExperimentSpec(
    fields=ids, x0=(0.0, 0.0), forms=(gradient_form(f, 2),),
    hurst=0.5, steps=512, substeps=2, replicates=REPLICATES, master_seed=808,
)
ss = run_conditional_samples(contrast)
atoms = atom_test(ss.f_values, default_atom_tol(ss.f_values))
fx0 = evaluate(f, (0.0, 0.0))
p_in = math.erf(1.0 / math.sqrt(2.0)) ** 2
print(f"atoms found: {atoms}")
print(f"expected: value {-fx0:.6f}, mass {1 - p_in:.3f} "
      f"(+- {3 * math.sqrt(p_in * (1 - p_in) / REPLICATES):.3f})")

print("\n== bump form, conditioned on a deep visit ==")
conditional = ExperimentSpec(
    fields=ids, x0=(0.0, 0.0),
    forms=(construct_elliptic_bump([(0.2, 1.4), (-0.6, 0.6)]),),
    hurst=0.5, steps=512, substeps=2, replicates=REPLICATES, master_seed=809,
    event_regions=(Box((0.5, -0.3), (1.1, 0.3)),),
)
sc = run_conditional_samples(conditional)
print(f"conditional samples: {sc.n_conditional} of {sc.n}")
cond = sc.conditional_values()
print("atoms:", atom_test(cond, default_atom_tol(cond)))
print("kernel vanishing rate:", kernel_vanishing_rate(sc))
print("\nsummary:", sc.summary())
