import io
import math

import numpy as np
import pytest

from linesig import lab
from linesig.driver import FbmSpec, sample_fbm, smooth_driver, uniform_mesh
from linesig.expr import evaluate, parse
from linesig.geometry import Word, gradient_form, one_form
from linesig.integrals import malliavin_kernel
from linesig.lab import (
    Box,
    ExperimentSpec,
    IndependenceFailure,
    atom_test,
    consalldeg_residual,
    default_atom_tol,
    event_flags,
    exactform_pair_experiment,
    kernel_vanishing_rate,
    run_conditional_samples,
)
from linesig.rde import solve
from linesig.systems import heisenberg_fields, identity_fields

IDS = identity_fields(2)


def small_spec(**overrides):
    base = dict(
        fields=IDS,
        x0=(0.0, 0.0),
        forms=(gradient_form(parse("bump(x)*bump(y)*2"), 2),),
        hurst=0.5,
        horizon=1.0,
        steps=128,
        substeps=1,
        replicates=200,
        master_seed=11,
        chunk=64,
    )
    base.update(overrides)
    return ExperimentSpec(**base)


# ---------------------------------------------------------------------------
# events

def test_event_flags_single_region():
    x = np.zeros((3, 5, 2))
    x[0, 2] = [0.5, 0.5]   # visits
    x[1, :] = [2.0, 2.0]   # never
    x[2, 0] = [0.5, 0.5]   # visits at time zero
    box = Box((0.0, 0.0), (1.0, 1.0))
    flags = event_flags(x, [box])
    assert flags.tolist() == [True, False, True]


def test_event_flags_in_order():
    box1 = Box((0.0, 0.0), (1.0, 1.0))
    box2 = Box((2.0, 0.0), (3.0, 1.0))
    x = np.zeros((2, 4, 2))
    x[0] = [[0.5, 0.5], [2.5, 0.5], [0.0, 0.0], [0.0, 0.0]]  # in order
    x[1] = [[2.5, 0.5], [0.5, 0.5], [0.0, 0.0], [0.0, 0.0]]  # reversed
    flags = event_flags(x, [box1, box2])
    assert flags.tolist() == [True, False]


def test_event_flags_brute_force():
    rng = np.random.default_rng(5)
    x = rng.uniform(-1.5, 1.5, size=(50, 30, 2))
    box = Box((-0.2, -0.3), (0.4, 0.5))
    flags = event_flags(x, [box])
    for r in range(50):
        manual = any(box.contains(x[r, t]) for t in range(30))
        assert flags[r] == manual


# ---------------------------------------------------------------------------
# sampling and atoms

def test_zero_form_all_zero():
    spec = small_spec(forms=(one_form("0", "0"),), replicates=50)
    ss = run_conditional_samples(spec)
    assert np.all(ss.f_values == 0.0)
    assert np.all(ss.kernel_sup == 0.0)
    assert kernel_vanishing_rate(ss) == 1.0


def test_chunk_invariance_bitwise():
    a = run_conditional_samples(small_spec(chunk=200))
    b = run_conditional_samples(small_spec(chunk=13))
    assert np.array_equal(a.f_values, b.f_values)
    assert np.array_equal(a.kernel_sup, b.kernel_sup)
    assert np.array_equal(a.event, b.event)


def test_atom_test_constant():
    atoms = atom_test(np.full(100, 3.25), atom_tol=1e-6)
    assert len(atoms) == 1
    assert atoms[0] == (3.25, 1.0)


def test_atom_test_uniform_no_atom():
    rng = np.random.default_rng(3)
    samples = rng.uniform(0, 1, size=10_000)
    assert atom_test(samples, default_atom_tol(samples)) == []


def test_atom_test_mixture():
    rng = np.random.default_rng(4)
    n = 10_000
    samples = np.where(
        rng.random(n) < 0.5, 0.7, rng.uniform(-1, 0, size=n)
    )
    atoms = atom_test(samples, default_atom_tol(samples))
    assert len(atoms) == 1
    value, mass = atoms[0]
    assert value == pytest.approx(0.7, abs=1e-6)
    assert mass == pytest.approx(0.5, abs=3 * math.sqrt(0.25 / n))


def test_atom_test_needs_samples():
    with pytest.raises(ValueError):
        atom_test(np.zeros(10), 1e-6)


def test_exact_form_contrast_atom():
    """Compactly supported exact form: atom at -f(x0) with mass matching
    the probability of ending outside the support."""
    f = parse("bump(x)*bump(y)*2")
    spec = small_spec(
        forms=(gradient_form(f, 2),),
        steps=512,
        substeps=2,
        replicates=800,
        master_seed=29,
        chunk=400,
    )
    ss = run_conditional_samples(spec)
    atoms = atom_test(ss.f_values, default_atom_tol(ss.f_values))
    assert atoms, "expected an atom"
    value, mass = atoms[0]
    fx0 = evaluate(f, (0.0, 0.0))
    assert value == pytest.approx(-fx0, abs=1e-4)
    # X_T is an uncorrelated gaussian pair; P(outside [-1,1]^2) analytically
    p_in = math.erf(1.0 / math.sqrt(2.0)) ** 2
    want = 1.0 - p_in
    assert abs(mass - want) < 3 * math.sqrt(want * (1 - want) / spec.replicates)


def test_conditional_no_atom_and_kernel_alive():
    """Offset bump form, conditioned on visiting its support: no atom above
    threshold and the kernel essentially never vanishes."""
    from linesig.nondeg import construct_elliptic_bump

    cube = [(0.2, 1.4), (-0.6, 0.6)]
    form = construct_elliptic_bump(cube)
    # condition on a visit deep inside the support: grazes along the flat
    # bump tail otherwise concentrate (continuously but log-slowly) near
    # zero and read as a cluster at any finite resolution
    spec = small_spec(
        forms=(form,),
        steps=512,
        substeps=2,
        replicates=600,
        master_seed=31,
        chunk=300,
        event_regions=(Box((0.5, -0.3), (1.1, 0.3)),),
    )
    ss = run_conditional_samples(spec)
    assert 30 <= ss.n_conditional < ss.n
    cond = ss.conditional_values()
    assert atom_test(cond, default_atom_tol(cond)) == []
    assert kernel_vanishing_rate(ss) <= 0.01
    summary = ss.summary()
    assert summary["atoms"] == []
    assert not summary["insufficient"]


def test_insufficient_samples_reported():
    spec = small_spec(
        replicates=40,
        event_regions=(Box((50.0, 50.0), (51.0, 51.0)),),  # unreachable
    )
    ss = run_conditional_samples(spec)
    assert ss.insufficient()
    assert ss.summary()["conditional"] == 0


def test_sample_set_csv():
    ss = run_conditional_samples(small_spec(replicates=10))
    buf = io.StringIO()
    ss.to_csv(buf, comment="config_hash=abc")
    lines = buf.getvalue().splitlines()
    assert lines[0] == "# config_hash=abc"
    assert lines[1] == "replicate,seed,F,event,kernel_sup"
    assert len(lines) == 12


# ---------------------------------------------------------------------------
# residual diagnostics

def test_consalldeg_residual_single_letter_is_kernel_column():
    fields = heisenberg_fields()
    phi = one_form("bump(x)*y", "x^2*0.2", "0.1*z")
    w = sample_fbm(FbmSpec(hurst=0.5, horizon=1.0, steps=128, seed=7, dim=2))
    tr = solve(fields, [0.0, 0.0, 0.0], w, substeps=2)
    kernel = malliavin_kernel(phi, tr)
    for alpha in (1, 2):
        res = consalldeg_residual(tr, phi, Word((alpha,)))
        assert np.array_equal(res, kernel.rows[:, alpha - 1])


def test_consalldeg_residual_zero_form():
    fields = heisenberg_fields()
    w = sample_fbm(FbmSpec(hurst=0.5, horizon=1.0, steps=64, seed=8, dim=2))
    tr = solve(fields, [0.0, 0.0, 0.0], w, substeps=2)
    res = consalldeg_residual(tr, one_form("0", "0", "0"), Word((1, 2)))
    assert np.all(res == 0.0)


def test_consalldeg_residual_generic_nonzero():
    fields = heisenberg_fields()
    phi = one_form("y*z", "x", "x*y")
    w = sample_fbm(FbmSpec(hurst=0.5, horizon=1.0, steps=128, seed=9, dim=2))
    tr = solve(fields, [0.1, 0.2, -0.1], w, substeps=2)
    res = consalldeg_residual(tr, phi, Word((1, 2)))
    kernel_tol = 1e-7 * max(1.0, w.sup_norm())
    assert np.max(np.abs(res)) > 1e3 * kernel_tol


# ---------------------------------------------------------------------------
# common-support exact pairs

def test_exactform_pair_no_atom():
    spec = small_spec(replicates=400, steps=256, chunk=200, master_seed=17)
    ss = exactform_pair_experiment(["bump(x)*x", "bump(y)*y"], spec)
    assert ss.n == 400
    atoms = atom_test(ss.f_values, default_atom_tol(ss.f_values))
    # away from a single dominant atom; tiny residual clusters may appear
    assert not atoms or atoms[0][1] < 0.2


def test_exactform_single_contrast_has_atom():
    f = parse("bump(x)*bump(y)*2")
    spec = small_spec(
        forms=(gradient_form(f, 2),), steps=512, substeps=2,
        replicates=500, chunk=250, master_seed=23,
    )
    ss = run_conditional_samples(spec)
    atoms = atom_test(ss.f_values, default_atom_tol(ss.f_values))
    assert atoms and atoms[0][1] > 0.3


def test_exactform_pair_independence_failure():
    spec = small_spec(replicates=40)
    with pytest.raises(IndependenceFailure):
        exactform_pair_experiment(["bump(x)*x", "bump(x)*x"], spec)
