import numpy as np
import pytest

from linesig import geometry as geo
from linesig.expr import evaluate, parse
from linesig.geometry import (
    Frame,
    HormanderFailure,
    IrregularPoint,
    SingularFrame,
    Word,
    bracket_of_word,
    build_frame,
    coframe_at,
    coframe_symbolic,
    exterior_derivative_pair,
    gradient_form,
    growth_vector,
    interior_product,
    lie_bracket,
    lie_derivative,
    one_form,
    pair,
    two_form_expr,
    vector_field,
)
from linesig.systems import engel_fields, heisenberg_fields, identity_fields

RNG = np.random.default_rng(123)


def random_points(n, count=100, scale=1.5):
    return RNG.uniform(-scale, scale, size=(count, n))


def test_heisenberg_bracket():
    v1, v2 = heisenberg_fields()
    br = lie_bracket(v1, v2)
    for p in random_points(3, 20):
        assert np.allclose(br(p), [0.0, 0.0, 2.0])


def test_bracket_antisymmetry_and_self():
    v = vector_field("x*y", "sin(x)", "z^2")
    w = vector_field("y", "x + z", "cos(y)")
    vw = lie_bracket(v, w)
    wv = lie_bracket(w, v)
    self_bracket = lie_bracket(v, v)
    for p in random_points(3, 50):
        assert np.max(np.abs(vw(p) + wv(p))) < 1e-9
        assert np.max(np.abs(self_bracket(p))) < 1e-9


def test_coordinate_fields_commute():
    dx = vector_field("1", "0")
    dy = vector_field("0", "1")
    assert lie_bracket(dx, dy).is_zero()


def test_jacobi_identity():
    u = vector_field("x*y", "z", "1")
    v = vector_field("sin(y)", "x", "z")
    w = vector_field("0", "x^2", "y")
    total = [
        lie_bracket(u, lie_bracket(v, w)),
        lie_bracket(v, lie_bracket(w, u)),
        lie_bracket(w, lie_bracket(u, v)),
    ]
    for p in random_points(3, 100):
        acc = sum(f(p) for f in total)
        assert np.max(np.abs(acc)) < 1e-9


def test_bracket_of_word():
    v1, v2 = heisenberg_fields()
    fields = (v1, v2)
    assert bracket_of_word(fields, Word((1,))) is v1
    br = bracket_of_word(fields, Word((1, 2)))
    for p in random_points(3, 10):
        assert np.allclose(br(p), [0, 0, 2])
    nested = bracket_of_word(fields, Word((2, 1, 2)))
    assert nested.is_zero()


def test_exact_form_closed():
    f = parse("sin(x)*y + x^2*z")
    phi = gradient_form(f, 3)
    u = vector_field("y", "x*z", "1")
    v = vector_field("z^2", "1", "x")
    for p in random_points(3, 30):
        assert exterior_derivative_pair(phi, u, v, p) == pytest.approx(0.0, abs=1e-9)


def test_area_form_two_form():
    phi = one_form("-y/2", "x/2")
    dx = vector_field("1", "0")
    dy = vector_field("0", "1")
    for p in random_points(2, 30):
        assert exterior_derivative_pair(phi, dx, dy, p) == pytest.approx(1.0, abs=1e-12)
        assert exterior_derivative_pair(phi, dy, dx, p) == pytest.approx(-1.0, abs=1e-12)


def test_lie_derivative_of_zero_and_shift():
    zero = one_form("0", "0")
    dx = vector_field("1", "0")
    assert lie_derivative(zero, dx).is_zero()
    phi = one_form("x", "0")  # x dy ... rotated: phi = x dx? use x dy below
    phi = one_form("0", "x")  # x dy
    out = lie_derivative(phi, dx)  # expect dy
    for p in random_points(2, 10):
        assert np.allclose(out(p), [0.0, 1.0])


def test_cartan_identity():
    """d(i(X)phi) + i(X)dphi = L_X(phi), with i(X)dphi from the two-form."""
    rng = np.random.default_rng(5)
    fields = [
        vector_field("y", "x^2"),
        vector_field("sin(x)", "1"),
        vector_field("x*y", "cos(y)"),
    ]
    coords = [vector_field("1", "0"), vector_field("0", "1")]
    phi = one_form("x^2*y", "sin(x) + y")
    for x_field in fields:
        paired = pair(phi, x_field)
        d_pair = gradient_form(paired, 2)
        lie = lie_derivative(phi, x_field)
        for p in rng.uniform(-1.5, 1.5, size=(100, 2)):
            for j, ej in enumerate(coords):
                ix_dphi = evaluate(two_form_expr(phi, x_field, ej), p)
                lhs = evaluate(d_pair.components[j], p) + ix_dphi
                assert lhs == pytest.approx(
                    evaluate(lie.components[j], p), abs=1e-9
                )


def test_interior_product_identity():
    """Row formula -d(phi V) + V phi + phi DV against the two-form route."""
    phi = one_form("y*z", "x", "x*y")
    v = vector_field("z", "x^2", "y")
    coords = [
        vector_field("1", "0", "0"),
        vector_field("0", "1", "0"),
        vector_field("0", "0", "1"),
    ]
    row = interior_product(phi, v)
    for p in random_points(3, 100):
        for j, ej in enumerate(coords):
            assert evaluate(row.components[j], p) == pytest.approx(
                evaluate(two_form_expr(phi, v, ej), p), abs=1e-9
            )


# ---------------------------------------------------------------------------
# frames

def test_elliptic_frame():
    fields = identity_fields(3)
    fr = build_frame(fields, [0.0, 0.0, 0.0])
    assert fr.step == 1
    assert [w.letters for w in fr.words] == [(1,), (2,), (3,)]
    assert np.allclose(coframe_at(fr, [0.3, 1.0, -2.0]), np.eye(3))


def test_heisenberg_frame_and_coframe():
    v1, v2 = heisenberg_fields()
    fr = build_frame((v1, v2), [0.0, 0.0, 0.0])
    assert fr.step == 2
    assert [w.letters for w in fr.levels[0]] == [(1,), (2,)]
    assert [w.letters for w in fr.levels[1]] == [(1, 2)]
    p = [0.7, -0.4, 1.3]
    cf = coframe_at(fr, p)
    expected_third = np.array([p[1] / 2, -p[0] / 2, 0.5])
    assert np.max(np.abs(cf[2] - expected_third)) < 1e-12
    assert np.max(np.abs(cf[0] - [1, 0, 0])) < 1e-12
    assert np.max(np.abs(cf[1] - [0, 1, 0])) < 1e-12


def test_growth_vectors():
    v1, v2 = heisenberg_fields()
    assert growth_vector((v1, v2), [0.0, 0.0, 0.0]) == (2, 3)
    assert growth_vector((v1, v2), [1.2, -0.3, 4.0]) == (2, 3)
    assert growth_vector(identity_fields(2), [0.5, 0.5]) == (2,)
    dx = vector_field("1", "0")
    assert growth_vector((dx, dx), [0.0, 0.0], max_step=4) == (1, 1, 1, 1)
    e1, e2 = engel_fields()
    assert growth_vector((e1, e2), [0.1, 0.2, -0.3, 0.4]) == (2, 3, 4)


def test_hormander_failure():
    dx = vector_field("1", "0")
    with pytest.raises(HormanderFailure):
        build_frame((dx, dx), [0.0, 0.0])


def test_irregular_point():
    # span {d/dx, x d/dy}: rank 2 off the axis x = 0, rank drops on it,
    # and the bracket restores rank 2; the growth vector jumps at x = 0
    v1 = vector_field("1", "0")
    v2 = vector_field("0", "x")
    with pytest.raises(IrregularPoint):
        build_frame((v1, v2), [0.0, 0.0], neighborhood_samples=32)


def test_coframe_duality_random_points():
    v1, v2 = heisenberg_fields()
    fr = build_frame((v1, v2), [0.0, 0.0, 0.0])
    for p in random_points(3, 100):
        cf = coframe_at(fr, p)
        assert np.max(np.abs(cf @ fr.matrix_at(p) - np.eye(3))) < 1e-10


def test_coframe_symbolic_matches_numeric():
    v1, v2 = heisenberg_fields()
    fr = build_frame((v1, v2), [0.0, 0.0, 0.0])
    sym = coframe_symbolic(fr)
    for p in random_points(3, 20):
        rows = np.array([[evaluate(c, p) for c in f.components] for f in sym])
        assert np.max(np.abs(rows - coframe_at(fr, p))) < 1e-12


def test_singular_frame_detection():
    v1 = vector_field("1", "0")
    v2 = vector_field("0", "y")
    frame = Frame(
        fields=(v1, v2),
        words=(Word((1,)), Word((2,))),
        vfields=(v1, v2),
        levels=((Word((1,)), Word((2,))),),
        base_point=(0.0, 1.0),
        radius=0.1,
        step=1,
        rank_tol=1e-8,
    )
    with pytest.raises(SingularFrame):
        coframe_at(frame, [0.0, 0.0])


def test_frame_json():
    v1, v2 = heisenberg_fields()
    fr = build_frame((v1, v2), [0.0, 0.0, 0.0])
    data = fr.to_json_dict()
    assert data["step"] == 2
    assert data["levels"] == [[[1], [2]], [[1, 2]]]
