"""Degeneracy criteria for line integrals and constructors of forms that
pass them.

A law-of-the-integral criterion is an "almost everywhere nonzero" statement
about a derived field on the support of the one-form.  Operationally, a
criterion evaluator samples the derived field on a rectangular grid of cell
centres, counts the fraction of support points where it vanishes below a
relative threshold, and compares that fraction against a measure tolerance
(default 2 / grid side, the footprint of one slice):

* elliptic systems: the exterior derivative of the form must be nonzero
  a.e. on the support;
* general bracket-generated systems: for some driving index a the row
  i(V_a) d(phi) - L_{V_a} Xi must be nonzero a.e., where Xi is the
  correction form -sum psi_I omega^I built from the frame;
* step-two systems on R^3 (d = 2): the modified form
  phi + d(phi)(V1, V2) omega^3 must be non-closed a.e.

The constructors build forms that satisfy these criteria by design: the
planar bump form for elliptic systems, the coefficient recursion
c_(i,J) = V_i c_J - V_J c_i through a frame for bracket-generated systems,
and a one-parameter family h_lam(x) eta(y, z) whose degenerate set is a
measure-zero slice for almost every lam (scanned over a finite candidate
list, never silently patched).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .expr import (
    Const,
    Expression,
    Fun,
    ONE,
    ZERO,
    as_expr,
    bump,
    compile_expr,
    coord,
    diff,
    dimension,
    flat_bump,
    parse,
    to_source,
)
from .geometry import (
    Frame,
    OneForm,
    SingularFrame,
    VectorField,
    Word,
    bracket_of_word,
    coframe_symbolic,
    det_expr,
    directional,
    interior_product,
    lie_bracket,
    lie_derivative,
    pair,
    two_form_expr,
)

__all__ = [
    "Grid",
    "CriterionReport",
    "ConstructionError",
    "NoValidLambda",
    "SardSelection",
    "psi_table",
    "xi_form",
    "criterion_elliptic",
    "criterion_general",
    "criterion_step2",
    "construct_elliptic_bump",
    "construct_step2",
    "construct_general",
    "check_expcond",
    "heisenberg_condition",
    "sard_lambda_select",
]


class ConstructionError(RuntimeError):
    """A constructor postcondition failed at the sampled points."""


class NoValidLambda(RuntimeError):
    """No candidate parameter kept the degenerate set below tolerance."""


@dataclass(frozen=True)
class Grid:
    """Axis-aligned box sampled at cell centres (never on cell boundaries)."""

    bounds: tuple  # ((lo, hi), ...) per axis
    shape: tuple   # points per axis

    def __post_init__(self):
        if len(self.bounds) != len(self.shape):
            raise ValueError("bounds and shape must agree")
        for (lo, hi), m in zip(self.bounds, self.shape):
            if hi <= lo or m < 1:
                raise ValueError("degenerate grid")

    @classmethod
    def cube(cls, lo: float, hi: float, dim: int, side: int) -> "Grid":
        return cls(tuple((float(lo), float(hi)) for _ in range(dim)), (side,) * dim)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def side(self) -> int:
        return min(self.shape)

    def axes(self) -> list:
        out = []
        for (lo, hi), m in zip(self.bounds, self.shape):
            step = (hi - lo) / m
            out.append(lo + step * (np.arange(m) + 0.5))
        return out

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.column_stack([m.reshape(-1) for m in mesh])

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.bounds, tuple(m * factor for m in self.shape))

    def to_json_dict(self) -> dict:
        return {"bounds": [list(b) for b in self.bounds], "shape": list(self.shape)}


@dataclass
class CriterionReport:
    """Grid estimate of the degenerate set of a criterion field.

    ``fraction_zero`` is the fraction of support points where every tested
    quantity vanishes; ``per_alpha`` breaks the fraction down by the tested
    quantity (one entry per driving index or component pair).  The verdict
    is "satisfied" when some single quantity is nonzero a.e. (its fraction
    at most ``zero_measure_tol``), "violated" when every quantity vanishes
    on a set of clearly positive measure, and "inconclusive" between.
    """

    criterion: str
    grid: dict
    fraction_zero: float
    per_alpha: dict
    verdict: str
    point_tol: float
    zero_measure_tol: float
    support_points: int
    notes: str = ""
    point_data: Optional[dict] = None  # populated on request; not serialised

    @property
    def satisfied(self) -> bool:
        return self.verdict == "satisfied"

    def to_json_dict(self) -> dict:
        return {
            "criterion": self.criterion,
            "grid": self.grid,
            "fraction_zero": self.fraction_zero,
            "per_alpha": self.per_alpha,
            "verdict": self.verdict,
            "point_tol": self.point_tol,
            "zero_measure_tol": self.zero_measure_tol,
            "support_points": self.support_points,
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)


def _eval_on(e: Expression, pts: np.ndarray) -> np.ndarray:
    cols = tuple(pts[:, i] for i in range(pts.shape[1]))
    out = compile_expr(e)(cols)
    return np.broadcast_to(np.asarray(out, dtype=float), (pts.shape[0],))


def _support_mask(form: OneForm, pts: np.ndarray) -> np.ndarray:
    """Points where the form does not vanish identically (exact zeros count
    as outside; compactly supported constructions are exact by design)."""
    mask = np.zeros(pts.shape[0], dtype=bool)
    for c in form.components:
        mask |= _eval_on(c, pts) != 0.0
    return mask


def _verdict(per_alpha_fracs: Mapping[str, float], tol: float) -> tuple:
    best = min(per_alpha_fracs.values())
    if best <= tol:
        return "satisfied", best
    if best >= max(5.0 * tol, 0.2):
        return "violated", best
    return "inconclusive", best


def _local_scale(form: OneForm, pts: np.ndarray) -> np.ndarray:
    """Pointwise sup of the form components; thresholds are relative to it."""
    if pts.size == 0:
        return np.zeros(0)
    vals = np.stack([np.abs(_eval_on(c, pts)) for c in form.components])
    return vals.max(axis=0)


def _finish_report(
    criterion: str,
    grid: Grid,
    groups: Mapping[str, np.ndarray],
    support: np.ndarray,
    local_scale: np.ndarray,
    point_tol: Optional[float],
    zero_measure_tol: Optional[float],
    notes: str = "",
) -> CriterionReport:
    """Shared tail of the criterion evaluators.

    ``groups`` maps a label (driving index, component pair) to an array of
    shape (rows?, n_support) whose sup over rows is that label's quantity.
    A point counts as a zero of a quantity when the quantity is at most
    ``point_tol`` (relative, default 1e-9) times the local scale there;
    scaling locally keeps the flat tails of compactly supported forms from
    polluting the estimate.
    """
    if zero_measure_tol is None:
        zero_measure_tol = 2.0 / grid.side
    rel_tol = 1e-9 if point_tol is None else point_tol
    n_support = int(np.sum(support))
    if n_support == 0:
        return CriterionReport(
            criterion=criterion,
            grid=grid.to_json_dict(),
            fraction_zero=1.0,
            per_alpha={k: 1.0 for k in groups},
            verdict="violated",
            point_tol=rel_tol,
            zero_measure_tol=zero_measure_tol,
            support_points=0,
            notes=(notes + " empty support").strip(),
        )
    thresh = rel_tol * np.maximum(np.asarray(local_scale, dtype=float), 1e-300)
    sups = {}
    for key, arr in groups.items():
        a = np.abs(np.asarray(arr))
        if a.ndim == 1:
            a = a[None, :]
        sups[key] = a.max(axis=0)
    per_alpha = {k: float(np.mean(s <= thresh)) for k, s in sups.items()}
    all_zero = np.ones(n_support, dtype=bool)
    for s in sups.values():
        all_zero &= s <= thresh
    fraction_zero = float(np.mean(all_zero))
    verdict, _ = _verdict(per_alpha, zero_measure_tol)
    return CriterionReport(
        criterion=criterion,
        grid=grid.to_json_dict(),
        fraction_zero=fraction_zero,
        per_alpha=per_alpha,
        verdict=verdict,
        point_tol=rel_tol,
        zero_measure_tol=zero_measure_tol,
        support_points=n_support,
        notes=notes,
        point_data={"support": support, "sups": sups, "thresh": thresh},
    )


# ---------------------------------------------------------------------------
# psi recursion and the correction form

def psi_table(
    form: OneForm, fields: Sequence[VectorField], words: Iterable[Word]
) -> dict:
    """Scalar functions psi_I: zero on single letters, and
    psi_(i,J) = d(phi)(V_i, V_J) + V_i psi_J along nested words."""
    fields = tuple(fields)
    cache: dict = {}
    bracket_cache: dict = {}

    def field_of(word: Word) -> VectorField:
        if word not in bracket_cache:
            bracket_cache[word] = bracket_of_word(fields, word)
        return bracket_cache[word]

    def psi(word: Word) -> Expression:
        if word in cache:
            return cache[word]
        if len(word) == 1:
            out = ZERO
        else:
            head = fields[word.letters[0] - 1]
            suffix = Word(word.letters[1:])
            out = two_form_expr(form, head, field_of(suffix)) + directional(
                head, psi(suffix)
            )
        cache[word] = out
        return out

    return {w: psi(w) for w in words}


def xi_form(form: OneForm, frame: Frame) -> OneForm:
    """The correction form -sum_{|I| >= 2} psi_I omega^I on the frame patch."""
    table = psi_table(form, frame.fields, frame.words)
    coframe = coframe_symbolic(frame)
    comps = [ZERO] * frame.n
    for w, omega in zip(frame.words, coframe):
        if len(w) < 2:
            continue
        psi = table[w]
        for j in range(frame.n):
            comps[j] = comps[j] - psi * omega.components[j]
    return OneForm(tuple(comps))


# ---------------------------------------------------------------------------
# criterion evaluators

def criterion_elliptic(
    form: OneForm,
    grid: Grid,
    *,
    point_tol: Optional[float] = None,
    zero_measure_tol: Optional[float] = None,
) -> CriterionReport:
    """Non-closedness a.e. on the support, for full-rank driving fields."""
    n = form.n
    pts = grid.points()
    support = _support_mask(form, pts)
    sp = pts[support]
    groups = {}
    for i in range(n):
        for j in range(i + 1, n):
            e = diff(form.components[j], i + 1) - diff(form.components[i], j + 1)
            groups[f"d({i + 1},{j + 1})"] = _eval_on(e, sp) if sp.size else np.zeros(0)
    return _finish_report(
        "elliptic", grid, groups, support, _local_scale(form, sp),
        point_tol, zero_measure_tol,
    )


def criterion_general(
    form: OneForm,
    frame: Frame,
    grid: Grid,
    *,
    point_tol: Optional[float] = None,
    zero_measure_tol: Optional[float] = None,
    det_tol: float = 1e-12,
) -> CriterionReport:
    """For some driving index a, i(V_a) d(phi) - L_{V_a} Xi nonzero a.e."""
    pts = grid.points()
    support = _support_mask(form, pts)
    sp = pts[support]
    det = det_expr([[vf.components[i] for vf in frame.vfields] for i in range(frame.n)])
    if sp.size:
        det_vals = _eval_on(det, sp)
        if np.any(np.abs(det_vals) <= det_tol):
            raise SingularFrame("frame matrix is singular at a support grid point")
    xi = xi_form(form, frame)
    groups = {}
    for a, v in enumerate(frame.fields, start=1):
        row = interior_product(form, v)
        lie = lie_derivative(xi, v)
        comps = [row.components[j] - lie.components[j] for j in range(frame.n)]
        vals = (
            np.stack([_eval_on(c, sp) for c in comps])
            if sp.size
            else np.zeros((frame.n, 0))
        )
        groups[f"alpha={a}"] = vals
    return _finish_report(
        "general", grid, groups, support, _local_scale(form, sp),
        point_tol, zero_measure_tol,
    )


def criterion_step2(
    form: OneForm,
    v1: VectorField,
    v2: VectorField,
    grid: Grid,
    *,
    point_tol: Optional[float] = None,
    zero_measure_tol: Optional[float] = None,
) -> CriterionReport:
    """Non-closedness a.e. of phi + d(phi)(V1, V2) omega^3 on R^3, d = 2."""
    if form.n != 3:
        raise ValueError("the step-two criterion lives on R^3")
    v3 = lie_bracket(v1, v2)
    coframe = coframe_symbolic((v1, v2, v3))
    s = two_form_expr(form, v1, v2)
    modified = OneForm(
        tuple(
            form.components[j] + s * coframe[2].components[j] for j in range(3)
        )
    )
    pts = grid.points()
    support = _support_mask(form, pts)
    sp = pts[support]
    frame_fields = (v1, v2, v3)
    groups = {}
    for (i, j) in ((1, 2), (1, 3), (2, 3)):
        e = two_form_expr(modified, frame_fields[i - 1], frame_fields[j - 1])
        groups[f"d({i},{j})"] = _eval_on(e, sp) if sp.size else np.zeros(0)
    return _finish_report(
        "step2", grid, groups, support, _local_scale(form, sp),
        point_tol, zero_measure_tol,
    )


# ---------------------------------------------------------------------------
# constructors

def _affine_to_unit(index: int, lo: float, hi: float) -> Expression:
    """Expression mapping coordinate `index` affinely from [lo, hi] to [-1, 1]."""
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    return (coord(index) - mid) / half


def construct_elliptic_bump(
    cube: Sequence, *, window_extra_dims: bool = True, amplitude: float = 1.0
) -> OneForm:
    """The planar bump form, rescaled onto the first two cube axes.

    In coordinates u, v mapped affinely to [-1, 1]^2 the form is
    b(u) b(v) exp(b(v)^2) du with b the bump; the du factor pulls back with
    the affine slope.  Its exterior derivative vanishes exactly on the
    middle slice v = 0 of the cube, a measure-zero set.  In dimensions
    above two the remaining coordinates are windowed by bumps so that the
    support stays inside the cube (needed for compactly supported grid
    constructions); pass ``window_extra_dims=False`` for a cylinder.
    ``amplitude`` rescales the whole form (zero sets are unaffected).
    """
    cube = [(float(lo), float(hi)) for (lo, hi) in cube]
    n = len(cube)
    if n < 2:
        raise ValueError("need dimension >= 2")
    if any(hi <= lo for lo, hi in cube):
        raise ValueError("degenerate cube")
    u = _affine_to_unit(1, *cube[0])
    v = _affine_to_unit(2, *cube[1])
    bu, bv = bump(u), bump(v)
    slope = 2.0 / (cube[0][1] - cube[0][0])
    head = bu * bv * Fun("exp", bv * bv) * (slope * amplitude)
    if window_extra_dims:
        for j in range(3, n + 1):
            head = head * bump(_affine_to_unit(j, *cube[j - 1]))
    comps = [head] + [ZERO] * (n - 1)
    return OneForm(tuple(comps))


def _default_check_points(n: int, count: int = 24, scale: float = 1.0) -> np.ndarray:
    rng = np.random.default_rng(2024)
    return rng.uniform(-scale, scale, size=(count, n))


def _check_small(label: str, exprs: Sequence[Expression], pts: np.ndarray, tol: float):
    worst = 0.0
    for e in exprs:
        vals = _eval_on(e, pts)
        worst = max(worst, float(np.max(np.abs(vals))) if vals.size else 0.0)
    if worst > tol:
        raise ConstructionError(f"{label} reaches {worst:.3e} > {tol:.3e}")


def construct_step2(
    c1,
    c2,
    v1: VectorField,
    v2: VectorField,
    *,
    check_points: Optional[np.ndarray] = None,
    check_tol: float = 1e-9,
) -> OneForm:
    """phi = c1 omega^1 + c2 omega^2 + (V1 c2 - V2 c1) omega^3.

    By construction d(phi)(V1, V2) = 0; this postcondition is verified at
    sampled points and a failure raises :class:`ConstructionError`.
    """
    c1 = parse(c1) if isinstance(c1, str) else as_expr(c1)
    c2 = parse(c2) if isinstance(c2, str) else as_expr(c2)
    v3 = lie_bracket(v1, v2)
    coframe = coframe_symbolic((v1, v2, v3))
    c3 = directional(v1, c2) - directional(v2, c1)
    comps = [ZERO] * 3
    for coef, omega in zip((c1, c2, c3), coframe):
        for j in range(3):
            comps[j] = comps[j] + coef * omega.components[j]
    form = OneForm(tuple(comps))
    pts = check_points if check_points is not None else _default_check_points(3)
    _check_small(
        "construct_step2 postcondition d(phi)(V1,V2)",
        [two_form_expr(form, v1, v2)],
        pts,
        check_tol,
    )
    return form


def construct_general(
    frame: Frame,
    seeds: Mapping,
    *,
    check_points: Optional[np.ndarray] = None,
    check_tol: float = 1e-8,
):
    """Coefficient recursion through a frame: c_(i,J) = V_i c_J - V_J c_i.

    ``seeds`` maps the level-one letters (ints or length-one words) to
    scalar expressions.  Returns the assembled form together with the full
    coefficient table, and verifies the design constraint
    d(phi)(V_i, V_J) = 0 for every frame word of length >= 2 at sampled
    points.
    """
    table: dict = {}
    for w in frame.words_of_level(1):
        letter = w.letters[0]
        if letter in seeds:
            raw = seeds[letter]
        elif w in seeds:
            raw = seeds[w]
        else:
            raise KeyError(f"missing seed coefficient for letter {letter}")
        table[w] = parse(raw) if isinstance(raw, str) else as_expr(raw)
    for k in range(2, frame.step + 1):
        for w in frame.words_of_level(k):
            head = w.letters[0]
            suffix = Word(w.letters[1:])
            if suffix not in table:
                raise ValueError(
                    f"frame word {w} has suffix {suffix} outside the frame"
                )
            v_i = frame.fields[head - 1]
            v_j = frame.field_of_word(suffix)
            table[w] = directional(v_i, table[suffix]) - directional(v_j, table[Word((head,))])
    coframe = coframe_symbolic(frame)
    comps = [ZERO] * frame.n
    for w, omega in zip(frame.words, coframe):
        for j in range(frame.n):
            comps[j] = comps[j] + table[w] * omega.components[j]
    form = OneForm(tuple(comps))
    pts = check_points if check_points is not None else _default_check_points(frame.n)
    checks = []
    for k in range(2, frame.step + 1):
        for w in frame.words_of_level(k):
            head = frame.fields[w.letters[0] - 1]
            suffix_field = frame.field_of_word(Word(w.letters[1:]))
            checks.append(two_form_expr(form, head, suffix_field))
    _check_small("construct_general pairing postcondition", checks, pts, check_tol)
    return form, table


def check_expcond(
    frame: Frame,
    table: Mapping,
    alpha: int,
    j_word: Word,
    grid: Grid,
    *,
    point_tol: Optional[float] = None,
    zero_measure_tol: Optional[float] = None,
) -> CriterionReport:
    """Grid estimate of the zero set of the top-level coefficient criterion

        V_alpha c_J - V_J c_alpha - sum_K c_K omega^K([V_alpha, V_J]).
    """
    alpha_word = Word((alpha,))
    if alpha_word not in table or j_word not in table:
        raise KeyError("table must contain both the driving letter and the word")
    v_alpha = frame.fields[alpha - 1]
    v_j = frame.field_of_word(j_word)
    bracket = lie_bracket(v_alpha, v_j)
    coframe = coframe_symbolic(frame)
    e = directional(v_alpha, table[j_word]) - directional(v_j, table[alpha_word])
    for w, omega in zip(frame.words, coframe):
        e = e - table[w] * pair(omega, bracket)
    pts = grid.points()
    support = np.ones(pts.shape[0], dtype=bool)
    groups = {f"alpha={alpha},J={j_word}": _eval_on(e, pts)}
    # local scale from the coefficient magnitudes at each point
    scale = np.zeros(pts.shape[0])
    for w in frame.words:
        scale = np.maximum(scale, np.abs(_eval_on(table[w], pts)))
    return _finish_report(
        "expcond", grid, groups, support, scale, point_tol, zero_measure_tol,
        notes="evaluated on the whole grid (criterion is a.e. on the patch)",
    )


def heisenberg_condition(
    c1,
    c2,
    grid: Grid,
    *,
    point_tol: Optional[float] = None,
    zero_measure_tol: Optional[float] = None,
) -> CriterionReport:
    """Zero-set estimate of the planar product criterion

        (-d2c1/dxdy + d2c2/dx2) * (-d2c1/dy2 + d2c2/dxdy)

    for coefficients depending on x, y only, on the standard step-two pair.
    The support filter uses the assembled Cartesian form with
    c3 = -dc1/dy + dc2/dx.
    """
    c1 = parse(c1) if isinstance(c1, str) else as_expr(c1)
    c2 = parse(c2) if isinstance(c2, str) else as_expr(c2)
    for c in (c1, c2):
        if dimension(c) > 2:
            raise ValueError("coefficients must depend on x, y only")
    f1 = diff(diff(c2, 1), 1) - diff(diff(c1, 1), 2)
    f2 = diff(diff(c2, 1), 2) - diff(diff(c1, 2), 2)
    product = f1 * f2
    c3 = diff(c2, 1) - diff(c1, 2)
    half = Const(0.5)
    phi = OneForm(
        (
            c1 + coord(2) * c3 * half,
            c2 - coord(1) * c3 * half,
            half * c3,
        )
    )
    pts = grid.points()
    if grid.dim == 2:
        pts3 = np.column_stack([pts, np.zeros(pts.shape[0])])
    elif grid.dim == 3:
        pts3 = pts
    else:
        raise ValueError("grid must be two- or three-dimensional")
    support = _support_mask(phi, pts3)
    sp = pts3[support]
    groups = {
        "factor1": _eval_on(f1, sp) if sp.size else np.zeros(0),
        "factor2": _eval_on(f2, sp) if sp.size else np.zeros(0),
        "product": _eval_on(product, sp) if sp.size else np.zeros(0),
    }
    scale = _local_scale(phi, sp)
    # the criterion is the product; factors are reported as diagnostics
    report = _finish_report(
        "heisenberg", grid, {"product": groups["product"]}, support, scale,
        point_tol, zero_measure_tol,
    )
    thresh = report.point_tol * np.maximum(scale, 1e-300)
    for key in ("factor1", "factor2"):
        vals = np.abs(groups[key])
        report.per_alpha[key] = (
            float(np.mean(vals <= thresh)) if vals.size else 1.0
        )
    return report


@dataclass
class SardSelection:
    """Chosen flatness parameter with the per-candidate degeneracy fractions
    and the emitted coefficient pair."""

    lam: float
    fractions: dict
    c1: Expression
    c2: Expression
    quadratic: Expression

    def to_json_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "fractions": {repr(k): v for k, v in self.fractions.items()},
            "c1": to_source(self.c1),
            "c2": to_source(self.c2),
        }


def _sard_quadratic(f: Expression, g: Expression, lam: float) -> Expression:
    """4 x^2 lam^2 - 2 (1-x^2) (1 + 3x^2 + x (1-x^2) f) lam + (1-x^2)^4 g."""
    x = coord(1)
    one_m = ONE - x * x
    return (
        Const(4.0 * lam * lam) * x * x
        - Const(2.0 * lam) * one_m * (ONE + Const(3.0) * x * x + x * one_m * f)
        + one_m ** 4 * g
    )


def sard_lambda_select(
    f,
    g,
    grid: Optional[Grid] = None,
    lambdas: Optional[Sequence[float]] = None,
    *,
    eta: Optional[Expression] = None,
    point_tol: Optional[float] = None,
    zero_measure_tol: Optional[float] = None,
) -> SardSelection:
    """Scan flatness parameters for the unit-cube coefficient construction.

    Evaluates the quadratic-in-lambda degeneracy polynomial on the grid for
    each candidate and returns the candidate with the smallest zero-set
    fraction, requiring it below tolerance (:class:`NoValidLambda`
    otherwise; failures are reported, never patched).  The emitted
    coefficients are c1 = h_lam(x) eta(y, z) with
    h_lam(x) = exp(-lam/(1-x^2)) inside |x| < 1, and c2 = 0; eta defaults to
    bump(y) bump(z).
    """
    f = parse(f) if isinstance(f, str) else as_expr(f)
    g = parse(g) if isinstance(g, str) else as_expr(g)
    if grid is None:
        grid = Grid.cube(-1.0, 1.0, 3, 40)
    if lambdas is None:
        lambdas = [2.0 ** k for k in range(-4, 9)]
    if zero_measure_tol is None:
        zero_measure_tol = 2.0 / grid.side
    pts = grid.points()
    f_scale = float(np.max(np.abs(_eval_on(f, pts))))
    g_scale = float(np.max(np.abs(_eval_on(g, pts))))
    fractions = {}
    for lam in lambdas:
        if lam <= 0:
            raise ValueError("candidates must be positive")
        q = _sard_quadratic(f, g, lam)
        vals = _eval_on(q, pts)
        # identically-zero quadratics (max value at roundoff level relative
        # to the coefficient scale) count as fully degenerate
        coeff_scale = lam * lam + lam * (1.0 + f_scale) + g_scale
        top = float(np.max(np.abs(vals)))
        if top <= 1e-12 * coeff_scale:
            fractions[float(lam)] = 1.0
            continue
        tol = (1e-9 if point_tol is None else point_tol) * top
        fractions[float(lam)] = float(np.mean(np.abs(vals) <= tol))
    best = min(fractions, key=lambda k: (fractions[k], k))
    if fractions[best] > zero_measure_tol:
        raise NoValidLambda(
            f"no candidate below tolerance {zero_measure_tol}: {fractions}"
        )
    if eta is None:
        eta = bump(coord(2)) * bump(coord(3))
    c1 = flat_bump(coord(1), lam=best, power=0, coeffs=(1.0,)) * eta
    return SardSelection(
        lam=best,
        fractions=fractions,
        c1=c1,
        c2=ZERO,
        quadratic=_sard_quadratic(f, g, best),
    )
