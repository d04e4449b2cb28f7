"""Vector fields, one-forms and bracket-generated frames on R^n.

Conventions: a vector field V is the column of its components V^i, a
one-form phi is the row of its components phi_i, and ``pair(phi, V)`` is the
scalar phi_i V^i.  ``DV`` is the matrix with (i, j) entry dV^i/dx^j.
Brackets of words are right-nested: the word (i1, ..., ik) stands for
[V_{i1}, [V_{i2}, ..., [V_{i_{k-1}}, V_{ik}]]].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .expr import (
    Const,
    Expression,
    ONE,
    ZERO,
    as_expr,
    diff,
    dimension,
    evaluate,
    parse,
    to_source,
)

__all__ = [
    "VectorField",
    "OneForm",
    "Word",
    "Frame",
    "GeometryError",
    "HormanderFailure",
    "IrregularPoint",
    "SingularFrame",
    "vector_field",
    "one_form",
    "pair",
    "directional",
    "gradient_form",
    "lie_bracket",
    "bracket_of_word",
    "exterior_derivative_pair",
    "two_form_expr",
    "interior_product",
    "lie_derivative",
    "growth_vector",
    "build_frame",
    "frame_matrix_at",
    "coframe_at",
    "coframe_symbolic",
    "det_expr",
    "inverse_symbolic",
]


class GeometryError(Exception):
    pass


class HormanderFailure(GeometryError):
    """Bracket words up to the maximal length do not span the tangent space."""


class IrregularPoint(GeometryError):
    """The growth vector varies over the sampled neighbourhood."""


class SingularFrame(GeometryError):
    """The frame matrix is numerically singular at the requested point."""


def _as_components(components, n=None):
    comps = tuple(as_expr(parse(c) if isinstance(c, str) else c) for c in components)
    if n is not None and len(comps) != n:
        raise ValueError(f"expected {n} components, got {len(comps)}")
    for c in comps:
        if dimension(c) > len(comps):
            raise ValueError(
                f"component '{to_source(c)}' references coordinate {dimension(c)} "
                f"beyond dimension {len(comps)}"
            )
    return comps


@dataclass(frozen=True)
class VectorField:
    """Column vector of component expressions."""

    components: tuple

    @property
    def n(self) -> int:
        return len(self.components)

    def __call__(self, point) -> np.ndarray:
        return np.array([evaluate(c, point) for c in self.components])

    def is_zero(self) -> bool:
        return all(c == ZERO or c == Const(0.0) for c in self.components)

    def __str__(self):
        return "(" + ", ".join(to_source(c) for c in self.components) + ")"


@dataclass(frozen=True)
class OneForm:
    """Row vector of component expressions."""

    components: tuple

    @property
    def n(self) -> int:
        return len(self.components)

    def __call__(self, point) -> np.ndarray:
        return np.array([evaluate(c, point) for c in self.components])

    def is_zero(self) -> bool:
        return all(c == ZERO or c == Const(0.0) for c in self.components)

    def __add__(self, other):
        if not isinstance(other, OneForm):
            return NotImplemented
        return OneForm(tuple(a + b for a, b in zip(self.components, other.components)))

    def __rmul__(self, scalar):
        s = as_expr(scalar)
        return OneForm(tuple(s * c for c in self.components))

    def __str__(self):
        return "(" + ", ".join(to_source(c) for c in self.components) + ")"


def vector_field(*components) -> VectorField:
    """Build a vector field from expressions or DSL strings."""
    return VectorField(_as_components(components))


def one_form(*components) -> OneForm:
    return OneForm(_as_components(components))


def pair(phi: OneForm, v: VectorField) -> Expression:
    """The scalar phi(V) = phi_i V^i."""
    out = ZERO
    for a, b in zip(phi.components, v.components):
        out = out + a * b
    return out


def directional(v: VectorField, f: Expression) -> Expression:
    """Vf = V^i df/dx^i."""
    out = ZERO
    for i, comp in enumerate(v.components, start=1):
        out = out + comp * diff(f, i)
    return out


def gradient_form(f: Expression, n: int) -> OneForm:
    """The exact one-form df."""
    return OneForm(tuple(diff(f, i) for i in range(1, n + 1)))


def lie_bracket(v: VectorField, w: VectorField) -> VectorField:
    """[V, W]^i = V^j dW^i/dx^j - W^j dV^i/dx^j."""
    if v.n != w.n:
        raise ValueError("dimension mismatch")
    comps = []
    for i in range(v.n):
        comps.append(directional(v, w.components[i]) - directional(w, v.components[i]))
    return VectorField(tuple(comps))


@dataclass(frozen=True)
class Word:
    """A word over the driving letters 1..d; orders by (length, letters)."""

    letters: tuple

    def __init__(self, letters: Iterable[int]):
        letters = tuple(int(i) for i in letters)
        if not letters or any(i < 1 for i in letters):
            raise ValueError("a word is a nonempty tuple of positive letters")
        object.__setattr__(self, "letters", letters)

    @property
    def sort_key(self):
        return (len(self.letters), self.letters)

    def __lt__(self, other):
        return self.sort_key < other.sort_key

    def __len__(self):
        return len(self.letters)

    def __str__(self):
        return "(" + ",".join(str(i) for i in self.letters) + ")"


def bracket_of_word(fields: Sequence[VectorField], word: Word) -> VectorField:
    """Right-nested bracket of the driving fields along a word."""
    letters = word.letters
    if max(letters) > len(fields):
        raise ValueError(f"word {word} uses a letter beyond {len(fields)} fields")
    out = fields[letters[-1] - 1]
    for i in reversed(letters[:-1]):
        out = lie_bracket(fields[i - 1], out)
    return out


def two_form_expr(phi: OneForm, x: VectorField, y: VectorField) -> Expression:
    """d(phi)(X, Y) = X(phi(Y)) - Y(phi(X)) - phi([X, Y]), symbolically."""
    return (
        directional(x, pair(phi, y))
        - directional(y, pair(phi, x))
        - pair(phi, lie_bracket(x, y))
    )


def exterior_derivative_pair(phi: OneForm, x: VectorField, y: VectorField, point) -> float:
    """Evaluate d(phi)(X, Y) at a point."""
    return evaluate(two_form_expr(phi, x, y), point)


def lie_derivative(phi: OneForm, v: VectorField) -> OneForm:
    """L_V(phi), componentwise V(phi_j) + phi_i dV^i/dx^j."""
    comps = []
    for j in range(phi.n):
        term = directional(v, phi.components[j])
        for i in range(phi.n):
            term = term + phi.components[i] * diff(v.components[i], j + 1)
        comps.append(term)
    return OneForm(tuple(comps))


def interior_product(phi: OneForm, v: VectorField) -> OneForm:
    """i(V) d(phi) as a one-form: -d(phi(V)) + V(phi) + phi . DV."""
    paired = pair(phi, v)
    lie = lie_derivative(phi, v)
    return OneForm(tuple(lie.components[j] - diff(paired, j + 1) for j in range(phi.n)))


# ---------------------------------------------------------------------------
# frames

def _field_matrix(fields: Sequence[VectorField], point) -> np.ndarray:
    """Columns are the field values at the point (n rows, len(fields) cols)."""
    return np.column_stack([f(point) for f in fields])


def frame_matrix_at(frame_or_fields, point) -> np.ndarray:
    if isinstance(frame_or_fields, Frame):
        return _field_matrix(frame_or_fields.vfields, point)
    return _field_matrix(tuple(frame_or_fields), point)


def _numeric_rank(matrix: np.ndarray, rank_tol: float) -> int:
    if matrix.size == 0:
        return 0
    s = np.linalg.svd(matrix, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rank_tol * s[0]))


def growth_vector(
    fields: Sequence[VectorField],
    point,
    max_step: int = 4,
    rank_tol: float = 1e-8,
) -> tuple:
    """Dimensions of the bracket flag at a point, one entry per word length.

    Stops early once the full dimension is reached; otherwise reports the
    (possibly stalled) dimension for every length up to ``max_step``.
    """
    fields = tuple(fields)
    n = fields[0].n
    cache: dict = {}
    level_words: list = [Word((i,)) for i in range(1, len(fields) + 1)]
    for w, f in zip(level_words, fields):
        cache[w] = f
    columns = [f(point) for f in fields]
    dims = []
    for step in range(1, max_step + 1):
        if step > 1:
            next_words = []
            for j in range(1, len(fields) + 1):
                for suffix in level_words:
                    w = Word((j,) + suffix.letters)
                    f = lie_bracket(fields[j - 1], cache[suffix])
                    if f.is_zero():
                        continue
                    cache[w] = f
                    next_words.append(w)
                    columns.append(f(point))
            level_words = next_words
        dims.append(_numeric_rank(np.column_stack(columns) if columns else np.zeros((n, 0)), rank_tol))
        if dims[-1] >= n:
            break
        if step > 1 and not level_words:
            # all new brackets vanish identically; the flag cannot grow
            dims.extend([dims[-1]] * (max_step - step))
            break
    return tuple(dims)


@dataclass(frozen=True)
class Frame:
    """A bracket frame at a base point: words, fields and their span data.

    ``words`` lists the frame words ordered level by level; ``vfields`` are
    the corresponding bracket fields (columns of the frame matrix W).
    """

    fields: tuple
    words: tuple
    vfields: tuple
    levels: tuple  # tuple of tuples of words, levels 1..step
    base_point: tuple
    radius: float
    step: int
    rank_tol: float

    @property
    def n(self) -> int:
        return len(self.words)

    def words_of_level(self, k: int) -> tuple:
        return self.levels[k - 1]

    def matrix_at(self, point) -> np.ndarray:
        return _field_matrix(self.vfields, point)

    def det_at(self, point) -> float:
        return float(np.linalg.det(self.matrix_at(point)))

    def field_of_word(self, word: Word) -> VectorField:
        return self.vfields[self.words.index(word)]

    def to_json_dict(self) -> dict:
        return {
            "base_point": list(self.base_point),
            "radius": self.radius,
            "step": self.step,
            "levels": [[list(w.letters) for w in lvl] for lvl in self.levels],
            "fields": [[to_source(c) for c in f.components] for f in self.vfields],
        }


def build_frame(
    fields: Sequence[VectorField],
    base_point,
    max_step: int = 4,
    rank_tol: float = 1e-8,
    *,
    neighborhood_samples: int = 8,
    neighborhood_scale: float = 1e-3,
) -> Frame:
    """Greedy construction of a bracket frame around a regular point.

    Level 1 takes a maximal independent subset of the driving fields at the
    base point; level k extends by words (i, J) with i from level 1 and J
    from level k-1, scanned in (length, letters) order, keeping the columns
    that raise the numerical rank.  Raises :class:`HormanderFailure` when
    full rank is not reached by ``max_step`` and :class:`IrregularPoint`
    when the growth vector is not constant on a sampled neighbourhood.
    """
    fields = tuple(fields)
    base = np.asarray(base_point, dtype=float)
    n = fields[0].n

    gv = growth_vector(fields, base, max_step, rank_tol)
    if gv[-1] < n:
        raise HormanderFailure(
            f"rank stalls at {gv[-1]} < {n} for words up to length {max_step} (growth vector {gv})"
        )

    rng = np.random.default_rng(0)
    h = neighborhood_scale * (1.0 + float(np.max(np.abs(base))))
    for _ in range(neighborhood_samples):
        probe = base + rng.uniform(-h, h, size=n)
        gv_probe = growth_vector(fields, probe, max_step, rank_tol)
        if gv_probe != gv:
            raise IrregularPoint(
                f"growth vector {gv} at base differs from {gv_probe} at {probe.tolist()}"
            )

    cache: dict = {}

    def field_of(word: Word) -> VectorField:
        if word not in cache:
            if len(word) == 1:
                cache[word] = fields[word.letters[0] - 1]
            else:
                head = word.letters[0]
                suffix = Word(word.letters[1:])
                cache[word] = lie_bracket(fields[head - 1], field_of(suffix))
        return cache[word]

    levels: list = []
    chosen_words: list = []
    chosen_fields: list = []
    columns: list = []
    rank = 0
    for k in range(1, max_step + 1):
        if k == 1:
            candidates = sorted(Word((i,)) for i in range(1, len(fields) + 1))
        else:
            candidates = sorted(
                Word(i.letters + j.letters) for i in levels[0] for j in levels[k - 2]
            )
        level: list = []
        for w in candidates:
            f = field_of(w)
            if f.is_zero():
                continue
            trial = np.column_stack(columns + [f(base)]) if columns else f(base)[:, None]
            if _numeric_rank(trial, rank_tol) > rank:
                rank += 1
                level.append(w)
                chosen_words.append(w)
                chosen_fields.append(f)
                columns.append(f(base))
            if rank == n:
                break
        levels.append(tuple(level))
        if rank == n:
            break
    if rank < n:
        raise HormanderFailure(f"greedy frame construction stalled at rank {rank} < {n}")

    radius = _frame_radius(tuple(chosen_fields), base, rng)
    return Frame(
        fields=fields,
        words=tuple(chosen_words),
        vfields=tuple(chosen_fields),
        levels=tuple(levels),
        base_point=tuple(float(v) for v in base),
        radius=radius,
        step=len(levels),
        rank_tol=rank_tol,
    )


def _frame_radius(vfields, base: np.ndarray, rng) -> float:
    """Largest radius from a geometric sequence on which |det W| stays above
    half its base value, checked on sampled points."""

    def det_at(p):
        return abs(float(np.linalg.det(_field_matrix(vfields, p))))

    det0 = det_at(base)
    if det0 == 0.0:
        return 0.0
    scale = 1.0 + float(np.max(np.abs(base)))
    n = len(base)
    for j in range(6, -21, -1):
        r = scale * 2.0 ** j
        pts = base + rng.uniform(-r, r, size=(16, n))
        try:
            dets = [det_at(p) for p in pts]
        except Exception:
            continue
        if min(dets) >= 0.5 * det0:
            return r
    return scale * 2.0 ** -20


def coframe_at(frame: Frame, point, det_tol: float = 1e-12) -> np.ndarray:
    """Rows of the inverse frame matrix; row I is the coframe element of word I."""
    w = frame.matrix_at(point)
    det = np.linalg.det(w)
    scale = np.max(np.abs(w))
    if abs(det) <= det_tol * max(1.0, scale) ** frame.n:
        raise SingularFrame(f"|det W| = {abs(det):.3e} at {np.asarray(point).tolist()}")
    return np.linalg.inv(w)


# ---------------------------------------------------------------------------
# symbolic linear algebra, used where coframes must be differentiated

def det_expr(matrix) -> Expression:
    """Determinant of a square matrix of expressions (Laplace expansion)."""
    m = [list(row) for row in matrix]
    size = len(m)
    if any(len(row) != size for row in m):
        raise ValueError("matrix must be square")
    if size == 1:
        return m[0][0]
    out = ZERO
    for j in range(size):
        minor = [row[:j] + row[j + 1:] for row in m[1:]]
        term = m[0][j] * det_expr(minor)
        out = out + term if j % 2 == 0 else out - term
    return out


def inverse_symbolic(matrix):
    """Inverse of a matrix of expressions via the adjugate; entries are
    rational expressions with the determinant as denominator."""
    m = [list(row) for row in matrix]
    size = len(m)
    det = det_expr(m)
    inv = [[ZERO] * size for _ in range(size)]
    for i in range(size):
        for j in range(size):
            minor = [
                [m[r][c] for c in range(size) if c != j]
                for r in range(size)
                if r != i
            ]
            cof = det_expr(minor) if size > 1 else ONE
            if (i + j) % 2 == 1:
                cof = -cof
            inv[j][i] = cof / det
    return inv


def coframe_symbolic(frame_or_fields) -> tuple:
    """Coframe rows as one-forms with symbolic components.

    Accepts a :class:`Frame` or a full sequence of n independent fields.
    """
    if isinstance(frame_or_fields, Frame):
        vfields = frame_or_fields.vfields
    else:
        vfields = tuple(frame_or_fields)
    n = vfields[0].n
    if len(vfields) != n:
        raise ValueError("need exactly n fields for a coframe")
    matrix = [[vfields[c].components[i] for c in range(n)] for i in range(n)]
    inv = inverse_symbolic(matrix)
    return tuple(OneForm(tuple(inv[r])) for r in range(n))
