"""Route recovery from extended signatures over a cube decomposition.

The state box is split into lattice cells of side ``eps``; the support cube
of a cell is the cell shrunk by ``delta / 2`` on every side, leaving gaps of
exactly ``delta`` between neighbouring cubes.  Each cube carries a one-form
supported strictly inside it whose conditional line integral is almost
surely nonzero; iterated integrals against sequences of these forms vanish
identically unless the path visits the supports in the word order, which is
what makes the word search well posed.

Two support regimes:

* ``elliptic``: the planar bump construction fills the support cube.
* ``step2``: the standard step-two pair on R^3 (V1 = dx - y dz,
  V2 = dy + x dz).  The flat coefficient h_lam is laid along the flow
  coordinate of V2, which the coordinate change (u, v, w) = (y, x, z - x*y)
  straightens exactly.  A box in (u, v, w) maps to a slab warped by x*y, so
  the construction inscribes the largest safe (u, v, w)-box whose preimage
  stays inside the cube; supports are therefore proper subsets of their
  cubes, shrinking with distance from the z-axis.

The route search walks words breadth-first with prefix pruning: a word
survives when the absolute extended signature exceeds ``signif_tol``.
Candidate extensions range over cubes within one lattice step (paths are
continuous, so routes are adjacency-constrained when gaps are narrower than
cells); immediate letter repeats are excluded because the discrete route
collapses them, while revisits such as A-B-A are allowed.  Word values are
accumulated incrementally on the substep-resolution path, so extending a
word costs one quadrature pass instead of a fresh solve.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .expr import ZERO, bump, compile_expr, coord, flat_bump
from .geometry import VectorField
from .nondeg import construct_elliptic_bump, construct_step2, sard_lambda_select
from .rde import Trajectory, reintegrate
from .integrals import iterated_line_integral

__all__ = [
    "AmbiguousRoute",
    "CubeGrid",
    "RouteWord",
    "build_grid",
    "clean_crossing",
    "coarsen_route",
    "extended_signature",
    "recover_route",
    "true_route",
]


class AmbiguousRoute(RuntimeError):
    """Two maximal words survived the significance threshold."""


@dataclass(frozen=True)
class RouteWord:
    """Sequence of cube labels with no immediate repeats."""

    labels: tuple

    def __init__(self, labels):
        labels = tuple(tuple(int(v) for v in z) for z in labels)
        for a, b in zip(labels, labels[1:]):
            if a == b:
                raise ValueError("route words collapse immediate repeats")
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def __str__(self):
        return "->".join("".join(f"[{v}]" for v in z) for z in self.labels) or "(empty)"


@dataclass
class CubeGrid:
    """Disjoint support cubes with per-cube one-forms."""

    lo: np.ndarray
    eps: float
    delta: float
    counts: tuple
    regime: str
    forms: dict = field(default_factory=dict)
    inner: dict = field(default_factory=dict)  # step2 inscribed-box data
    fields: Optional[tuple] = None

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def labels(self) -> list:
        return [tuple(z) for z in itertools.product(*(range(c) for c in self.counts))]

    def cell_bounds(self, label) -> tuple:
        lo = self.lo + self.eps * np.asarray(label, dtype=float)
        return lo, lo + self.eps

    def support_bounds(self, label) -> tuple:
        lo, hi = self.cell_bounds(label)
        return lo + 0.5 * self.delta, hi - 0.5 * self.delta

    def cube_of_points(self, pts: np.ndarray) -> list:
        """Label per point when strictly inside a support cube, else None."""
        pts = np.atleast_2d(pts)
        rel = (pts - self.lo) / self.eps
        cells = np.floor(rel).astype(int)
        out = []
        margin = 0.5 * self.delta / self.eps
        frac = rel - cells
        inside = np.all((frac > margin) & (frac < 1.0 - margin), axis=1)
        in_range = np.all((cells >= 0) & (cells < np.asarray(self.counts)), axis=1)
        for ok, cell in zip(inside & in_range, cells):
            out.append(tuple(int(v) for v in cell) if ok else None)
        return out

    def inner_of_points(self, label, pts: np.ndarray, shrink: float = 1.0) -> np.ndarray:
        """Mask of points strictly inside the form's support region
        (``shrink`` < 1 tests the concentric central part of it)."""
        pts = np.atleast_2d(pts)
        if self.regime == "elliptic":
            lo, hi = self.support_bounds(label)
            mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo) * shrink
            return np.all((pts > mid - half) & (pts < mid + half), axis=1)
        par = self.inner[label]
        cx, cy, cz = par["center"]
        u = (pts[:, 1] - cy) / par["a_u"]
        v = (pts[:, 0] - cx) / par["a_v"]
        w = (pts[:, 2] - pts[:, 0] * pts[:, 1] - par["w0"]) / par["a_w"]
        return (np.abs(u) < shrink) & (np.abs(v) < shrink) & (np.abs(w) < shrink)

    def neighbours(self, label) -> list:
        deltas = itertools.product(*([(-1, 0, 1)] * self.dim))
        out = []
        for d in deltas:
            z = tuple(a + b for a, b in zip(label, d))
            if z != tuple(label) and all(0 <= v < c for v, c in zip(z, self.counts)):
                out.append(z)
        return out


def _require_heisenberg(fields: Sequence[VectorField]):
    if fields is None or len(fields) != 2 or fields[0].n != 3:
        raise ValueError("step2 grids need the two standard fields on R^3")
    rng = np.random.default_rng(9)
    for p in rng.uniform(-2, 2, size=(8, 3)):
        want1 = np.array([1.0, 0.0, -p[1]])
        want2 = np.array([0.0, 1.0, p[0]])
        if np.max(np.abs(fields[0](p) - want1)) > 1e-12 or np.max(
            np.abs(fields[1](p) - want2)
        ) > 1e-12:
            raise ValueError(
                "step2 grid construction is implemented for the standard pair "
                "V1 = dx - y dz, V2 = dy + x dz"
            )


def _step2_cube_form(center, half, lam, v1, v2):
    """Coefficient c1 = h_lam(u) eta(v, w) on the inscribed straightened box.

    The (u, v) half-widths are balanced against the shear budget so the two
    smallest box dimensions are equal: t = 1 / (1 + |cx| + |cy| + a).
    The coefficient is normalised so its peak at the box centre is one.
    """
    cx, cy, cz = center
    a = half
    t = 1.0 / (1.0 + abs(cx) + abs(cy) + a)
    a_u = a_v = t * a
    rho = abs(cx) * a_u + abs(cy) * a_v + a_u * a_v
    a_w = a - rho
    w0 = cz - cx * cy
    x, y, z = coord(1), coord(2), coord(3)
    u_hat = (y - cy) / a_u
    v_hat = (x - cx) / a_v
    w_hat = (z - x * y - w0) / a_w
    peak = float(np.exp(lam + 2.0))  # 1 / (h_lam(0) bump(0)^2)
    c1 = flat_bump(u_hat, lam=lam) * bump(v_hat) * bump(w_hat) * peak
    form = construct_step2(c1, ZERO, v1, v2)
    par = {"center": (cx, cy, cz), "a_u": a_u, "a_v": a_v, "a_w": a_w, "w0": w0}
    return form, par


def build_grid(
    bounds: Sequence,
    eps: float,
    delta: float,
    regime: str = "elliptic",
    fields: Optional[Sequence[VectorField]] = None,
    *,
    lam: Optional[float] = None,
) -> CubeGrid:
    """Decompose a box into cubes and attach a detection form to each."""
    if not (eps > delta > 0):
        raise ValueError("need eps > delta > 0")
    if regime not in ("elliptic", "step2"):
        raise ValueError("regime must be 'elliptic' or 'step2'")
    bounds = [(float(lo), float(hi)) for lo, hi in bounds]
    lo = np.array([b[0] for b in bounds])
    counts = tuple(int(np.floor((hi - lo_) / eps + 1e-9)) for lo_, hi in bounds)
    if any(c < 1 for c in counts):
        raise ValueError("box too small for the cube side")
    grid = CubeGrid(lo=lo, eps=eps, delta=delta, counts=counts, regime=regime,
                    fields=None if fields is None else tuple(fields))
    if regime == "step2":
        _require_heisenberg(grid.fields)
        if lam is None:
            lam = sard_lambda_select("0", "0").lam
        v1, v2 = grid.fields
    n = len(counts)
    # peak coefficient of the bump product is exp(-2 - (n - 2)); normalise out
    elliptic_amp = float(np.exp(2.0 + max(0, n - 2) - np.exp(-2.0)))
    for z in grid.labels:
        s_lo, s_hi = grid.support_bounds(z)
        if regime == "elliptic":
            grid.forms[z] = construct_elliptic_bump(
                list(zip(s_lo, s_hi)), amplitude=elliptic_amp
            )
        else:
            center = 0.5 * (s_lo + s_hi)
            half = 0.5 * float(s_hi[0] - s_lo[0])
            form, par = _step2_cube_form(center, half, lam, v1, v2)
            grid.forms[z] = form
            grid.inner[z] = par
    return grid


# ---------------------------------------------------------------------------
# routes

def _collapse(seq) -> tuple:
    out = []
    for z in seq:
        if z is None:
            continue
        if not out or out[-1] != z:
            out.append(z)
    return tuple(out)


def true_route(traj: Trajectory, grid: CubeGrid) -> RouteWord:
    """Cubes whose support interiors the mesh path visits, in order,
    consecutive repeats collapsed (gap excursions add no letter)."""
    return RouteWord(_collapse(grid.cube_of_points(traj.x)))


def extended_signature(traj: Trajectory, word, grid: CubeGrid) -> float:
    """Iterated line integral against the word's cube forms (1.0 for the
    empty word)."""
    labels = list(word.labels if isinstance(word, RouteWord) else word)
    if not labels:
        return 1.0
    forms = [grid.forms[tuple(z)] for z in labels]
    return iterated_line_integral(forms, traj).value


def _fine_path(traj: Trajectory) -> np.ndarray:
    sol = reintegrate(traj, [], record_fine=True)
    return sol.fine_x[0]


def _cube_increments(grid: CubeGrid, xf: np.ndarray) -> dict:
    """Trapezoid Stieltjes increments of each cube form along the fine path.

    Increment j approximates int phi(X) . dX over fine step j; it is exactly
    zero whenever the path stays outside the support there.
    """
    incs = {}
    cols = tuple(xf[:, i] for i in range(xf.shape[1]))
    dx = np.diff(xf, axis=0)
    for z, form in grid.forms.items():
        vals = np.stack(
            [np.broadcast_to(np.asarray(compile_expr(c)(cols), float), (xf.shape[0],))
             for c in form.components],
            axis=1,
        )
        mid = 0.5 * (vals[1:] + vals[:-1])
        incs[z] = np.einsum("ji,ji->j", mid, dx)
    return incs


def recover_route(
    traj: Trajectory,
    grid: CubeGrid,
    signif_tol: Optional[float] = None,
    *,
    max_len: int = 16,
    level_decay: float = 1e-3,
    on_ambiguous: str = "raise",
) -> RouteWord:
    """Longest word whose extended signature stays significant.

    Breadth-first with prefix pruning; every surviving word's prefixes are
    significant at their own level by construction.  A word of length m is
    significant when its absolute value exceeds
    ``signif_tol * level_decay**(m-1)``; word magnitudes shrink
    geometrically with length, while unvisited extensions are exactly zero
    under the exact-support quadrature, so the schedule loses no letters.
    If several words of maximal length survive, ``on_ambiguous='raise'``
    raises :class:`AmbiguousRoute` and ``'best'`` returns the one with the
    largest absolute signature.
    """
    if on_ambiguous not in ("raise", "best"):
        raise ValueError("on_ambiguous must be 'raise' or 'best'")
    xf = _fine_path(traj)
    if signif_tol is None:
        signif_tol = 1e-6 * grid.eps * max(1.0, float(np.max(np.abs(xf))))
    incs = _cube_increments(grid, xf)
    nf = xf.shape[0]

    # survivors: word tuple -> accumulated prefix path (value of the word's
    # iterated integral up to each fine time)
    survivors = {}
    for z in grid.labels:
        path = np.zeros(nf)
        np.cumsum(incs[z], out=path[1:])
        if abs(path[-1]) > signif_tol:
            survivors[(z,)] = path
    if not survivors:
        return RouteWord(())
    best_level = survivors
    level_tol = signif_tol
    while len(next(iter(best_level))) < max_len:
        level_tol *= level_decay
        nxt = {}
        for word, path in best_level.items():
            mid = 0.5 * (path[1:] + path[:-1])
            for z in grid.neighbours(word[-1]):
                ext = np.zeros(nf)
                np.cumsum(mid * incs[z], out=ext[1:])
                if abs(ext[-1]) > level_tol:
                    nxt[word + (z,)] = ext
        if not nxt:
            break
        best_level = nxt
    words = list(best_level)
    if len(words) > 1:
        if on_ambiguous == "raise":
            raise AmbiguousRoute(
                f"{len(words)} words of length {len(words[0])} survive: "
                + ", ".join(str(RouteWord(w)) for w in words[:4])
            )
        words.sort(key=lambda w: -abs(best_level[w][-1]))
    return RouteWord(words[0])


def _visits(seq) -> list:
    """Letter visits of a mesh label sequence as (label, start, stop).

    A visit groups consecutive dwells of one label separated only by gap
    times; visits correspond one-to-one with the letters of the collapsed
    route.
    """
    visits = []
    for i, z in enumerate(seq):
        if z is None:
            continue
        if visits and visits[-1][0] == z and all(
            s is None for s in seq[visits[-1][2]:i]
        ):
            visits[-1] = (z, visits[-1][1], i + 1)
        elif visits and visits[-1][0] == z:
            visits.append((z, i, i + 1))
        elif not visits or visits[-1][0] != z:
            visits.append((z, i, i + 1))
    return visits


def clean_crossing(
    traj: Trajectory,
    grid: CubeGrid,
    min_dwell: int = 10,
    *,
    strength_tol: Optional[float] = None,
) -> bool:
    """Crossing-cleanliness predicate under which recovery is expected to
    match the discrete route exactly.

    A visit is the whole stay in one cube, gap excursions included (the
    route collapses those).  The predicate requires, on the mesh path:
    (i) the sequence of visited form supports equals the sequence of
    visited cubes (relevant in the step2 regime, where supports are
    inscribed subsets); (ii) every visit spends at least ``min_dwell`` mesh
    times inside the support; (iii) every visit's detection integral
    |int phi_z(dX)| is at least ``strength_tol`` (default 1e-3 * eps * path
    scale), so each letter is macroscopically visible; corner grazes see
    only the exponentially small tail of the bump and fail this, as do
    visits whose detection integral cancels.  Cancellations across
    separated re-visits of one cube are not excluded; matches are therefore
    reported per replicate, with this predicate marking the ones where an
    exact match is expected.
    """
    cube_seq = grid.cube_of_points(traj.x)
    inner_seq = []
    for p, z in zip(traj.x, cube_seq):
        if z is not None and bool(grid.inner_of_points(z, p[None, :])[0]):
            inner_seq.append(z)
        else:
            inner_seq.append(None)
    if _collapse(inner_seq) != _collapse(cube_seq):
        return False
    if strength_tol is None:
        strength_tol = 1e-3 * grid.eps * max(1.0, float(np.max(np.abs(traj.x))))
    x = traj.x
    for z, start, stop in _visits(cube_seq):
        window = slice(max(start - 1, 0), min(stop + 1, x.shape[0]))
        pts = x[window]
        if int(grid.inner_of_points(z, pts).sum()) < min_dwell:
            return False
        cols = tuple(pts[:, i] for i in range(pts.shape[1]))
        total = 0.0
        for i, c in enumerate(grid.forms[z].components):
            vals = np.broadcast_to(
                np.asarray(compile_expr(c)(cols), float), (pts.shape[0],)
            )
            total += float(
                np.sum(0.5 * (vals[1:] + vals[:-1]) * np.diff(pts[:, i]))
            )
        if abs(total) < strength_tol:
            return False
    return True


def coarsen_route(word, factor: int = 2) -> RouteWord:
    """Parent-cell route of a route on a grid refined by ``factor``."""
    labels = word.labels if isinstance(word, RouteWord) else word
    return RouteWord(_collapse(tuple(tuple(v // factor for v in z) for z in labels)))
