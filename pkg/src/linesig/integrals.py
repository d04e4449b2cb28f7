"""Line integrals, iterated integrals, signatures and derivative kernels.

Quadrature convention: every integral along a solved trajectory is obtained
by co-integrating an auxiliary state with the same RK4 stepping that
produced the trajectory, so integral and path share one resolution.

The derivative kernel of a line integral F = int phi(dX) is the row-valued
function

    k_a(t) = ((zeta_T - zeta_t) PhiInv_t + phi(X_t)) . V_a(X_t),

with zeta the running integral of d(phi . V_a)(X) Phi dw^a.  It represents
the directional derivative of F under a driver shift h through
D_h F = int k_a(t) dh^a(t); comparing that pairing against a central finite
difference of two re-solves is the standard cross-check used in the tests.
For an iterated integral of forms (phi_1 ... phi_m) the kernel generalises
to

    k_a(t) = sum_k ( int_t^T G^k H^k dzeta^k . PhiInv_t
                     + G^k_t H^k_t phi_k(X_t) ) . V_a(X_t),

where G^k / H^k are the prefix / suffix iterated integrals around slot k.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .driver import DriverPath, shift
from .expr import compile_expr, diff
from .geometry import OneForm, VectorField, pair
from .rde import AuxBlock, Trajectory, reintegrate, solve

__all__ = [
    "TensorSeries",
    "MalliavinKernel",
    "IteratedIntegral",
    "LineIntegralBlock",
    "ZetaBlock",
    "ChainBlock",
    "line_integral",
    "iterated_line_integral",
    "signature",
    "malliavin_kernel",
    "malliavin_kernel_iterated",
    "kernel_pairing",
    "directional_derivative",
    "fd_directional_derivative",
]


# ---------------------------------------------------------------------------
# auxiliary blocks

def _compile_form(form: OneForm):
    return [compile_expr(c) for c in form.components]


def _eval_rows(fns, cols, r) -> np.ndarray:
    out = np.empty((r, len(fns)))
    for i, fn in enumerate(fns):
        out[:, i] = fn(cols)
    return out


class LineIntegralBlock(AuxBlock):
    """Accumulates int phi(X) . dX."""

    def __init__(self, form: OneForm, name: str = "lineint"):
        self.name = name
        self.shape = ()
        self._fns = _compile_form(form)

    def rhs(self, ctx):
        vals = _eval_rows(self._fns, ctx.cols, ctx.r)
        return np.einsum("ri,ri->r", vals, ctx.dxdt)


class ZetaBlock(AuxBlock):
    """Accumulates the row zeta_t = int d(phi . V_a)(X) Phi dw^a."""

    needs_phi = True

    def __init__(self, form: OneForm, fields: Sequence[VectorField], name: str = "zeta"):
        self.name = name
        n = form.n
        self.shape = (n,)
        self._grads = [
            [compile_expr(diff(pair(form, v), j + 1)) for j in range(n)] for v in fields
        ]
        self._n = n
        self._d = len(self._grads)

    def rhs(self, ctx):
        g = np.empty((ctx.r, self._d, self._n))
        for a in range(self._d):
            for j in range(self._n):
                g[:, a, j] = self._grads[a][j](ctx.cols)
        return np.einsum("raj,rjk,ra->rk", g, ctx.phi, ctx.wdot)


def _chain_pairs(m: int):
    return [(p, q) for p in range(1, m + 1) for q in range(p, m + 1)]


class ChainBlock(AuxBlock):
    """All contiguous iterated integrals A[p,q] = int phi_p ... phi_q.

    The forward system is triangular: dA[p,q] = A[p,q-1] phi_q(X).dX with
    A[p,p-1] = 1.  Prefix integrals, suffix integrals and the full value are
    all linear combinations of these states.
    """

    def __init__(self, forms: Sequence[OneForm], name: str = "chain"):
        self.name = name
        self._m = len(forms)
        self._pairs = _chain_pairs(self._m)
        self._index = {pq: i for i, pq in enumerate(self._pairs)}
        self.shape = (len(self._pairs),)
        self._fns = [_compile_form(f) for f in forms]

    def index(self, p: int, q: int) -> int:
        return self._index[(p, q)]

    def rhs(self, ctx):
        s = np.empty((ctx.r, self._m))
        for k in range(self._m):
            vals = _eval_rows(self._fns[k], ctx.cols, ctx.r)
            s[:, k] = np.einsum("ri,ri->r", vals, ctx.dxdt)
        a = ctx.aux[self.name]
        out = np.empty_like(a)
        for i, (p, q) in enumerate(self._pairs):
            prefix = a[:, self._index[(p, q - 1)]] if q > p else 1.0
            out[:, i] = prefix * s[:, q - 1]
        return out


# ---------------------------------------------------------------------------
# line and iterated line integrals

def line_integral(form: OneForm, traj: Trajectory) -> float:
    """int phi(dX) along the solved trajectory, at solver resolution."""
    sol = reintegrate(traj, [LineIntegralBlock(form)])
    return float(sol.aux["lineint"][0, -1])


@dataclass
class IteratedIntegral:
    """Value of an iterated line integral with its prefix/suffix paths.

    ``g[:, k-1]`` is the prefix integral of the first k-1 forms (so the
    column for k=1 is identically one and column m+1 carries the running
    full integral); ``h[:, k-1]`` is the suffix integral over [t, T] of the
    forms after slot k (column m is identically one).
    """

    value: float
    times: np.ndarray
    g: np.ndarray  # (N+1, m+1)
    h: np.ndarray  # (N+1, m)


def _g_h_from_chain(chain: ChainBlock, a_path: np.ndarray, m: int):
    """Prefix and suffix paths from the chain states (leading axes free)."""
    lead = a_path.shape[:-1]
    g = np.empty(lead + (m + 1,))
    g[..., 0] = 1.0
    for k in range(2, m + 2):
        g[..., k - 1] = a_path[..., chain.index(1, k - 1)]
    h = np.empty(lead + (m,))
    h[..., m - 1] = 1.0
    a_final = a_path[..., -1, :] if a_path.ndim >= 2 else a_path
    for k in range(m - 1, 0, -1):
        total = a_path[..., -1:, chain.index(k + 1, m)]
        acc = np.broadcast_to(total, lead).copy()
        for j in range(k + 1, m + 1):
            acc = acc - a_path[..., chain.index(k + 1, j)] * h[..., j - 1]
        h[..., k - 1] = acc
    return g, h


def iterated_line_integral(forms: Sequence[OneForm], traj: Trajectory) -> IteratedIntegral:
    """Ordered iterated integral of one-forms along the trajectory."""
    forms = tuple(forms)
    if not forms:
        raise ValueError("need at least one form")
    m = len(forms)
    chain = ChainBlock(forms)
    sol = reintegrate(traj, [chain])
    a_path = sol.aux["chain"][0]  # (N+1, P)
    g, h = _g_h_from_chain(chain, a_path, m)
    return IteratedIntegral(
        value=float(a_path[-1, chain.index(1, m)]),
        times=sol.times,
        g=g,
        h=h,
    )


# ---------------------------------------------------------------------------
# signatures

@dataclass(frozen=True)
class TensorSeries:
    """Truncated tensor series; level k is a (d,)*k array, level 0 a scalar."""

    levels: tuple

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    @property
    def dim(self) -> int:
        return self.levels[1].shape[0] if self.depth >= 1 else 0

    @classmethod
    def identity(cls, dim: int, depth: int) -> "TensorSeries":
        levels = [np.array(1.0)]
        for k in range(1, depth + 1):
            levels.append(np.zeros((dim,) * k))
        return cls(tuple(levels))

    @classmethod
    def segment(cls, increment: np.ndarray, depth: int) -> "TensorSeries":
        """Tensor exponential of a straight segment: level k = v^{(x)k} / k!."""
        v = np.asarray(increment, dtype=float)
        levels = [np.array(1.0)]
        for k in range(1, depth + 1):
            levels.append(np.multiply.outer(levels[-1], v) / k)
        return cls(tuple(levels))

    def product(self, other: "TensorSeries") -> "TensorSeries":
        """Truncated tensor product; concatenation of underlying paths."""
        depth = min(self.depth, other.depth)
        levels = []
        for k in range(depth + 1):
            acc = np.zeros((self.dim,) * k) if k else np.array(0.0)
            for i in range(k + 1):
                acc = acc + np.multiply.outer(self.levels[i], other.levels[k - i])
            levels.append(acc)
        return TensorSeries(tuple(levels))

    def inverse(self) -> "TensorSeries":
        """Group inverse; equals the signature of the reversed path."""
        u_levels = [np.array(0.0)] + [lvl.copy() for lvl in self.levels[1:]]
        u = TensorSeries(tuple(-lvl for lvl in u_levels))
        out = TensorSeries.identity(self.dim, self.depth)
        term = TensorSeries.identity(self.dim, self.depth)
        for _ in range(self.depth):
            term = term.product(u)
            out = TensorSeries(tuple(a + b for a, b in zip(out.levels, term.levels)))
        return out

    def max_abs_diff(self, other: "TensorSeries") -> float:
        return max(
            float(np.max(np.abs(a - b))) for a, b in zip(self.levels, other.levels)
        )

    def to_json_dict(self) -> dict:
        return {
            "dim": self.dim,
            "depth": self.depth,
            "levels": [np.asarray(lvl).tolist() for lvl in self.levels],
        }


def _points_of(obj) -> np.ndarray:
    if isinstance(obj, DriverPath):
        return obj.values
    if isinstance(obj, Trajectory):
        return obj.x
    pts = np.asarray(obj, dtype=float)
    if pts.ndim != 2:
        raise TypeError("signature expects a driver, a trajectory or (m, d) points")
    return pts


def signature(obj, depth: int) -> TensorSeries:
    """Signature of a piecewise-linear path, exact per segment.

    For a trajectory the mesh values of X are used, i.e. the piecewise
    linear interpolation of the solved path.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    pts = _points_of(obj)
    out = TensorSeries.identity(pts.shape[1], depth)
    for j in range(pts.shape[0] - 1):
        out = out.product(TensorSeries.segment(pts[j + 1] - pts[j], depth))
    return out


# ---------------------------------------------------------------------------
# derivative kernels

@dataclass
class MalliavinKernel:
    """Row-valued kernel k_a(t) on the mesh with D_h F = int k . dh."""

    times: np.ndarray
    rows: np.ndarray  # (N+1, d)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.rows)))

    def is_zero(self, tol: float) -> bool:
        return self.sup_norm() <= tol

    def pairing(self, h: DriverPath) -> float:
        """Trapezoid Stieltjes pairing int k_a dh^a on the mesh."""
        if h.values.shape != self.rows.shape:
            raise ValueError("shift direction must live on the kernel mesh")
        mid = 0.5 * (self.rows[1:] + self.rows[:-1])
        return float(np.sum(mid * np.diff(h.values, axis=0)))

    def to_csv(self, target) -> None:
        header = "t," + ",".join(f"k{i + 1}" for i in range(self.rows.shape[1]))
        rows = [header]
        for t, row in zip(self.times, self.rows):
            rows.append(",".join(repr(float(v)) for v in (t, *row)))
        text = "\n".join(rows) + "\n"
        if hasattr(target, "write"):
            target.write(text)
        else:
            with open(target, "w") as fh:
                fh.write(text)


def kernel_pairing(kernel: MalliavinKernel, h: DriverPath) -> float:
    return kernel.pairing(h)


def _mesh_rows(form: OneForm, x: np.ndarray) -> np.ndarray:
    cols = tuple(x[:, i] for i in range(x.shape[1]))
    return _eval_rows(_compile_form(form), cols, x.shape[0])


def _mesh_vmat(fields, x: np.ndarray) -> np.ndarray:
    n, d = x.shape[1], len(fields)
    out = np.empty((x.shape[0], n, d))
    cols = tuple(x[:, i] for i in range(n))
    for a, f in enumerate(fields):
        for i in range(n):
            out[:, i, a] = compile_expr(f.components[i])(cols)
    return out


def malliavin_kernel(form: OneForm, traj: Trajectory) -> MalliavinKernel:
    """Derivative kernel of the line integral of ``form`` along ``traj``."""
    if traj.phi_inv is None:
        raise ValueError("solve the trajectory with inverse=True for kernels")
    sol = reintegrate(traj, [ZetaBlock(form, traj.fields)])
    zeta = sol.aux["zeta"][0]  # (N+1, n)
    eta = zeta[-1] - zeta      # zeta_T - zeta_t
    row = np.einsum("tn,tnk->tk", eta, traj.phi_inv) + _mesh_rows(form, traj.x)
    rows = np.einsum("tk,tkd->td", row, _mesh_vmat(traj.fields, traj.x))
    return MalliavinKernel(times=traj.times, rows=rows)


def malliavin_kernel_iterated(
    forms: Sequence[OneForm], traj: Trajectory
) -> MalliavinKernel:
    """Derivative kernel of the ordered iterated integral of ``forms``.

    Suffix factors are recovered algebraically from the forward chain, and
    the tail integrals int_t^T G H dzeta are accumulated by trapezoid
    quadrature on the substep grid, which is ample for the finite-difference
    tolerance used to validate kernels.
    """
    forms = tuple(forms)
    m = len(forms)
    if m == 0:
        raise ValueError("need at least one form")
    if traj.phi_inv is None:
        raise ValueError("solve the trajectory with inverse=True for kernels")
    n = traj.n
    chain = ChainBlock(forms)
    zblocks = [ZetaBlock(f, traj.fields, name=f"zeta{k + 1}") for k, f in enumerate(forms)]
    sol = reintegrate(traj, [chain] + zblocks, record_fine=True)
    a_fine = sol.fine_aux["chain"][0]          # (Nf, P)
    g_fine, h_fine = _g_h_from_chain(chain, a_fine, m)
    sub = traj.substeps
    mesh_idx = np.arange(traj.steps + 1) * sub

    rows_sum = np.zeros((traj.steps + 1, n))
    for k in range(1, m + 1):
        zeta_f = sol.fine_aux[f"zeta{k}"][0]   # (Nf, n)
        gh = g_fine[:, k - 1] * h_fine[:, k - 1]
        mid = 0.5 * (gh[1:] + gh[:-1])
        cum = np.zeros_like(zeta_f)
        np.cumsum(mid[:, None] * np.diff(zeta_f, axis=0), axis=0, out=cum[1:])
        tail = cum[-1] - cum[mesh_idx]         # int_t^T G H dzeta^k
        row = np.einsum("tn,tnk->tk", tail, traj.phi_inv)
        row += gh[mesh_idx, None] * _mesh_rows(forms[k - 1], traj.x)
        rows_sum += row
    rows = np.einsum("tk,tkd->td", rows_sum, _mesh_vmat(traj.fields, traj.x))
    return MalliavinKernel(times=traj.times, rows=rows)


class PairingBlock(AuxBlock):
    """Co-integrated states whose endpoint combination is the exact pairing
    of the single-form derivative kernel with a shift direction h.

    Integration by parts turns int (zeta_T - zeta_t) PhiInv V hdot dt into
    zeta_T . q_T - r_T with q = int PhiInv V hdot and r = int zeta . dq, so
    the anticipating tail never has to be formed; adding
    s = int phi(X) . V hdot gives D_h F = zeta_T . q_T - r_T + s_T at full
    solver accuracy.
    """

    needs_phi = True
    needs_phi_inv = True

    def __init__(self, form: OneForm, fields, h: DriverPath, name: str = "pairing"):
        self.name = name
        n = form.n
        self._n = n
        self._d = len(fields)
        self.shape = (2 * n + 2,)
        self._grads = [
            [compile_expr(diff(pair(form, v), j + 1)) for j in range(n)]
            for v in fields
        ]
        self._pairs = [compile_expr(pair(form, v)) for v in fields]
        self._hdot = np.diff(h.values, axis=0) / np.diff(h.times)[:, None]

    def rhs(self, ctx):
        n = self._n
        state = ctx.aux[self.name]
        zeta = state[:, :n]
        hdot = self._hdot[ctx.seg]
        out = np.empty_like(state)
        g = np.empty((ctx.r, self._d, n))
        for a in range(self._d):
            for j in range(n):
                g[:, a, j] = self._grads[a][j](ctx.cols)
        out[:, :n] = np.einsum("raj,rjk,ra->rk", g, ctx.phi, ctx.wdot)
        dq = np.einsum("rjk,rka,a->rj", ctx.phi_inv, ctx.vmat, hdot)
        out[:, n:2 * n] = dq
        out[:, 2 * n] = np.einsum("rj,rj->r", zeta, dq)
        ds = np.zeros(ctx.r)
        for a in range(self._d):
            ds += np.broadcast_to(
                np.asarray(self._pairs[a](ctx.cols), float), (ctx.r,)
            ) * hdot[a]
        out[:, 2 * n + 1] = ds
        return out


class IteratedPairingBlock(AuxBlock):
    """Exact D_h of a two-form iterated integral from forward states only.

    The suffix factor H^1_t = A2_T - A2_t and the anticipating tails are
    unrolled by integration by parts into products of forward integrals, so
    the whole pairing comes out of one sweep:

        D_h F = A2_T (zeta1_T . q_T - r1_T + s1_T)
                + (C2_T - D_T) . q_T + rD_T - rC_T - m1_T + m2_T,

    with q = int PhiInv V hdot, C2 = int A1 dzeta2, D = int A2 dzeta1,
    r* = int (state) . dq, s1 = int (phi1 . V) hdot and
    m_k = int A_{3-k} (phi_k . V) hdot.
    """

    needs_phi = True
    needs_phi_inv = True

    def __init__(self, form1: OneForm, form2: OneForm, fields, h: DriverPath,
                 name: str = "pairing2"):
        self.name = name
        n = form1.n
        self._n = n
        self._d = len(fields)
        self.shape = (5 * n + 8,)
        self._grads = [
            [
                [compile_expr(diff(pair(f, v), j + 1)) for j in range(n)]
                for v in fields
            ]
            for f in (form1, form2)
        ]
        self._fns = [_compile_form(f) for f in (form1, form2)]
        self._pairs = [
            [compile_expr(pair(f, v)) for v in fields] for f in (form1, form2)
        ]
        self._hdot = np.diff(h.values, axis=0) / np.diff(h.times)[:, None]

    def rhs(self, ctx):
        n, d = self._n, self._d
        state = ctx.aux[self.name]
        zeta1 = state[:, 0:n]
        c2 = state[:, 2 * n:3 * n]
        dd = state[:, 3 * n:4 * n]
        a1 = state[:, 5 * n]
        a2 = state[:, 5 * n + 1]
        hdot = self._hdot[ctx.seg]
        out = np.empty_like(state)

        dzeta = []
        for k in range(2):
            g = np.empty((ctx.r, d, n))
            for a in range(d):
                for j in range(n):
                    g[:, a, j] = self._grads[k][a][j](ctx.cols)
            dzeta.append(np.einsum("raj,rjk,ra->rk", g, ctx.phi, ctx.wdot))
        out[:, 0:n] = dzeta[0]
        out[:, n:2 * n] = dzeta[1]
        out[:, 2 * n:3 * n] = a1[:, None] * dzeta[1]       # C2
        out[:, 3 * n:4 * n] = a2[:, None] * dzeta[0]       # D
        dq = np.einsum("rjk,rka,a->rj", ctx.phi_inv, ctx.vmat, hdot)
        out[:, 4 * n:5 * n] = dq
        da = []
        dphiv_h = []
        for k in range(2):
            vals = _eval_rows(self._fns[k], ctx.cols, ctx.r)
            da.append(np.einsum("ri,ri->r", vals, ctx.dxdt))
            acc = np.zeros(ctx.r)
            for a in range(d):
                acc += np.broadcast_to(
                    np.asarray(self._pairs[k][a](ctx.cols), float), (ctx.r,)
                ) * hdot[a]
            dphiv_h.append(acc)
        out[:, 5 * n] = da[0]
        out[:, 5 * n + 1] = da[1]
        out[:, 5 * n + 2] = np.einsum("rj,rj->r", zeta1, dq)   # r1
        out[:, 5 * n + 3] = np.einsum("rj,rj->r", c2, dq)      # rC
        out[:, 5 * n + 4] = np.einsum("rj,rj->r", dd, dq)      # rD
        out[:, 5 * n + 5] = dphiv_h[0]                          # s1
        out[:, 5 * n + 6] = a2 * dphiv_h[0]                     # m1
        out[:, 5 * n + 7] = a1 * dphiv_h[1]                     # m2
        return out

    def combine(self, end: np.ndarray) -> float:
        n = self._n
        zeta1, q = end[0:n], end[4 * n:5 * n]
        c2, dd = end[2 * n:3 * n], end[3 * n:4 * n]
        a2 = end[5 * n + 1]
        r1, r_c, r_d = end[5 * n + 2], end[5 * n + 3], end[5 * n + 4]
        s1, m1, m2 = end[5 * n + 5], end[5 * n + 6], end[5 * n + 7]
        return float(
            a2 * (zeta1 @ q - r1 + s1) + (c2 - dd) @ q + r_d - r_c - m1 + m2
        )


def directional_derivative(forms, traj: Trajectory, h: DriverPath) -> float:
    """D_h of the (iterated) line integral through the kernel machinery.

    For one or two forms this is exact at solver accuracy (integration by
    parts inside the sweep); for longer words the kernel rows and the shift
    are paired by trapezoid quadrature on a doubled substep grid.
    """
    if isinstance(forms, OneForm):
        forms = (forms,)
    forms = tuple(forms)
    if h.values.shape[0] != traj.times.shape[0]:
        raise ValueError("shift direction must live on the trajectory mesh")
    if len(forms) == 1:
        block = PairingBlock(forms[0], traj.fields, h)
        sol = reintegrate(traj, [block])
        end = sol.aux["pairing"][0, -1]
        n = traj.n
        zeta_t, q_t = end[:n], end[n:2 * n]
        return float(zeta_t @ q_t - end[2 * n] + end[2 * n + 1])
    if len(forms) == 2:
        block = IteratedPairingBlock(forms[0], forms[1], traj.fields, h)
        sol = reintegrate(traj, [block])
        return block.combine(sol.aux["pairing2"][0, -1])
    return _fine_pairing(forms, traj, h, 2 * traj.substeps)


def _fine_pairing(forms, traj: Trajectory, h: DriverPath, substeps: int) -> float:
    """Substep-resolution trapezoid pairing of the iterated kernel with h."""
    m = len(forms)
    n = traj.n
    chain = ChainBlock(forms)
    zblocks = [ZetaBlock(f, traj.fields, name=f"zeta{k + 1}") for k, f in enumerate(forms)]
    sol = reintegrate(
        traj, [chain] + zblocks, record_fine=True, inverse=True, substeps=substeps
    )
    a_fine = sol.fine_aux["chain"][0]
    g_fine, h_fine = _g_h_from_chain(chain, a_fine, m)
    xf = sol.fine_x[0]
    phi_inv_f = sol.fine_phi_inv[0]
    rows = np.zeros((xf.shape[0], n))
    for k in range(1, m + 1):
        zeta_f = sol.fine_aux[f"zeta{k}"][0]
        gh = g_fine[:, k - 1] * h_fine[:, k - 1]
        mid = 0.5 * (gh[1:] + gh[:-1])
        cum = np.zeros_like(zeta_f)
        np.cumsum(mid[:, None] * np.diff(zeta_f, axis=0), axis=0, out=cum[1:])
        tail = cum[-1] - cum
        rows += np.einsum("tn,tnk->tk", tail, phi_inv_f)
        rows += gh[:, None] * _mesh_rows(forms[k - 1], xf)
    kern = np.einsum("tk,tkd->td", rows, _mesh_vmat(traj.fields, xf))
    h_fine_vals = np.column_stack(
        [np.interp(sol.fine_times, h.times, h.values[:, a]) for a in range(h.dim)]
    )
    mid_k = 0.5 * (kern[1:] + kern[:-1])
    return float(np.sum(mid_k * np.diff(h_fine_vals, axis=0)))


def fd_directional_derivative(
    functional,
    traj: Trajectory,
    h: DriverPath,
    eps: Optional[float] = None,
    richardson: bool = True,
    substeps: Optional[int] = None,
) -> float:
    """Central finite difference of a trajectory functional along a shift.

    ``functional`` maps a trajectory to a float; the system is re-solved at
    the shifted drivers w + eps h and w - eps h.  The default step is
    1e-4 times the driver sup-norm, with one Richardson refinement.  The
    re-solves run at the trajectory's own substep count, so the difference
    quotient targets the derivative of the functional at the resolution it
    is actually computed at; the pairing identities hold at matched
    resolution essentially exactly.
    """
    w = traj.driver
    if eps is None:
        eps = 1e-4 * max(w.sup_norm(), 1.0)
    if substeps is None:
        substeps = traj.substeps

    def value(e: float) -> float:
        shifted = shift(w, h, e)
        t = solve(
            traj.fields, traj.x0, shifted, substeps,
            jacobian=False, inverse=False,
        )
        return functional(t)

    def central(e: float) -> float:
        return (value(e) - value(-e)) / (2.0 * e)

    d1 = central(eps)
    if not richardson:
        return d1
    d2 = central(eps / 2.0)
    return (4.0 * d2 - d1) / 3.0
