"""Solver for the state / Jacobian / auxiliary system along a driver.

On each mesh segment the piecewise-linear driver turns the system

    dX   = V_a(X) dw^a
    dPhi = DV_a(X) Phi dw^a,          Phi_0    = Id
    dPhiInv = -PhiInv DV_a(X) dw^a,   PhiInv_0 = Id

into an autonomous ODE with constant segment slope, integrated by classical
RK4 with a configurable number of substeps per segment.  Phi transports
tangent vectors along the solution flow (the derivative of X_t with respect
to the start point); its inverse is propagated by its own equation rather
than by matrix inversion, and the product defect is available as a health
metric.

Auxiliary path integrals (line integrals, derivative-kernel ingredients,
iterated-integral chains) plug in as :class:`AuxBlock` instances and are
integrated together with the state, so every quadrature is consistent with
the solver resolution.

All stepping is written over a leading batch axis; a single trajectory is a
batch of one.  Contractions use fixed-order einsum reductions so results do
not depend on the batch size, which keeps ensembles byte-identical however
the replicates are chunked.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .driver import DriverPath
from .expr import compile_expr, diff
from .geometry import VectorField, lie_bracket

__all__ = [
    "AuxBlock",
    "BlowupError",
    "Trajectory",
    "BatchSolution",
    "PullbackBlock",
    "pullback_path",
    "reintegrate",
    "solve",
    "solve_batch",
]


class BlowupError(RuntimeError):
    """The state norm exceeded the configured bound or became non-finite."""


class _Ctx:
    """Per-stage evaluation context handed to auxiliary blocks."""

    __slots__ = (
        "x", "cols", "vmat", "dxdt", "wdot", "phi", "phi_inv", "aux", "r", "seg",
    )

    def __init__(self, x, cols, vmat, dxdt, wdot, phi, phi_inv, aux, r, seg):
        self.x = x
        self.cols = cols
        self.vmat = vmat
        self.dxdt = dxdt
        self.wdot = wdot
        self.phi = phi
        self.phi_inv = phi_inv
        self.aux = aux
        self.r = r
        self.seg = seg


class AuxBlock:
    """One extra integrand co-integrated with the state.

    Subclasses set ``name`` and ``shape`` and implement ``init`` (initial
    value per path) and ``rhs`` (time derivative from the stage context).
    ``needs_phi`` / ``needs_phi_inv`` declare which transports the right
    hand side reads.
    """

    name: str = "aux"
    shape: tuple = ()
    needs_phi = False
    needs_phi_inv = False

    def init(self, x0: np.ndarray) -> np.ndarray:
        return np.zeros((x0.shape[0],) + self.shape)

    def rhs(self, ctx: _Ctx) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError


class _CompiledFields:
    def __init__(self, fields: Sequence[VectorField]):
        fields = tuple(fields)
        self.n = fields[0].n
        self.d = len(fields)
        if any(f.n != self.n for f in fields):
            raise ValueError("all driving fields must share the dimension")
        self.v = [[compile_expr(c) for c in f.components] for f in fields]
        self.dv = [
            [[compile_expr(diff(f.components[i], j + 1)) for j in range(self.n)]
             for i in range(self.n)]
            for f in fields
        ]

    def vmat(self, cols, r) -> np.ndarray:
        out = np.empty((r, self.n, self.d))
        for a in range(self.d):
            for i in range(self.n):
                out[:, i, a] = self.v[a][i](cols)
        return out

    def dvmat(self, cols, r) -> np.ndarray:
        out = np.empty((r, self.d, self.n, self.n))
        for a in range(self.d):
            for i in range(self.n):
                for j in range(self.n):
                    out[:, a, i, j] = self.dv[a][i][j](cols)
        return out


@dataclass
class _Layout:
    slices: dict
    size: int
    n: int
    jacobian: bool
    inverse: bool


def _make_layout(n, jacobian, inverse, blocks) -> _Layout:
    slices = {}
    pos = 0

    def claim(name, size):
        nonlocal pos
        slices[name] = slice(pos, pos + size)
        pos += size

    claim("x", n)
    if jacobian:
        claim("phi", n * n)
    if inverse:
        claim("phi_inv", n * n)
    for b in blocks:
        if b.name in slices:
            raise ValueError(f"duplicate auxiliary block name '{b.name}'")
        claim(b.name, int(np.prod(b.shape, dtype=int)) if b.shape else 1)
    return _Layout(slices=slices, size=pos, n=n, jacobian=jacobian, inverse=inverse)


@dataclass
class BatchSolution:
    """Mesh values of the integrated system for a batch of drivers."""

    times: np.ndarray            # (N+1,)
    x: np.ndarray                # (R, N+1, n)
    phi: Optional[np.ndarray]    # (R, N+1, n, n)
    phi_inv: Optional[np.ndarray]
    aux: dict                    # name -> (R, N+1, *shape)
    fine_times: Optional[np.ndarray] = None
    fine_x: Optional[np.ndarray] = None
    fine_phi: Optional[np.ndarray] = None
    fine_phi_inv: Optional[np.ndarray] = None
    fine_aux: dict = field(default_factory=dict)


def _integrate(
    csys: _CompiledFields,
    x0: np.ndarray,
    times: np.ndarray,
    values: np.ndarray,
    substeps: int,
    jacobian: bool,
    inverse: bool,
    blocks: Sequence[AuxBlock],
    record_fine: bool,
    blowup_norm: float,
) -> BatchSolution:
    n, d = csys.n, csys.d
    r, nseg = x0.shape[0], times.shape[0] - 1
    if values.ndim == 2:
        values = np.broadcast_to(values, (r,) + values.shape)
    blocks = tuple(blocks)
    jacobian = jacobian or inverse or any(b.needs_phi for b in blocks)
    inverse = inverse or any(b.needs_phi_inv for b in blocks)
    layout = _make_layout(n, jacobian, inverse, blocks)
    sl = layout.slices
    need_dv = jacobian or inverse

    y = np.zeros((r, layout.size))
    y[:, sl["x"]] = x0
    eye = np.eye(n).reshape(-1)
    if jacobian:
        y[:, sl["phi"]] = eye
    if inverse:
        y[:, sl["phi_inv"]] = eye
    for b in blocks:
        y[:, sl[b.name]] = b.init(x0).reshape(r, -1)

    seg_index = 0

    def rhs(state, wdot):
        dy = np.zeros_like(state)
        x = state[:, sl["x"]]
        cols = tuple(x[:, i] for i in range(n))
        vmat = csys.vmat(cols, r)
        dxdt = np.einsum("rid,rd->ri", vmat, wdot)
        dy[:, sl["x"]] = dxdt
        phi = phi_inv = None
        if need_dv:
            dvmat = csys.dvmat(cols, r)
        if jacobian:
            phi = state[:, sl["phi"]].reshape(r, n, n)
            dy[:, sl["phi"]] = np.einsum(
                "raij,rjk,ra->rik", dvmat, phi, wdot
            ).reshape(r, -1)
        if inverse:
            phi_inv = state[:, sl["phi_inv"]].reshape(r, n, n)
            dy[:, sl["phi_inv"]] = -np.einsum(
                "rij,rajk,ra->rik", phi_inv, dvmat, wdot
            ).reshape(r, -1)
        if blocks:
            aux = {
                b.name: state[:, sl[b.name]].reshape((r,) + b.shape) for b in blocks
            }
            ctx = _Ctx(x, cols, vmat, dxdt, wdot, phi, phi_inv, aux, r, seg_index)
            for b in blocks:
                dy[:, sl[b.name]] = np.asarray(b.rhs(ctx)).reshape(r, -1)
        return dy

    out = np.empty((r, nseg + 1, layout.size))
    out[:, 0] = y
    fine = None
    if record_fine:
        fine = np.empty((r, nseg * substeps + 1, layout.size))
        fine[:, 0] = y

    # overflow inside a segment surfaces as the blow-up error below
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(nseg):
            seg_index = j
            dt_seg = times[j + 1] - times[j]
            wdot = (values[:, j + 1, :] - values[:, j, :]) / dt_seg
            h = dt_seg / substeps
            for s in range(substeps):
                k1 = rhs(y, wdot)
                k2 = rhs(y + (0.5 * h) * k1, wdot)
                k3 = rhs(y + (0.5 * h) * k2, wdot)
                k4 = rhs(y + h * k3, wdot)
                y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                if record_fine:
                    fine[:, j * substeps + s + 1] = y
            out[:, j + 1] = y
            xs = y[:, sl["x"]]
            if not np.isfinite(y).all() or np.max(np.abs(xs)) > blowup_norm:
                raise BlowupError(
                    f"state blew up on segment ending at t={times[j + 1]!r}"
                )

    def unpack(arr, name, shape):
        return arr[:, :, sl[name]].reshape((r, arr.shape[1]) + shape)

    sol = BatchSolution(
        times=times,
        x=unpack(out, "x", (n,)),
        phi=unpack(out, "phi", (n, n)) if jacobian else None,
        phi_inv=unpack(out, "phi_inv", (n, n)) if inverse else None,
        aux={b.name: unpack(out, b.name, b.shape) for b in blocks},
    )
    if record_fine:
        sol.fine_times = np.concatenate(
            [np.linspace(times[j], times[j + 1], substeps + 1)[(0 if j == 0 else 1):]
             for j in range(nseg)]
        ) if nseg else times.copy()
        sol.fine_x = unpack(fine, "x", (n,))
        sol.fine_phi = unpack(fine, "phi", (n, n)) if jacobian else None
        sol.fine_phi_inv = unpack(fine, "phi_inv", (n, n)) if inverse else None
        sol.fine_aux = {b.name: unpack(fine, b.name, b.shape) for b in blocks}
    return sol


@dataclass
class Trajectory:
    """Solved system on the mesh, plus the context that generated it.

    Keeping (fields, x0, driver, substeps) with the data lets integral
    routines re-run the deterministic solver with extra auxiliary blocks at
    exactly the solver resolution; the recomputed state matches bitwise.
    """

    times: np.ndarray
    x: np.ndarray
    phi: Optional[np.ndarray]
    phi_inv: Optional[np.ndarray]
    aux: dict
    fields: tuple
    x0: np.ndarray
    driver: DriverPath
    substeps: int

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def steps(self) -> int:
        return self.times.shape[0] - 1

    def det_phi(self) -> np.ndarray:
        if self.phi is None:
            raise ValueError("trajectory was solved without the Jacobian")
        return np.linalg.det(self.phi)

    def phi_inv_defect(self) -> float:
        """max over the mesh of || Phi PhiInv - Id ||_inf."""
        if self.phi is None or self.phi_inv is None:
            raise ValueError("need both transports for the defect")
        prod = np.einsum("tij,tjk->tik", self.phi, self.phi_inv)
        return float(np.max(np.abs(prod - np.eye(self.n))))

    def to_csv(self, target, include_det: bool = False) -> None:
        cols = [self.times] + [self.x[:, i] for i in range(self.n)]
        header = "t," + ",".join(f"x{i + 1}" for i in range(self.n))
        if include_det:
            header += ",detPhi"
            cols.append(self.det_phi())
        rows = [header]
        for vals in zip(*cols):
            rows.append(",".join(repr(float(v)) for v in vals))
        text = "\n".join(rows) + "\n"
        if hasattr(target, "write"):
            target.write(text)
        else:
            with open(target, "w") as fh:
                fh.write(text)


def solve(
    fields: Sequence[VectorField],
    x0,
    driver: DriverPath,
    substeps: int = 4,
    *,
    jacobian: bool = True,
    inverse: bool = True,
    aux: Sequence[AuxBlock] = (),
    blowup_norm: float = 1e8,
) -> Trajectory:
    """Integrate one trajectory along a piecewise-linear driver."""
    fields = tuple(fields)
    if len(fields) != driver.dim:
        raise ValueError(
            f"{len(fields)} driving fields but the driver has {driver.dim} coordinates"
        )
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (fields[0].n,):
        raise ValueError(f"x0 must have shape ({fields[0].n},)")
    csys = _CompiledFields(fields)
    sol = _integrate(
        csys, x0[None, :], driver.times, driver.values, substeps,
        jacobian, inverse, aux, record_fine=False, blowup_norm=blowup_norm,
    )
    return Trajectory(
        times=sol.times,
        x=sol.x[0],
        phi=None if sol.phi is None else sol.phi[0],
        phi_inv=None if sol.phi_inv is None else sol.phi_inv[0],
        aux={k: v[0] for k, v in sol.aux.items()},
        fields=fields,
        x0=x0,
        driver=driver,
        substeps=substeps,
    )


def solve_batch(
    fields: Sequence[VectorField],
    x0,
    times: np.ndarray,
    values: np.ndarray,
    substeps: int = 1,
    *,
    jacobian: bool = True,
    inverse: bool = True,
    aux: Sequence[AuxBlock] = (),
    record_fine: bool = False,
    blowup_norm: float = 1e8,
) -> BatchSolution:
    """Integrate a batch of drivers given as a (R, N+1, d) value array."""
    fields = tuple(fields)
    values = np.asarray(values, dtype=float)
    if values.ndim != 3:
        raise ValueError("values must be (replicates, mesh, dim)")
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 1:
        x0 = np.broadcast_to(x0, (values.shape[0], x0.shape[0])).copy()
    csys = _CompiledFields(fields)
    return _integrate(
        csys, x0, np.asarray(times, dtype=float), values, substeps,
        jacobian, inverse, aux, record_fine, blowup_norm,
    )


def reintegrate(
    traj: Trajectory,
    blocks: Sequence[AuxBlock] = (),
    *,
    record_fine: bool = False,
    jacobian: bool = False,
    inverse: bool = False,
    substeps: Optional[int] = None,
) -> BatchSolution:
    """Re-run the solver for a trajectory with extra auxiliary blocks.

    With the trajectory's own substep count the state part of the
    recomputation matches the stored trajectory bitwise (same deterministic
    stepping), so auxiliary integrals obtained this way are consistent with
    the original solve.  Transports are co-integrated when a block needs
    them or when requested explicitly; ``substeps`` overrides the
    resolution (used for quadrature refinement).
    """
    blocks = tuple(blocks)
    csys = _CompiledFields(traj.fields)
    sol = _integrate(
        csys,
        np.asarray(traj.x0, dtype=float)[None, :],
        traj.driver.times,
        traj.driver.values,
        traj.substeps if substeps is None else substeps,
        jacobian=jacobian or any(b.needs_phi for b in blocks),
        inverse=inverse or any(b.needs_phi_inv for b in blocks),
        blocks=blocks,
        record_fine=record_fine,
        blowup_norm=1e18,
    )
    return sol


class PullbackBlock(AuxBlock):
    """Accumulates W(x0) + integral of PhiInv [V_a, W](X) dw^a.

    Along the flow this reproduces PhiInv_t W(X_t); comparing the two sides
    checks the Jacobian transport against an independent bracket integral.
    """

    needs_phi_inv = True

    def __init__(self, w_field: VectorField, fields: Sequence[VectorField], name="pullback"):
        self.name = name
        self.shape = (w_field.n,)
        self._w = w_field
        brackets = [lie_bracket(v, w_field) for v in fields]
        self._brk = [[compile_expr(c) for c in b.components] for b in brackets]
        self._d = len(brackets)
        self._n = w_field.n

    def init(self, x0):
        out = np.empty((x0.shape[0], self._n))
        for rr in range(x0.shape[0]):
            out[rr] = self._w(x0[rr])
        return out

    def rhs(self, ctx):
        brk = np.empty((ctx.r, self._n, self._d))
        for a in range(self._d):
            for i in range(self._n):
                brk[:, i, a] = self._brk[a][i](ctx.cols)
        return np.einsum("rjk,rka,ra->rj", ctx.phi_inv, brk, ctx.wdot)


def pullback_path(traj: Trajectory, w_field: VectorField):
    """Both sides of the transport identity for a field W.

    Returns ``(left, right)`` on the mesh: ``left[t] = PhiInv_t W(X_t)``
    computed from the stored transport, ``right[t]`` the independently
    integrated bracket series starting from W(x0).
    """
    if traj.phi_inv is None:
        raise ValueError("trajectory was solved without the inverse transport")
    w_vals = np.array([w_field(p) for p in traj.x])
    left = np.einsum("tij,tj->ti", traj.phi_inv, w_vals)
    sol = reintegrate(traj, [PullbackBlock(w_field, traj.fields)])
    right = sol.aux["pullback"][0]
    return left, right
