"""Monte Carlo diagnostics for the laws of (iterated) line integrals.

Density existence cannot be certified from finitely many samples; the
experiments here test two falsifiable surrogates instead:

* atom detection: no cluster of samples of width ``atom_tol`` may carry
  more than 3/sqrt(N) of the conditional mass (a contrast family of exact
  compactly supported forms must fail this, with an atom at -f(x0) whose
  mass matches the probability of ending outside the support);
* kernel vanishing: the derivative kernel's sup-norm should exceed a small
  threshold on essentially every conditional sample.

Conditioning is by rejection: all replicates are simulated and the event
flag recorded.  Replicate r draws its noise from an independent generator
keyed by (master seed, r), and all reductions are fixed-order, so results
are identical however the ensemble is chunked.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .driver import FbmSampler, FbmSpec
from .expr import compile_expr, evaluate, diff
from .geometry import OneForm, Word, bracket_of_word
from .integrals import ChainBlock, LineIntegralBlock, ZetaBlock, _g_h_from_chain
from .nondeg import psi_table
from .rde import Trajectory, reintegrate, solve_batch

__all__ = [
    "Box",
    "ExperimentSpec",
    "SampleSet",
    "IndependenceFailure",
    "run_conditional_samples",
    "atom_test",
    "kernel_vanishing_rate",
    "consalldeg_residual",
    "exactform_pair_experiment",
    "event_flags",
]


class IndependenceFailure(RuntimeError):
    """The wedge products of consecutive gradients are dependent at x0."""


@dataclass(frozen=True)
class Box:
    """Open axis-aligned box."""

    lo: tuple
    hi: tuple

    def __init__(self, lo, hi):
        lo = tuple(float(v) for v in lo)
        hi = tuple(float(v) for v in hi)
        if len(lo) != len(hi) or any(b <= a for a, b in zip(lo, hi)):
            raise ValueError("degenerate box")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return np.all((pts > lo) & (pts < hi), axis=-1)


@dataclass
class ExperimentSpec:
    """A reproducible conditional-sampling experiment."""

    fields: tuple
    x0: tuple
    forms: tuple                      # one form: line integral; several: iterated
    hurst: float = 0.5
    horizon: float = 1.0
    steps: int = 1024
    substeps: int = 2
    event_regions: tuple = ()         # open boxes to visit in order; empty: all
    replicates: int = 10_000
    master_seed: int = 0
    atom_tol: Optional[float] = None
    kernel_tol: float = 1e-7          # relative to the replicate driver scale
    chunk: int = 1024                 # batching only; results are chunk-invariant

    def __post_init__(self):
        self.fields = tuple(self.fields)
        self.forms = tuple(self.forms)
        self.x0 = tuple(float(v) for v in self.x0)
        self.event_regions = tuple(self.event_regions)
        if self.replicates < 1:
            raise ValueError("need at least one replicate")
        if not self.forms:
            raise ValueError("need at least one form")

    @property
    def dim(self) -> int:
        return len(self.fields)


def event_flags(x: np.ndarray, regions: Sequence[Box]) -> np.ndarray:
    """In-order visit flags on mesh paths x of shape (R, N+1, n).

    True when there are mesh indices t_1 < ... < t_m with the path inside
    region i at t_i (strict interior).  Empty region list flags everything.
    """
    r, nt = x.shape[0], x.shape[1]
    ok = np.ones(r, dtype=bool)
    if not regions:
        return ok
    idx = np.arange(nt)
    cur = np.full(r, -1)
    for box in regions:
        inside = box.contains(x)                      # (R, N+1)
        later = inside & (idx[None, :] > cur[:, None])
        has = later.any(axis=1)
        ok &= has
        cur = np.where(has, later.argmax(axis=1), nt)
    return ok


@dataclass
class SampleSet:
    """Per-replicate outcomes of a conditional-sampling experiment."""

    f_values: np.ndarray
    event: np.ndarray
    kernel_sup: np.ndarray
    driver_sup: np.ndarray
    spec: ExperimentSpec

    @property
    def n(self) -> int:
        return self.f_values.shape[0]

    @property
    def n_conditional(self) -> int:
        return int(np.sum(self.event))

    def conditional_values(self) -> np.ndarray:
        return self.f_values[self.event]

    def insufficient(self) -> bool:
        return self.n_conditional < 30

    def to_csv(self, target, comment: str = "") -> None:
        rows = []
        if comment:
            rows.append(f"# {comment}")
        rows.append("replicate,seed,F,event,kernel_sup")
        for i in range(self.n):
            rows.append(
                f"{i},{self.spec.master_seed}:{i},{self.f_values[i]!r},"
                f"{int(self.event[i])},{self.kernel_sup[i]!r}"
            )
        text = "\n".join(rows) + "\n"
        if hasattr(target, "write"):
            target.write(text)
        else:
            with open(target, "w") as fh:
                fh.write(text)

    def summary(self) -> dict:
        cond = self.conditional_values()
        out = {
            "replicates": self.n,
            "conditional": self.n_conditional,
            "insufficient": bool(self.insufficient()),
            "event_probability": float(np.mean(self.event)),
        }
        if self.n_conditional >= 30:
            out["atoms"] = [
                {"value": v, "mass": m}
                for v, m in atom_test(cond, self.spec.atom_tol or default_atom_tol(cond))
            ]
            out["kernel_vanishing_rate"] = kernel_vanishing_rate(self)
            qs = np.percentile(cond, [1, 25, 50, 75, 99])
            out["percentiles"] = {
                "p01": float(qs[0]), "p25": float(qs[1]), "p50": float(qs[2]),
                "p75": float(qs[3]), "p99": float(qs[4]),
            }
        return out


def default_atom_tol(samples: np.ndarray) -> float:
    """Cluster width for atom detection.

    Must dominate the numerical resolution of the integral values (or true
    atoms smear into the continuum) while staying far below the spread (or
    continuous mass would pool into false clusters); 1e-4 of the spread
    leaves orders of magnitude on both sides at the default solver
    settings.
    """
    spread = float(np.percentile(samples, 99) - np.percentile(samples, 1))
    return 1e-4 * max(1.0, spread)


def _mesh_form_rows(form: OneForm, x_flat: np.ndarray) -> np.ndarray:
    cols = tuple(x_flat[:, i] for i in range(x_flat.shape[1]))
    out = np.empty((x_flat.shape[0], form.n))
    for i, c in enumerate(form.components):
        out[:, i] = np.broadcast_to(
            np.asarray(compile_expr(c)(cols), float), (x_flat.shape[0],)
        )
    return out


def _mesh_field_matrix(fields, x_flat: np.ndarray) -> np.ndarray:
    n, d = x_flat.shape[1], len(fields)
    cols = tuple(x_flat[:, i] for i in range(n))
    out = np.empty((x_flat.shape[0], n, d))
    for a, f in enumerate(fields):
        for i in range(n):
            out[:, i, a] = np.broadcast_to(
                np.asarray(compile_expr(f.components[i])(cols), float),
                (x_flat.shape[0],),
            )
    return out


def run_conditional_samples(spec: ExperimentSpec) -> SampleSet:
    """Simulate all replicates, recording the integral value, the in-order
    event flag and the derivative-kernel sup-norm for each."""
    m = len(spec.forms)
    n = spec.fields[0].n
    sampler = FbmSampler(
        FbmSpec(
            hurst=spec.hurst,
            horizon=spec.horizon,
            steps=spec.steps,
            seed=spec.master_seed,
            dim=spec.dim,
        )
    )
    times = sampler.times
    r_total = spec.replicates
    f_vals = np.empty(r_total)
    event = np.empty(r_total, dtype=bool)
    k_sup = np.empty(r_total)
    w_sup = np.empty(r_total)

    start = 0
    while start < r_total:
        count = min(spec.chunk, r_total - start)
        values = sampler.sample_many(count, start=start)
        w_sup[start:start + count] = np.max(np.abs(values), axis=(1, 2))
        if m == 1:
            blocks = [
                LineIntegralBlock(spec.forms[0]),
                ZetaBlock(spec.forms[0], spec.fields),
            ]
        else:
            blocks = [ChainBlock(spec.forms)] + [
                ZetaBlock(f, spec.fields, name=f"zeta{k + 1}")
                for k, f in enumerate(spec.forms)
            ]
        sol = solve_batch(
            spec.fields, np.asarray(spec.x0), times, values, spec.substeps,
            jacobian=True, inverse=True, aux=blocks,
            record_fine=(m > 1 and spec.substeps > 1),
        )
        sl = slice(start, start + count)
        event[sl] = event_flags(sol.x, spec.event_regions)
        x_flat = sol.x.reshape(-1, n)
        vmat = _mesh_field_matrix(spec.fields, x_flat).reshape(
            count, -1, n, spec.dim
        )
        if m == 1:
            f_vals[sl] = sol.aux["lineint"][:, -1]
            zeta = sol.aux["zeta"]
            eta = zeta[:, -1:, :] - zeta
            row = np.einsum("rtn,rtnk->rtk", eta, sol.phi_inv)
            row += _mesh_form_rows(spec.forms[0], x_flat).reshape(count, -1, n)
            kern = np.einsum("rtk,rtkd->rtd", row, vmat)
        else:
            chain = blocks[0]
            f_vals[sl] = sol.aux["chain"][:, -1, chain.index(1, m)]
            if spec.substeps > 1:
                a_f = sol.fine_aux["chain"]
                zetas = [sol.fine_aux[f"zeta{k + 1}"] for k in range(m)]
                mesh_idx = np.arange(spec.steps + 1) * spec.substeps
            else:
                a_f = sol.aux["chain"]
                zetas = [sol.aux[f"zeta{k + 1}"] for k in range(m)]
                mesh_idx = np.arange(spec.steps + 1)
            g_f, h_f = _g_h_from_chain(chain, a_f, m)
            row = np.zeros((count, spec.steps + 1, n))
            for k in range(1, m + 1):
                gh = g_f[:, :, k - 1] * h_f[:, :, k - 1]      # (R, Nf)
                mid = 0.5 * (gh[:, 1:] + gh[:, :-1])
                dz = np.diff(zetas[k - 1], axis=1)            # (R, Nf-1, n)
                cum = np.zeros_like(zetas[k - 1])
                np.cumsum(mid[:, :, None] * dz, axis=1, out=cum[:, 1:])
                tail = cum[:, -1:, :] - cum[:, mesh_idx, :]
                row += np.einsum("rtn,rtnk->rtk", tail, sol.phi_inv)
                row += gh[:, mesh_idx, None] * _mesh_form_rows(
                    spec.forms[k - 1], x_flat
                ).reshape(count, -1, n)
            kern = np.einsum("rtk,rtkd->rtd", row, vmat)
        k_sup[sl] = np.max(np.abs(kern), axis=(1, 2))
        start += count

    return SampleSet(
        f_values=f_vals, event=event, kernel_sup=k_sup, driver_sup=w_sup, spec=spec
    )


def atom_test(samples: np.ndarray, atom_tol: float) -> list:
    """Clusters of width ``atom_tol`` carrying mass above 3/sqrt(N).

    Greedy: repeatedly take the heaviest window of the sorted samples,
    remove it, and continue while the window mass stays significant.
    Returns (value, mass) pairs, heaviest first.
    """
    s = np.sort(np.asarray(samples, dtype=float))
    n_total = s.shape[0]
    if n_total < 30:
        raise ValueError("atom detection needs at least 30 samples")
    threshold = 3.0 / np.sqrt(n_total)
    out = []
    while s.size:
        right = np.searchsorted(s, s + atom_tol, side="right")
        counts = right - np.arange(s.size)
        best = int(np.argmax(counts))
        mass = counts[best] / n_total
        if mass <= threshold:
            break
        lo, hi = best, int(right[best])
        out.append((float(np.mean(s[lo:hi])), float(mass)))
        s = np.concatenate([s[:lo], s[hi:]])
    return out


def kernel_vanishing_rate(samples: SampleSet, kernel_tol: Optional[float] = None) -> float:
    """Fraction of conditional replicates whose kernel sup-norm is below
    tolerance (relative to each replicate's driver sup-norm)."""
    rel = samples.spec.kernel_tol if kernel_tol is None else kernel_tol
    mask = samples.event
    if not mask.any():
        return float("nan")
    thresh = rel * np.maximum(samples.driver_sup[mask], 1.0)
    return float(np.mean(samples.kernel_sup[mask] <= thresh))


def consalldeg_residual(
    traj: Trajectory, form: OneForm, word: Word
) -> np.ndarray:
    """Time series of ((zeta_T - zeta_t) PhiInv + phi) . V_I + psi_I.

    Along a driver where the integral's derivative vanishes this residual
    is forced to zero for every word; for generic drivers it is O(1), which
    makes it a usable degeneracy diagnostic.  For single-letter words it
    reproduces the corresponding derivative-kernel column.
    """
    if traj.phi_inv is None:
        raise ValueError("solve the trajectory with inverse=True")
    fields = traj.fields
    sol = reintegrate(traj, [ZetaBlock(form, fields)])
    zeta = sol.aux["zeta"][0]
    eta = zeta[-1] - zeta
    row = np.einsum("tn,tnk->tk", eta, traj.phi_inv)
    row += _mesh_form_rows(form, traj.x)
    v_i = bracket_of_word(fields, word)
    vi_vals = np.array([v_i(p) for p in traj.x])
    psi = psi_table(form, fields, [word])[word]
    psi_vals = np.array([evaluate(psi, p) for p in traj.x])
    return np.einsum("tk,tk->t", row, vi_vals) + psi_vals


def exactform_pair_experiment(functions: Sequence, spec: ExperimentSpec) -> SampleSet:
    """Iterated integral of exact forms df_1 ... df_m with a common support.

    Requires the consecutive wedge products df_k ^ df_{k+1} to be linearly
    independent at x0 (checked numerically, :class:`IndependenceFailure`
    otherwise), then samples the iterated integral and applies the atom
    diagnostics through the returned sample set.
    """
    from .expr import parse, as_expr
    from .geometry import gradient_form

    funcs = [parse(f) if isinstance(f, str) else as_expr(f) for f in functions]
    if len(funcs) < 2:
        raise ValueError("need at least two functions")
    n = len(spec.x0)
    grads = [
        np.array([evaluate(diff(f, i + 1), spec.x0) for i in range(n)]) for f in funcs
    ]
    wedges = []
    for k in range(len(funcs) - 1):
        a = np.outer(grads[k], grads[k + 1]) - np.outer(grads[k + 1], grads[k])
        wedges.append(a[np.triu_indices(n, k=1)])
    stack = np.stack(wedges)
    svals = np.linalg.svd(stack, compute_uv=False)
    rank = int(np.sum(svals > 1e-10 * max(svals[0], 1e-300)))
    if rank < len(funcs) - 1:
        raise IndependenceFailure(
            f"wedge rank {rank} < {len(funcs) - 1} at x0 (singular values {svals})"
        )
    forms = tuple(gradient_form(f, n) for f in funcs)
    inner = ExperimentSpec(
        fields=spec.fields,
        x0=spec.x0,
        forms=forms,
        hurst=spec.hurst,
        horizon=spec.horizon,
        steps=spec.steps,
        substeps=spec.substeps,
        event_regions=spec.event_regions,
        replicates=spec.replicates,
        master_seed=spec.master_seed,
        atom_tol=spec.atom_tol,
        kernel_tol=spec.kernel_tol,
        chunk=spec.chunk,
    )
    return run_conditional_samples(inner)
