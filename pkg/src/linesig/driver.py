"""Driving paths: exact fractional Brownian samples and smooth test drivers.

All drivers are piecewise-linear paths on a time mesh, starting at the
origin.  Fractional Brownian motion is sampled exactly on the mesh through a
Cholesky factor of the increment covariance

    Cov(dB_j, dB_k) = (|t_{j+1}-t_k|^{2H} + |t_j-t_{k+1}|^{2H}
                       - |t_j-t_k|^{2H} - |t_{j+1}-t_{k+1}|^{2H}) / 2,

which costs O(N^2) memory and O(N^3) once per (H, T, N) request; fine for the desk
scale N <= 2^12 this package targets.  Replicate r draws its Gaussians from
an independent generator seeded by (seed, spawn_key=(r,)), so ensembles do
not depend on how work is chunked or ordered.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .expr import compile_expr, dimension, parse

__all__ = [
    "DriverPath",
    "FbmSpec",
    "FbmSampler",
    "MeshMismatch",
    "fbm_increment_covariance",
    "replicate_rng",
    "reverse_path",
    "sample_fbm",
    "shift",
    "smooth_driver",
    "subpath_from",
    "uniform_mesh",
]


class MeshMismatch(ValueError):
    pass


def uniform_mesh(horizon: float, steps: int) -> np.ndarray:
    if horizon <= 0 or steps < 1:
        raise ValueError("need horizon > 0 and steps >= 1")
    return np.linspace(0.0, float(horizon), steps + 1)


@dataclass(frozen=True)
class DriverPath:
    """Piecewise-linear path on a mesh; values[0] must be the origin."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if times.ndim != 1 or values.shape[0] != times.shape[0]:
            raise ValueError("times and values must share the mesh length")
        if not np.all(np.diff(times) > 0):
            raise ValueError("times must be strictly increasing")
        if not (np.isfinite(times).all() and np.isfinite(values).all()):
            raise ValueError("non-finite driver data")
        if np.max(np.abs(values[0])) > 1e-9:
            raise ValueError("drivers start at the origin")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def steps(self) -> int:
        return self.times.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def to_csv(self, target) -> None:
        header = "t," + ",".join(f"w{i + 1}" for i in range(self.dim))
        rows = [header]
        for t, row in zip(self.times, self.values):
            rows.append(",".join(repr(float(v)) for v in (t, *row)))
        text = "\n".join(rows) + "\n"
        if hasattr(target, "write"):
            target.write(text)
        else:
            with open(target, "w") as fh:
                fh.write(text)

    @classmethod
    def from_csv(cls, source) -> "DriverPath":
        if hasattr(source, "read"):
            text = source.read()
        else:
            with open(source) as fh:
                text = fh.read()
        lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        data = np.loadtxt(io.StringIO("\n".join(lines[1:])), delimiter=",", ndmin=2)
        return cls(times=data[:, 0], values=data[:, 1:])


def _same_mesh(a: DriverPath, b: DriverPath) -> bool:
    return a.times.shape == b.times.shape and np.max(np.abs(a.times - b.times)) <= 1e-12


def shift(path: DriverPath, h: DriverPath, eps: float) -> DriverPath:
    """The shifted driver path + eps * h on the common mesh."""
    if not _same_mesh(path, h) or path.dim != h.dim:
        raise MeshMismatch("shift requires identical meshes and dimensions")
    return DriverPath(times=path.times, values=path.values + eps * h.values)


def smooth_driver(formulas: Sequence, times: np.ndarray) -> DriverPath:
    """Sample deterministic coordinate formulas of t on a mesh.

    Formulas must vanish at the initial time (drivers start at the origin).
    """
    times = np.asarray(times, dtype=float)
    cols = (times,)
    comps = []
    for f in formulas:
        e = parse(f) if isinstance(f, str) else f
        if dimension(e) > 1:
            raise ValueError("smooth driver formulas depend on t only")
        comps.append(np.broadcast_to(np.asarray(compile_expr(e)(cols), float), times.shape))
    values = np.column_stack(comps)
    return DriverPath(times=times, values=values - values[0])


def subpath_from(path: DriverPath, index: int) -> DriverPath:
    """Restriction to [t_index, T], rebased to start at the origin.

    Only increments matter to the differential equations, so the rebasing is
    harmless and keeps the origin-start invariant.
    """
    return DriverPath(
        times=path.times[index:], values=path.values[index:] - path.values[index]
    )


def reverse_path(path: DriverPath) -> DriverPath:
    """Time reversal on the same mesh, rebased to start at the origin."""
    values = path.values[::-1] - path.values[-1]
    t = path.times
    times = t[0] + (t[-1] - t[::-1])
    return DriverPath(times=times, values=values)


@dataclass(frozen=True)
class FbmSpec:
    """Exact-simulation request: Hurst index in (1/4, 1), horizon, mesh size,
    seed and dimension (independent coordinates)."""

    hurst: float
    horizon: float
    steps: int
    seed: int
    dim: int = 1

    def __post_init__(self):
        if not (0.25 < self.hurst < 1.0):
            raise ValueError("hurst must lie in (1/4, 1)")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")


def fbm_increment_covariance(hurst: float, times: np.ndarray) -> np.ndarray:
    """Covariance matrix of the mesh increments of one fBm coordinate."""
    t = np.asarray(times, dtype=float)
    lo, hi = t[:-1], t[1:]
    two_h = 2.0 * hurst

    def r(a, b):
        return np.abs(a[:, None] - b[None, :]) ** two_h

    return 0.5 * (r(hi, lo) + r(lo, hi) - r(lo, lo) - r(hi, hi))


def replicate_rng(master_seed: int, index: int) -> np.random.Generator:
    """Independent generator for one replicate; order and chunking agnostic."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(index,)))


class FbmSampler:
    """Reusable exact sampler; the Cholesky factor is computed once."""

    def __init__(self, spec: FbmSpec):
        self.spec = spec
        self.times = uniform_mesh(spec.horizon, spec.steps)
        cov = fbm_increment_covariance(spec.hurst, self.times)
        try:
            self._chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(
                f"increment covariance factorisation failed for H={spec.hurst}, "
                f"N={spec.steps}: {exc}"
            ) from exc

    def sample(self, replicate: int = 0) -> DriverPath:
        return DriverPath(times=self.times, values=self.sample_values(replicate))

    def sample_values(self, replicate: int = 0) -> np.ndarray:
        """(N+1, d) array of one replicate's path values."""
        rng = replicate_rng(self.spec.seed, replicate)
        z = rng.standard_normal((self.spec.steps, self.spec.dim))
        inc = self._chol @ z
        out = np.zeros((self.spec.steps + 1, self.spec.dim))
        np.cumsum(inc, axis=0, out=out[1:])
        return out

    def sample_many(self, count: int, start: int = 0) -> np.ndarray:
        """(count, N+1, d) array; replicate r is identical however batched."""
        out = np.empty((count, self.spec.steps + 1, self.spec.dim))
        for r in range(count):
            out[r] = self.sample_values(start + r)
        return out


def sample_fbm(spec: FbmSpec) -> DriverPath:
    """One exact fBm path on the uniform mesh (replicate 0 of the seed)."""
    return FbmSampler(spec).sample(0)
