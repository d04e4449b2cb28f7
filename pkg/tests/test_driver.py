import io
import math

import numpy as np
import pytest

from linesig import driver as drv
from linesig.driver import (
    DriverPath,
    FbmSampler,
    FbmSpec,
    MeshMismatch,
    reverse_path,
    sample_fbm,
    shift,
    smooth_driver,
    subpath_from,
    uniform_mesh,
)


def test_spec_validation():
    with pytest.raises(ValueError):
        FbmSpec(hurst=0.2, horizon=1.0, steps=8, seed=0)
    with pytest.raises(ValueError):
        FbmSpec(hurst=1.0, horizon=1.0, steps=8, seed=0)
    with pytest.raises(ValueError):
        FbmSpec(hurst=0.5, horizon=0.0, steps=8, seed=0)
    with pytest.raises(ValueError):
        FbmSpec(hurst=0.5, horizon=1.0, steps=0, seed=0)


def test_reproducibility_bitwise():
    spec = FbmSpec(hurst=0.7, horizon=2.0, steps=64, seed=42, dim=3)
    a = sample_fbm(spec)
    b = sample_fbm(spec)
    assert np.array_equal(a.values, b.values)
    assert a.values[0].tolist() == [0.0, 0.0, 0.0]


def test_sample_many_matches_individual():
    sampler = FbmSampler(FbmSpec(hurst=0.4, horizon=1.0, steps=32, seed=5, dim=2))
    batch = sampler.sample_many(6, start=2)
    for i in range(6):
        assert np.array_equal(batch[i], sampler.sample_values(2 + i))


def test_single_step_variance():
    spec = FbmSpec(hurst=0.65, horizon=1.7, steps=1, seed=1, dim=1)
    sampler = FbmSampler(spec)
    vals = sampler.sample_many(4000)[:, 1, 0]
    want = spec.horizon ** (2 * spec.hurst)
    se = want * math.sqrt(2.0 / 4000)
    assert abs(np.var(vals) - want) < 3 * se


def test_brownian_covariance():
    spec = FbmSpec(hurst=0.5, horizon=1.0, steps=8, seed=3, dim=1)
    sampler = FbmSampler(spec)
    vals = sampler.sample_many(10_000)[:, :, 0]
    t = sampler.times
    for j, k in [(2, 5), (3, 3), (1, 7)]:
        emp = np.mean(vals[:, j] * vals[:, k])
        want = min(t[j], t[k])
        # var of the product of two correlated gaussians, rough bound
        se = math.sqrt((t[j] * t[k] + want**2) / 10_000)
        assert abs(emp - want) < 3 * se


def test_fbm_variance_function():
    spec = FbmSpec(hurst=0.75, horizon=1.0, steps=8, seed=9, dim=1)
    vals = FbmSampler(spec).sample_many(10_000)[:, :, 0]
    t = FbmSampler(spec).times
    for j in (2, 4, 8):
        want = t[j] ** (2 * spec.hurst)
        se = want * math.sqrt(2.0 / 10_000)
        assert abs(np.var(vals[:, j]) - want) < 3 * se


def test_self_similarity():
    # time scaled by c, values by c^H: increment variances agree
    h = 0.6
    c = 4.0
    base = FbmSampler(FbmSpec(hurst=h, horizon=1.0, steps=16, seed=11, dim=1))
    scaled = FbmSampler(FbmSpec(hurst=h, horizon=c, steps=16, seed=12, dim=1))
    v1 = np.diff(base.sample_many(8000)[:, :, 0], axis=1).var(axis=0)
    v2 = np.diff(scaled.sample_many(8000)[:, :, 0], axis=1).var(axis=0)
    ratio = v2 / v1
    se = 3 * math.sqrt(2.0 / 8000) * c ** (2 * h)
    assert np.all(np.abs(ratio - c ** (2 * h)) < se)


def test_gaussianity_sanity():
    spec = FbmSpec(hurst=0.35, horizon=1.0, steps=4, seed=21, dim=1)
    inc = np.diff(FbmSampler(spec).sample_many(10_000)[:, :, 0], axis=1).reshape(-1)
    z = inc / inc.std()
    n = z.size
    skew = np.mean(z**3)
    kurt = np.mean(z**4)
    assert abs(skew) < 3 * math.sqrt(6.0 / n)
    assert abs(kurt - 3.0) < 3 * math.sqrt(24.0 / n)


def test_shift_roundtrip():
    mesh = uniform_mesh(1.0, 32)
    w = smooth_driver(["t^2", "sin(3*t)"], mesh)
    h = smooth_driver(["t", "t*(1-t)"], mesh)
    assert np.array_equal(shift(w, h, 0.0).values, w.values)
    doubled = shift(w, w, 1.0)
    assert np.allclose(doubled.values, 2 * w.values)
    back = shift(shift(w, h, 0.25), h, -0.25)
    assert np.max(np.abs(back.values - w.values)) < 1e-15


def test_shift_mesh_mismatch():
    w = smooth_driver(["t"], uniform_mesh(1.0, 32))
    h = smooth_driver(["t"], uniform_mesh(1.0, 16))
    with pytest.raises(MeshMismatch):
        shift(w, h, 0.1)


def test_smooth_driver_requires_t_only():
    with pytest.raises(ValueError):
        smooth_driver(["t + y"], uniform_mesh(1.0, 4))


def test_smooth_driver_shapes():
    mesh = uniform_mesh(1.0, 100)
    loop = smooth_driver(
        ["cos(6.283185307179586*t) - 1", "sin(6.283185307179586*t)"], mesh
    )
    assert loop.dim == 2
    assert np.max(np.abs(loop.values[-1] - loop.values[0])) < 1e-12
    const = smooth_driver(["0", "0"], mesh)
    assert np.all(const.values == 0.0)
    line = smooth_driver(["t", "2*t"], mesh)
    assert np.allclose(line.values[-1], [1.0, 2.0])


def test_origin_start_enforced():
    with pytest.raises(ValueError):
        DriverPath(times=np.array([0.0, 1.0]), values=np.array([[1.0], [2.0]]))


def test_csv_roundtrip():
    w = sample_fbm(FbmSpec(hurst=0.5, horizon=1.0, steps=16, seed=2, dim=2))
    buf = io.StringIO()
    w.to_csv(buf)
    buf.seek(0)
    back = DriverPath.from_csv(buf)
    assert np.array_equal(back.values, w.values)
    assert np.array_equal(back.times, w.times)


def test_subpath_and_reverse():
    w = sample_fbm(FbmSpec(hurst=0.5, horizon=1.0, steps=16, seed=2, dim=2))
    sub = subpath_from(w, 5)
    assert np.all(sub.values[0] == 0.0)
    assert np.allclose(
        np.diff(sub.values, axis=0), np.diff(w.values[5:], axis=0), atol=1e-15
    )
    rev = reverse_path(w)
    assert np.all(rev.values[0] == 0.0)
    assert np.array_equal(rev.times, w.times)
