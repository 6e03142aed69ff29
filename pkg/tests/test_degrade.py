"""Degradation operator: blur, decimation, exact adjoint, noise."""

import math

import numpy as np
import pytest

from voxsr import (
    ConfigError,
    DegradationOp,
    Grid3,
    GridError,
    Volume3,
    add_noise,
    blur,
    blur_adjoint,
    downsample,
    downsample_adjoint,
)

from conftest import rand_array, rand_volume

FACTORS = (1.25, 1.5, 1.75, 2.0)


def ramp_volume(n, axis="x", spacing=1.0):
    grid = Grid3(n, n, n, spacing, spacing, spacing)
    idx = {"x": 2, "y": 1, "z": 0}[axis]
    shape = [1, 1, 1]
    shape[idx] = n
    data = np.broadcast_to(
        np.arange(n, dtype=np.float32).reshape(shape), (n, n, n)
    ).copy()
    return Volume3(grid, data)


class TestDegradationOp:
    def test_default_sigma_tracks_factor(self):
        assert DegradationOp(factor=2.0).blur_sigma_vox == (0.5, 0.5, 0.5)
        assert DegradationOp(factor=1.0).blur_sigma_vox == (0.0, 0.0, 0.0)

    @pytest.mark.parametrize("factor", [0.5, 0.99, 4.01, float("nan")])
    def test_factor_bounds(self, factor):
        with pytest.raises(ConfigError):
            DegradationOp(factor=factor)

    def test_negative_sigma_rejected(self):
        with pytest.raises(ConfigError):
            DegradationOp(factor=2.0, blur_sigma_vox=(-0.1, 0.5, 0.5))

    def test_negative_variance_rejected(self):
        with pytest.raises(ConfigError):
            DegradationOp(factor=2.0, noise_variance=-1.0)


class TestBlur:
    def test_zero_sigma_is_identity(self, vol8):
        assert np.array_equal(blur(vol8, (0.0, 0.0, 0.0)).data, vol8.data)

    def test_constant_preserved(self):
        v = Volume3(Grid3(7, 7, 7, 1, 1, 1), np.full((7, 7, 7), 3.25, dtype=np.float32))
        out = blur(v, 1.2)
        np.testing.assert_allclose(out.data, 3.25, rtol=1e-6)

    def test_center_spike_equals_kernel_product(self):
        # unit spike in 9^3 with sigma 1: the center output value is the
        # product of the three 1D normalized center weights
        sigma = 1.0
        r = int(math.ceil(3.0 * sigma))
        taps = np.exp(-0.5 * (np.arange(-r, r + 1) / sigma) ** 2)
        w0 = taps[r] / taps.sum()
        data = np.zeros((9, 9, 9), dtype=np.float32)
        data[4, 4, 4] = 1.0
        out = blur(Volume3(Grid3(9, 9, 9, 1, 1, 1), data), sigma)
        assert out.data[4, 4, 4] == pytest.approx(w0 ** 3, rel=1e-6)

    def test_blur_adjoint_dot_product(self):
        u = rand_volume(9, seed=1)
        v = rand_volume(9, seed=2)
        sigma = (0.8, 1.1, 0.6)
        lhs = float(np.dot(blur(u, sigma).data.ravel().astype(np.float64),
                           v.data.ravel().astype(np.float64)))
        rhs = float(np.dot(u.data.ravel().astype(np.float64),
                           blur_adjoint(v, sigma).data.ravel().astype(np.float64)))
        assert lhs == pytest.approx(rhs, rel=1e-5)


class TestDownsample:
    def test_identity_operator(self):
        v = rand_volume(8, seed=5)
        out = downsample(v, DegradationOp(factor=1.0))
        assert out.grid == v.grid
        assert np.array_equal(out.data, v.data)

    def test_constant_preserved(self):
        v = Volume3(Grid3(12, 12, 12, 1, 1, 1), np.full((12, 12, 12), 7.5, dtype=np.float32))
        for f in FACTORS:
            out = downsample(v, DegradationOp(factor=f))
            np.testing.assert_allclose(out.data, 7.5, rtol=1e-6)

    def test_ramp_factor2_hits_half_integer_centers(self):
        # LR center i maps to HR coordinate (i + 0.5)*2 - 0.5 on a ramp v=i
        v = ramp_volume(8, "x")
        out = downsample(v, DegradationOp(factor=2.0, blur_sigma_vox=(0, 0, 0)))
        assert out.grid.counts == (4, 4, 4)
        np.testing.assert_allclose(out.data[0, 0, :], [0.5, 2.5, 4.5, 6.5], atol=1e-6)

    def test_output_spacing_scales_by_factor(self):
        v = rand_volume(12, seed=3, spacing=1.5)
        out = downsample(v, DegradationOp(factor=2.0))
        assert out.grid.spacing == (3.0, 3.0, 3.0)

    def test_dims_floor_and_minimum(self):
        v = rand_volume(12, seed=3)
        assert downsample(v, DegradationOp(factor=1.75)).grid.counts == (6, 6, 6)
        tiny = rand_volume(4, seed=3)
        with pytest.raises(GridError):
            downsample(tiny, DegradationOp(factor=3.0))

    def test_linearity(self):
        op = DegradationOp(factor=1.5)
        u, v = rand_volume(9, seed=7), rand_volume(9, seed=8)
        a, b = 1.7, -0.6
        mixed = Volume3(u.grid, a * u.data + b * v.data)
        lhs = downsample(mixed, op).data
        rhs = a * downsample(u, op).data + b * downsample(v, op).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-4)


class TestAdjoint:
    @pytest.mark.parametrize("factor", FACTORS)
    def test_dot_product_identity(self, factor):
        op = DegradationOp(factor=factor)
        hr = rand_volume(12, seed=int(factor * 100), lo=-50, hi=50)
        lr = downsample(hr, op)
        g = Volume3(lr.grid, rand_array(lr.grid.shape_zyx, seed=99, lo=-1, hi=1))
        by_g = float(np.dot(lr.data.ravel().astype(np.float64),
                            g.data.ravel().astype(np.float64)))
        y_btg = float(np.dot(hr.data.ravel().astype(np.float64),
                             downsample_adjoint(g, op, hr.grid).data.ravel().astype(np.float64)))
        denom = float(np.linalg.norm(lr.data) * np.linalg.norm(g.data))
        assert abs(by_g - y_btg) / denom < 1e-5

    def test_identity_operator_is_self_adjoint(self):
        op = DegradationOp(factor=1.0)
        v = rand_volume(8, seed=13)
        out = downsample_adjoint(v, op, v.grid)
        assert np.array_equal(out.data, v.data)

    def test_ones_scatter_sums_to_lr_voxel_count(self):
        # columns of the interpolation matrix form a partition of unity, so
        # scattering all-ones back must conserve total mass
        op = DegradationOp(factor=1.5, blur_sigma_vox=(0, 0, 0))
        hr_grid = Grid3(12, 12, 12, 1, 1, 1)
        lr = downsample(Volume3(hr_grid, np.ones((12, 12, 12), dtype=np.float32)), op)
        ones = Volume3(lr.grid, np.ones(lr.grid.shape_zyx, dtype=np.float32))
        back = downsample_adjoint(ones, op, hr_grid)
        assert float(back.data.sum()) == pytest.approx(lr.grid.n_voxels, rel=1e-6)

    def test_grid_mismatch_rejected(self):
        op = DegradationOp(factor=2.0)
        wrong = rand_volume(5, seed=1)
        with pytest.raises(GridError):
            downsample_adjoint(wrong, op, Grid3(12, 12, 12, 1, 1, 1))


class TestNoise:
    def test_zero_variance_identity(self, vol8):
        out = add_noise(vol8, 0.0, seed=1)
        assert np.array_equal(out.data, vol8.data)

    def test_sample_variance_matches(self):
        n = 100
        grid = Grid3(n, n, 100, 1, 1, 1)
        v = Volume3(grid, np.zeros((100, n, n), dtype=np.float32))
        out = add_noise(v, 4.0, seed=7)
        sample_var = float(out.data.astype(np.float64).var())
        assert abs(sample_var - 4.0) / 4.0 < 0.02

    def test_same_seed_bitwise(self, vol8):
        a = add_noise(vol8, 2.5, seed=42)
        b = add_noise(vol8, 2.5, seed=42)
        assert np.array_equal(a.data, b.data)
        c = add_noise(vol8, 2.5, seed=43)
        assert not np.array_equal(a.data, c.data)


class TestDeterminism:
    def test_full_operator_reproducible(self):
        op = DegradationOp(factor=1.75, noise_variance=1.0, seed=5)
        v = rand_volume(12, seed=20)
        a = add_noise(downsample(v, op), op.noise_variance, op.seed)
        b = add_noise(downsample(v, op), op.noise_variance, op.seed)
        assert np.array_equal(a.data, b.data)
