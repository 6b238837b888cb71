import numpy as np
import pytest
from hypothesis import given, strategies as st

from convframelet.errors import InvalidArgumentError
from convframelet.image_core import (
    Image,
    SubbandStack,
    average_patches,
    coverage_counts,
    extract_patches,
    patch_grid,
)


def brute_force_coverage(dims, patch, stride):
    counts = np.zeros(dims, dtype=int)
    for r0 in range(0, dims[0], stride):
        for c0 in range(0, dims[1], stride):
            for a in range(patch[0]):
                for b in range(patch[1]):
                    counts[(r0 + a) % dims[0], (c0 + b) % dims[1]] += 1
    return counts


def test_image_rejects_non_finite():
    with pytest.raises(InvalidArgumentError):
        Image(np.array([[1.0, np.nan]]))


def test_image_metadata():
    img = Image(np.arange(6.0).reshape(2, 3))
    assert (img.height, img.width) == (2, 3)
    assert img.value_range == (0.0, 5.0)
    assert not img.data.flags.writeable


def test_stack_band_access():
    s = SubbandStack(np.zeros((3, 4, 5)))
    assert s.band_count == 3
    assert s.dims == (4, 5)
    assert s.band(1).shape == (4, 5)


def test_single_patch_equals_image():
    x = np.arange(16.0).reshape(4, 4)
    ps = extract_patches(x, (4, 4), 4)
    assert len(ps.locations) == 1
    np.testing.assert_array_equal(ps.patches[0, 0], x)


def test_exact_tiling():
    x = np.arange(16.0).reshape(4, 4)
    ps = extract_patches(x, (2, 2), 2)
    assert ps.locations == ((0, 0), (0, 2), (2, 0), (2, 2))
    np.testing.assert_array_equal(ps.patches[3, 0], x[2:, 2:])
    np.testing.assert_array_equal(coverage_counts((4, 4), (2, 2), 2), np.ones((4, 4)))


def test_coverage_matches_footprint_enumeration():
    counts = coverage_counts((6, 6), (4, 4), 2)
    np.testing.assert_array_equal(counts, brute_force_coverage((6, 6), (4, 4), 2))


def test_mean_of_two_overlapping_patches():
    ps = extract_patches(np.zeros((4, 4)), (4, 4), 2)
    # grid (0,0),(0,2),(2,0),(2,2): every pixel is covered four times
    vals = np.array([1.0, 3.0, 1.0, 3.0])[:, None, None, None] * np.ones_like(ps.patches)
    out = average_patches(ps.with_patches(vals)).bands[0]
    np.testing.assert_allclose(out, 2.0)


def test_constant_offset_oracle(rng):
    x = rng.standard_normal((2, 20, 17))
    ps = extract_patches(x, (8, 8), 3)
    out = average_patches(ps.with_patches(ps.patches + 0.7)).bands
    np.testing.assert_allclose(out, x + 0.7, rtol=0, atol=1e-12)


def test_linear_in_patch_values(rng):
    ps = extract_patches(rng.standard_normal((1, 12, 12)), (5, 5), 2)
    a = rng.standard_normal(ps.patches.shape)
    b = rng.standard_normal(ps.patches.shape)
    lhs = average_patches(ps.with_patches(2 * a - 3 * b)).bands
    rhs = 2 * average_patches(ps.with_patches(a)).bands - 3 * average_patches(ps.with_patches(b)).bands
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_direct_accumulation_oracle(rng):
    dims = (11, 9)
    ps = extract_patches(np.zeros((1,) + dims), (4, 3), 2)
    vals = rng.standard_normal(ps.patches.shape)
    acc = np.zeros(dims)
    cnt = np.zeros(dims)
    for (r0, c0), patch in zip(ps.locations, vals):
        for a in range(4):
            for b in range(3):
                acc[(r0 + a) % 11, (c0 + b) % 9] += patch[0, a, b]
                cnt[(r0 + a) % 11, (c0 + b) % 9] += 1
    np.testing.assert_allclose(average_patches(ps.with_patches(vals)).bands[0], acc / cnt, atol=1e-13)


def test_patch_larger_than_image_wraps():
    x = np.arange(9.0).reshape(3, 3)
    ps = extract_patches(x, (5, 5), 1)
    np.testing.assert_allclose(average_patches(ps).bands[0], x, atol=1e-12)


def test_non_circular_grid_covers_edges():
    locs = patch_grid((10, 10), (4, 4), 4, circular=False)
    assert (6, 6) in locs
    x = np.random.default_rng(0).standard_normal((10, 10))
    ps = extract_patches(x, (4, 4), 4, circular=False)
    np.testing.assert_allclose(average_patches(ps).bands[0], x, atol=1e-12)


@pytest.mark.parametrize("size,stride", [((0, 2), 1), ((2, 2), 0), ((2, -1), 1)])
def test_invalid_patch_arguments(size, stride):
    with pytest.raises(InvalidArgumentError):
        extract_patches(np.zeros((4, 4)), size, stride)


def test_empty_patch_set_rejected():
    ps = extract_patches(np.zeros((4, 4)), (2, 2), 2)
    empty = type(ps)(ps.patch_size, ps.stride, (), np.zeros((0, 1, 2, 2)), ps.source_dims)
    with pytest.raises(InvalidArgumentError):
        average_patches(empty)


@given(
    h=st.integers(4, 14), w=st.integers(4, 14),
    ph=st.integers(1, 6), pw=st.integers(1, 6),
    data=st.data(),
)
def test_round_trip_identity(h, w, ph, pw, data):
    stride = data.draw(st.integers(1, min(ph, pw)))
    x = np.random.default_rng(h * 100 + w).standard_normal((2, h, w))
    ps = extract_patches(x, (ph, pw), stride)
    np.testing.assert_allclose(average_patches(ps).bands, x, rtol=1e-12, atol=1e-12)
    # same location in every band
    for loc, patch in zip(ps.locations, ps.patches):
        rows = (loc[0] + np.arange(ph)) % h
        cols = (loc[1] + np.arange(pw)) % w
        np.testing.assert_array_equal(patch, x[:, rows[:, None], cols[None, :]])
