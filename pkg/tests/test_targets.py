import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clusternet.targets import (
    Heatmap,
    default_seg_threshold,
    gaussian_sum,
    grid_dims,
    make_heatmap,
    make_segmentation,
)


def test_grid_dims():
    assert grid_dims((512, 512), 4) == (32, 32)
    assert grid_dims((128, 128), 1) == (64, 64)
    assert grid_dims((130, 129), 1) == (65, 65)


def test_single_point_peak_sits_at_half_coordinates():
    h = make_heatmap(np.array([[40.0, 60.0]]), (128, 128), d=1, sigma=2.0)
    assert h.values.shape == (64, 64)
    r, c = np.unravel_index(np.argmax(h.values), h.values.shape)
    assert (r, c) == (30, 20)
    assert h.values.max() == pytest.approx(h.peak)
    assert h.unit().max() == pytest.approx(1.0)


def heatmap_property_suite(n=200, seed=0):
    """Worst deviations for clip bound, unit mass and translation equivariance."""
    r = np.random.default_rng(seed)
    worst_clip, worst_mass, worst_shift = 0.0, 0.0, 0.0
    for _ in range(n):
        d = int(r.integers(0, 3))
        sigma = float(r.uniform(1.0, 3.0))
        # clip bound under heavy overlap, with sigma small enough that sums exceed 1
        pts = r.uniform(30, 34, size=(int(r.integers(5, 40)), 2))
        h = make_heatmap(pts, (64, 64), d, 0.3)
        worst_clip = max(worst_clip, float(h.values.max()) - 1.0)
        # one interior point carries unit mass
        s = 2**d
        p = r.uniform(20 * s, 40 * s, size=(1, 2))
        mass = gaussian_sum(p, (64, 64), sigma, scale=s).sum()
        worst_mass = max(worst_mass, abs(mass - 1.0))
        # shifting points by whole cells shifts the map by the same cells
        q = r.uniform(25 * s, 39 * s, size=(3, 2))  # tails stay on the grid after the shift
        dy, dx = (int(v) for v in r.integers(-5, 6, size=2))
        a = make_heatmap(q, (64 * s, 64 * s), d, sigma).values
        b = make_heatmap(q + np.array([dx, dy]) * s, (64 * s, 64 * s), d, sigma).values
        worst_shift = max(worst_shift, float(np.abs(np.roll(a, (dy, dx), axis=(0, 1)) - b).max()))
    return worst_clip, worst_mass, worst_shift


def test_heatmap_properties():
    clip, mass, shift = heatmap_property_suite(40)
    assert clip <= 0.0
    assert mass < 1e-3
    assert shift < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 127), st.floats(0, 127)), max_size=12),
       st.floats(0.3, 4.0), st.integers(0, 3))
def test_heatmap_is_bounded_and_nonnegative(pts, sigma, d):
    h = make_heatmap(np.array(pts).reshape(-1, 2), (128, 128), d, sigma)
    assert h.values.min() >= 0.0
    assert h.values.max() <= 1.0
    assert 0.0 <= h.unit().min() and h.unit().max() <= 1.0


def test_empty_points_give_zero_map():
    h = make_heatmap(np.zeros((0, 2)), (64, 48), 2, 1.0)
    assert h.values.shape == (16, 12) and not h.values.any()


def test_invalid_arguments():
    with pytest.raises(ValueError):
        make_heatmap(np.zeros((1, 2)), (8, 8), 1, 0.0)
    with pytest.raises(ValueError):
        make_heatmap(np.zeros((1, 2)), (8, 8), -1, 1.0)
    with pytest.raises(ValueError):
        make_segmentation(make_heatmap(np.zeros((1, 2)), (8, 8), 0, 1.0), tau=1.0)


def test_segmentation_threshold():
    h = make_heatmap(np.array([[16.0, 16.0]]), (32, 32), 0, 2.0)
    seg = make_segmentation(h)
    assert seg.dtype == np.uint8 and set(np.unique(seg)) == {0, 1}
    assert seg[16, 16] == 1 and seg[0, 0] == 0
    # the default threshold is a quarter of the peak: radius sqrt(2 ln 4) sigma
    assert seg.sum() == np.count_nonzero(h.values >= default_seg_threshold(2.0))


def test_normalized_heatmap_unit_is_identity():
    v = np.array([[0.2, 1.4], [-0.1, 0.5]])
    np.testing.assert_array_equal(Heatmap(v, 1, 2.0, normalized=True).unit(), np.clip(v, 0, 1))
