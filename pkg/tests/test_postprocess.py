import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from clusternet.postprocess import (
    DetectionSet,
    components,
    detect,
    extract_detections,
    otsu,
    read_detections_csv,
    write_detections_csv,
)

from oracles import brute_force_otsu, flood_fill_labels


def test_otsu_matches_brute_force():
    r = np.random.default_rng(0)
    for _ in range(30):
        a = np.concatenate([r.normal(r.uniform(0.1, 0.4), 0.05, 300), r.normal(r.uniform(0.6, 0.9), 0.05, 100)])
        a = np.clip(a, 0, 1)
        assert otsu(a) == pytest.approx(brute_force_otsu(a))


def test_otsu_separates_bimodal():
    a = np.r_[np.full(100, 0.1), np.full(50, 0.8)]
    t = otsu(a)
    assert 0.1 < t <= 0.8


def test_otsu_constant_input():
    assert otsu(np.full(10, 0.3)) == 0.3


def component_oracle_suite(n=200, seed=0):
    """Count of random maps where labels differ from the flood-fill oracle."""
    r = np.random.default_rng(seed)
    bad = 0
    for _ in range(n):
        h, w = (int(v) for v in r.integers(1, 40, size=2))
        m = r.random((h, w)) < r.uniform(0.1, 0.7)
        comps = components(m)
        lab, k = flood_fill_labels(m)
        mine = np.zeros((h, w), dtype=np.int32)
        for i, c in enumerate(comps, 1):
            mine[c.ys, c.xs] = i
        if k != len(comps) or not np.array_equal(mine, lab):
            bad += 1
    return bad


def test_components_match_flood_fill(backend):
    assert component_oracle_suite(50) == 0


def test_components_diagonal_is_connected():
    m = np.eye(5, dtype=bool)
    assert len(components(m)) == 1
    c = components(m)[0]
    assert c.area == 5 and c.centroid == (2.0, 2.0) and c.bbox == (0, 0, 5, 5)


def test_small_component_removed_and_elongated_split():
    m = np.zeros((80, 140))
    m[5:10, 5:15] = 1.0  # 50 px: dropped
    m[40:50, 20:120] = 1.0  # 1000 px elongated: split
    m[60:75, 60:75] = 1.0  # 225 px: kept whole
    ds = extract_detections(components(m > 0.5), m, d=0)
    xs = np.sort(ds.xy[:, 0])
    assert not np.any((ds.xy[:, 0] < 20) & (ds.xy[:, 1] < 20))
    elongated = ds.xy[(ds.xy[:, 1] >= 40) & (ds.xy[:, 1] < 50)]
    assert len(elongated) >= 2
    assert np.any(np.isclose(xs, 67.0))


def test_area_filter_counts_input_pixels():
    # 5x5 cells at d=1 is 100 input pixels: kept at min_area 100, dropped at 101
    m = np.zeros((20, 20))
    m[5:10, 5:10] = 1.0
    assert len(extract_detections(components(m > 0), m, d=1, min_area=100)) == 1
    assert len(extract_detections(components(m > 0), m, d=1, min_area=101)) == 0


def test_detect_coordinates_scale_with_d():
    m = np.zeros((32, 32))
    m[10:16, 20:26] = 1.0
    ds, _ = detect(m, d=1, threshold=0.5)
    np.testing.assert_allclose(ds.xy, [[45.0, 25.0]])


def test_detect_on_flat_map_is_empty():
    ds, _ = detect(np.zeros((16, 16)), d=1)
    assert len(ds) == 0


def test_detections_csv_round_trip(tmp_path):
    sets = [DetectionSet(np.array([[1.5, 2.25]]), np.array([0.5]), 3), DetectionSet.empty(4)]
    write_detections_csv(tmp_path / "d.csv", sets)
    back = read_detections_csv(tmp_path / "d.csv")
    assert list(back) == [3]
    np.testing.assert_allclose(back[3].xy, [[1.5, 2.25]])


@settings(max_examples=60, deadline=None)
@given(arrays(bool, st.tuples(st.integers(1, 12), st.integers(1, 12))))
def test_components_partition_foreground(m):
    comps = components(m)
    assert sum(c.area for c in comps) == int(m.sum())
    seen = np.zeros(m.shape, dtype=int)
    for c in comps:
        seen[c.ys, c.xs] += 1
    assert np.array_equal(seen > 0, m) and seen.max(initial=0) <= 1


def test_slightly_oversized_blob_is_not_fragmented():
    yy, xx = np.mgrid[0:60, 0:160]
    m = np.zeros((60, 160))
    for cx in (20, 60):
        m += np.exp(-((xx - cx) ** 2 + (yy - 30) ** 2) / 50.0)
    # one object, 1.4 times longer than the others: its flank is not a second object
    m += np.exp(-((xx - 120) ** 2 / 1.4**2 + (yy - 30) ** 2) / 50.0)
    ds = extract_detections(components(m > 0.3), m, d=0, min_area=10, max_area=200)
    assert len(ds) == 3
    np.testing.assert_allclose(np.sort(ds.xy[:, 0]), [20, 60, 120], atol=1.0)
