import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aprpose.errors import DomainError
from aprpose.lidar import (
    BevConfig, bev_histogram, build_point_features, crop_radius, farthest_point_sample, sample_points,
)
from oracles import bev_cell, fps_bruteforce

RAW = BevConfig(cap=None)


def cloud_of(xyz):
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    return np.concatenate([xyz, np.zeros((len(xyz), 1))], axis=1).astype(np.float32)


def random_cloud(rng, n, scale=10.0):
    return cloud_of(rng.uniform(-scale, scale, (n, 3)))


@pytest.mark.parametrize("p, kept", [((19, 0, 0), True), ((21, 0, 0), False), ((0, 0, 20), True)])
def test_crop_examples(p, kept):
    assert len(crop_radius(cloud_of([p]), 20.0)) == int(kept)


def test_crop_empty_and_idempotent():
    assert crop_radius(np.zeros((0, 4), np.float32)).shape == (0, 4)
    c = random_cloud(np.random.default_rng(0), 500, 30)
    once = crop_radius(c)
    np.testing.assert_array_equal(crop_radius(once), once)
    assert len(once) <= len(c)


def test_fps_line_example():
    c = cloud_of([(0, 0, 0), (1, 0, 0), (2, 0, 0)])
    assert farthest_point_sample(c, 2, start=0).tolist() == [0, 2]
    assert farthest_point_sample(c, 1, start=1).tolist() == [1]


def test_fps_exhaustion_is_permutation():
    c = random_cloud(np.random.default_rng(1), 30)
    assert sorted(farthest_point_sample(c, 30, seed=3).tolist()) == list(range(30))


def test_fps_pads_with_replacement():
    c = random_cloud(np.random.default_rng(2), 5)
    idx = farthest_point_sample(c, 12, seed=4)
    assert len(idx) == 12 and set(idx[:5].tolist()) == set(range(5))
    assert ((idx >= 0) & (idx < 5)).all()
    np.testing.assert_array_equal(idx, farthest_point_sample(c, 12, seed=4))


def test_fps_empty_cloud():
    with pytest.raises(DomainError):
        farthest_point_sample(np.zeros((0, 4), np.float32), 4, seed=0)


@pytest.mark.parametrize("seed", range(100))
def test_fps_matches_bruteforce_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 65))
    k = int(rng.integers(1, n + 1))
    c = random_cloud(rng, n)
    start = int(np.random.default_rng(seed).integers(n))
    got = farthest_point_sample(c, k, seed=seed)
    assert got.tolist() == fps_bruteforce(c, k, start)
    assert len(set(got.tolist())) == k


def test_fps_dispersion_monotone():
    c = random_cloud(np.random.default_rng(5), 64)
    full = farthest_point_sample(c, 64, seed=0)
    xyz = c[:, :3].astype(np.float64)
    prev = np.inf
    for k in range(2, 65):
        sel = xyz[farthest_point_sample(c, k, seed=0)]
        d = np.sqrt(((sel[:, None] - sel[None]) ** 2).sum(-1))
        cur = d[np.triu_indices(k, 1)].min()
        assert cur <= prev + 1e-12
        prev = cur
        np.testing.assert_array_equal(farthest_point_sample(c, k, seed=0), full[:k])


def test_features_examples():
    same = cloud_of([(3, 4, 5)] * 4)
    f = build_point_features(same, [0, 1, 2, 3])
    np.testing.assert_array_equal(f[:, 3:], 0)
    f = build_point_features(cloud_of([(20, 0, 0), (-20, 0, 0)]), [0, 1])
    assert f[0, 0] == 1.0
    np.testing.assert_array_equal(f[0, 3:], -f[1, 3:])


def test_features_permutation_equivariant():
    rng = np.random.default_rng(6)
    c = random_cloud(rng, 200, 25)
    idx = rng.integers(0, 200, 4096)
    perm = rng.permutation(4096)
    a = build_point_features(c, idx)
    b = build_point_features(c, idx[perm])
    np.testing.assert_allclose(b, a[perm], atol=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 6000))
def test_sample_points_shape_and_range(seed, n):
    c = random_cloud(np.random.default_rng(seed), n, 30)
    c[0, :3] = 0  # at least one point survives the crop
    f = sample_points(c, seed=seed)
    assert f.shape == (4096, 6) and f.dtype == np.float32
    assert np.abs(f).max() <= 1.0


def test_bev_empty():
    g = bev_histogram(np.zeros((0, 4), np.float32))
    assert g.shape == (2, 256, 256) and not g.any()


def test_bev_single_point_worked_example():
    g = bev_histogram(cloud_of([(16, 0, 1)]))
    nz = np.argwhere(g)
    assert nz.tolist() == [[1, 128, 128]]
    assert g[1, 128, 128] == pytest.approx(1 / 32)


def test_bev_cap_clamps():
    g = bev_histogram(cloud_of([(16, 0, 1)] * 100))
    assert g[1, 128, 128] == 1.0
    assert g.max() <= 1.0 and g.min() >= 0.0


@pytest.mark.parametrize("seed", range(100))
def test_bev_conservation(seed):
    rng = np.random.default_rng(seed)
    xyz = np.stack([rng.uniform(-5, 40, 300), rng.uniform(-25, 25, 300), rng.uniform(-3, 3, 300)], 1)
    c = cloud_of(xyz)
    g = bev_histogram(c, RAW)
    pts = c[:, :3].astype(np.float64)
    for b in (0, 1):
        count = 0
        for x, y, z in pts:
            row, col = bev_cell(x, y)
            if 0 <= row < 256 and 0 <= col < 256 and (z >= 0) == bool(b):
                count += 1
        assert g[b].sum() == count


def test_bev_translation_shifts_one_row():
    rng = np.random.default_rng(7)
    # cell-centred interior points so the shift never crosses a boundary ambiguously
    rows = rng.integers(10, 240, 50)
    cols = rng.integers(10, 240, 50)
    x = 32 - (rows + 0.5) * 0.125
    y = 16 - (cols + 0.5) * 0.125
    z = rng.uniform(-1, 1, 50)
    base = bev_histogram(cloud_of(np.stack([x, y, z], 1)), RAW)
    moved = bev_histogram(cloud_of(np.stack([x + 0.125, y, z], 1)), RAW)
    np.testing.assert_array_equal(moved[:, :-1], base[:, 1:])
    assert not moved[:, -1].any()
