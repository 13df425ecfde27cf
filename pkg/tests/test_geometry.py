import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from patchmixer import oracles as O
from patchmixer.geometry import (
    AugmentConfig,
    GeometryError,
    PointCloud,
    augment,
    ball_query,
    barycenter,
    extract_patches,
    fps,
    fps_seed,
    knn,
    normalize_shape,
    patch_mask,
    resample_patch,
)

coords = st.floats(-10, 10, allow_nan=False, width=32)
clouds = st.integers(2, 60).flatmap(lambda n: arrays(np.float32, (n, 3), elements=coords, unique=True))


def random_cloud(rng, v=100):
    return rng.uniform(-1, 1, size=(v, 3)).astype(np.float32)


# -- point cloud type ---------------------------------------------------------------

def test_point_cloud_validation():
    with pytest.raises(GeometryError):
        PointCloud(np.zeros((0, 3)))
    with pytest.raises(GeometryError):
        PointCloud(np.array([[0.0, np.nan, 0.0]]))
    with pytest.raises(GeometryError):
        PointCloud(np.zeros((3, 3)), labels=np.zeros(2, dtype=int))


# -- normalisation -------------------------------------------------------------------

def test_unit_cube_normalisation():
    cube = np.array(list(itertools.product([0, 1], repeat=3)), dtype=np.float64)
    out = normalize_shape(PointCloud(cube)).points.astype(np.float64)
    np.testing.assert_allclose(out, (cube - 0.5) / math.sqrt(3), atol=1e-7)


def test_normalisation_is_idempotent(rng):
    once = normalize_shape(PointCloud(random_cloud(rng)))
    twice = normalize_shape(once)
    np.testing.assert_allclose(once.points, twice.points, atol=1e-6)


@given(clouds)
def test_normalisation_postconditions(pts):
    span = pts.max(0).astype(np.float64) - pts.min(0)
    if np.linalg.norm(span) < 1e-3:
        with pytest.raises(GeometryError) if np.linalg.norm(span) == 0 else _nullcontext():
            normalize_shape(PointCloud(pts))
        return
    out = normalize_shape(PointCloud(pts)).points.astype(np.float64)
    assert np.abs(out.mean(0)).max() <= 1e-5
    assert abs(np.linalg.norm(out.max(0) - out.min(0)) - 1) <= 1e-5


class _nullcontext:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def test_degenerate_cloud_rejected():
    with pytest.raises(GeometryError):
        normalize_shape(PointCloud(np.ones((5, 3))))


def test_barycenter_is_order_independent(rng):
    pts = random_cloud(rng, 300) * 1e3
    ref = barycenter(pts)
    for _ in range(5):
        assert np.array_equal(barycenter(pts[rng.permutation(300)]), ref)


# -- farthest point sampling ----------------------------------------------------------

def test_fps_exhausts_cloud(rng):
    pts = random_cloud(rng, 12)
    out = fps(pts, 12)
    assert sorted(out.tolist()) == list(range(12))


def test_fps_collinear_endpoints():
    pts = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]], dtype=np.float32)
    assert fps(pts, 2, seed_index=0).tolist() == [0, 3]


def test_fps_errors(rng):
    with pytest.raises(GeometryError):
        fps(random_cloud(rng, 5), 6)


def test_fps_seed_is_farthest_from_barycentre(rng):
    pts = random_cloud(rng, 50)
    d = ((pts.astype(np.float64) - barycenter(pts)) ** 2).sum(1)
    assert fps_seed(pts) == int(np.argmax(d))


def test_fps_spread_is_half_optimal(rng):
    pts = random_cloud(rng, 20)

    def min_gap(idx):
        return min(np.linalg.norm(pts[a] - pts[b]) for a, b in itertools.combinations(idx, 2))

    chosen = min_gap(fps(pts, 4))
    # greedy max-min is a 2-approximation of the best spread
    best = max(min_gap(c) for c in itertools.combinations(range(20), 4))
    assert chosen >= best / 2


@given(clouds, st.data())
def test_fps_matches_bruteforce(pts, data):
    num = data.draw(st.integers(1, min(len(pts), 8)))
    assert fps(pts, num).tolist() == O.fps_bruteforce(pts, num, fps_seed(pts))


# -- neighbourhoods ----------------------------------------------------------------------

def test_ball_query_extremes(rng):
    pts = random_cloud(rng, 40)
    assert ball_query(pts, 3, 0.0).tolist() == [3]
    assert sorted(ball_query(pts, 3, 10.0).tolist()) == list(range(40))


@given(clouds, st.floats(0, 5), st.data())
def test_ball_query_matches_bruteforce(pts, radius, data):
    c = data.draw(st.integers(0, len(pts) - 1))
    out = ball_query(pts, c, radius).tolist()
    assert out == O.ball_query_bruteforce(pts, c, radius)
    assert c in out


def test_knn_extremes(rng):
    pts = random_cloud(rng, 30)
    assert knn(pts, 5, 1).tolist() == [5]
    assert knn(pts, 5, 30).tolist() == O.knn_bruteforce(pts, 5, 30)
    with pytest.raises(GeometryError):
        knn(pts, 0, 31)


@given(clouds, st.data())
def test_knn_matches_bruteforce(pts, data):
    c = data.draw(st.integers(0, len(pts) - 1))
    k = data.draw(st.integers(1, len(pts)))
    assert knn(pts, c, k).tolist() == O.knn_bruteforce(pts, c, k)


def test_knn_ties_go_to_lower_index():
    pts = np.array([[0, 0, 0], [1, 0, 0], [-1, 0, 0], [0, 1, 0]], dtype=np.float32)
    assert knn(pts, 0, 3).tolist() == [0, 1, 2]


# -- resampling and masking -----------------------------------------------------------------

def test_resample_single_neighbour(rng):
    for mode in ("train", "eval"):
        assert resample_patch(np.array([7]), 4, mode, rng).tolist() == [7, 7, 7, 7]


def test_resample_eval_cycles():
    assert resample_patch(np.array([10, 11, 12]), 5, "eval").tolist() == [10, 11, 12, 10, 11]


def test_resample_eval_strides_long_neighbourhoods():
    nb = np.arange(100, 110)
    assert resample_patch(nb, 5, "eval").tolist() == [100, 102, 104, 106, 108]


def test_resample_train_is_uniform():
    rng = np.random.default_rng(3)
    # 4 neighbours keeps the 2% band at several standard errors
    nb = np.arange(4)
    draws = np.concatenate([resample_patch(nb, 100, "train", rng) for _ in range(1000)])
    freq = np.bincount(draws, minlength=4) / len(draws)
    assert np.abs(freq - 0.25).max() <= 0.25 * 0.02


def test_patch_mask_rules(rng):
    assert patch_mask(8, 0.0, rng).all()
    assert all(patch_mask(1, 0.9, rng).tolist() == [True] for _ in range(50))
    with pytest.raises(GeometryError):
        patch_mask(4, 1.0, rng)


def test_patch_mask_rate():
    rng = np.random.default_rng(11)
    drops = np.concatenate([~patch_mask(64, 0.3, rng) for _ in range(10**5 // 64 + 1)])
    assert abs(drops.mean() - 0.3) <= 0.01


# -- patch extraction ------------------------------------------------------------------------

def test_single_patch_covers_cloud(rng):
    pts = random_cloud(rng, 25)
    ps = extract_patches(PointCloud(pts), 1, 25, radius=10.0)
    assert sorted(ps.sample_indices[0].tolist()) == list(range(25))


@given(clouds, st.floats(0.05, 3.0), st.data())
def test_every_sample_within_radius(pts, radius, data):
    p = data.draw(st.integers(1, min(8, len(pts))))
    ps = extract_patches(PointCloud(pts), p, 6, radius=radius)
    for i in range(p):
        c = ps.centroid_indices[i]
        for j in ps.sample_indices[i]:
            assert O.sqdist_loop(pts, c, j) <= radius * radius
    np.testing.assert_array_equal(ps.samples, pts[ps.sample_indices])


def test_patches_follow_permutation(rng):
    pts = random_cloud(rng, 200)
    perm = rng.permutation(200)
    a = extract_patches(PointCloud(pts), 16, 8, radius=0.4)
    b = extract_patches(PointCloud(pts[perm]), 16, 8, radius=0.4)
    np.testing.assert_array_equal(a.samples, b.samples)
    np.testing.assert_array_equal(perm[b.sample_indices], a.sample_indices)


def test_extract_patches_needs_one_neighbourhood_rule(rng):
    with pytest.raises(GeometryError):
        extract_patches(PointCloud(random_cloud(rng)), 4, 4)
    with pytest.raises(GeometryError):
        extract_patches(PointCloud(random_cloud(rng)), 4, 4, radius=0.1, k=3)


# -- augmentation ------------------------------------------------------------------------------

def test_zero_noise_augment_is_normalisation(rng):
    pc = PointCloud(random_cloud(rng))
    out = augment(pc, rng, AugmentConfig.none())
    np.testing.assert_allclose(out.points, normalize_shape(pc).points, atol=1e-7)


def test_rotation_preserves_distances(rng):
    pc = normalize_shape(PointCloud(random_cloud(rng, 60)))
    out = augment(pc, rng, AugmentConfig(jitter_sigma=0.0, rotate=True, scale_range=None))
    d0 = np.linalg.norm(pc.points[:, None] - pc.points[None], axis=-1)
    d1 = np.linalg.norm(out.points[:, None] - out.points[None], axis=-1)
    np.testing.assert_allclose(d0, d1, atol=1e-5)
    np.testing.assert_allclose(out.points[:, 2], pc.points[:, 2], atol=1e-6)


def test_jitter_standard_deviation():
    rng = np.random.default_rng(5)
    pc = normalize_shape(PointCloud(np.random.default_rng(0).uniform(size=(10**5 // 3 + 1, 3))))
    out = augment(pc, rng, AugmentConfig(jitter_sigma=1e-2, rotate=False, scale_range=None))
    disp = (out.points.astype(np.float64) - pc.points).ravel()
    assert abs(disp.std() - 1e-2) <= 0.05 * 1e-2


def test_scale_and_translate_ranges(rng):
    pc = normalize_shape(PointCloud(random_cloud(rng)))
    for _ in range(20):
        out = augment(pc, rng, AugmentConfig(jitter_sigma=0.0, rotate=False, scale_range=(0.8, 1.2), translate=0.1))
        ratio = np.linalg.norm(out.points.max(0) - out.points.min(0))
        assert 0.8 - 1e-6 <= ratio <= 1.2 + 1e-6
        shift = out.points.mean(0) - pc.points.mean(0) * ratio
        assert np.abs(shift).max() <= 0.1 + 1e-5
