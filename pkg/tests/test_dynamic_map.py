import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import expit

from dhm.core import ClusterSet, Config, Frame, RigidTransform, rotation_2d
from dhm.dynamic_map import (DynamicHilbertMap, GridError, HistoryError, decay_ratio, grid_centres,
                             transform_clusters)
from dhm.sim import Box, DynamicShape, SceneSpec, Sensor, default_scene, simulate


def static_scene(seed=0, frames=5):
    return default_scene(seed, frames).replace(dynamic_shapes=())


def fitted(frames, config=None):
    return DynamicHilbertMap(config or Config()).fit(frames)


def car_scene(seed=0, frames=5):
    car = DynamicShape(Box([-6.0, 4.0], [2.0, 1.0]), [1.0, 0.0])
    return SceneSpec([Box([0.0, 8.0], [20.0, 0.5])], [car], Sensor([0.0, 0.0], 180.0, 181, 30.0, 90.0),
                     frames, 0.01, seed)


def small_box_scene(seed):
    box = DynamicShape(Box([-9.0, 0.0], [0.6, 0.6]), [1.0, 0.0])
    return SceneSpec([], [box], Sensor([0.0, -6.0], 120.0, 241, 30.0, 90.0), 10, 0.01, seed)


# -- decay and transforms ---------------------------------------------------------------------------
def test_decay_examples():
    assert decay_ratio(np.eye(2), np.zeros((2, 2))) == 1.0
    assert decay_ratio(np.eye(2), np.eye(2)) == pytest.approx(0.25)
    # 3D: only the planar block is inflated
    assert decay_ratio(np.eye(3), np.eye(2)) == pytest.approx(0.25)


def spd(rng, d):
    A = rng.normal(size=(d, d))
    return A @ A.T + 0.05 * np.eye(d)


@given(st.integers(0, 10_000))
def test_decay_in_unit_interval_and_matches_eigenvalues(seed):
    rng = np.random.default_rng(seed)
    S, P = spd(rng, 2), spd(rng, 2)
    rho = float(decay_ratio(S, P))
    want = np.prod(np.linalg.eigvalsh(S)) / np.prod(np.linalg.eigvalsh(S + P))
    assert 0 < rho <= 1 and rho == pytest.approx(want, rel=1e-9)


def test_transform_identity_is_bitwise_noop(rng):
    cs = ClusterSet(rng.normal(size=(6, 2)), np.tile(np.eye(2) * 0.1, (6, 1, 1)), rng.random(6),
                    np.ones(6, bool), np.ones(6, int), 0.25)
    out = transform_clusters(cs, [0, 2, 5], RigidTransform.identity(2), np.zeros((2, 2)))
    for a in ("means", "covariances", "weight_scales"):
        assert np.array_equal(getattr(out, a), getattr(cs, a))
    assert out is not cs


def test_transform_moves_and_decays_members_only(rng):
    covs = np.stack([spd(rng, 2) for _ in range(4)])
    cs = ClusterSet(rng.normal(size=(4, 2)), covs, np.ones(4), np.ones(4, bool), np.ones(4, int), 0.25)
    T = RigidTransform(rotation_2d(0.7), [1.0, -2.0])
    out = transform_clusters(cs, [1, 3], T, np.eye(2))
    R = rotation_2d(0.7)
    for i in (1, 3):
        assert np.allclose(out.means[i], R @ cs.means[i] + [1, -2])
        assert np.allclose(out.covariances[i], R @ covs[i] @ R.T)
        assert out.weight_scales[i] == pytest.approx(decay_ratio(out.covariances[i], np.eye(2)))
    for i in (0, 2):
        assert np.array_equal(out.means[i], cs.means[i]) and out.weight_scales[i] == 1.0
    assert np.array_equal(cs.weight_scales, np.ones(4))


# -- stepping -------------------------------------------------------------------------------------
def test_first_frame_records_start_at_rest():
    dhm = DynamicHilbertMap().fit(simulate(default_scene(0, 1)).frames)
    assert dhm.records_ and dhm.frame_index_ == 0
    for rid, rec in dhm.records_.items():
        assert np.all(rec.track.velocity == 0) and rec.track.angular_velocity == 0
        assert len(dhm.members(rid)) > 0
    # free clusters never carry a track
    assert np.all(dhm.owner_[~dhm.clusters_.occupied] == -1)
    assert len(dhm.hmap_.coef_) == len(dhm.clusters_)


def test_static_scene_drift_is_small():
    frames = simulate(static_scene(0, 5)).frames
    dhm = DynamicHilbertMap().fit(frames[:1])
    before = dhm.clusters_.means.copy()
    for f in frames[1:]:
        dhm.step(f)
        assert len(dhm.hmap_.coef_) == len(dhm.clusters_)
    drift = np.linalg.norm(dhm.clusters_.means[:len(before)] - before, axis=1)
    assert drift.max() < dhm.cfg.resolution / 10


def test_moving_object_velocity_estimate():
    dhm = fitted(simulate(car_scene()).frames)
    cars = [rec for rec in dhm.records_.values() if rec.track.position[1] < 6]
    assert len(cars) == 1
    assert np.abs(cars[0].track.velocity - [1.0, 0.0]).max() < 0.05


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_future_query_follows_object(seed):
    dhm = fitted(simulate(small_box_scene(seed)).frames)
    t = dhm.frame_index_
    face = np.array([5.0, -0.3])  # the face the sensor sees, five frames ahead
    assert dhm.query(face, t + 5) > dhm.query(face, t)
    res = 0.05
    grid = dhm.render_grid(t + 5, (2.0, -3.0, 8.0, 3.0), res)
    iy, ix = np.unravel_index(np.argmax(grid), grid.shape)
    peak = np.array([2.0 + (ix + 0.5) * res, -3.0 + (iy + 0.5) * res])
    assert np.linalg.norm(peak - face) <= dhm.cfg.resolution


def test_rejects_out_of_order_and_mixed_dimension():
    frames = simulate(default_scene(0, 3)).frames
    dhm = DynamicHilbertMap().fit(frames[:1])
    with pytest.raises(ValueError):
        dhm.step(frames[2])
    with pytest.raises(ValueError):
        dhm.step(Frame(1, [[0, 0, 0]], [[1, 0, 0]], [False]))


def test_empty_frame_is_decay_only(default_frames):
    dhm = fitted(default_frames(0)[:4])
    n = len(dhm.clusters_)
    dhm.step(Frame(4, np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0, bool)))
    assert len(dhm.clusters_) == n and dhm.frame_index_ == 4


# -- queries --------------------------------------------------------------------------------------
def test_history_errors_and_past_queries(default_frames):
    frames = default_frames(0)[:6]
    dhm = fitted(frames, Config(log_depth=3))
    with pytest.raises(HistoryError):
        dhm.query([0, 3], -1)
    with pytest.raises(HistoryError):
        dhm.query([0, 3], 1)  # older than the 3-frame log
    p = dhm.predict_proba(frames[3].occupied_points, 3)
    assert np.all((p > 0) & (p < 1))


def test_past_query_undoes_motion():
    frames = simulate(car_scene(0, 6)).frames
    dhm = fitted(frames)
    hits = frames[3].occupied_points
    hits = hits[hits[:, 1] < 6]  # the car's hits
    assert dhm.predict_proba(hits, 3).mean() > dhm.predict_proba(hits, 5).mean()


def test_query_does_not_mutate_state(default_frames):
    dhm = fitted(default_frames(0)[:3])
    snap = dhm.clusters_.copy()
    dhm.render_grid(dhm.frame_index_ + 7, (-8, 0, 8, 8), 0.5)
    assert np.array_equal(snap.means, dhm.clusters_.means)
    assert np.array_equal(snap.weight_scales, dhm.clusters_.weight_scales)


def test_current_time_equals_plain_hinges(default_frames):
    dhm = fitted(default_frames(0)[:3])
    X = np.random.default_rng(0).uniform([-8, 0], [8, 8], (100, 2))
    assert np.array_equal(dhm.predict_proba(X), dhm.predict_proba(X, dhm.frame_index_))


def test_dynamic_weights_decay_with_horizon(default_frames):
    dhm = fitted(default_frames(0)[:5])
    T = dhm.frame_index_
    moving = [rid for rid, rec in dhm.records_.items()
              if not rec.is_static and np.linalg.norm(rec.track.velocity) > 0.1]
    assert moving
    idx = np.concatenate([dhm.members(r) for r in moving])
    scales = np.array([dhm.clusters_at(T + h).weight_scales[idx] for h in range(0, 12)])
    assert np.all(np.diff(scales, axis=0) < 0)
    assert np.all((scales > 0) & (scales <= 1))


def test_static_map_far_future_matches_now():
    frames = simulate(static_scene(0, 24)).frames
    X = np.random.default_rng(1).uniform([-8, 0], [8, 8], (200, 2))
    plain = fitted(frames, Config(dynamic_enabled=False))
    assert np.abs(plain.predict_proba(X, 23) - plain.predict_proba(X, 1000)).max() < 1e-9
    dhm = fitted(frames)
    assert all(rec.is_static for rec in dhm.records_.values())
    assert np.abs(dhm.predict_proba(X, 23) - dhm.predict_proba(X, 1000)).max() < 1e-9


# -- rendering ------------------------------------------------------------------------------------
def test_empty_map_renders_sigmoid_bias():
    g = DynamicHilbertMap().render_grid(None, (0, 0, 1, 2), 0.5)
    assert g.shape == (4, 2) and np.all(g == expit(-1.0))


def test_render_matches_queries(default_frames):
    dhm = fitted(default_frames(0)[:3])
    t = dhm.frame_index_ + 2
    g = dhm.render_grid(t, (-2.0, 2.0, 2.0, 4.0), 0.5)
    xs, ys = grid_centres((-2.0, 2.0, 2.0, 4.0), 0.5)
    assert g[1, 3] == dhm.query([xs[3], ys[1]], t)
    one = dhm.render_grid(t, (0.0, 3.0, 0.25, 3.25), 0.25)
    assert one.shape == (1, 1) and one[0, 0] == dhm.query([0.125, 3.125], t)


def test_grid_errors():
    dhm = DynamicHilbertMap()
    with pytest.raises(GridError):
        dhm.render_grid(None, (0, 0, 0, 1), 0.1)
    with pytest.raises(GridError):
        dhm.render_grid(None, (0, 0, 1, 1), 0.0)
    with pytest.raises(GridError):
        dhm.render_grid(None, (0, 0, 1e4, 1e4), 0.01)


def test_render_is_deterministic(default_frames):
    a = fitted(default_frames(1)[:4]).render_grid(6, (-8, 0, 8, 8), 0.2)
    b = fitted(default_frames(1)[:4]).render_grid(6, (-8, 0, 8, 8), 0.2)
    assert np.array_equal(a, b)


# -- persistence ----------------------------------------------------------------------------------
@pytest.mark.parametrize("suffix", [".json", ".json.gz", ".npz"])
def test_save_load_round_trip(tmp_path, default_frames, suffix):
    frames = default_frames(0)[:6]
    dhm = fitted(frames[:4])
    path = tmp_path / f"map{suffix}"
    dhm.save(path)
    back = DynamicHilbertMap.load(path)
    X = np.random.default_rng(2).uniform([-8, 0], [8, 8], (100, 2))
    for t in (1, 3, 5, 9):
        assert np.abs(back.predict_proba(X, t) - dhm.predict_proba(X, t)).max() <= 1e-12
    # both copies keep evolving identically
    for f in frames[4:]:
        dhm.step(f)
        back.step(f)
    assert np.array_equal(dhm.hmap_.coef_, back.hmap_.coef_)
    assert np.array_equal(dhm.predict_proba(X, 8), back.predict_proba(X, 8))


def test_sklearn_params():
    cfg = Config(resolution=0.5)
    assert DynamicHilbertMap(cfg).get_params() == {"config": cfg}
    assert math.isclose(DynamicHilbertMap().cfg.resolution, 0.25)
