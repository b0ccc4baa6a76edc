import json
import math

import numpy as np
import pytest

from advdepth.errors import ConfigError, ContractError, EmptyRegionError
from advdepth.geometry import CameraIntrinsics, PoseTransform, intersect_board
from advdepth.scene import (BackgroundPair, ObjectBoard, PlacementSampler, SceneSource, build_scene, load_board,
                            load_png, load_scene_pairs, make_procedural_board, make_synthetic_background,
                            sample_scene, save_png, stamp_source, stamp_target)
from advdepth.tensor import Tensor, backward, tsum
from advdepth.trainer import reconstruct

from gradcheck import check_grad


def flat_board(value=0.5, w=16, h=16, mask=None):
    img = np.full((3, h, w), value)
    return ObjectBoard(img, np.ones((1, h, w)) if mask is None else mask, 2.0, 2.0 * h / w)


def ramp_board(w=16, h=16):
    v, u = np.mgrid[0:h, 0:w] / 16.0
    img = np.stack([0.2 + 0.5 * u, 0.3 + 0.4 * v, 0.1 + 0.3 * u + 0.3 * v])
    return ObjectBoard(img, np.ones((1, h, w)), 2.0, 2.0)


# -- board validation ---------------------------------------------------------------

def test_board_invariants():
    with pytest.raises(ContractError):
        ObjectBoard(np.full((3, 4, 4), 1.2), np.ones((1, 4, 4)), 1.0, 1.0)
    with pytest.raises(ContractError):
        ObjectBoard(np.zeros((3, 4, 4)), np.full((1, 4, 4), 0.5), 1.0, 1.0)
    with pytest.raises(ContractError):
        ObjectBoard(np.zeros((3, 4, 8)), np.ones((1, 4, 8)), 1.0, 1.0)  # aspect mismatch
    ObjectBoard(np.zeros((3, 4, 8)), np.ones((1, 4, 8)), 2.0, 1.005)  # within 1 %


# -- stamping ------------------------------------------------------------------------

def test_zero_mask_leaves_frame_untouched(backgrounds, camera):
    b = flat_board(mask=np.zeros((1, 16, 16)))
    img, region = stamp_target(b, backgrounds[0], b.placement(7.0, 0.2), camera)
    assert not region.any()
    assert img.data.tobytes() == backgrounds[0].frame_t.tobytes()


def test_out_of_frame_raises(backgrounds, camera):
    b = flat_board()
    bg = backgrounds[0]
    far_left = BackgroundPair(bg.frame_t, bg.frame_s, PoseTransform(np.eye(3), [40.0, 0.0, 0.0]))
    with pytest.raises(EmptyRegionError):
        stamp_source(b, far_left, b.placement(5.0, 0.0), camera)


def test_ten_pixel_board_region_count(backgrounds, camera):
    b = flat_board()
    z = camera.fx * b.physical_w / 10.0
    _, region = stamp_target(b, backgrounds[0], b.placement(z, 0.0), camera)
    assert 80 <= region.sum() <= 100


def test_doubling_distance_halves_width(backgrounds, camera):
    b = flat_board()
    widths = []
    for z in (5.0, 10.0):
        _, region = stamp_target(b, backgrounds[0], b.placement(z, 0.0), camera)
        widths.append(region.any(axis=0).sum())
    assert abs(widths[1] - widths[0] / 2) <= 1


def test_outside_region_bitwise_background(backgrounds, camera):
    b = make_procedural_board(3)
    bg = backgrounds[1]
    place = b.placement(6.0, -0.3)
    it, rt = stamp_target(b, bg, place, camera)
    is_, rs = stamp_source(b, bg, place, camera)
    assert np.array_equal(it.data[:, ~rt], bg.frame_t[:, ~rt])
    assert np.array_equal(is_.data[:, ~rs], bg.frame_s[:, ~rs])
    assert not np.array_equal(it.data[:, rt], bg.frame_t[:, rt])


def test_identity_pose_source_equals_target(camera):
    bg = make_synthetic_background(4, camera, PoseTransform.identity(), 20.0)
    b = make_procedural_board(1)
    place = b.placement(7.0, 0.25)
    it, rt = stamp_target(b, bg, place, camera)
    is_, rs = stamp_source(b, bg, place, camera)
    assert np.array_equal(rt, rs)
    assert np.array_equal(it.data, is_.data)


def _center_column(K, place, T, row):
    u_a, _, _, _ = intersect_board(K, place, T)
    line = u_a[row]
    # u_a is affine in u along a row for a fronto-parallel board
    slope = line[1] - line[0]
    return (place.w / 2 - line[0]) / slope


def test_stereo_disparity_is_fx_b_over_z():
    K = CameraIntrinsics.centered(128, 64, 100.0)
    b = flat_board()
    place = b.placement(10.0, 0.0)
    T = PoseTransform.stereo(0.54)
    ut = _center_column(K, place, None, 32)
    us = _center_column(K, place, T, 32)
    assert abs((ut - us) - 5.4) < 1e-9


def test_disparity_decreases_with_distance(backgrounds, camera):
    b = flat_board()
    T = PoseTransform.stereo(0.54)
    shifts = []
    for z in (5.0, 7.0, 9.0, 12.0):
        place = b.placement(z, 0.0)
        shifts.append(_center_column(camera, place, None, 16) - _center_column(camera, place, T, 16))
    assert all(a > c for a, c in zip(shifts, shifts[1:]))


def test_stamp_gradient_confined_to_region(backgrounds, camera, rng):
    b = make_procedural_board(2)
    bg = backgrounds[0]
    place = b.placement(6.0, 0.2)
    _, region = stamp_target(b, bg, place, camera)
    w_out = rng.normal(size=(3,) + region.shape) * (~region)
    img = Tensor(b.image, requires_grad=True)
    backward(tsum(_stamp_with(img, b, bg, place, camera) * w_out))
    assert img.grad is None or not img.grad.any()
    w = rng.normal(size=(3,) + region.shape)
    err = check_grad(lambda t: tsum(_stamp_with(t, b, bg, place, camera) * w), [b.image], seed=3)
    assert err <= 1e-4


def _stamp_with(image_tensor, board, bg, place, K):
    scene_board = ObjectBoard.__new__(ObjectBoard)
    scene_board.image, scene_board.mask = image_tensor, board.mask
    scene_board.physical_w, scene_board.physical_h = board.physical_w, board.physical_h
    return stamp_target(scene_board, bg, place, K)[0]


def test_source_view_consistent_with_target_through_true_depth(camera, stereo):
    bg = make_synthetic_background(2, camera, stereo, 20.0)
    b = ramp_board()
    s = build_scene(b, bg, b.placement(6.0, 0.2), camera)
    r = reconstruct(s.image_s, s.depth_t(), stereo, camera)
    # interior of the board, away from its silhouette
    reg = s.region
    inner = reg.copy()
    for dy, dx in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        inner &= np.roll(reg, (dy, dx), axis=(0, 1))
    inner &= r.valid_mask[0]
    assert inner.sum() > 30
    assert np.abs(r.image.data[:, inner] - s.image_t[:, inner]).max() < 1e-3


# -- sampling -------------------------------------------------------------------------

def test_degenerate_ranges():
    s = PlacementSampler((5.0, 5.0), (0.0, 0.0), 3)
    assert all(s.draw() == (5.0, 0.0) for _ in range(10))


def test_distance_mean_law_of_large_numbers():
    s = PlacementSampler((5.0, 10.0), (-0.5, 0.5), 11)
    zs = [s.draw()[0] for _ in range(10000)]
    assert abs(np.mean(zs) - 7.5) < 0.05 * 7.5


def test_sampler_determinism_and_validation(backgrounds):
    a = PlacementSampler(seed=5)
    b = PlacementSampler(seed=5)
    assert [a.draw() for _ in range(5)] == [b.draw() for _ in range(5)]
    with pytest.raises(ConfigError):
        PlacementSampler((10.0, 5.0))
    with pytest.raises(ConfigError):
        PlacementSampler((0.0, 5.0))
    with pytest.raises(ConfigError):
        PlacementSampler(alpha_range=(0.5, -0.5))
    with pytest.raises(ConfigError):
        sample_scene(PlacementSampler(), [], backgrounds)
    with pytest.raises(ConfigError):
        sample_scene(PlacementSampler(), [flat_board()], [])


def test_scene_source_reproducible(source, board):
    a = source.fork(9).draw(board)
    b = source.fork(9).draw(board)
    assert a.image_t.tobytes() == b.image_t.tobytes() and a.placement == b.placement


# -- synthetic backgrounds ---------------------------------------------------------------

def test_identity_pose_background_frames_equal(camera):
    bg = make_synthetic_background(1, camera, PoseTransform.identity(), 15.0)
    assert np.array_equal(bg.frame_s, bg.frame_t)


def test_background_reconstruction_exact(camera, stereo):
    bg = make_synthetic_background(6, camera, stereo, 20.0)
    r = reconstruct(bg.frame_s, bg.depth_t, stereo, camera)
    valid = r.valid_mask[0]
    # a 1.08 px disparity pushes the first two columns out of the source view
    assert not valid[:, :2].any() and valid[:, 2:].all()
    assert np.abs(r.image.data - bg.frame_t)[:, valid].max() < 1e-6


def test_far_plane_has_vanishing_disparity(camera, stereo):
    bg = make_synthetic_background(0, camera, stereo, 1e6)
    assert np.abs(bg.frame_s - bg.frame_t).max() < 1e-3


def test_background_depth_must_be_positive(camera, stereo):
    with pytest.raises(ContractError):
        make_synthetic_background(0, camera, stereo, 0.0)


# -- files ---------------------------------------------------------------------------

def test_png_round_trip_and_board_loading(tmp_path, board):
    save_png(tmp_path / "b.png", board.image)
    save_png(tmp_path / "m.png", board.mask)
    img = load_png(tmp_path / "b.png")
    assert np.abs(img - board.image).max() <= 0.5 / 255 + 1e-12
    loaded = load_board(tmp_path / "b.png", tmp_path / "m.png", 2.0, 2.0)
    assert np.array_equal(loaded.mask, board.mask)


def test_scene_pair_directory(tmp_path, backgrounds, camera):
    for i, bg in enumerate(backgrounds[:2]):
        save_png(tmp_path / f"p{i}_t.png", bg.frame_t)
        save_png(tmp_path / f"p{i}_s.png", bg.frame_s)
        meta = {"fx": camera.fx, "fy": camera.fy, "cx": camera.cx, "cy": camera.cy,
                "rotation": np.eye(3).ravel().tolist(), "translation": [-0.54, 0.0, 0.0]}
        (tmp_path / f"p{i}.json").write_text(json.dumps(meta))
    pairs, K = load_scene_pairs(str(tmp_path))
    assert len(pairs) == 2 and K == camera
    assert pairs[0].pose == PoseTransform.stereo(0.54)
    src = SceneSource(pairs, K, PlacementSampler(seed=0))
    assert src.draw(make_procedural_board(0)).depth_t() is None


def test_scene_source_needs_backgrounds(camera):
    with pytest.raises(ConfigError):
        SceneSource([], camera, PlacementSampler())


def test_procedural_board_shape():
    b = make_procedural_board(7, 16, 16, 2.0)
    assert b.image.shape == (3, 16, 16) and b.mask.sum() < 256
    assert math.isclose(b.physical_h, 2.0)
