import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advdepth.errors import BehindCameraError, ContractError
from advdepth.geometry import (BoardPlacement, CameraIntrinsics, PoseTransform, board_to_camera, camera_to_pixel,
                               intersect_board, pixel_to_camera, transform_point)

K100 = CameraIntrinsics(100.0, 100.0, 50.0, 50.0, 101, 101)


def rot_y(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def test_board_to_camera_examples():
    p = BoardPlacement(10.0, 0.3, 2.0, 2.0, 100, 100)
    np.testing.assert_allclose(board_to_camera(p, 50, 50), [0.0, 0.0, 10.0], atol=1e-15)
    p0 = BoardPlacement(10.0, 0.0, 2.0, 2.0, 100, 100)
    assert board_to_camera(p0, 100, 50).tolist() == [1.0, 0.0, 10.0]
    # a quarter turn is outside the placement invariant, so use a bare record
    p90 = SimpleNamespace(z_c=10.0, alpha=math.pi / 2, W=2.0, H=2.0, w=100, h=100)
    np.testing.assert_allclose(board_to_camera(p90, 100, 50), [0.0, 0.0, 11.0], atol=1e-15)


def test_placement_invariants():
    with pytest.raises(ContractError):
        BoardPlacement(0.0, 0.0, 2, 2, 10, 10)
    with pytest.raises(ContractError):
        BoardPlacement(5.0, math.pi / 2, 2, 2, 10, 10)
    with pytest.raises(ContractError):
        BoardPlacement(5.0, 0.0, 2, -2, 10, 10)


def test_camera_to_pixel_examples():
    uv, z = camera_to_pixel(K100, [0.0, 0.0, 10.0])
    assert uv.tolist() == [50.0, 50.0] and z == 10.0
    assert camera_to_pixel(K100, [1.0, 0.0, 10.0])[0].tolist() == [60.0, 50.0]
    assert camera_to_pixel(K100, [0.0, 1.0, 2.0])[0].tolist() == [50.0, 100.0]
    with pytest.raises(BehindCameraError):
        camera_to_pixel(K100, [0.0, 0.0, -1.0])


def test_transform_examples():
    pt = np.array([0.3, -0.2, 7.0])
    assert transform_point(PoseTransform.identity(), pt).tolist() == pt.tolist()
    assert transform_point(PoseTransform.stereo(0.54), [0.0, 0.0, 10.0]).tolist() == [-0.54, 0.0, 10.0]
    T = PoseTransform(rot_y(0.2), [0.1, -0.3, 0.5])
    np.testing.assert_allclose(transform_point(T.inverse(), transform_point(T, pt)), pt, atol=1e-12)


def test_pose_invariants():
    with pytest.raises(ContractError):
        PoseTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(ContractError):
        PoseTransform(np.eye(3) * 1.001, np.zeros(3))


def test_intrinsics_invariants():
    with pytest.raises(ContractError):
        CameraIntrinsics(0.0, 1.0, 1.0, 1.0, 4, 4)
    with pytest.raises(ContractError):
        CameraIntrinsics(1.0, 1.0, 4.0, 1.0, 4, 4)


def test_pixel_to_camera_examples():
    assert pixel_to_camera(K100, 50, 50, 10.0).tolist() == [0.0, 0.0, 10.0]
    assert pixel_to_camera(K100, 60, 50, 10.0).tolist() == [1.0, 0.0, 10.0]
    with pytest.raises(ContractError):
        pixel_to_camera(K100, 10, 10, 0.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.1, 100))
def test_round_trip_point_pixel_point(x, y, z):
    uv, d = camera_to_pixel(K100, [x, y, z])
    back = pixel_to_camera(K100, uv[0], uv[1], d)
    np.testing.assert_allclose(back, [x, y, z], rtol=0, atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 100), st.floats(0, 100), st.floats(0.1, 100))
def test_round_trip_pixel_point_pixel(u, v, d):
    uv, z = camera_to_pixel(K100, pixel_to_camera(K100, u, v, d))
    np.testing.assert_allclose(uv, [u, v], rtol=0, atol=1e-9)
    assert abs(z - d) <= 1e-9


def test_projected_board_rectangle():
    K = CameraIntrinsics.centered(201, 101, 100.0)
    p = BoardPlacement(10.0, 0.0, 2.0, 1.0, 40, 20)
    corners = board_to_camera(p, np.array([0.0, 40.0, 0.0, 40.0]), np.array([0.0, 0.0, 20.0, 20.0]))
    uv, _ = camera_to_pixel(K, corners)
    np.testing.assert_allclose(uv[:, 0].max() - uv[:, 0].min(), K.fx * p.W / p.z_c, atol=1e-9)
    np.testing.assert_allclose(uv.mean(axis=0), [K.cx, K.cy], atol=1e-9)


def test_depth_increases_with_distance():
    zs = [board_to_camera(BoardPlacement(z, 0.4, 2.0, 2.0, 16, 16), 3.0, 5.0)[2] for z in (5, 6, 7.5, 12)]
    assert all(a < b for a, b in zip(zs, zs[1:]))


@pytest.mark.parametrize("alpha", [-0.5, 0.0, 0.35])
@pytest.mark.parametrize("pose", [None, PoseTransform.stereo(0.54), PoseTransform(rot_y(0.05), [-0.5, 0.02, 0.1])])
def test_ray_board_intersection_inverts_projection(alpha, pose):
    K = CameraIntrinsics.centered(64, 32, 40.0)
    p = BoardPlacement(7.0, alpha, 2.0, 2.0, 16, 16)
    u_a, v_a, depth, hit = intersect_board(K, p, pose)
    inside = hit & (u_a >= 0) & (u_a <= 16) & (v_a >= 0) & (v_a <= 16)
    assert inside.sum() > 20
    pts = board_to_camera(p, u_a[inside], v_a[inside])
    if pose is not None:
        pts = transform_point(pose, pts)
    uv, z = camera_to_pixel(K, pts)
    v, u = np.nonzero(inside)
    np.testing.assert_allclose(uv[:, 0], u, atol=1e-9)
    np.testing.assert_allclose(uv[:, 1], v, atol=1e-9)
    np.testing.assert_allclose(z, depth[inside], atol=1e-9)


def test_pure_functions_bitwise():
    p = BoardPlacement(6.5, 0.2, 2.0, 2.0, 16, 16)
    a = board_to_camera(p, np.linspace(0, 16, 7), np.linspace(0, 16, 7))
    b = board_to_camera(p, np.linspace(0, 16, 7), np.linspace(0, 16, 7))
    assert a.tobytes() == b.tobytes()
