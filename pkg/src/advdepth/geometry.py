"""Pinhole camera and board-plane geometry.

Pixel convention: integer coordinates sit at pixel centres, ``u`` is the
column, ``v`` the row (growing downward). Board pixels are addressed by
continuous ``(u_A, v_A)`` in ``[0, w] x [0, h]`` with the origin at the
board's top-left corner, so board pixel ``i`` covers ``[i, i + 1)``.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import BehindCameraError, ContractError


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ContractError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ContractError("principal point must lie inside the image")

    @classmethod
    def centered(cls, width, height, focal):
        return cls(focal, focal, (width - 1) / 2.0, (height - 1) / 2.0, width, height)

    @property
    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class PoseTransform:
    """Rigid transform ``p -> R p + t`` from the target camera to the source camera."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ContractError("rotation must be orthonormal with determinant +1")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def stereo(cls, baseline=0.54):
        """Rectified stereo pair; the source camera sits ``baseline`` metres to the right."""
        return cls(np.eye(3), np.array([-baseline, 0.0, 0.0]))

    def inverse(self):
        rt = self.rotation.T
        return PoseTransform(rt, -rt @ self.translation)

    def __eq__(self, other):
        return (isinstance(other, PoseTransform) and np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation))

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))


@dataclass(frozen=True)
class BoardPlacement:
    z_c: float
    alpha: float
    W: float
    H: float
    w: int
    h: int

    def __post_init__(self):
        if not self.z_c > 0:
            raise ContractError("board distance z_c must be positive")
        if not abs(self.alpha) < math.pi / 2:
            raise ContractError("board yaw must satisfy |alpha| < pi/2")
        if not (self.W > 0 and self.H > 0 and self.w > 0 and self.h > 0):
            raise ContractError("board sizes must be positive")

    @property
    def axis_u(self):
        """Unit vector along the board's width, in camera coordinates."""
        return np.array([math.cos(self.alpha), 0.0, math.sin(self.alpha)])

    @property
    def normal(self):
        return np.array([-math.sin(self.alpha), 0.0, math.cos(self.alpha)])

    @property
    def center(self):
        return np.array([0.0, 0.0, self.z_c])


def board_to_camera(p, u_a, v_a):
    """Camera-frame 3-D point of board pixel ``(u_a, v_a)``; works on arrays too."""
    x = p.W / p.w * np.asarray(u_a, dtype=np.float64) - p.W / 2.0
    y = p.H / p.h * np.asarray(v_a, dtype=np.float64) - p.H / 2.0
    ca, sa = math.cos(p.alpha), math.sin(p.alpha)
    return np.stack([ca * x, y, sa * x + p.z_c], axis=-1)


def camera_to_pixel(K, pt):
    """Project camera-frame point(s) ``[..., 3]``; returns ``(uv[..., 2], depth[...])``."""
    pt = np.asarray(pt, dtype=np.float64)
    z = pt[..., 2]
    if np.any(z <= 0):
        raise BehindCameraError("point at or behind the camera plane")
    u = K.fx * pt[..., 0] / z + K.cx
    v = K.fy * pt[..., 1] / z + K.cy
    return np.stack([u, v], axis=-1), z


def transform_point(T, pt):
    pt = np.asarray(pt, dtype=np.float64)
    return pt @ T.rotation.T + T.translation


def pixel_to_camera(K, u, v, depth):
    """Lift pixel(s) to camera-frame points at the given z-depth."""
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise ContractError("depth must be positive")
    x = (np.asarray(u, dtype=np.float64) - K.cx) / K.fx * depth
    y = (np.asarray(v, dtype=np.float64) - K.cy) / K.fy * depth
    return np.stack([x, y, np.broadcast_to(depth, np.broadcast(x, y).shape)], axis=-1)


def pixel_grid(K):
    """``(u, v)`` arrays of shape ``[H, W]`` holding every pixel's coordinates."""
    v, u = np.mgrid[0:K.height, 0:K.width].astype(np.float64)
    return u, v


def intersect_board(K, p, T=None):
    """Cast every pixel ray of camera ``K`` onto the board plane.

    ``T`` maps target-camera coordinates into the viewing camera's frame
    (``None`` means the viewing camera is the target camera). Returns
    ``(u_a, v_a, depth, hit)``, each ``[H, W]``: the board pixel coordinates
    hit by each ray, the z-depth of the hit in the viewing camera's frame,
    and whether the ray meets the plane in front of the camera.
    """
    u, v = pixel_grid(K)
    d = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1)
    if T is None:
        origin = np.zeros(3)
        d_t = d
    else:
        inv = T.inverse()
        origin = inv.translation
        d_t = d @ inv.rotation.T
    n = p.normal
    denom = d_t @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        s = ((p.center - origin) @ n) / denom
    hit = np.isfinite(s) & (s > 0) & (np.abs(denom) > 1e-12)
    s = np.where(hit, s, 0.0)
    pts = origin + s[..., None] * d_t
    rel = pts - p.center
    x = rel @ p.axis_u
    y = rel[..., 1]
    u_a = (x + p.W / 2.0) * p.w / p.W
    v_a = (y + p.H / 2.0) * p.h / p.H
    # d has unit z in the viewing frame, so the ray parameter is the depth
    return u_a, v_a, s, hit
