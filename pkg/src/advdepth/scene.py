"""Two-view scene synthesis: stamping an object board into background frames.

A board is rendered by inverse mapping. Every destination pixel's ray is
intersected with the board plane, the hit is converted to board pixel
coordinates and the board is bilinearly sampled there. The board always
occludes the background.
"""
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .errors import ConfigError, ContractError, EmptyRegionError, FormatError
from .geometry import BoardPlacement, CameraIntrinsics, PoseTransform, intersect_board, pixel_grid
from .tensor import Tensor, as_tensor, bilinear_sample, where
from .tensor.kernels import bilinear_forward


@dataclass
class ObjectBoard:
    image: np.ndarray  # [3, h, w] in [0, 1]
    mask: np.ndarray  # [1, h, w] in {0, 1}
    physical_w: float
    physical_h: float

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=np.float64)
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ContractError(f"board image must be [3,h,w], got {self.image.shape}")
        if self.mask.shape != (1,) + self.image.shape[1:]:
            raise ContractError(f"board mask must be [1,h,w] matching the image, got {self.mask.shape}")
        if not np.isin(self.mask, (0.0, 1.0)).all():
            raise ContractError("board mask must be binary")
        if self.image.min() < 0 or self.image.max() > 1:
            raise ContractError("board image values must lie in [0, 1]")
        if not (self.physical_w > 0 and self.physical_h > 0):
            raise ContractError("physical board size must be positive")
        if abs(self.w / self.physical_w - self.h / self.physical_h) > 0.01 * (self.w / self.physical_w):
            raise ContractError("board pixel aspect must match physical aspect (w/W = h/H)")

    @property
    def h(self):
        return self.image.shape[1]

    @property
    def w(self):
        return self.image.shape[2]

    def placement(self, z_c, alpha):
        return BoardPlacement(z_c, alpha, self.physical_w, self.physical_h, self.w, self.h)

    def with_image(self, image):
        return ObjectBoard(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0), self.mask,
                           self.physical_w, self.physical_h)


@dataclass
class BackgroundPair:
    frame_t: np.ndarray  # [3, H, W]
    frame_s: np.ndarray  # [3, H, W]
    pose: PoseTransform
    depth_t: np.ndarray = None  # [1, H, W], synthetic scenes only

    def __post_init__(self):
        if self.frame_t.shape != self.frame_s.shape:
            raise ContractError("background frames must share a shape")
        if not isinstance(self.pose, PoseTransform):
            raise ContractError("pose must be a PoseTransform")


@dataclass
class PlacementSampler:
    z_range: tuple = (5.0, 10.0)
    alpha_range: tuple = (-math.pi / 6, math.pi / 6)
    seed: int = 0
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        d1, d2 = self.z_range
        a1, a2 = self.alpha_range
        if not 0 < d1 <= d2:
            raise ConfigError("z_range", f"need 0 < d1 <= d2, got {self.z_range}")
        if not a1 <= a2:
            raise ConfigError("alpha_range", f"need a1 <= a2, got {self.alpha_range}")
        if max(abs(a1), abs(a2)) >= math.pi / 2:
            raise ConfigError("alpha_range", "angles must stay inside (-90, 90) degrees")
        self.rng = np.random.default_rng(self.seed)

    def draw(self):
        z = float(self.rng.uniform(*self.z_range))
        a = float(self.rng.uniform(*self.alpha_range))
        return z, a


def sample_scene(sampler, boards, backgrounds):
    """Uniformly draw a board, a background and a placement."""
    if not boards:
        raise ConfigError("boards", "board pool is empty")
    if not backgrounds:
        raise ConfigError("backgrounds", "background pool is empty")
    bi = int(sampler.rng.integers(len(boards)))
    gi = int(sampler.rng.integers(len(backgrounds)))
    z, a = sampler.draw()
    board = boards[bi]
    return board, backgrounds[gi], board.placement(z, a)


# -- projection and stamping ---------------------------------------------------

@dataclass
class BoardProjection:
    """Where a board lands in one view; independent of the board's colours."""

    coords: np.ndarray  # [2, H, W] board-array sampling coordinates
    region: np.ndarray  # [H, W] bool, pixels showing the (mask-positive) board
    depth: np.ndarray  # [H, W] z-depth of the board surface (valid on region)
    footprint: np.ndarray = None  # [H, W] bool, pixels inside the board rectangle, mask ignored


def project_board(board_mask, place, K, T=None):
    u_a, v_a, depth, hit = intersect_board(K, place, T)
    inside = hit & (u_a >= 0) & (u_a < place.w) & (v_a >= 0) & (v_a < place.h)
    mi = np.clip(np.floor(u_a), 0, place.w - 1).astype(np.intp)
    mj = np.clip(np.floor(v_a), 0, place.h - 1).astype(np.intp)
    region = inside & (board_mask[0][mj, mi] > 0.5)
    coords = np.stack([np.clip(u_a - 0.5, 0.0, place.w - 1.0),
                       np.clip(v_a - 0.5, 0.0, place.h - 1.0)])
    return BoardProjection(coords, region, np.where(region, depth, 0.0), inside)


def apply_stamp(board_image, frame, proj):
    """Composite a (possibly differentiable) board image into ``frame``."""
    sampled, _ = bilinear_sample(board_image, proj.coords)
    return where(proj.region[None], sampled, as_tensor(frame))


def _stamp(board, frame, place, K, T):
    proj = project_board(board.mask, place, K, T)
    if not proj.footprint.any():
        raise EmptyRegionError("projected board covers no frame pixel")
    img = board.image if isinstance(board.image, Tensor) else Tensor._wrap(board.image)
    return apply_stamp(img, frame, proj), proj


def stamp_target(board, bg, place, K):
    """Synthesize ``I_t``; returns ``(image Tensor[3,H,W], region bool[H,W])``."""
    out, proj = _stamp(board, bg.frame_t, place, K, None)
    return out, proj.region


def stamp_source(board, bg, place, K):
    """Synthesize ``I_s`` by mapping the board through the background pair's pose."""
    out, proj = _stamp(board, bg.frame_s, place, K, bg.pose)
    return out, proj.region


@dataclass
class Scene:
    """One synthesized stereo sample with everything needed downstream."""

    board: ObjectBoard
    background: BackgroundPair
    placement: BoardPlacement
    proj_t: BoardProjection
    proj_s: BoardProjection
    image_t: np.ndarray
    image_s: np.ndarray
    camera: CameraIntrinsics

    @property
    def region(self):
        return self.proj_t.region

    @property
    def pose(self):
        return self.background.pose

    def depth_t(self):
        """Ground-truth target depth (board over background), if the background has one."""
        if self.background.depth_t is None:
            return None
        return np.where(self.proj_t.region, self.proj_t.depth, self.background.depth_t[0])[None]

    def render_target(self, board_image):
        """``I'_t`` for a replacement board image (Tensor or array)."""
        return apply_stamp(board_image, self.background.frame_t, self.proj_t)


def build_scene(board, bg, place, K):
    proj_t = project_board(board.mask, place, K)
    if not proj_t.region.any():
        raise EmptyRegionError("projected board covers no target pixel")
    proj_s = project_board(board.mask, place, K, bg.pose)
    img = Tensor._wrap(board.image)
    it = apply_stamp(img, bg.frame_t, proj_t).data
    is_ = apply_stamp(img, bg.frame_s, proj_s).data
    return Scene(board, bg, place, proj_t, proj_s, it, is_, K)


@dataclass
class SceneSource:
    """Background pool + placement sampler + camera: the EoT distribution."""

    backgrounds: list
    K: CameraIntrinsics
    sampler: PlacementSampler

    def __post_init__(self):
        if not self.backgrounds:
            raise ConfigError("backgrounds", "background pool is empty")

    def draw(self, boards, max_tries=32):
        if isinstance(boards, ObjectBoard):
            boards = [boards]
        for _ in range(max_tries):
            board, bg, place = sample_scene(self.sampler, boards, self.backgrounds)
            try:
                return build_scene(board, bg, place, self.K)
            except EmptyRegionError:
                continue
        raise EmptyRegionError(f"no visible board in {max_tries} draws")

    def fork(self, seed, z_range=None, alpha_range=None):
        """Same backgrounds and camera, fresh sampler."""
        s = self.sampler
        return SceneSource(self.backgrounds, self.K,
                           PlacementSampler(z_range or s.z_range, alpha_range or s.alpha_range, seed))


# -- synthetic backgrounds ----------------------------------------------------

def _texture(rng, shape_hw, scale):
    h, w = shape_hw
    noise = rng.normal(size=(3, h, w))
    field_ = np.stack([gaussian_filter(ch, scale, mode="wrap") for ch in noise])
    field_ = (field_ - field_.mean(axis=(1, 2), keepdims=True)) / (field_.std(axis=(1, 2), keepdims=True) + 1e-12)
    base = rng.uniform(0.35, 0.65, size=(3, 1, 1))
    return np.clip(base + 0.18 * field_, 0.0, 1.0)


def plane_warp_coords(K, pose, plane_depth):
    """Source-frame pixel coordinates seen by each target pixel for a fronto-parallel plane."""
    u, v = pixel_grid(K)
    x = (u - K.cx) / K.fx * plane_depth
    y = (v - K.cy) / K.fy * plane_depth
    z = np.full_like(u, float(plane_depth))
    r, t = pose.rotation, pose.translation
    xs = r[0, 0] * x + r[0, 1] * y + r[0, 2] * z + t[0]
    ys = r[1, 0] * x + r[1, 1] * y + r[1, 2] * z + t[1]
    zs = r[2, 0] * x + r[2, 1] * y + r[2, 2] * z + t[2]
    return np.stack([K.fx * xs / zs + K.cx, K.fy * ys / zs + K.cy]), zs


def make_synthetic_background(seed, K, pose, plane_depth, texture_scale=2.0):
    """Procedural stereo pair looking at a textured fronto-parallel plane.

    The texture is generated in the source view on a canvas with enough
    margin to cover everything the target view sees; the target frame is the
    canvas resampled through the plane-induced warp. Reconstructing the
    target from the source with the true depth therefore reproduces it up to
    rounding.
    """
    if not plane_depth > 0:
        raise ContractError("plane_depth must be positive")
    rng = np.random.default_rng(seed)
    coords, zs = plane_warp_coords(K, pose, plane_depth)
    if np.any(zs <= 0):
        raise ContractError("background plane is behind the source camera")
    lo = np.floor(coords.reshape(2, -1).min(axis=1))
    hi = np.ceil(coords.reshape(2, -1).max(axis=1))
    mx = int(max(0, -lo[0], hi[0] - (K.width - 1))) + 2
    my = int(max(0, -lo[1], hi[1] - (K.height - 1))) + 2
    canvas = _texture(rng, (K.height + 2 * my, K.width + 2 * mx), texture_scale)
    frame_s = np.ascontiguousarray(canvas[:, my:my + K.height, mx:mx + K.width])
    shifted = coords + np.array([mx, my], dtype=np.float64)[:, None, None]
    # drop rounding noise so grid-aligned warps (identity pose) resample exactly
    nearest = np.round(shifted)
    shifted = np.where(np.abs(shifted - nearest) < 1e-9, nearest, shifted)
    frame_t, _ = bilinear_forward(np.ascontiguousarray(canvas[None]), np.ascontiguousarray(shifted[None]))
    depth = np.full((1, K.height, K.width), float(plane_depth))
    return BackgroundPair(np.ascontiguousarray(frame_t[0]), frame_s, pose, depth)


def make_procedural_board(seed, w=16, h=16, physical_w=2.0):
    """A car-rear-like test object: body colour, darker window band, two lights."""
    rng = np.random.default_rng(seed)
    physical_h = physical_w * h / w
    v, u = np.mgrid[0:h, 0:w] / np.array([h, w], dtype=float)[:, None, None]
    body = rng.uniform(0.15, 0.9, size=3)
    img = np.empty((3, h, w))
    img[:] = body[:, None, None]
    win = (v > 0.12) & (v < 0.42) & (u > 0.15) & (u < 0.85)
    img[:, win] = rng.uniform(0.05, 0.25, size=3)[:, None]
    lights = (v > 0.5) & (v < 0.65) & ((u < 0.22) | (u > 0.78))
    img[:, lights] = np.array([0.95, 0.15, 0.1])[:, None]
    plate = (v > 0.68) & (v < 0.8) & (u > 0.38) & (u < 0.62)
    img[:, plate] = 0.92
    img += 0.06 * gaussian_filter(rng.normal(size=(3, h, w)), (0, 1.0, 1.0))
    img = np.clip(img, 0.0, 1.0)
    mask = np.ones((1, h, w))
    mask[0, :2, :2] = mask[0, :2, -2:] = 0.0  # rounded roof corners
    mask[0, 0, 2:4] = mask[0, 0, -4:-2] = 0.0
    return ObjectBoard(img, mask, physical_w, physical_h)


def synthetic_pool(n, K, pose, plane_depth, texture_scale, seed):
    ss = np.random.SeedSequence(seed)
    return [make_synthetic_background(int(s.generate_state(1)[0]), K, pose, plane_depth, texture_scale)
            for s in ss.spawn(n)]


# -- PNG and scene-pair files ---------------------------------------------------

def save_png(path, img):
    """Write ``[3,H,W]`` or ``[1,H,W]`` values in [0,1] as an 8-bit PNG."""
    arr = np.asarray(img, dtype=np.float64)
    q = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    if q.shape[0] == 1:
        pil = Image.fromarray(q[0], mode="L")
    else:
        pil = Image.fromarray(np.transpose(q, (1, 2, 0)), mode="RGB")
    pil.save(path, format="PNG")


def load_png(path):
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read image {path}: {exc}") from exc
    return np.ascontiguousarray(np.transpose(arr, (2, 0, 1)))


def load_mask_png(path):
    img = load_png(path)
    return (img.max(axis=0, keepdims=True) > 0.5).astype(np.float64)


def load_board(image_path, mask_path, physical_w, physical_h):
    image = load_png(image_path)
    mask = load_mask_png(mask_path) if mask_path else np.ones((1,) + image.shape[1:])
    return ObjectBoard(image, mask, physical_w, physical_h)


def load_scene_pairs(directory):
    """Load ``<name>_t.png`` / ``<name>_s.png`` pairs with a ``<name>.json`` sidecar.

    The sidecar holds ``{fx, fy, cx, cy, rotation: 9 floats row-major,
    translation: 3 floats}``. Returns ``(backgrounds, K)``; every pair must
    share one camera.
    """
    names = sorted(f[:-6] for f in os.listdir(directory) if f.endswith("_t.png"))
    if not names:
        raise ConfigError("scene.directory", f"no *_t.png frames in {directory}")
    pairs, K = [], None
    for name in names:
        base = os.path.join(directory, name)
        try:
            with open(base + ".json") as fh:
                meta = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise FormatError(f"bad sidecar for {name}: {exc}") from exc
        ft = load_png(base + "_t.png")
        fs = load_png(base + "_s.png")
        k = CameraIntrinsics(float(meta["fx"]), float(meta["fy"]), float(meta["cx"]), float(meta["cy"]),
                             ft.shape[2], ft.shape[1])
        if K is not None and k != K:
            raise ConfigError("scene.directory", f"{name} uses different intrinsics")
        K = k
        pose = PoseTransform(np.reshape(meta["rotation"], (3, 3)), np.asarray(meta["translation"]))
        pairs.append(BackgroundPair(ft, fs, pose))
    return pairs, K
