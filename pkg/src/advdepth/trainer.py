"""Self-supervised (photometric) and pseudo-label adversarial training."""
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import model as model_io
from .adversary import AttackConfig, run_attack
from .errors import ConfigError, ContractError, NumericError
from .geometry import pixel_grid
from .scene import SceneSource
from .tensor import (Adam, Tensor, as_tensor, avg_pool3, backward, bilinear_sample, concat, maximum, mean,
                     mul, pad_reflect, reciprocal, square, stack, tabs, tsum)

logger = logging.getLogger(__name__)

TRAIN_MODES = ("selfsup", "sup_pseudo", "benign")


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 4
    lr: float = 1e-3
    attack: AttackConfig = None
    pe_alpha: float = 0.85
    mode: str = "selfsup"
    seed: int = 0
    log_every: int = 1
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.mode not in TRAIN_MODES:
            raise ConfigError("train.mode", f"must be one of {TRAIN_MODES}, got {self.mode!r}")
        if not self.lr > 0:
            raise ConfigError("train.lr", "must be positive")
        if not 0 <= self.pe_alpha <= 1:
            raise ConfigError("train.pe_alpha", "must lie in [0, 1]")
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("train.steps", "steps must be >= 0 and batch_size >= 1")
        if isinstance(self.attack, dict):
            self.attack = AttackConfig(**self.attack)

    @property
    def attack_enabled(self):
        return self.mode != "benign" and self.attack is not None and self.attack.steps > 0


@dataclass
class ReconstructionResult:
    image: Tensor  # I_{s->t}
    valid_mask: np.ndarray  # bool, [1,H,W] (or [N,1,H,W])


_SNAP = 1e-9


def reconstruct(I_s, depth, T, K):
    """Warp the source image into the target view using target-view depth.

    Each target pixel is lifted to 3-D with its depth, moved by ``T`` into
    the source camera, projected with ``K`` and ``I_s`` is bilinearly
    sampled there. Differentiable with respect to ``depth``. Pixels that land
    outside the source frame or behind the source camera are invalid.
    """
    I_s = as_tensor(I_s)
    depth = as_tensor(depth)
    single = depth.ndim == 3
    if single:
        depth = depth.reshape((1,) + depth.shape)
        src = I_s.reshape((1,) + I_s.shape)
    else:
        src = I_s
    if depth.shape[2:] != (K.height, K.width) or src.shape[2:] != (K.height, K.width):
        raise ContractError(f"depth {depth.shape} / image {I_s.shape} do not match the camera")

    u, v = pixel_grid(K)
    au = (u - K.cx) / K.fx
    av = (v - K.cy) / K.fy
    R, t = T.rotation, T.translation
    rows = [R[i, 0] * au + R[i, 1] * av + R[i, 2] for i in range(3)]
    # x_s / z_s == (rows[0] + t0 / d) / (rows[2] + t2 / d): exact for the identity pose
    inv = reciprocal(depth)
    den = inv * t[2] + rows[2]
    den_ok = den.data > 1e-9
    den_safe = maximum(den, 1e-9)
    us = (inv * t[0] + rows[0]) / den_safe * K.fx + K.cx
    vs = (inv * t[1] + rows[1]) / den_safe * K.fy + K.cy
    coords = concat([us, vs], axis=1)
    # snap coordinates that miss the frame border by rounding error only
    c = coords.data
    lim = np.array([K.width - 1, K.height - 1], dtype=np.float64)[None, :, None, None]
    snapped = np.clip(c, 0.0, lim)
    near = np.abs(snapped - c) < _SNAP
    offset = np.where(near, snapped - c, 0.0)
    if offset.any():
        coords = coords + offset
    img, in_view = bilinear_sample(src, coords)
    valid = (in_view[:, None] & den_ok)
    if single:
        return ReconstructionResult(img.reshape(img.shape[1:]), valid[0])
    return ReconstructionResult(img, valid)


_C1 = 0.01 ** 2
_C2 = 0.03 ** 2


def ssim(a, b):
    """Per-pixel SSIM over 3x3 windows with reflection padding at the border."""
    a = as_tensor(a)
    b = as_tensor(b)
    ap = pad_reflect(a, 1)
    bp = pad_reflect(b, 1)
    mu_a = avg_pool3(ap)
    mu_b = avg_pool3(bp)
    sig_a = avg_pool3(square(ap)) - square(mu_a)
    sig_b = avg_pool3(square(bp)) - square(mu_b)
    sig_ab = avg_pool3(mul(ap, bp)) - mul(mu_a, mu_b)
    num = (mul(mu_a, mu_b) * 2.0 + _C1) * (sig_ab * 2.0 + _C2)
    den = (square(mu_a) + square(mu_b) + _C1) * (sig_a + sig_b + _C2)
    return num / den


def photometric_map(a, b, alpha=0.85):
    """Per-pixel ``alpha/2 (1 - SSIM) + (1 - alpha) |a - b|``, averaged over channels."""
    a = as_tensor(a)
    b = as_tensor(b)
    ch_axis = a.ndim - 3
    l1 = tabs(a - b)
    if alpha > 0:
        pe = (1.0 - ssim(a, b)) * (alpha / 2.0) + l1 * (1.0 - alpha)
    else:
        pe = l1
    return mean(pe, axis=ch_axis, keepdims=True)


def photometric_error(a, b, mask, alpha=0.85):
    """Mean of the photometric map over mask-true pixels."""
    m = np.asarray(mask, dtype=bool)
    pe = photometric_map(a, b, alpha)
    m = np.broadcast_to(m, pe.shape)
    n = int(m.sum())
    if n == 0:
        raise ContractError("photometric_error: empty mask")
    return tsum(mul(pe, m.astype(np.float64))) * (1.0 / n)


# -- training steps ---------------------------------------------------------------

class TrainingContext:
    """Mutable state of one training run: the net, its optimizer and the samplers."""

    def __init__(self, net, boards, source, cfg, reference=None):
        if not boards:
            raise ConfigError("boards", "board pool is empty")
        if not isinstance(source, SceneSource) or not source.backgrounds:
            raise ConfigError("scene", "scene source is empty")
        self.net = net
        self.boards = list(boards)
        self.cfg = cfg
        self.source = source.fork(cfg.seed)
        self.rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
        self.opt = Adam(net.parameters(), lr=cfg.lr)
        self.reference = reference
        self.step_index = 0

    def draw_batch(self):
        board = self.boards[int(self.rng.integers(len(self.boards)))]
        return board, [self.source.draw(board) for _ in range(self.cfg.batch_size)]

    def attacked_board(self, board, scenes):
        """Inner maximisation: perturb the board against the current net on this batch."""
        if not self.cfg.attack_enabled:
            return board, float("nan")
        acfg = self.cfg.attack
        acfg = AttackConfig(**{**asdict(acfg), "seed": int(self.rng.integers(2 ** 31))})
        adv_board, report = run_attack(self.net, board, scenes, acfg)
        return adv_board, report.final_adv_loss


def selfsup_adv_step(ctx):
    """One photometric adversarial-training iteration; returns the log record."""
    board, scenes = ctx.draw_batch()
    adv_board, adv_loss = ctx.attacked_board(board, scenes)
    img_adv = np.stack([s.render_target(Tensor._wrap(adv_board.image)).data for s in scenes])
    depth = ctx.net(Tensor._wrap(img_adv))
    if not np.isfinite(depth.data).all():
        # NaN depth would only surface later as an empty valid mask
        raise NumericError(f"non-finite depth at step {ctx.step_index}")
    recons, targets, masks = [], [], []
    for i, s in enumerate(scenes):
        r = reconstruct(s.image_s, depth[i], s.pose, s.camera)
        recons.append(r.image)
        masks.append(r.valid_mask)
        targets.append(s.image_t)
    loss = photometric_error(np.stack(targets), stack(recons), np.stack(masks), ctx.cfg.pe_alpha)
    _finish(ctx, loss)
    return {"loss": loss.item(), "pe": loss.item(), "attack_adv_loss": adv_loss}


def sup_pseudo_step(ctx):
    """One pseudo-label adversarial-training iteration (MSE to a frozen reference)."""
    if ctx.reference is None:
        raise ConfigError("train.mode", "sup_pseudo needs a frozen reference network")
    board, scenes = ctx.draw_batch()
    adv_board, adv_loss = ctx.attacked_board(board, scenes)
    benign = np.stack([s.image_t for s in scenes])
    img_adv = np.stack([s.render_target(Tensor._wrap(adv_board.image)).data for s in scenes])
    pseudo = ctx.reference.predict(benign)
    depth = ctx.net(Tensor._wrap(img_adv))
    loss = mean(square(depth - pseudo))
    _finish(ctx, loss)
    return {"loss": loss.item(), "pe": float("nan"), "attack_adv_loss": adv_loss}


def _finish(ctx, loss):
    if not math.isfinite(loss.item()):
        raise NumericError(f"non-finite loss at step {ctx.step_index}")
    ctx.opt.zero_grad()
    backward(loss)
    ctx.opt.step()
    ctx.step_index += 1


def pipeline_loss(net, scene, board_image, alpha=0.85):
    """Photometric loss of a single scene for a fixed (already attacked) board image.

    Exposed for end-to-end gradient checks through stamp, network, warp and
    photometric error.
    """
    img = scene.render_target(board_image)
    depth = net(img)
    r = reconstruct(scene.image_s, depth, scene.pose, scene.camera)
    return photometric_error(scene.image_t, r.image, r.valid_mask, alpha)


def harden(net, boards, source, cfg, out_dir=None, reference=None, callback=None):
    """Run ``cfg.steps`` training iterations of ``cfg.mode`` on ``net`` in place.

    ``benign`` and ``selfsup`` both use the photometric objective (benign
    skips the inner attack); ``sup_pseudo`` regresses onto ``reference``
    (default: a frozen copy of ``net`` taken before the first step).
    Writes ``train_log.jsonl`` and checkpoints when ``out_dir`` is given.
    Returns ``(net, log)``.
    """
    if cfg.mode == "sup_pseudo" and reference is None:
        reference = net.frozen()
    ctx = TrainingContext(net, boards, source, cfg, reference)
    step_fn = sup_pseudo_step if cfg.mode == "sup_pseudo" else selfsup_adv_step
    log = []
    log_fh = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        log_fh = open(os.path.join(out_dir, "train_log.jsonl"), "w")
    try:
        for step in range(cfg.steps):
            rec = {"step": step, "mode": cfg.mode, **step_fn(ctx)}
            log.append(rec)
            if log_fh and (step % cfg.log_every == 0 or step == cfg.steps - 1):
                log_fh.write(json.dumps(_jsonable(rec), sort_keys=True) + "\n")
            if out_dir and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                model_io.save(net, os.path.join(out_dir, f"ckpt_{step + 1:06d}.dhck"))
            if callback is not None:
                callback(rec)
    finally:
        if log_fh:
            log_fh.close()
    if out_dir:
        model_io.save(net, os.path.join(out_dir, "final.dhck"))
    return net, log


def _jsonable(rec):
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in rec.items()}
