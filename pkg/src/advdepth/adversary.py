"""Adversarial perturbations of an object board against a depth network.

All attacks share one objective: make the object look farther away by
minimising the mean of ``(1 / depth)^2`` over the object's region in the
synthesized target view, averaged over randomly drawn scenes (expectation
over transformation).
"""
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import AttackError, ConfigError, EmptyRegionError
from .scene import Scene, SceneSource
from .tensor import (Adam, Tensor, backward, clip01, mul, reciprocal, square, stack, tanh, tmax, tsum,
                     where)

ATTACK_KINDS = ("soft_l0", "pgd_linf", "patch")


@dataclass
class AttackConfig:
    kind: str = "soft_l0"
    epsilon: float = 0.1
    steps: int = 100
    lr: float = 0.05
    step_size: float = None  # pgd only; defaults to 2.5 * epsilon / 10
    eot_samples: int = 1
    seed: int = 0
    gamma: float = 0.05
    maxp: float = 1.0
    lambda_pix: float = 0.01
    init: float = 0.0

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ConfigError("attack.kind", f"must be one of {ATTACK_KINDS}, got {self.kind!r}")
        if self.kind == "pgd_linf":
            if self.epsilon < 0:
                raise ConfigError("attack.epsilon", "must be >= 0")
        elif not 0 < self.epsilon <= 1:
            raise ConfigError("attack.epsilon", "must lie in (0, 1]")
        if self.steps < 0:
            raise ConfigError("attack.steps", "must be >= 0")
        if self.eot_samples < 1:
            raise ConfigError("attack.eot_samples", "must be >= 1")
        if self.gamma <= 0 or self.maxp <= 0:
            raise ConfigError("attack.gamma", "gamma and maxp must be positive")

    @property
    def pgd_step(self):
        return 2.5 * self.epsilon / 10 if self.step_size is None else self.step_size


@dataclass
class AttackReport:
    kind: str
    epsilon: float
    steps: int
    final_adv_loss: float
    final_pixel_norm: float
    perturbed_fraction: float
    per_step_loss: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


@dataclass
class PerturbationState:
    b_p: Tensor
    b_n: Tensor
    maxp: float = 1.0
    gamma: float = 0.05
    lambda_pix: float = 0.01

    @classmethod
    def init(cls, shape, value=0.0, maxp=1.0, gamma=0.05, lambda_pix=0.01):
        return cls(Tensor(np.full(shape, value), requires_grad=True),
                   Tensor(np.full(shape, value), requires_grad=True), maxp, gamma, lambda_pix)


def materialize_delta(s):
    """``maxp * (clip(b_p) - clip(b_n))``, in ``[-maxp, maxp]``."""
    return (clip01(s.b_p) - clip01(s.b_n)) * s.maxp


def pixel_norm(s):
    """Soft pixel count of the perturbation, normalised by ``h * w``.

    Each pixel contributes its channel-max of ``(tanh(b / gamma) + 1) / 2``
    for both components, so values range over (0, 2).
    """
    h, w = s.b_p.shape[-2:]
    pos = tmax((tanh(s.b_p * (1.0 / s.gamma)) + 1.0) * 0.5, axis=0)
    neg = tmax((tanh(s.b_n * (1.0 / s.gamma)) + 1.0) * 0.5, axis=0)
    return (tsum(pos) + tsum(neg)) * (1.0 / (h * w))


def hard_l0_project(delta, epsilon):
    """Keep the ``floor(epsilon*h*w)`` pixels with the largest channel-max ``|delta|``.

    Ties are broken by row-major pixel index (earlier pixels win).
    """
    d = np.asarray(delta.data if isinstance(delta, Tensor) else delta, dtype=np.float64)
    if not 0 < epsilon <= 1:
        raise ConfigError("epsilon", "must lie in (0, 1]")
    h, w = d.shape[-2:]
    k = int(math.floor(epsilon * h * w + 1e-9))
    mag = np.abs(d).max(axis=0).ravel()
    order = np.argsort(-mag, kind="stable")
    keep = np.zeros(h * w, dtype=bool)
    keep[order[:k]] = True
    return np.where(keep.reshape(h, w)[None], d, 0.0)


def adversarial_loss(net, board_image, scenes):
    """Mean ``(1/depth)^2`` over the object regions of ``scenes``."""
    imgs = stack([s.render_target(board_image) for s in scenes])
    depth = net(imgs)
    region = np.stack([s.region for s in scenes])[:, None].astype(np.float64)
    n = region.sum()
    if n == 0:
        raise AttackError("object region empty in every scene")
    inv = reciprocal(depth)
    return tsum(mul(square(inv), region)) * (1.0 / n)


def perturbed_fraction(original, perturbed, threshold=1.0 / 255):
    diff = np.abs(np.asarray(perturbed) - np.asarray(original)).max(axis=0)
    return float((diff > threshold).mean())


class _SceneStream:
    """Fixed scene list (reused every step) or fresh EoT draws from a source."""

    def __init__(self, scenes, board, cfg):
        self.board = board
        self.n = cfg.eot_samples
        if isinstance(scenes, SceneSource):
            self.source = scenes.fork(cfg.seed)
            self.fixed = None
        else:
            self.source = None
            self.fixed = list(scenes)
            if not self.fixed:
                raise AttackError("no scenes to attack")
            if not any(s.region.any() for s in self.fixed):
                raise AttackError("object region empty in every scene")

    def next(self):
        if self.fixed is not None:
            return self.fixed
        try:
            return [self.source.draw(self.board) for _ in range(self.n)]
        except EmptyRegionError as exc:
            raise AttackError(str(exc)) from exc


def _target(net):
    return net.frozen(share=True)


def soft_l0_attack(net, board, scenes, cfg):
    """Sparse attack via the soft-L0 relaxation, certified by a final hard projection.

    ``scenes`` is either a :class:`SceneSource` (one fresh draw of
    ``cfg.eot_samples`` scenes per step) or a fixed list of :class:`Scene`.
    """
    if cfg.kind != "soft_l0":
        raise ConfigError("attack.kind", "soft_l0_attack needs kind='soft_l0'")
    target = _target(net)
    stream = _SceneStream(scenes, board, cfg)
    base = Tensor._wrap(board.image)
    state = PerturbationState.init(board.image.shape, cfg.init, cfg.maxp, cfg.gamma, cfg.lambda_pix)
    opt = Adam([state.b_p, state.b_n], lr=cfg.lr)
    trace = []
    adv_val = pix_val = float("nan")
    for _ in range(cfg.steps):
        batch = stream.next()
        img = clip01(base + materialize_delta(state))
        adv = adversarial_loss(target, img, batch)
        pix = pixel_norm(state)
        loss = adv + pix * state.lambda_pix
        opt.zero_grad()
        backward(loss)
        opt.step()
        adv_val, pix_val = adv.item(), pix.item()
        trace.append(loss.item())
    delta = hard_l0_project(materialize_delta(state).data, cfg.epsilon)
    adv_board = board.with_image(board.image + delta)
    if cfg.steps == 0:
        pix_val = pixel_norm(state).item()
    return adv_board, AttackReport("soft_l0", cfg.epsilon, cfg.steps, adv_val, pix_val,
                                   perturbed_fraction(board.image, adv_board.image), trace)


def _linf_project(a, delta, eps):
    """``clip01(a + clip(delta))`` with ``|result - a| <= eps`` holding in floating point."""
    img = np.clip(a + np.clip(delta, -eps, eps), 0.0, 1.0)
    # a + eps can round one ulp past the ball; step those pixels back towards a
    over = np.abs(img - a) > eps
    while over.any():
        img[over] = np.nextafter(img[over], a[over])
        over = np.abs(img - a) > eps
    return img


def pgd_linf_attack(net, board, scenes, cfg):
    """Sign-gradient descent on the adversarial loss inside an L-inf ball."""
    if cfg.kind != "pgd_linf":
        raise ConfigError("attack.kind", "pgd_linf_attack needs kind='pgd_linf'")
    target = _target(net)
    stream = _SceneStream(scenes, board, cfg)
    eps = float(cfg.epsilon)
    step = cfg.pgd_step
    a = board.image
    delta = np.zeros_like(a)
    trace = []
    adv_val = float("nan")
    for _ in range(cfg.steps):
        batch = stream.next()
        d = Tensor(delta, requires_grad=True)
        adv = adversarial_loss(target, Tensor._wrap(a) + d, batch)
        backward(adv)
        delta = delta - step * np.sign(d.grad)
        delta = _linf_project(a, delta, eps) - a
        adv_val = adv.item()
        trace.append(adv_val)
    adv_board = board.with_image(_linf_project(a, delta, eps))
    return adv_board, AttackReport("pgd_linf", eps, cfg.steps, adv_val, 0.0,
                                   perturbed_fraction(board.image, adv_board.image), trace)


def patch_rect(h, w, area_fraction):
    """Centred rectangle with the board's aspect ratio covering ~``area_fraction``."""
    s = math.sqrt(area_fraction)
    ph = min(h, max(1, int(round(h * s))))
    pw = min(w, max(1, int(round(w * s))))
    top = (h - ph) // 2
    left = (w - pw) // 2
    m = np.zeros((h, w), dtype=bool)
    m[top:top + ph, left:left + pw] = True
    return m


def patch_attack(net, board, scenes, cfg):
    """Unbounded-magnitude attack confined to a centred patch."""
    if cfg.kind != "patch":
        raise ConfigError("attack.kind", "patch_attack needs kind='patch'")
    target = _target(net)
    stream = _SceneStream(scenes, board, cfg)
    rect = patch_rect(board.h, board.w, cfg.epsilon)[None]
    base = Tensor._wrap(board.image)
    p = Tensor(board.image, requires_grad=True)
    opt = Adam([p], lr=cfg.lr)
    trace = []
    adv_val = float("nan")
    for _ in range(cfg.steps):
        batch = stream.next()
        img = where(rect, clip01(p), base)
        adv = adversarial_loss(target, img, batch)
        opt.zero_grad()
        backward(adv)
        opt.step()
        np.clip(p.data, 0.0, 1.0, out=p.data)
        adv_val = adv.item()
        trace.append(adv_val)
    adv_board = board.with_image(np.where(rect, np.clip(p.data, 0.0, 1.0), board.image))
    return adv_board, AttackReport("patch", cfg.epsilon, cfg.steps, adv_val, 0.0,
                                   perturbed_fraction(board.image, adv_board.image), trace)


_ATTACKS = {"soft_l0": soft_l0_attack, "pgd_linf": pgd_linf_attack, "patch": patch_attack}


def run_attack(net, board, scenes, cfg):
    return _ATTACKS[cfg.kind](net, board, scenes, cfg)


def random_l0_board(board, epsilon, seed=0, maxp=1.0):
    """Board with ``floor(epsilon*h*w)`` random pixels set to random full-magnitude noise.

    The same pixel budget as an L0 attack but no optimisation; used as the
    reference level of "harmless" depth variation.
    """
    rng = np.random.default_rng(seed)
    h, w = board.h, board.w
    k = int(math.floor(epsilon * h * w + 1e-9))
    idx = rng.permutation(h * w)[:k]
    delta = np.zeros((3, h * w))
    delta[:, idx] = maxp * rng.choice([-1.0, 1.0], size=(3, k))
    return board.with_image(board.image + delta.reshape(3, h, w))


__all__ = ["ATTACK_KINDS", "AttackConfig", "AttackReport", "PerturbationState", "Scene", "adversarial_loss",
           "hard_l0_project", "materialize_delta", "patch_attack", "patch_rect", "perturbed_fraction",
           "pgd_linf_attack", "pixel_norm", "random_l0_board", "run_attack", "soft_l0_attack"]
