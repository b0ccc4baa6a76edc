import json
import math

import numpy as np
import pytest

from advdepth import model as model_io
from advdepth.adversary import AttackConfig
from advdepth.errors import ConfigError, ContractError, NumericError
from advdepth.geometry import PoseTransform
from advdepth.model import DepthNet
from advdepth.scene import PlacementSampler, SceneSource, make_synthetic_background, synthetic_pool
from advdepth.tensor import Tensor
from advdepth.trainer import TrainConfig, harden, photometric_error, pipeline_loss, reconstruct

from gradcheck import check_grad


# -- independent photometric oracle --------------------------------------------------------

def _ssim_pixel(wa, wb):
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    ma, mb = wa.mean(), wb.mean()
    va = ((wa - ma) ** 2).mean()
    vb = ((wb - mb) ** 2).mean()
    cov = ((wa - ma) * (wb - mb)).mean()
    return (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2))


def pe_oracle(a, b, mask, alpha):
    C, H, W = a.shape
    pa = np.pad(a, ((0, 0), (1, 1), (1, 1)), mode="reflect")
    pb = np.pad(b, ((0, 0), (1, 1), (1, 1)), mode="reflect")
    total, n = 0.0, 0
    for y in range(H):
        for x in range(W):
            if not mask[y, x]:
                continue
            acc = 0.0
            for c in range(C):
                s = _ssim_pixel(pa[c, y:y + 3, x:x + 3], pb[c, y:y + 3, x:x + 3])
                acc += alpha / 2 * (1 - s) + (1 - alpha) * abs(a[c, y, x] - b[c, y, x])
            total += acc / C
            n += 1
    return total / n


@pytest.mark.parametrize("alpha", [0.85, 0.0, 1.0, 0.3])
def test_photometric_matches_oracle(rng, alpha):
    a, b = rng.uniform(size=(2, 3, 7, 9))
    mask = rng.uniform(size=(7, 9)) < 0.7
    got = photometric_error(a, b, mask[None], alpha).item()
    assert abs(got - pe_oracle(a, b, mask, alpha)) <= 1e-10


def test_photometric_examples(rng):
    a = rng.uniform(size=(3, 6, 6))
    full = np.ones((1, 6, 6), bool)
    assert photometric_error(a, a, full).item() == 0.0
    assert photometric_error(np.zeros((3, 6, 6)), np.ones((3, 6, 6)), full, 0.0).item() == 1.0
    b = rng.uniform(size=(3, 6, 6))
    assert photometric_error(a, b, full).item() == pytest.approx(photometric_error(b, a, full).item(), abs=1e-15)
    assert photometric_error(a, b, full).item() > 0
    with pytest.raises(ContractError):
        photometric_error(a, b, np.zeros((1, 6, 6), bool))


# -- reconstruction ----------------------------------------------------------------------------

def test_identity_reconstruction(camera, rng):
    img = rng.uniform(size=(3, camera.height, camera.width))
    depth = rng.uniform(2, 30, size=(1, camera.height, camera.width))
    r = reconstruct(img, depth, PoseTransform.identity(), camera)
    assert r.valid_mask.all()
    assert np.abs(r.image.data - img).max() <= 1e-12


def test_plane_reconstruction_and_degradation(camera, stereo):
    bg = make_synthetic_background(3, camera, stereo, 12.0)
    r = reconstruct(bg.frame_s, bg.depth_t, stereo, camera)
    v = r.valid_mask[0]
    err = np.abs(r.image.data - bg.frame_t)[:, v].mean()
    assert err < 1e-6
    r2 = reconstruct(bg.frame_s, bg.depth_t * 1.2, stereo, camera)
    v2 = r2.valid_mask[0] & v
    assert np.abs(r2.image.data - bg.frame_t)[:, v2].mean() > err + 1e-3


def test_reconstruct_shape_contract(camera, stereo):
    with pytest.raises(ContractError):
        reconstruct(np.zeros((3, 8, 8)), np.ones((1, 8, 8)), stereo, camera)


def test_invalid_where_sampling_leaves_frame(camera):
    img = np.zeros((3, camera.height, camera.width))
    r = reconstruct(img, np.full((1, camera.height, camera.width), 1.0), PoseTransform.stereo(0.54), camera)
    # a 21.6 px shift at 1 m: the leftmost columns sample outside the source
    assert not r.valid_mask[0, :, :21].any() and r.valid_mask[0, :, 22:].all()


# -- end-to-end gradient ---------------------------------------------------------------------------

def test_pipeline_gradient(source, board):
    net = DepthNet(seed=4)
    scene = source.draw(board)
    img = Tensor(scene.board.image)
    for name in ("enc1.w", "dec2.w"):
        p0 = net.params[name].data.copy()

        def f(w, name=name):
            net.params[name] = w
            return pipeline_loss(net, scene, img)

        err = check_grad(f, [p0], n_coords=20, seed=11)
        net.params[name] = Tensor(p0, requires_grad=True)
        assert err <= 1e-3, name


# -- training loop ---------------------------------------------------------------------------------

def small_cfg(**kw):
    base = dict(steps=3, batch_size=2, lr=1e-3, mode="selfsup", seed=7,
                attack=AttackConfig(kind="soft_l0", epsilon=0.1, steps=2, lr=0.05))
    base.update(kw)
    return TrainConfig(**base)


def test_train_config_validation():
    for kw in (dict(lr=0.0), dict(pe_alpha=1.5), dict(mode="contrastive"), dict(batch_size=0), dict(steps=-1)):
        with pytest.raises(ConfigError):
            TrainConfig(**kw)
    assert isinstance(TrainConfig(attack={"kind": "pgd_linf", "epsilon": 0.1}).attack, AttackConfig)


def test_empty_inputs_rejected(source, board, camera):
    with pytest.raises(ConfigError):
        harden(DepthNet(seed=0), [], source, small_cfg())
    empty = SceneSource.__new__(SceneSource)
    empty.backgrounds, empty.camera, empty.sampler = [], camera, PlacementSampler()
    with pytest.raises(ConfigError):
        harden(DepthNet(seed=0), [board], empty, small_cfg())


def test_training_deterministic(tmp_path, source, board):
    logs, blobs = [], []
    for run in ("a", "b"):
        net = DepthNet(seed=1)
        _, log = harden(net, [board], source, small_cfg(), out_dir=str(tmp_path / run))
        logs.append([(r["loss"], r["attack_adv_loss"]) for r in log])
        blobs.append((tmp_path / run / "final.dhck").read_bytes())
    assert logs[0] == logs[1]
    assert blobs[0] == blobs[1]
    lines = (tmp_path / "a" / "train_log.jsonl").read_text().splitlines()
    assert len(lines) == 3
    rec = json.loads(lines[0])
    assert set(rec) == {"step", "mode", "loss", "pe", "attack_adv_loss"}


def test_checkpoints_written(tmp_path, source, board):
    harden(DepthNet(seed=1), [board], source, small_cfg(steps=4, checkpoint_every=2, mode="benign"),
           out_dir=str(tmp_path))
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["ckpt_000002.dhck", "ckpt_000004.dhck", "final.dhck", "train_log.jsonl"]
    assert (tmp_path / "ckpt_000004.dhck").read_bytes() == (tmp_path / "final.dhck").read_bytes()


def test_sup_pseudo_zero_without_attack(source, board):
    net = DepthNet(seed=2)
    _, log = harden(net, [board], source, small_cfg(mode="sup_pseudo", attack=None, steps=1))
    assert log[0]["loss"] == 0.0


def test_sup_pseudo_loss_nonnegative_and_reference_frozen(source, board):
    net = DepthNet(seed=2)
    ref = net.frozen()
    before = {k: p.data.copy() for k, p in ref.params.items()}
    _, log = harden(net, [board], source, small_cfg(mode="sup_pseudo"), reference=ref)
    assert all(r["loss"] >= 0 for r in log) and log[-1]["loss"] > 0
    assert all(np.array_equal(before[k], p.data) for k, p in ref.params.items())


def test_benign_mode_skips_attack(source, board):
    _, log = harden(DepthNet(seed=2), [board], source, small_cfg(mode="benign", steps=2))
    assert all(math.isnan(r["attack_adv_loss"]) for r in log)


def test_nan_loss_aborts(source, board):
    net = DepthNet(seed=2)
    net.params["head.b"].data[...] = np.nan
    with pytest.raises(NumericError):
        harden(net, [board], source, small_cfg(mode="benign"))


def test_benign_training_converges(camera, stereo, board):
    # the plane sits at 8 m, the fresh net starts out predicting about 20 m
    bgs = synthetic_pool(4, camera, stereo, 8.0, 2.0, 0)
    src = SceneSource(bgs, camera, PlacementSampler((5.0, 10.0), (-math.pi / 6, math.pi / 6), 0))
    net = DepthNet(seed=0)
    cfg = TrainConfig(steps=2000, batch_size=2, lr=1e-3, mode="benign", seed=0)
    _, log = harden(net, [board], src, cfg)
    losses = np.array([r["loss"] for r in log])
    assert losses[-50:].mean() < 0.1 * losses[:5].mean()
