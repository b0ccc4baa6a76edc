import struct

import numpy as np
import pytest

from advdepth import model as model_io
from advdepth.errors import FormatError, ShapeError, VersionError
from advdepth.model import DepthNet, disparity_to_depth
from advdepth.tensor import Tensor, mean

from gradcheck import check_grad


@pytest.fixture(scope="module")
def net():
    return DepthNet(seed=3)


def test_output_shape_and_bounds(net, rng):
    x = rng.uniform(size=(2, 3, 16, 24))
    d = net.predict(x)
    assert d.shape == (2, 1, 16, 24)
    single = net.predict(x[0])
    assert single.shape == (1, 16, 24)
    np.testing.assert_array_equal(single, d[0])
    # extreme inputs push the head towards saturation, the range still holds
    wild = DepthNet(seed=1, init_depth=50.0)
    for p in wild.parameters():
        p.data *= 40.0
    dd = wild.predict(rng.uniform(size=(3, 8, 8)) * 50.0)
    assert dd.min() >= wild.min_depth and dd.max() <= wild.max_depth


def test_disparity_endpoints_and_monotone():
    assert disparity_to_depth(Tensor(0.0), 0.1, 100.0).item() == pytest.approx(100.0, rel=1e-15)
    assert disparity_to_depth(Tensor(1.0), 0.1, 100.0).item() == pytest.approx(0.1, rel=1e-15)
    d = disparity_to_depth(Tensor(np.linspace(0, 1, 11)), 0.1, 100.0).data
    assert np.all(np.diff(d) < 0)


def test_initial_depth_near_init_value(rng):
    d = DepthNet(init_depth=20.0, seed=0).predict(rng.uniform(size=(3, 32, 64)))
    assert 15.0 < d.mean() < 25.0


def test_bad_spatial_size(net):
    with pytest.raises(ShapeError):
        net.predict(np.zeros((3, 12, 16)))


def test_gradient_wrt_conv_weights(rng):
    net = DepthNet(seed=5)
    x = Tensor(rng.uniform(size=(1, 3, 8, 16)))
    for name in ("enc2.w", "dec1.w", "head.w"):
        p0 = net.params[name].data.copy()

        def f(w, name=name):
            net.params[name] = w
            return mean(net(x))

        err = check_grad(f, [p0], n_coords=20, seed=7)
        net.params[name] = Tensor(p0, requires_grad=True)
        assert err <= 1e-4, name


def test_forward_deterministic(net, rng):
    x = rng.uniform(size=(3, 16, 16))
    assert net.predict(x).tobytes() == net.predict(x).tobytes()


def test_frozen_share_sees_updates_but_records_nothing(net):
    f = net.frozen(share=True)
    assert all(not p.requires_grad for p in f.parameters())
    assert all(a.data is b.data for a, b in zip(f.parameters(), net.parameters()))
    c = net.frozen()
    assert all(a.data is not b.data for a, b in zip(c.parameters(), net.parameters()))


def test_checkpoint_round_trip(tmp_path, net, rng):
    path = tmp_path / "n.dhck"
    model_io.save(net, str(path))
    back = model_io.load(str(path))
    for k in net.params:
        assert back.params[k].data.tobytes() == net.params[k].data.tobytes()
    x = rng.uniform(size=(3, 16, 16))
    assert back.predict(x).tobytes() == net.predict(x).tobytes()
    assert [f.name for f in tmp_path.iterdir()] == ["n.dhck"]  # no temp files left


def test_checkpoint_truncated_and_corrupt(tmp_path, net):
    path = tmp_path / "n.dhck"
    model_io.save(net, str(path))
    blob = path.read_bytes()
    for cut in (3, 10, 40, len(blob) // 2, len(blob) - 1):
        with pytest.raises(FormatError):
            model_io.loads(blob[:cut])
    with pytest.raises(FormatError):
        model_io.loads(b"XXXX" + blob[4:])
    with pytest.raises(FormatError):
        model_io.loads(blob + b"\0\0")
    with pytest.raises(FormatError):
        model_io.load(str(tmp_path / "missing.dhck"))


def test_checkpoint_version_error(tmp_path, net):
    path = tmp_path / "n.dhck"
    model_io.save(net, str(path))
    blob = bytearray(path.read_bytes())
    blob[4:8] = struct.pack("<I", model_io.CKPT_VERSION + 1)
    with pytest.raises(VersionError):
        model_io.loads(bytes(blob))


def test_checkpoint_header_layout(tmp_path, net):
    path = tmp_path / "n.dhck"
    model_io.save(net, str(path))
    blob = path.read_bytes()
    assert blob[:4] == b"DHCK"
    assert struct.unpack_from("<I", blob, 4)[0] == model_io.CKPT_VERSION
