"""Tiny encoder-decoder depth network and its checkpoint format.

Checkpoint layout (little endian): ``b"DHCK"``, u32 version, u32 length +
UTF-8 JSON architecture descriptor, u32 parameter count, then per parameter
u32 name length + name + one tensor dump.
"""
import json
import math
import os
import struct
import tempfile

import numpy as np

from .errors import FormatError, ShapeError, VersionError
from .tensor import (Tensor, concat, conv2d, elu, no_grad, read_tensor, reciprocal, sigmoid, upsample2x,
                     dumps_tensor)

CKPT_MAGIC = b"DHCK"
CKPT_VERSION = 1

_MEAN, _STD = 0.45, 0.225


def disparity_to_depth(sigma, min_depth, max_depth):
    """Map a sigmoid output in (0, 1) to depth in [min_depth, max_depth]."""
    lo, hi = 1.0 / max_depth, 1.0 / min_depth
    return reciprocal(lo + (hi - lo) * sigma)


class DepthNet:
    """Encoder 3->c1->c2->c3 (stride 2, ELU), nearest-upsample decoder with skips.

    ``forward`` takes ``[3,H,W]`` or ``[N,3,H,W]`` images in [0, 1] and
    returns depth in metres with the same leading layout and one channel.
    """

    def __init__(self, channels=(8, 16, 32), min_depth=0.1, max_depth=100.0, init_depth=20.0, seed=0):
        self.channels = tuple(int(c) for c in channels)
        self.min_depth = float(min_depth)
        self.max_depth = float(max_depth)
        self.init_depth = float(init_depth)
        self.seed = int(seed)
        c1, c2, c3 = self.channels
        rng = np.random.default_rng(seed)
        shapes = [
            ("enc1", (c1, 3)), ("enc2", (c2, c1)), ("enc3", (c3, c2)),
            ("dec3", (c2, c3 + c2)), ("dec2", (c1, c2 + c1)), ("dec1", (c1, c1 + 3)), ("head", (1, c1)),
        ]
        self.params = {}
        for name, (fo, fi) in shapes:
            bound = math.sqrt(6.0 / (fi * 9))
            if name == "head":
                bound *= 0.01
            self.params[name + ".w"] = Tensor(rng.uniform(-bound, bound, size=(fo, fi, 3, 3)), requires_grad=True)
            self.params[name + ".b"] = Tensor(np.zeros(fo), requires_grad=True)
        # start from a mid-range depth so the first reprojections stay in view
        sigma0 = (1.0 / self.init_depth - 1.0 / self.max_depth) / (1.0 / self.min_depth - 1.0 / self.max_depth)
        self.params["head.b"].data[:] = math.log(sigma0 / (1.0 - sigma0))

    def descriptor(self):
        return {"arch": "unet3", "channels": list(self.channels), "min_depth": self.min_depth,
                "max_depth": self.max_depth}

    def parameters(self):
        return list(self.params.values())

    def copy(self):
        other = DepthNet.__new__(DepthNet)
        other.__dict__.update({k: v for k, v in self.__dict__.items() if k != "params"})
        other.params = {k: Tensor(v.data, requires_grad=True) for k, v in self.params.items()}
        return other

    def frozen(self, share=False):
        """Network whose parameters never join the gradient tape.

        With ``share=True`` the parameter arrays are shared, so in-place
        optimizer updates on ``self`` remain visible; otherwise they are copied.
        """
        other = DepthNet.__new__(DepthNet)
        other.__dict__.update({k: v for k, v in self.__dict__.items() if k != "params"})
        other.params = {k: (Tensor._wrap(v.data) if share else Tensor(v.data)) for k, v in self.params.items()}
        return other

    def _conv(self, name, x, stride=1):
        return conv2d(x, self.params[name + ".w"], self.params[name + ".b"], stride=stride, pad=1)

    def forward(self, img):
        single = img.ndim == 3
        x = img.reshape((1,) + img.shape) if single else img
        h, w = x.shape[2:]
        if h % 8 or w % 8:
            raise ShapeError(f"image size {h}x{w} must be divisible by 8")
        x = (x - _MEAN) * (1.0 / _STD)
        e1 = elu(self._conv("enc1", x, 2))
        e2 = elu(self._conv("enc2", e1, 2))
        e3 = elu(self._conv("enc3", e2, 2))
        d3 = elu(self._conv("dec3", concat([upsample2x(e3), e2], axis=1)))
        d2 = elu(self._conv("dec2", concat([upsample2x(d3), e1], axis=1)))
        d1 = elu(self._conv("dec1", concat([upsample2x(d2), x], axis=1)))
        sigma = sigmoid(self._conv("head", d1))
        depth = disparity_to_depth(sigma, self.min_depth, self.max_depth)
        return depth.reshape(depth.shape[1:]) if single else depth

    __call__ = forward

    def predict(self, img):
        """Depth as a plain array, without recording on the tape."""
        with no_grad():
            x = img if isinstance(img, Tensor) else Tensor._wrap(np.asarray(img, dtype=np.float64))
            return self.forward(x).data


def save(net, path):
    desc = json.dumps(net.descriptor(), sort_keys=True).encode()
    parts = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION), struct.pack("<I", len(desc)), desc,
             struct.pack("<I", len(net.params))]
    for name, p in net.params.items():
        bname = name.encode()
        parts += [struct.pack("<I", len(bname)), bname, dumps_tensor(p.data)]
    blob = b"".join(parts)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(path):
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    return loads(buf)


def loads(buf):
    if len(buf) < 12 or buf[:4] != CKPT_MAGIC:
        raise FormatError("not a depth-net checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != CKPT_VERSION:
        raise VersionError(f"checkpoint version {version}, this build reads {CKPT_VERSION}")
    (dlen,) = struct.unpack_from("<I", buf, 8)
    off = 12 + dlen
    if len(buf) < off + 4:
        raise FormatError("truncated checkpoint header")
    try:
        desc = json.loads(buf[12:off].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad architecture descriptor: {exc}") from exc
    if desc.get("arch") != "unet3":
        raise FormatError(f"unknown architecture {desc.get('arch')!r}")
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    params = {}
    for _ in range(count):
        if len(buf) < off + 4:
            raise FormatError("truncated checkpoint")
        (nlen,) = struct.unpack_from("<I", buf, off)
        off += 4
        name = buf[off:off + nlen].decode(errors="replace")
        off += nlen
        arr, off = read_tensor(buf, off)
        params[name] = arr
    if off != len(buf):
        raise FormatError("trailing bytes in checkpoint")
    net = DepthNet(desc["channels"], desc["min_depth"], desc["max_depth"])
    if set(params) != set(net.params):
        raise FormatError("checkpoint parameter names do not match the architecture")
    for name, arr in params.items():
        if arr.shape != net.params[name].shape:
            raise FormatError(f"parameter {name} has shape {arr.shape}, expected {net.params[name].shape}")
        net.params[name].data = arr
    return net
