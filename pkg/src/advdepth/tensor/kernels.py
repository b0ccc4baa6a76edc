"""Backend selection for the hot kernels.

The compiled extension is preferred. Set ``ADVDEPTH_KERNELS=python`` to force
the numpy fallback (the benchmark and the backend-parity tests do this
per call through :func:`get_backend`).
"""
import logging
import os

from . import _pykernels

logger = logging.getLogger(__name__)

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels


def get_backend(name=None):
    if name is None:
        name = os.environ.get("ADVDEPTH_KERNELS", "cython" if _ckernels is not None else "python")
    if name not in _BACKENDS:
        if name == "cython":
            logger.warning("compiled kernels unavailable, falling back to numpy")
            return _pykernels
        raise ValueError(f"unknown kernel backend {name!r}")
    return _BACKENDS[name]


def available_backends():
    return sorted(_BACKENDS)


_active = get_backend()
BACKEND = "cython" if _active is _ckernels and _ckernels is not None else "python"

conv2d_forward = _active.conv2d_forward
conv2d_backward = _active.conv2d_backward
bilinear_forward = _active.bilinear_forward
bilinear_backward = _active.bilinear_backward
