import math
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from advdepth.geometry import CameraIntrinsics, PoseTransform  # noqa: E402
from advdepth.scene import PlacementSampler, SceneSource, make_procedural_board, synthetic_pool  # noqa: E402


@pytest.fixture(scope="session")
def camera():
    return CameraIntrinsics.centered(64, 32, 40.0)


@pytest.fixture(scope="session")
def stereo():
    return PoseTransform.stereo(0.54)


@pytest.fixture(scope="session")
def backgrounds(camera, stereo):
    return synthetic_pool(3, camera, stereo, 20.0, 2.0, 0)


@pytest.fixture(scope="session")
def board():
    return make_procedural_board(0)


@pytest.fixture
def source(backgrounds, camera):
    return SceneSource(backgrounds, camera, PlacementSampler((5.0, 10.0), (-math.pi / 6, math.pi / 6), 0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            if getattr(rep, "when", "call") != "call":
                continue
            lines += [v for k, v in getattr(rep, "user_properties", []) if k == "acceptance"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
