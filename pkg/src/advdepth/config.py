"""Experiment configuration: one TOML (or JSON) file drives every subcommand.

Angles are written in degrees and converted to radians here, once.
"""
import json
import math
import os
from dataclasses import dataclass, field, fields

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .adversary import AttackConfig
from .errors import AdvDepthError, ConfigError, FormatError
from .geometry import CameraIntrinsics, PoseTransform
from .scene import (PlacementSampler, SceneSource, load_board, load_scene_pairs, make_procedural_board,
                    synthetic_pool)
from .trainer import TrainConfig


@dataclass
class SceneSpec:
    kind: str = "synthetic"  # or "directory"
    directory: str = None
    n_backgrounds: int = 8
    plane_depth: float = 20.0
    texture_scale: float = 2.0
    seed: int = 0
    z_range: tuple = (5.0, 10.0)
    alpha_range_deg: tuple = (-30.0, 30.0)


@dataclass
class EvalSpec:
    z_range: tuple = (5.0, 30.0)
    alpha_range_deg: tuple = (-30.0, 30.0)
    n_scenes: int = 100
    seed: int = 0


@dataclass
class ExperimentConfig:
    camera: dict = field(default_factory=lambda: {"width": 64, "height": 32, "focal": 40.0, "baseline": 0.54})
    scene: SceneSpec = field(default_factory=SceneSpec)
    boards: list = field(default_factory=lambda: [{"procedural": 0}])
    target: dict = None
    train: TrainConfig = field(default_factory=TrainConfig)
    init_checkpoint: str = None
    attacks: list = field(default_factory=lambda: [AttackConfig()])
    eval: EvalSpec = field(default_factory=EvalSpec)
    output_dir: str = "runs/out"
    seed: int = 0
    base_dir: str = "."

    # -- derived objects ------------------------------------------------------

    def intrinsics(self):
        c = self.camera
        w, h = int(c.get("width", 64)), int(c.get("height", 32))
        if "fx" in c:
            return CameraIntrinsics(float(c["fx"]), float(c.get("fy", c["fx"])), float(c.get("cx", (w - 1) / 2)),
                                    float(c.get("cy", (h - 1) / 2)), w, h)
        return CameraIntrinsics.centered(w, h, float(c.get("focal", 40.0)))

    def pose(self):
        return PoseTransform.stereo(float(self.camera.get("baseline", 0.54)))

    def backgrounds(self):
        s = self.scene
        if s.kind == "directory":
            pairs, K = load_scene_pairs(self._path(s.directory))
            return pairs, K
        K = self.intrinsics()
        return synthetic_pool(s.n_backgrounds, K, self.pose(), s.plane_depth, s.texture_scale, s.seed), K

    def train_source(self, backgrounds=None):
        bgs, K = backgrounds or self.backgrounds()
        s = self.scene
        return SceneSource(bgs, K, PlacementSampler(tuple(s.z_range), _radians(s.alpha_range_deg), self.seed))

    def eval_source(self, backgrounds=None):
        bgs, K = backgrounds or self.backgrounds()
        e = self.eval
        return SceneSource(bgs, K, PlacementSampler(tuple(e.z_range), _radians(e.alpha_range_deg), e.seed))

    def board_pool(self):
        return [self._board(b) for b in self.boards]

    def target_board(self):
        return self._board(self.target) if self.target else self._board(self.boards[0])

    def _board(self, spec):
        if "procedural" in spec:
            return make_procedural_board(int(spec["procedural"]), int(spec.get("w", 16)), int(spec.get("h", 16)),
                                         float(spec.get("physical_w", 2.0)))
        pw = float(spec["physical_w"])
        ph = float(spec.get("physical_h", pw))
        mask = spec.get("mask")
        return load_board(self._path(spec["image"]), self._path(mask) if mask else None, pw, ph)

    def _path(self, p):
        return p if os.path.isabs(p) else os.path.join(self.base_dir, p)

    # -- validation -----------------------------------------------------------

    def validate(self):
        """Reject bad values before any compute starts."""
        try:
            self.intrinsics()
            self.pose()
        except AdvDepthError as exc:
            raise ConfigError("camera", str(exc)) from exc
        s = self.scene
        if s.kind not in ("synthetic", "directory"):
            raise ConfigError("scene.kind", f"must be 'synthetic' or 'directory', got {s.kind!r}")
        if s.kind == "directory":
            if not s.directory or not os.path.isdir(self._path(s.directory)):
                raise ConfigError("scene.directory", f"not a directory: {s.directory!r}")
        else:
            if not s.plane_depth > 0:
                raise ConfigError("scene.plane_depth", "must be positive")
            if s.n_backgrounds < 1:
                raise ConfigError("scene.n_backgrounds", "must be >= 1")
        _check_ranges("scene", s.z_range, s.alpha_range_deg)
        _check_ranges("eval", self.eval.z_range, self.eval.alpha_range_deg)
        if self.eval.n_scenes < 1:
            raise ConfigError("eval.n_scenes", "must be >= 1")
        if not self.boards:
            raise ConfigError("boards", "need at least one board")
        for i, b in enumerate(self.boards + ([self.target] if self.target else [])):
            name = "target" if i == len(self.boards) else f"boards[{i}]"
            if not isinstance(b, dict):
                raise ConfigError(name, "must be a table")
            if "procedural" in b:
                continue
            if "image" not in b or "physical_w" not in b:
                raise ConfigError(name, "needs 'image' and 'physical_w' (or 'procedural')")
            for key in ("image", "mask"):
                if b.get(key) and not os.path.isfile(self._path(b[key])):
                    raise ConfigError(f"{name}.{key}", f"file not found: {b[key]}")
        if self.init_checkpoint and not os.path.isfile(self._path(self.init_checkpoint)):
            raise ConfigError("init_checkpoint", f"file not found: {self.init_checkpoint}")
        return self


def _radians(pair):
    return tuple(math.radians(float(a)) for a in pair)


def _check_ranges(section, z_range, alpha_deg):
    try:
        PlacementSampler(tuple(float(z) for z in z_range), _radians(alpha_deg), 0)
    except ConfigError as exc:
        raise ConfigError(f"{section}.{exc.field}", exc.message) from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(section, f"ranges must be pairs of numbers: {exc}") from exc


def read_config_file(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.endswith(".json"):
            return json.loads(raw.decode())
        return tomllib.loads(raw.decode())
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError("<file>", f"cannot parse {path}: {exc}") from exc


def apply_overrides(data, overrides):
    """``overrides``: iterable of ``("a.b.c", value)``; creates tables as needed."""
    for dotted, value in overrides:
        node = data
        keys = dotted.split(".")
        for k in keys[:-1]:
            nxt = node.setdefault(k, {})
            if not isinstance(nxt, dict):
                raise ConfigError(dotted, f"{k} is not a table")
            node = nxt
        node[keys[-1]] = value
    return data


def _build(cls, data, section):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(section, "must be a table")
    known = {f.name for f in fields(cls) if f.init}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{section}.{unknown[0]}", "unknown field")
    try:
        return cls(**data)
    except ConfigError as exc:
        raise ConfigError(f"{section}.{exc.field.split('.')[-1]}", exc.message) from exc
    except TypeError as exc:
        raise ConfigError(section, str(exc)) from exc


_TOP = {"camera", "scene", "boards", "target", "train", "init_checkpoint", "attacks", "eval", "output_dir", "seed"}


def build_config(data, base_dir="."):
    unknown = sorted(set(data) - _TOP)
    if unknown:
        raise ConfigError(unknown[0], "unknown top-level field")
    train = dict(data.get("train") or {})
    attack = train.pop("attack", None)
    cfg = ExperimentConfig(
        camera={**ExperimentConfig().camera, **(data.get("camera") or {})},
        scene=_build(SceneSpec, data.get("scene"), "scene"),
        boards=list(data.get("boards") or [{"procedural": 0}]),
        target=data.get("target"),
        train=_build(TrainConfig, train, "train"),
        init_checkpoint=data.get("init_checkpoint"),
        attacks=[_build(AttackConfig, a, f"attacks[{i}]") for i, a in enumerate(data.get("attacks") or [{}])],
        eval=_build(EvalSpec, data.get("eval"), "eval"),
        output_dir=str(data.get("output_dir", "runs/out")),
        seed=int(data.get("seed", 0)),
        base_dir=base_dir,
    )
    if attack is not None:
        cfg.train.attack = _build(AttackConfig, attack, "train.attack")
    return cfg.validate()


def load_config(path=None, overrides=()):
    data = read_config_file(path) if path else {}
    base = os.path.dirname(os.path.abspath(path)) if path else os.getcwd()
    return build_config(apply_overrides(data, overrides), base)
