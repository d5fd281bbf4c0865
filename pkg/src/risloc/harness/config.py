"""Experiment configuration: YAML in, validated dataclasses out."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from ..baselines.crlb import GDConfig
from ..policy.network import HEAD_LAYERS, HEAD_WIDTH, HIDDEN
from ..policy.network import LOSSES, FEATURE_DIMS
from ..scene import ConfigError, Scene, desk_scene, paper_scene
from ..training import TrainConfig

METHODS = ("active", "static-random", "static-learned", "wknn", "crlb-gd")
LEARNED = ("active", "static-random", "static-learned")


@dataclass
class Seeds:
    train: int
    eval: int
    val: int = 2
    warmup: int = 3
    init: int = 4
    design: int = 5
    fingerprint: int = 6
    crlb: int = 7


@dataclass
class TrainingBudget:
    steps: int = 800
    batch_size: int = 256
    lr: float = 1e-3
    clip_norm: float = 10.0
    steps_per_epoch: int = 4
    val_size: int = 512
    patience: int | None = None
    warmup_samples: int = 10_000
    loss: str = "final"
    hidden: int = HIDDEN
    head_width: int = HEAD_WIDTH
    head_layers: int = HEAD_LAYERS
    dnn_layers: list = field(default_factory=lambda: [200, 200, 200, 3])


@dataclass
class Evaluation:
    episodes: int = 1000
    chunk: int = 250


@dataclass
class Fingerprinting:
    realizations: int = 1
    k: int = 5
    pitch: float = 1.0


@dataclass
class ExperimentConfig:
    scene: Scene
    frames: int
    snr_db: list
    methods: list
    seeds: Seeds
    output_dir: str
    feature_mode: str = "pilot"
    training: TrainingBudget = field(default_factory=TrainingBudget)
    evaluation: Evaluation = field(default_factory=Evaluation)
    fingerprint: Fingerprinting = field(default_factory=Fingerprinting)
    crlb: GDConfig = field(default_factory=GDConfig)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if int(self.frames) < 1:
            raise ConfigError("frames must be >= 1")
        if not self.snr_db:
            raise ConfigError("snr_db must list at least one SNR")
        if not self.methods:
            raise ConfigError("methods must not be empty")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {list(METHODS)}")
        if self.feature_mode not in FEATURE_DIMS:
            raise ConfigError(f"feature_mode must be one of {sorted(FEATURE_DIMS)}")
        if self.training.loss not in LOSSES:
            raise ConfigError(f"training.loss must be one of {sorted(LOSSES)}")
        if self.evaluation.episodes < 1:
            raise ConfigError("evaluation.episodes must be >= 1")
        if self.fingerprint.realizations < 1:
            raise ConfigError("fingerprint.realizations must be >= 1")
        if self.seeds.eval in (self.seeds.train, self.seeds.val, self.seeds.warmup):
            raise ConfigError("the evaluation seed must differ from the training seeds")

    def train_config(self) -> TrainConfig:
        t = self.training
        return TrainConfig(steps=t.steps, batch_size=t.batch_size, lr=t.lr, clip_norm=t.clip_norm,
                           steps_per_epoch=t.steps_per_epoch, val_size=t.val_size, patience=t.patience,
                           warmup_samples=t.warmup_samples, seed=self.seeds.train, val_seed=self.seeds.val,
                           warmup_seed=self.seeds.warmup)

    def to_dict(self) -> dict:
        return {
            "scene": self.scene.to_dict(),
            "frames": int(self.frames),
            "snr_db": [float(s) for s in self.snr_db],
            "methods": list(self.methods),
            "seeds": asdict(self.seeds),
            "output_dir": str(self.output_dir),
            "feature_mode": self.feature_mode,
            "training": asdict(self.training),
            "evaluation": asdict(self.evaluation),
            "fingerprint": asdict(self.fingerprint),
            "crlb": asdict(self.crlb),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a mapping")
        _check_keys("config", d, cls, required=("scene", "frames", "snr_db", "methods", "seeds", "output_dir"))
        scene = d["scene"]
        if isinstance(scene, str):
            scene = {"paper": paper_scene, "desk": desk_scene}.get(scene)
            if scene is None:
                raise ConfigError(f"unknown scene preset {d['scene']!r}; use 'paper', 'desk' or a mapping")
            scene = scene()
        else:
            scene = Scene.from_dict(scene)
        return cls(
            scene=scene,
            frames=int(d["frames"]),
            snr_db=[float(s) for s in _as_list(d["snr_db"])],
            methods=list(_as_list(d["methods"])),
            seeds=_section("seeds", Seeds, d["seeds"], required=("train", "eval")),
            output_dir=str(d["output_dir"]),
            feature_mode=d.get("feature_mode", "pilot"),
            training=_section("training", TrainingBudget, d.get("training", {})),
            evaluation=_section("evaluation", Evaluation, d.get("evaluation", {})),
            fingerprint=_section("fingerprint", Fingerprinting, d.get("fingerprint", {})),
            crlb=_section("crlb", GDConfig, d.get("crlb", {})),
        )


def _as_list(value):
    return value if isinstance(value, (list, tuple)) else [value]


def _check_keys(where, d, cls, required=()):
    for key in required:
        if key not in d:
            raise ConfigError(f"{where}: missing required key '{key}'")
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


def _section(where, cls, d, required=()):
    if d is None:
        d = {}
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a mapping")
    _check_keys(where, d, cls, required)
    return cls(**d)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path) as fh:
        return ExperimentConfig.from_dict(yaml.safe_load(fh))


def save_config(config: ExperimentConfig, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(dump_config(config))


def dump_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False)


def default_config(profile: str = "desk", output_dir: str = "runs/desk") -> ExperimentConfig:
    """Desk profile: 4x4 RIS, T=4. Paper profile: 8x8 RIS, T=6, 2,048,000 samples."""
    if profile == "desk":
        return ExperimentConfig(desk_scene(), 4, [20.0], list(METHODS), Seeds(train=1, eval=1000), output_dir)
    if profile == "paper":
        budget = TrainingBudget(steps=8000)
        return ExperimentConfig(paper_scene(), 6, [0.0, 5.0, 10.0, 15.0, 20.0], list(METHODS),
                                Seeds(train=1, eval=1000), output_dir, training=budget)
    raise ConfigError(f"unknown profile {profile!r}")
