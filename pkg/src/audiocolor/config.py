"""Run configuration: dataclasses, YAML loading, dotted-key overrides.

Unknown keys are rejected. ``RunConfig.finalize()`` syncs the derived fields
(conditioning dim from the backbone site, image size from the data config)
and must be called after construction; the loaders here do so.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .backbone import BackboneConfig
from .data import SceneFamily, SyntheticSceneSpec, default_scene_spec
from .errors import ValidationError
from .semantics import SemanticsConfig


@dataclass
class DataConfig:
    root: str = "data/synthetic"
    image_size: int = 32
    n_train: int = 400
    n_val: int = 64
    n_test: int = 500
    background_l: float = 70.0
    clip_seconds: float = 1.0
    sample_rate: int = 16_000
    tone_amplitude: float = 0.25
    noise_snr_db: float = 20.0
    families: list[dict] | None = None  # None -> built-in default families

    def scene_spec(self) -> SyntheticSceneSpec:
        if self.families is None:
            spec = default_scene_spec()
        else:
            spec = SyntheticSceneSpec(families=[
                SceneFamily(
                    name=f["name"], shape=f["shape"],
                    hue_a=tuple(f["hue_a"]), hue_b=tuple(f["hue_b"]),
                    tone_a_hz=float(f["tone_a_hz"]), tone_b_hz=float(f["tone_b_hz"]))
                for f in self.families])
        spec.image_size = self.image_size
        spec.background_l = self.background_l
        spec.clip_seconds = self.clip_seconds
        spec.sample_rate = self.sample_rate
        spec.tone_amplitude = self.tone_amplitude
        spec.noise_snr_db = self.noise_snr_db
        return spec


@dataclass
class StageConfig:
    stage: str
    epochs: int
    batch_size: int
    lr: float
    optimizer: str = "adam"
    mask_prob: float = 0.3        # stage 1 only
    use_rnet_r: bool = False      # stage 3: pull r from a trained RNet
    include_mlp: bool = False     # stage 3: also fine-tune the condition MLP
    seed: int | None = None       # None -> run-level seed

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError(f"{self.stage}: epochs must be >= 1")
        if self.batch_size < 1:
            raise ValidationError(f"{self.stage}: batch_size must be >= 1")
        if self.optimizer != "adam":
            raise ValidationError(f"{self.stage}: only the adam optimizer is supported")
        if not 0.0 <= self.mask_prob <= 1.0:
            raise ValidationError(f"{self.stage}: mask_prob must lie in [0, 1]")


@dataclass
class RelevanceConfig:
    head_dim: int = 64
    epochs: int = 120
    batch_size: int = 64
    lr: float = 2e-2


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    data: DataConfig = field(default_factory=DataConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    semantics: SemanticsConfig = field(default_factory=SemanticsConfig)
    relevance: RelevanceConfig = field(default_factory=RelevanceConfig)
    stage1: StageConfig = field(default_factory=lambda: StageConfig(
        stage="stage1", epochs=20, batch_size=16, lr=2e-4, mask_prob=0.3))
    stage2: StageConfig = field(default_factory=lambda: StageConfig(
        stage="stage2", epochs=20, batch_size=64, lr=1e-3))
    stage3: StageConfig = field(default_factory=lambda: StageConfig(
        stage="stage3", epochs=10, batch_size=16, lr=2e-4))
    no_multistep: StageConfig = field(default_factory=lambda: StageConfig(
        stage="no_multistep", epochs=20, batch_size=16, lr=2e-4))

    def finalize(self) -> "RunConfig":
        self.semantics.cond_dim = self.backbone.cond_dim
        self.semantics.image_size = self.data.image_size
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_DATACLASS_FIELDS = {
    "data": DataConfig,
    "backbone": BackboneConfig,
    "semantics": SemanticsConfig,
    "relevance": RelevanceConfig,
    "stage1": StageConfig,
    "stage2": StageConfig,
    "stage3": StageConfig,
    "no_multistep": StageConfig,
}


def _build_dataclass(cls, doc: dict, path: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ValidationError(f"unknown config key(s) at {path or 'top level'}: {unknown}")
    return doc


def config_from_dict(doc: dict) -> RunConfig:
    doc = dict(doc or {})
    _build_dataclass(RunConfig, doc, "")
    cfg = RunConfig()
    for key, value in doc.items():
        sub_cls = _DATACLASS_FIELDS.get(key)
        if sub_cls is not None:
            if not isinstance(value, dict):
                raise ValidationError(f"config section {key!r} must be a mapping")
            _build_dataclass(sub_cls, value, key)
            base = dataclasses.asdict(getattr(cfg, key))
            base.update(value)
            if sub_cls is BackboneConfig and "cond_dim" not in value:
                base["cond_dim"] = None  # let the site default recompute
            setattr(cfg, key, sub_cls(**base))
        else:
            setattr(cfg, key, value)
    return cfg.finalize()


def load_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    """Load YAML config (or defaults) and apply key=value dotted overrides.

    Overrides are merged into the raw document before construction so
    validation and derived defaults (e.g. the conditioning dim) re-run.
    """
    doc = {}
    if path is not None:
        text = Path(path).read_text()
        doc = yaml.safe_load(text) or {}
        if not isinstance(doc, dict):
            raise ValidationError(f"{path}: config must be a mapping")
    for item in overrides or []:
        if "=" not in item:
            raise ValidationError(f"override {item!r} must look like section.key=value")
        dotted, raw = item.split("=", 1)
        value = yaml.safe_load(raw)
        parts = dotted.strip().split(".")
        node = doc
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ValidationError(f"override path {dotted!r} clashes with a scalar")
        node[parts[-1]] = value
    return config_from_dict(doc)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
