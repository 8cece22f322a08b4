"""Scene-semantic encoders and projections.

* ``VisualSemanticEncoder``: four (conv, ReLU, pool) blocks plus two linear
  layers over a ground-truth color image; the output is L2-normalized into
  the visual semantic space.
* ``AudioEncoder``: small conv encoder with global pooling over a log-mel
  spectrogram, emitting a fixed-length raw audio feature.
* ``AudioToVisual``: two FC layers projecting audio features into the visual
  semantic space (the distillation target space).
* ``ConditionProjector``: the MLP turning a semantic vector into the
  conditioning vector consumed by the injection heads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import Spectrogram
from .colorspace import RgbImage
from .errors import ValidationError
from .nn import (Conv2d, Flatten, GlobalAvgPool, Linear, MaxPool2, Module,
                 ReLU, Sequential)

NORM_EPS = 1e-12


@dataclass
class SemanticsConfig:
    embed_dim: int = 128            # d, shared visual/audio semantic space
    audio_dim: int = 256            # d_a, raw audio feature length
    cond_dim: int = 128             # d_c, conditioning vector length
    image_size: int = 32
    visual_channels: tuple[int, ...] = (16, 32, 64, 128)
    audio_channels: tuple[int, ...] = (16, 32, 64, 128)
    visual_fc_hidden: int = 256


@dataclass
class VisualSemantic:
    """Unit-norm scene color semantics extracted from a color image."""

    f: np.ndarray

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=np.float64)
        if self.f.ndim != 1:
            raise ValidationError("visual semantic must be a vector")
        n = np.linalg.norm(self.f)
        if not np.isfinite(n) or abs(n - 1.0) > 1e-6:
            raise ValidationError(f"visual semantic must be unit-norm, |f|={n}")


@dataclass
class AudioFeature:
    f: np.ndarray

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=np.float64)
        if self.f.ndim != 1 or not np.all(np.isfinite(self.f)):
            raise ValidationError("audio feature must be a finite vector")


@dataclass
class AudioSemantic:
    """Audio feature projected into the visual semantic space. Not
    normalized; the projection output is used as-is."""

    f: np.ndarray

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=np.float64)
        if self.f.ndim != 1 or not np.all(np.isfinite(self.f)):
            raise ValidationError("audio semantic must be a finite vector")


def l2_normalize(x: np.ndarray):
    """Row-normalize (N, d). Returns (unit, cache). Raises on zero norm
    instead of emitting NaN."""
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms < NORM_EPS) or not np.all(np.isfinite(norms)):
        raise ValidationError("cannot normalize a (near-)zero semantic vector")
    unit = x / norms
    return unit, (unit, norms)


def l2_normalize_backward(cache, dy: np.ndarray) -> np.ndarray:
    unit, norms = cache
    return (dy - unit * (unit * dy).sum(axis=1, keepdims=True)) / norms


class VisualSemanticEncoder(Module):
    """Four convolutional blocks and two linear layers over HxWx3 color
    input. Emits the raw (pre-normalization) semantic vector."""

    def __init__(self, cfg: SemanticsConfig, rng: np.random.Generator):
        self.image_size = cfg.image_size
        if cfg.image_size % 16 != 0 or cfg.image_size < 16:
            raise ValidationError("visual encoder needs image_size divisible by 16")
        layers: list[Module] = []
        cin = 3
        for c in cfg.visual_channels:
            layers += [Conv2d(cin, c, rng), ReLU(), MaxPool2()]
            cin = c
        side = cfg.image_size // 2 ** len(cfg.visual_channels)
        flat = side * side * cfg.visual_channels[-1]
        layers += [Flatten(), Linear(flat, cfg.visual_fc_hidden, rng), ReLU(),
                   Linear(cfg.visual_fc_hidden, cfg.embed_dim, rng)]
        self.net = Sequential(layers)

    def forward(self, rgb: np.ndarray, train: bool = False) -> np.ndarray:
        if rgb.ndim != 4 or rgb.shape[3] != 3:
            raise ValidationError(f"expected NxHxWx3 color input, got {rgb.shape}")
        if rgb.shape[1] != self.image_size or rgb.shape[2] != self.image_size:
            raise ValidationError(
                f"visual encoder built for {self.image_size}px input, got "
                f"{rgb.shape[1]}x{rgb.shape[2]}")
        return self.net.forward(rgb, train=train)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return self.net.backward(dy)


class AudioEncoder(Module):
    """Conv blocks + global average pooling + one linear head over TxM
    log-mel input; output length is the raw audio feature dimension.

    Log-mel values are shifted/scaled internally so the silence floor maps
    to 0 and a unit-power bin to 1, keeping activations O(1).
    """

    LOG_FLOOR = float(np.log(1e-6))

    def __init__(self, cfg: SemanticsConfig, rng: np.random.Generator):
        layers: list[Module] = []
        cin = 1
        for c in cfg.audio_channels:
            layers += [Conv2d(cin, c, rng), ReLU(), MaxPool2()]
            cin = c
        layers += [GlobalAvgPool(), Linear(cfg.audio_channels[-1], cfg.audio_dim, rng)]
        self.net = Sequential(layers)
        self.min_side = 2 ** len(cfg.audio_channels)

    def forward(self, spec: np.ndarray, train: bool = False) -> np.ndarray:
        if spec.ndim == 3:
            spec = spec[..., None]
        if spec.ndim != 4 or spec.shape[3] != 1:
            raise ValidationError(f"expected NxTxMx1 spectrogram batch, got {spec.shape}")
        if not np.all(np.isfinite(spec)):
            raise ValidationError("spectrogram contains non-finite values")
        if spec.shape[1] < self.min_side or spec.shape[2] < self.min_side:
            raise ValidationError(
                f"spectrogram smaller than the encoder receptive field "
                f"({self.min_side}x{self.min_side})")
        x = (spec - self.LOG_FLOOR) / -self.LOG_FLOOR
        return self.net.forward(x, train=train)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return self.net.backward(dy) / -self.LOG_FLOOR


class AudioToVisual(Module):
    """Projection from raw audio features into the visual semantic space;
    two FC layers with a ReLU between."""

    def __init__(self, cfg: SemanticsConfig, rng: np.random.Generator):
        self.net = Sequential([
            Linear(cfg.audio_dim, cfg.audio_dim, rng), ReLU(),
            Linear(cfg.audio_dim, cfg.embed_dim, rng, weight_scale=0.1),
        ])
        self.in_dim = cfg.audio_dim

    def forward(self, f_a: np.ndarray, train: bool = False) -> np.ndarray:
        if f_a.ndim != 2 or f_a.shape[1] != self.in_dim:
            raise ValidationError(f"audio feature batch must be Nx{self.in_dim}")
        return self.net.forward(f_a, train=train)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return self.net.backward(dy)


class ConditionProjector(Module):
    """MLP from a semantic vector to the conditioning vector."""

    def __init__(self, cfg: SemanticsConfig, rng: np.random.Generator):
        self.net = Sequential([
            Linear(cfg.embed_dim, cfg.cond_dim, rng), ReLU(),
            Linear(cfg.cond_dim, cfg.cond_dim, rng),
        ])
        self.in_dim = cfg.embed_dim
        self.out_dim = cfg.cond_dim

    def forward(self, f_s: np.ndarray, train: bool = False) -> np.ndarray:
        if f_s.ndim != 2 or f_s.shape[1] != self.in_dim:
            raise ValidationError(f"semantic batch must be Nx{self.in_dim}")
        return self.net.forward(f_s, train=train)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return self.net.backward(dy)


# Single-sample surface wrappers over the batched encoders.

def extract_visual_semantics(img: RgbImage, encoder: VisualSemanticEncoder) -> VisualSemantic:
    raw = encoder.forward(img.pixels[None], train=False)
    unit, _ = l2_normalize(raw)
    return VisualSemantic(f=unit[0])


def encode_audio(spec: Spectrogram, encoder: AudioEncoder) -> AudioFeature:
    out = encoder.forward(spec.values[None], train=False)
    return AudioFeature(f=out[0])


def audio_to_visual(f_a: AudioFeature, projector: AudioToVisual) -> AudioSemantic:
    out = projector.forward(f_a.f[None], train=False)
    return AudioSemantic(f=out[0])


def project_condition(f_s, projector: ConditionProjector) -> np.ndarray:
    vec = f_s.f if isinstance(f_s, (VisualSemantic, AudioSemantic)) else np.asarray(f_s)
    out = projector.forward(vec[None].astype(np.float64), train=False)
    return out[0]
