"""Relevance network: scores whether an audio clip and an image depict the
same scene.

Frozen encoders (the stage-2 audio encoder and the stage-1 backbone encoder's
pooled bottleneck over the grayscale input) feed two trainable linear heads;
their cosine similarity passes through a 1-weight FC layer and a sigmoid,
yielding r strictly inside (0, 1). Training is binary cross-entropy against
cross-video negative pairs; when synthetic scene labels are available the
negative audio is also drawn from a different scene family, since grayscale
renders carry no hue and same-family mismatches are invisible by
construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .audio import SpectrogramConfig, compute_spectrogram, resample_to_target
from .backbone import Backbone
from .colorspace import GrayImage
from .conditioning import RelevanceScore
from .errors import TrainingDiverged, ValidationError
from .nn import Adam, Linear, Module, Param
from .semantics import AudioEncoder

COS_EPS = 1e-8
_SIG_CLIP = 30.0


@dataclass
class LabeledPair:
    image_index: int
    audio_index: int
    h: int

    def __post_init__(self):
        if self.h not in (0, 1):
            raise ValidationError("pair label must be 0 or 1")


class RelevanceNet(Module):
    """Trainable heads + similarity-to-relevance map.

    W starts at 1 (not 0): with W = 0 the head gradients are identically
    zero and training cannot bootstrap. Untrained cosine similarities sit
    near 0, so initial scores stay close to 0.5 either way.
    """

    def __init__(self, audio_dim: int, visual_dim: int, rng: np.random.Generator,
                 head_dim: int = 64):
        self.audio_head = Linear(audio_dim, head_dim, rng)
        self.visual_head = Linear(visual_dim, head_dim, rng)
        self.w = Param(np.ones(1))
        self.bias = Param(np.zeros(1))
        self._cache = None

    def cosine(self, f_a: np.ndarray, f_v: np.ndarray, train: bool = False):
        u = self.audio_head.forward(f_a, train=train)
        v = self.visual_head.forward(f_v, train=train)
        nu = np.linalg.norm(u, axis=1)
        nv = np.linalg.norm(v, axis=1)
        denom = nu * nv + COS_EPS
        cos = (u * v).sum(axis=1) / denom
        return cos, (u, v, nu, nv, denom, cos)

    def forward(self, f_a: np.ndarray, f_v: np.ndarray, train: bool = False) -> np.ndarray:
        cos, cos_cache = self.cosine(f_a, f_v, train=train)
        s = np.clip(cos * self.w.value[0] + self.bias.value[0], -_SIG_CLIP, _SIG_CLIP)
        r = 1.0 / (1.0 + np.exp(-s))
        if train:
            self._cache = (cos_cache, r)
        return r

    def backward(self, dr: np.ndarray):
        (u, v, nu, nv, denom, cos), r = self._cache
        self._cache = None
        ds = dr * r * (1.0 - r)
        self.w.grad[0] += float((ds * cos).sum())
        self.bias.grad[0] += float(ds.sum())
        dcos = (ds * self.w.value[0])[:, None]
        du = dcos * (v / denom[:, None]
                     - (cos / denom * nv / np.maximum(nu, COS_EPS))[:, None] * u)
        dv = dcos * (u / denom[:, None]
                     - (cos / denom * nu / np.maximum(nv, COS_EPS))[:, None] * v)
        self.audio_head.backward(du)
        self.visual_head.backward(dv)


def backbone_visual_features(backbone: Backbone, gray_norm: np.ndarray) -> np.ndarray:
    """Pooled bottleneck features of the frozen backbone encoder, (N, C)."""
    feats = backbone.encode_features(gray_norm, train=False)
    return feats[-1].mean(axis=(1, 2))


def relevance_score(wave: np.ndarray, sr: int, image: GrayImage, *,
                    backbone: Backbone, audio_encoder: AudioEncoder,
                    net: RelevanceNet,
                    spec_cfg: SpectrogramConfig | None = None) -> RelevanceScore:
    """Score one (audio, grayscale image) pair."""
    spec_cfg = spec_cfg or SpectrogramConfig()
    wave16 = resample_to_target(wave, sr, spec_cfg.sample_rate)
    spec = compute_spectrogram(wave16, spec_cfg)
    f_a = audio_encoder.forward(spec.values[None], train=False)
    f_v = backbone_visual_features(backbone, image.L[None] / 100.0)
    r = float(net.forward(f_a, f_v, train=False)[0])
    return RelevanceScore(r=r)


def sample_negative_pairs(manifest, seed: int) -> list[LabeledPair]:
    """One positive and one cross-video negative per manifest entry.

    With synthetic scene labels present, negatives additionally come from a
    different scene family (grayscale cannot see hue, so same-family
    negatives would be mislabeled positives). Deterministic in ``seed``.
    """
    pairs = manifest.pairs
    videos = {p.source_video for p in pairs}
    if len(videos) < 2:
        raise ValidationError("negative sampling needs >= 2 distinct source videos")
    rng = np.random.default_rng(seed)
    out: list[LabeledPair] = []
    for i, p in enumerate(pairs):
        out.append(LabeledPair(image_index=i, audio_index=i, h=1))
        cross = [j for j, q in enumerate(pairs) if q.source_video != p.source_video]
        if p.family is not None:
            strict = [j for j in cross if pairs[j].family != p.family]
            if strict:
                cross = strict
        j = int(rng.choice(cross))
        out.append(LabeledPair(image_index=i, audio_index=j, h=0))
    return out


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney AUC with average ranks for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("AUC needs both positive and negative pairs")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def train_rnet_on_features(net: RelevanceNet, f_a_all: np.ndarray,
                           f_v_all: np.ndarray, manifest, *, epochs: int,
                           batch_size: int, lr: float, seed: int):
    """Optimize the relevance heads on precomputed (frozen) features.

    Returns a history list with per-epoch mean BCE and accuracy.
    """
    opt = Adam(net.named_params(), lr=lr)
    history = []
    for epoch in range(epochs):
        pairs = sample_negative_pairs(manifest, seed=seed * 1000 + epoch)
        order = np.random.default_rng((seed, epoch)).permutation(len(pairs))
        losses, correct, seen = [], 0, 0
        for s in range(0, len(order), batch_size):
            sel = [pairs[k] for k in order[s:s + batch_size]]
            f_a = f_a_all[[p.audio_index for p in sel]]
            f_v = f_v_all[[p.image_index for p in sel]]
            h = np.array([p.h for p in sel], dtype=np.float64)
            net.zero_grad()
            r = net.forward(f_a, f_v, train=True)
            per = -(h * np.log(r) + (1.0 - h) * np.log(1.0 - r))
            loss = float(per.mean())
            if not np.isfinite(loss):
                raise TrainingDiverged(f"relevance BCE became {loss} at epoch {epoch}")
            dr = (-h / r + (1.0 - h) / (1.0 - r)) / r.size
            net.backward(dr)
            opt.step()
            losses.append(loss)
            correct += int(((r >= 0.5) == (h == 1.0)).sum())
            seen += r.size
        history.append({"epoch": epoch, "bce": float(np.mean(losses)),
                        "accuracy": correct / seen})
    return history, opt
