"""Training orchestration, inference, evaluation, and ablation modes.

Stages:

1. ``train_stage1`` — backbone, visual semantic encoder, condition MLP, and
   injection heads trained jointly on the color loss; each sample is either
   conditioned on its own color image (r=1) or masked to the visual-only
   path (r=0).
2. ``train_stage2`` — audio encoder + projection distilled against the
   frozen visual semantics.
3. ``train_stage3`` — audio-conditioned fine-tuning of the projection with
   the backbone (and everything visual) frozen.

``train_rnet`` fits the relevance heads on frozen features (valid after
stage 2; identical features after stage 3 since those encoders stay frozen).
``train_no_multistep`` is the joint end-to-end ablation.

Frozen-parameter contracts are asserted by byte comparison before/after each
stage. All training is deterministic given the config seeds.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .audio import SpectrogramConfig, compute_spectrogram, ingest_wav
from .backbone import AB_SCALE, Backbone
from .checkpoint import CheckpointBundle, blobs_bitwise_equal
from .colorspace import (GrayImage, RgbImage, lab_to_rgb, load_gray_png,
                         load_png, merge_channels, rgb_array_to_lab)
from .config import RunConfig, StageConfig
from .data import DatasetManifest, SceneFamily, mask_ground_truth, worker_count
from .errors import CheckpointError, TrainingDiverged, ValidationError
from .losses_metrics import (MetricsReport, color_loss, color_loss_grad,
                             get_perceptual, psnr, semantic_loss,
                             semantic_loss_grad, ssim)
from .nn import Adam
from .relevance import RelevanceNet, backbone_visual_features, train_rnet_on_features
from .semantics import (AudioEncoder, AudioToVisual, ConditionProjector,
                        VisualSemanticEncoder, l2_normalize,
                        l2_normalize_backward)

log = logging.getLogger(__name__)

ABLATION_MODES = ("full", "no_multistep", "no_r", "missing_audio", "no_r_missing_audio")

_MASK_TAG = 1  # rng namespace tags so per-step streams never collide
_PAIR_TAG = 2


@dataclass
class Models:
    backbone: Backbone
    es: VisualSemanticEncoder
    mlp: ConditionProjector
    ea: AudioEncoder
    a2v: AudioToVisual
    rnet: RelevanceNet

    def prefixed(self) -> dict[str, object]:
        return {"backbone/": self.backbone, "es/": self.es, "mlp/": self.mlp,
                "ea/": self.ea, "a2v/": self.a2v, "rnet/": self.rnet}

    def dump_blobs(self, prefixes: tuple[str, ...]) -> dict[str, np.ndarray]:
        out = {}
        for prefix, model in self.prefixed().items():
            if prefix in prefixes:
                out.update(model.dump_values(prefix))
        return out

    def load_blobs(self, bundle: CheckpointBundle, prefixes: tuple[str, ...]):
        for prefix, model in self.prefixed().items():
            if prefix in prefixes:
                bundle.require_groups(prefix)
                model.load_values(bundle.group(prefix))

    def params_for(self, prefixes: tuple[str, ...]) -> dict:
        out = {}
        for prefix, model in self.prefixed().items():
            if prefix in prefixes:
                out.update({prefix + k: p for k, p in model.named_params().items()})
        return out


def _rng_for(seed: int, component: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(component,)))


def build_models(cfg: RunConfig) -> Models:
    cfg.finalize()
    backbone = Backbone(cfg.backbone, _rng_for(cfg.seed, 0))
    es = VisualSemanticEncoder(cfg.semantics, _rng_for(cfg.seed, 1))
    mlp = ConditionProjector(cfg.semantics, _rng_for(cfg.seed, 2))
    ea = AudioEncoder(cfg.semantics, _rng_for(cfg.seed, 3))
    a2v = AudioToVisual(cfg.semantics, _rng_for(cfg.seed, 4))
    bott_c = cfg.backbone.base_channels * 2**cfg.backbone.depth
    rnet = RelevanceNet(cfg.semantics.audio_dim, bott_c, _rng_for(cfg.seed, 5),
                        head_dim=cfg.relevance.head_dim)
    return Models(backbone, es, mlp, ea, a2v, rnet)


# -- in-memory dataset arrays ---------------------------------------------------


@dataclass
class ArrayData:
    pairs: list
    gray_norm: np.ndarray   # (N,H,W,1), L/100
    rgb: np.ndarray         # (N,H,W,3)
    ab_norm: np.ndarray     # (N,H,W,2), ab/AB_SCALE
    specs: np.ndarray       # (N,T,M)

    def __len__(self):
        return len(self.pairs)


def _load_one(pair, spec_cfg: SpectrogramConfig, with_audio: bool):
    frame = load_png(pair.image)
    lab = rgb_array_to_lab(frame.pixels)
    if pair.gray:
        gray_l = load_gray_png(pair.gray).L
    else:
        gray_l = np.clip(lab[..., 0:1], 0.0, 100.0)
    spec = None
    if with_audio:
        spec = compute_spectrogram(ingest_wav(pair.audio), spec_cfg).values
    return gray_l / 100.0, frame.pixels, lab[..., 1:3] / AB_SCALE, spec


def load_arrays(manifest: DatasetManifest, spec_cfg: SpectrogramConfig | None = None,
                with_audio: bool = True) -> ArrayData:
    if not manifest.pairs:
        raise ValidationError("manifest is empty")
    spec_cfg = spec_cfg or SpectrogramConfig()
    workers = worker_count()
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            loaded = list(pool.map(lambda p: _load_one(p, spec_cfg, with_audio),
                                   manifest.pairs))
    else:
        loaded = [_load_one(p, spec_cfg, with_audio) for p in manifest.pairs]
    grays = [item[0] for item in loaded]
    rgbs = [item[1] for item in loaded]
    abs_ = [item[2] for item in loaded]
    specs = []
    if with_audio:
        n_frames = loaded[0][3].shape[0]
        for _, _, _, spec in loaded:
            if spec.shape[0] < n_frames:  # uniform T: pad with the log floor
                pad = np.full((n_frames - spec.shape[0], spec.shape[1]), spec.min())
                spec = np.vstack([spec, pad])
            specs.append(spec[:n_frames])
    return ArrayData(pairs=list(manifest.pairs),
                     gray_norm=np.stack(grays), rgb=np.stack(rgbs),
                     ab_norm=np.stack(abs_),
                     specs=np.stack(specs) if with_audio else np.zeros((len(grays), 0, 0)))


def _epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng((seed, epoch)).permutation(n)


def _stage_seed(cfg: RunConfig, stage_cfg: StageConfig) -> int:
    return cfg.seed if stage_cfg.seed is None else int(stage_cfg.seed)


def _check_frozen(before: dict[str, np.ndarray], after: dict[str, np.ndarray], what: str):
    if not blobs_bitwise_equal(before, after):
        raise RuntimeError(f"frozen parameter contract violated for {what}")


def _finite_or_abort(loss: float, stage: str, ckpt_path):
    if not np.isfinite(loss):
        raise TrainingDiverged(
            f"{stage}: loss became {loss}; last good checkpoint: {ckpt_path}")


# -- stage 1 ----------------------------------------------------------------------


def train_stage1(manifest: DatasetManifest, cfg: RunConfig, *,
                 resume: CheckpointBundle | None = None,
                 visual_only: bool = False,
                 ckpt_path=None) -> CheckpointBundle:
    """Joint pretraining of backbone + visual semantics on the color loss."""
    st = cfg.stage1
    seed = _stage_seed(cfg, st)
    models = build_models(cfg)
    data = load_arrays(manifest, with_audio=False)
    trainable = ("backbone/",) if visual_only else ("backbone/", "es/", "mlp/")
    params = models.params_for(trainable)
    opt = Adam(params, lr=st.lr)
    history: list[dict] = []
    start_epoch = 0
    if resume is not None:
        if resume.stage != "stage1":
            raise CheckpointError(f"cannot resume stage 1 from a {resume.stage} checkpoint")
        models.load_blobs(resume, ("backbone/", "es/", "mlp/"))
        opt.load_state(resume.group("optim/"))
        history = list(resume.history)
        start_epoch = history[-1]["epoch"] + 1 if history else 0

    bundle = None
    for epoch in range(start_epoch, st.epochs):
        order = _epoch_order(len(data), seed, epoch)
        losses = []
        for step, s in enumerate(range(0, len(order), st.batch_size)):
            idx = order[s:s + st.batch_size]
            batch_pairs = [data.pairs[int(k)] for k in idx]
            flags = mask_ground_truth(batch_pairs, st.mask_prob,
                                      (seed, _MASK_TAG, epoch, step)).use_semantics
            x = data.gray_norm[idx]
            t_ab = data.ab_norm[idx]
            for model in (models.backbone, models.es, models.mlp):
                model.zero_grad()
            if visual_only:
                c, norm_cache = None, None
                r = np.zeros(len(idx))
            else:
                raw = models.es.forward(data.rgb[idx], train=True)
                fvs, norm_cache = l2_normalize(raw)
                c = models.mlp.forward(fvs, train=True)
                r = flags.astype(np.float64)
            ab = models.backbone.forward_ab(x, c, r, train=True)
            loss = color_loss(ab, t_ab).value
            _finite_or_abort(loss, "stage1", ckpt_path)
            dc = models.backbone.backward_ab(color_loss_grad(ab, t_ab))
            if dc is not None:
                draw = l2_normalize_backward(norm_cache, models.mlp.backward(dc))
                models.es.backward(draw)
            opt.step()
            losses.append(loss)
        history.append({"stage": "stage1", "epoch": epoch,
                        "loss": float(np.mean(losses)),
                        "mask_prob": st.mask_prob, "visual_only": visual_only})
        log.info("stage1 epoch %d loss %.5f", epoch, history[-1]["loss"])
        blobs = models.dump_blobs(("backbone/", "es/", "mlp/"))
        blobs.update({f"optim/{k}": v for k, v in opt.state_arrays().items()})
        bundle = CheckpointBundle(stage="stage1", config=cfg.to_dict(),
                                  blobs=blobs, history=history)
        if ckpt_path is not None:
            bundle.save(ckpt_path)
    if bundle is None:  # resumed past the final epoch
        bundle = resume
    return bundle


# -- stage 2 ----------------------------------------------------------------------


def train_stage2(manifest: DatasetManifest, cfg: RunConfig,
                 stage1: CheckpointBundle, *, resume: CheckpointBundle | None = None,
                 ckpt_path=None) -> CheckpointBundle:
    """Distill frozen visual semantics into the audio encoder + projection."""
    if stage1.stage not in ("stage1",):
        raise CheckpointError(f"stage 2 needs a stage1 checkpoint, got {stage1.stage!r}")
    stage1.require_groups("backbone/", "es/", "mlp/")
    st = cfg.stage2
    seed = _stage_seed(cfg, st)
    models = build_models(cfg)
    models.load_blobs(stage1, ("backbone/", "es/", "mlp/"))
    frozen_before = models.dump_blobs(("backbone/", "es/", "mlp/"))

    data = load_arrays(manifest)
    targets = _visual_semantic_targets(models, data)
    params = models.params_for(("ea/", "a2v/"))
    opt = Adam(params, lr=st.lr)
    history = [h for h in stage1.history]
    start_epoch = 0
    if resume is not None:
        if resume.stage != "stage2":
            raise CheckpointError(f"cannot resume stage 2 from a {resume.stage} checkpoint")
        models.load_blobs(resume, ("ea/", "a2v/"))
        opt.load_state(resume.group("optim/"))
        history = list(resume.history)
        start_epoch = ([h["epoch"] for h in history if h["stage"] == "stage2"][-1] + 1
                       if any(h["stage"] == "stage2" for h in history) else 0)

    bundle = resume
    for epoch in range(start_epoch, st.epochs):
        order = _epoch_order(len(data), seed, epoch)
        losses = []
        for s in range(0, len(order), st.batch_size):
            idx = order[s:s + st.batch_size]
            models.ea.zero_grad()
            models.a2v.zero_grad()
            f_a = models.ea.forward(data.specs[idx][..., None], train=True)
            f_as = models.a2v.forward(f_a, train=True)
            loss = semantic_loss(f_as, targets[idx]).value
            _finite_or_abort(loss, "stage2", ckpt_path)
            grad = semantic_loss_grad(f_as, targets[idx])
            models.ea.backward(models.a2v.backward(grad))
            opt.step()
            losses.append(loss)
        history.append({"stage": "stage2", "epoch": epoch,
                        "loss": float(np.mean(losses))})
        log.info("stage2 epoch %d L_s %.5f", epoch, history[-1]["loss"])
        blobs = models.dump_blobs(("backbone/", "es/", "mlp/", "ea/", "a2v/"))
        blobs.update({f"optim/{k}": v for k, v in opt.state_arrays().items()})
        bundle = CheckpointBundle(stage="stage2", config=cfg.to_dict(),
                                  blobs=blobs, history=history)
        if ckpt_path is not None:
            bundle.save(ckpt_path)

    _check_frozen(frozen_before, models.dump_blobs(("backbone/", "es/", "mlp/")),
                  "stage2 (backbone, E_s, MLP)")
    return bundle


def _visual_semantic_targets(models: Models, data: ArrayData) -> np.ndarray:
    outs = []
    for s in range(0, len(data), 64):
        raw = models.es.forward(data.rgb[s:s + 64], train=False)
        outs.append(l2_normalize(raw)[0])
    return np.vstack(outs)


# -- stage 3 ----------------------------------------------------------------------


def train_stage3(manifest: DatasetManifest, cfg: RunConfig,
                 stage2: CheckpointBundle, *, rnet: CheckpointBundle | None = None,
                 resume: CheckpointBundle | None = None,
                 ckpt_path=None) -> CheckpointBundle:
    """Audio-conditioned fine-tuning of A2V (optionally the MLP) with the
    colorization backbone fixed."""
    if stage2.stage != "stage2":
        raise CheckpointError(f"stage 3 needs a stage2 checkpoint, got {stage2.stage!r}")
    stage2.require_groups("backbone/", "es/", "mlp/", "ea/", "a2v/")
    st = cfg.stage3
    seed = _stage_seed(cfg, st)
    models = build_models(cfg)
    models.load_blobs(stage2, ("backbone/", "es/", "mlp/", "ea/", "a2v/"))

    frozen_groups = ("backbone/", "es/", "ea/") + (() if st.include_mlp else ("mlp/",))
    trainable = ("a2v/",) + (("mlp/",) if st.include_mlp else ())
    frozen_before = models.dump_blobs(frozen_groups)

    data = load_arrays(manifest)
    r_all = np.ones(len(data))
    if st.use_rnet_r:
        if rnet is None or not any(k.startswith("rnet/") for k in rnet.blobs):
            raise CheckpointError("stage3 use_rnet_r=True requires an rnet checkpoint")
        models.rnet.load_values(rnet.group("rnet/"))
        r_all = _relevance_for_data(models, data)

    params = models.params_for(trainable)
    opt = Adam(params, lr=st.lr)
    history = list(stage2.history)
    start_epoch = 0
    if resume is not None:
        if resume.stage != "stage3":
            raise CheckpointError(f"cannot resume stage 3 from a {resume.stage} checkpoint")
        models.load_blobs(resume, ("a2v/",) + (("mlp/",) if st.include_mlp else ()))
        opt.load_state(resume.group("optim/"))
        history = list(resume.history)
        start_epoch = ([h["epoch"] for h in history if h["stage"] == "stage3"][-1] + 1
                       if any(h["stage"] == "stage3" for h in history) else 0)

    bundle = resume
    for epoch in range(start_epoch, st.epochs):
        order = _epoch_order(len(data), seed, epoch)
        losses = []
        for s in range(0, len(order), st.batch_size):
            idx = order[s:s + st.batch_size]
            for model in (models.backbone, models.mlp, models.a2v, models.ea):
                model.zero_grad()
            f_a = models.ea.forward(data.specs[idx][..., None], train=False)
            f_as = models.a2v.forward(f_a, train=True)
            c = models.mlp.forward(f_as, train=True)
            ab = models.backbone.forward_ab(data.gray_norm[idx], c, r_all[idx], train=True)
            loss = color_loss(ab, data.ab_norm[idx]).value
            _finite_or_abort(loss, "stage3", ckpt_path)
            dc = models.backbone.backward_ab(color_loss_grad(ab, data.ab_norm[idx]))
            if dc is not None:
                models.a2v.backward(models.mlp.backward(dc))
            opt.step()
            losses.append(loss)
        history.append({"stage": "stage3", "epoch": epoch,
                        "loss": float(np.mean(losses)),
                        "include_mlp": st.include_mlp, "use_rnet_r": st.use_rnet_r})
        log.info("stage3 epoch %d L_c %.5f", epoch, history[-1]["loss"])
        blobs = models.dump_blobs(("backbone/", "es/", "mlp/", "ea/", "a2v/"))
        if rnet is not None and any(k.startswith("rnet/") for k in rnet.blobs):
            blobs.update({k: v for k, v in rnet.blobs.items() if k.startswith("rnet/")})
        blobs.update({f"optim/{k}": v for k, v in opt.state_arrays().items()})
        bundle = CheckpointBundle(stage="stage3", config=cfg.to_dict(),
                                  blobs=blobs, history=history)
        if ckpt_path is not None:
            bundle.save(ckpt_path)

    _check_frozen(frozen_before, models.dump_blobs(frozen_groups),
                  "stage3 frozen groups " + ",".join(frozen_groups))
    return bundle


def _relevance_for_data(models: Models, data: ArrayData) -> np.ndarray:
    rs = []
    for s in range(0, len(data), 64):
        f_a = models.ea.forward(data.specs[s:s + 64][..., None], train=False)
        f_v = backbone_visual_features(models.backbone, data.gray_norm[s:s + 64])
        rs.append(models.rnet.forward(f_a, f_v, train=False))
    return np.concatenate(rs)


# -- relevance network -------------------------------------------------------------


def train_rnet(manifest: DatasetManifest, cfg: RunConfig,
               base: CheckpointBundle, ckpt_path=None) -> CheckpointBundle:
    """Fit the relevance heads on frozen encoder features. Valid after
    stage 2 (the relevant encoders never change afterwards)."""
    if base.stage not in ("stage2", "stage3"):
        raise CheckpointError(f"rnet training needs stage2/stage3, got {base.stage!r}")
    base.require_groups("backbone/", "ea/")
    models = build_models(cfg)
    load_groups = ("backbone/", "es/", "mlp/", "ea/", "a2v/")
    models.load_blobs(base, load_groups)
    frozen_before = models.dump_blobs(("backbone/", "ea/"))

    data = load_arrays(manifest)
    f_a_all, f_v_all = [], []
    for s in range(0, len(data), 64):
        f_a_all.append(models.ea.forward(data.specs[s:s + 64][..., None], train=False))
        f_v_all.append(backbone_visual_features(models.backbone, data.gray_norm[s:s + 64]))
    f_a_all = np.vstack(f_a_all)
    f_v_all = np.vstack(f_v_all)

    rc = cfg.relevance
    rnet_history, opt = train_rnet_on_features(
        models.rnet, f_a_all, f_v_all, manifest,
        epochs=rc.epochs, batch_size=rc.batch_size, lr=rc.lr, seed=cfg.seed)
    _check_frozen(frozen_before, models.dump_blobs(("backbone/", "ea/")),
                  "rnet (backbone encoder, E_a)")

    history = list(base.history) + [dict(h, stage="rnet") for h in rnet_history]
    blobs = dict(base.blobs)
    blobs = {k: v for k, v in blobs.items() if not k.startswith("optim/")}
    blobs.update(models.rnet.dump_values("rnet/"))
    blobs.update({f"optim/{k}": v for k, v in opt.state_arrays().items()})
    bundle = CheckpointBundle(stage="rnet", config=cfg.to_dict(), blobs=blobs,
                              history=history)
    if ckpt_path is not None:
        bundle.save(ckpt_path)
    return bundle


# -- no-multistep ablation ----------------------------------------------------------


def train_no_multistep(manifest: DatasetManifest, cfg: RunConfig,
                       ckpt_path=None) -> CheckpointBundle:
    """Joint end-to-end training of backbone + audio path on the color loss
    only (the Table-2 'w/o multi-step' setting)."""
    st = cfg.no_multistep
    seed = _stage_seed(cfg, st)
    models = build_models(cfg)
    data = load_arrays(manifest)
    trainable = ("backbone/", "mlp/", "ea/", "a2v/")
    opt = Adam(models.params_for(trainable), lr=st.lr)
    history: list[dict] = []
    bundle = None
    for epoch in range(st.epochs):
        order = _epoch_order(len(data), seed, epoch)
        losses = []
        for s in range(0, len(order), st.batch_size):
            idx = order[s:s + st.batch_size]
            for prefix, model in models.prefixed().items():
                if prefix in trainable:
                    model.zero_grad()
            f_a = models.ea.forward(data.specs[idx][..., None], train=True)
            f_as = models.a2v.forward(f_a, train=True)
            c = models.mlp.forward(f_as, train=True)
            ab = models.backbone.forward_ab(data.gray_norm[idx], c,
                                            np.ones(len(idx)), train=True)
            loss = color_loss(ab, data.ab_norm[idx]).value
            _finite_or_abort(loss, "no_multistep", ckpt_path)
            dc = models.backbone.backward_ab(color_loss_grad(ab, data.ab_norm[idx]))
            models.ea.backward(models.a2v.backward(models.mlp.backward(dc)))
            opt.step()
            losses.append(loss)
        history.append({"stage": "no_multistep", "epoch": epoch,
                        "loss": float(np.mean(losses))})
        log.info("no_multistep epoch %d L_c %.5f", epoch, history[-1]["loss"])
        blobs = models.dump_blobs(trainable)
        blobs.update({f"optim/{k}": v for k, v in opt.state_arrays().items()})
        bundle = CheckpointBundle(stage="no_multistep", config=cfg.to_dict(),
                                  blobs=blobs, history=history)
        if ckpt_path is not None:
            bundle.save(ckpt_path)
    return bundle


# -- inference ----------------------------------------------------------------------


def _mode_requirements(mode: str) -> tuple[str, ...]:
    if mode == "missing_audio":
        return ("stage1", "stage2", "stage3", "rnet")
    if mode == "no_multistep":
        return ("no_multistep",)
    return ("stage3", "rnet")


class InferenceSession:
    """Immutable model stack rebuilt from a checkpoint; safe to share for
    concurrent read-only inference."""

    def __init__(self, bundle: CheckpointBundle,
                 spec_cfg: SpectrogramConfig | None = None):
        from .config import config_from_dict

        self.bundle = bundle
        self.cfg = config_from_dict(bundle.config)
        self.models = build_models(self.cfg)
        groups = ["backbone/"]
        for g in ("es/", "mlp/", "ea/", "a2v/", "rnet/"):
            if any(k.startswith(g) for k in bundle.blobs):
                groups.append(g)
        self.models.load_blobs(bundle, tuple(groups))
        self.has_rnet = "rnet/" in groups
        self.spec_cfg = spec_cfg or SpectrogramConfig()

    def condition_from_wave(self, wave: np.ndarray) -> np.ndarray:
        spec = compute_spectrogram(np.asarray(wave, dtype=np.float64), self.spec_cfg)
        f_a = self.models.ea.forward(spec.values[None], train=False)
        f_as = self.models.a2v.forward(f_a, train=False)
        return self.models.mlp.forward(f_as, train=False)[0]

    def relevance(self, wave: np.ndarray, gray: GrayImage) -> float:
        spec = compute_spectrogram(np.asarray(wave, dtype=np.float64), self.spec_cfg)
        f_a = self.models.ea.forward(spec.values[None], train=False)
        f_v = backbone_visual_features(self.models.backbone, gray.L[None] / 100.0)
        return float(self.models.rnet.forward(f_a, f_v, train=False)[0])

    def infer(self, gray: GrayImage, wave: np.ndarray | None,
              mode: str = "full") -> tuple[RgbImage, float]:
        """Colorize one grayscale image; returns (image, relevance used).

        The waveform must already be at the spectrogram sample rate (use
        audio.ingest_wav for files).
        """
        if mode not in ABLATION_MODES:
            raise ValidationError(f"unknown mode {mode!r}; expected {ABLATION_MODES}")
        if self.bundle.stage not in _mode_requirements(mode):
            raise CheckpointError(
                f"mode {mode!r} needs a checkpoint from {_mode_requirements(mode)}, "
                f"got {self.bundle.stage!r}")
        c: np.ndarray | None = None
        if mode == "missing_audio":
            r = 0.0
        elif mode in ("full", "no_multistep"):
            if wave is None:
                r = 0.0
            else:
                c = self.condition_from_wave(wave)
                if mode == "no_multistep":
                    r = 1.0
                else:
                    r = self.relevance(wave, gray) if self.has_rnet else 1.0
        else:  # no_r / no_r_missing_audio: gating removed
            r = 1.0
            if mode == "no_r" and wave is not None:
                c = self.condition_from_wave(wave)
            else:
                # audio missing but gate forced open: undefined-c guard
                c = np.zeros(self.cfg.backbone.cond_dim)
        rgb = self.models.backbone.colorize(gray, c, r)
        return rgb, float(r)


def infer(bundle: CheckpointBundle, gray: GrayImage, wave: np.ndarray | None,
          mode: str = "full") -> tuple[RgbImage, float]:
    return InferenceSession(bundle).infer(gray, wave, mode)


# -- evaluation ---------------------------------------------------------------------


def _object_mask(gray_l: np.ndarray, background_l: float) -> np.ndarray:
    return np.abs(gray_l[..., 0] - background_l) > 2.0


def hue_decision(pred_ab: np.ndarray, fam: SceneFamily, mask: np.ndarray) -> str:
    """Nearest configured hue (in ab) to the mean prediction on the object."""
    mean_ab = pred_ab[mask].mean(axis=0)
    d_a = np.linalg.norm(mean_ab - np.array(fam.hue_a[1:]))
    d_b = np.linalg.norm(mean_ab - np.array(fam.hue_b[1:]))
    return "a" if d_a <= d_b else "b"


def evaluate(bundle: CheckpointBundle, manifest: DatasetManifest,
             mode: str = "full", *, scene_spec=None,
             perceptual: str | None = None) -> MetricsReport:
    """Per-image and mean PSNR/SSIM for one ablation mode; adds hue-decision
    and ab-MSE stats when the manifest carries synthetic scene labels."""
    if not manifest.pairs:
        raise ValidationError("cannot evaluate an empty manifest")
    session = InferenceSession(bundle)
    perceptual_fn = get_perceptual(perceptual)
    report = MetricsReport(mode=mode, perceptual_name=perceptual)
    fam_by_name = {f.name: f for f in scene_spec.families} if scene_spec else {}
    hue_hits, hue_total = 0, 0
    ab_sq_sum, ab_px = 0.0, 0
    for p in manifest.pairs:
        frame = load_png(p.image)
        lab = rgb_array_to_lab(frame.pixels)
        gray = (load_gray_png(p.gray) if p.gray
                else GrayImage(L=np.clip(lab[..., 0:1], 0.0, 100.0)))
        wave = None
        if mode not in ("missing_audio", "no_r_missing_audio"):
            wave = ingest_wav(p.audio)
        out, r = session.infer(gray, wave, mode)
        row_extra = {"r": r}
        pred_lab = rgb_array_to_lab(out.pixels)
        if p.family in fam_by_name and scene_spec is not None:
            fam = fam_by_name[p.family]
            mask = _object_mask(gray.L, scene_spec.background_l)
            if mask.any():
                pred = hue_decision(pred_lab[..., 1:3], fam, mask)
                row_extra["hue_pred"] = pred
                row_extra["hue_true"] = p.hue
                hue_hits += int(pred == p.hue)
                hue_total += 1
        sq = (pred_lab[..., 1:3] - lab[..., 1:3]) ** 2
        ab_sq_sum += float(sq.sum())
        ab_px += sq.size
        row_extra["ab_mse"] = float(sq.mean())
        perc = perceptual_fn(out.pixels, frame.pixels) if perceptual_fn else None
        report.add(p.source_video, psnr(out, frame), ssim(out, frame),
                   perceptual=perc, extra=row_extra)
    report.extra_summary["ab_mse_mean"] = ab_sq_sum / max(ab_px, 1)
    if hue_total:
        report.extra_summary["hue_accuracy"] = hue_hits / hue_total
        report.extra_summary["hue_pairs"] = hue_total
    return report


def run_all_stages(cfg: RunConfig, train_manifest: DatasetManifest,
                   out_dir=None) -> dict[str, CheckpointBundle]:
    """Convenience: stage1 -> stage2 -> rnet -> stage3, returning all bundles
    and writing them under out_dir when given."""
    from pathlib import Path

    paths = {}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {s: out / f"{s}.ckpt" for s in ("stage1", "stage2", "rnet", "stage3")}
    t0 = time.perf_counter()
    s1 = train_stage1(train_manifest, cfg, ckpt_path=paths.get("stage1"))
    s2 = train_stage2(train_manifest, cfg, s1, ckpt_path=paths.get("stage2"))
    rn = train_rnet(train_manifest, cfg, s2, ckpt_path=paths.get("rnet"))
    s3 = train_stage3(train_manifest, cfg, s2, rnet=rn, ckpt_path=paths.get("stage3"))
    log.info("full pipeline trained in %.1f s", time.perf_counter() - t0)
    return {"stage1": s1, "stage2": s2, "rnet": rn, "stage3": s3}
