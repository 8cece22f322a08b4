"""Encoder-decoder colorization backbone with one conditioning site.

A compact U-Net stands in for third-party colorization networks: the portable
part is the contract of the injection site, which is exposed by name in the
config (``dec0`` = after the first decoder convolution, the default). The
backbone predicts ab channels from the luminance channel; conditioning enters
only through the DSG blend at the configured site, so with relevance 0 the
output is a pure function of the grayscale input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .colorspace import GrayImage, RgbImage, lab_to_rgb, merge_channels
from .conditioning import AffineHeads, dsg_backward, dsg_forward
from .errors import ValidationError
from .nn import Conv2d, MaxPool2, Module, ReLU, Tanh, Upsample2

AB_SCALE = 110.0  # tanh output scaling; covers the sRGB gamut in Lab


@dataclass
class BackboneConfig:
    base_channels: int = 32
    depth: int = 4
    dsg_site: str = "dec0"
    cond_dim: int | None = None  # default: 2 x channels at the DSG site

    def __post_init__(self):
        if self.depth < 2:
            raise ValidationError("backbone depth must be >= 2")
        if self.base_channels < 8:
            raise ValidationError("backbone base_channels must be >= 8")
        if self.dsg_site not in self.site_names():
            raise ValidationError(
                f"dsg_site {self.dsg_site!r} not in {self.site_names()}")
        if self.cond_dim is None:
            self.cond_dim = 2 * self.site_channels()

    def site_names(self) -> list[str]:
        return [f"dec{j}" for j in range(self.depth)]

    def site_index(self) -> int:
        return int(self.dsg_site[3:])

    def site_channels(self) -> int:
        return self.base_channels * 2 ** (self.depth - 1 - self.site_index())


class Backbone(Module):
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        self.cfg = cfg
        b, d = cfg.base_channels, cfg.depth
        self.stem = Conv2d(1, b, rng)
        self.stem_relu = ReLU()
        self.enc_convs = [Conv2d(b * 2 ** (i - 1), b * 2**i, rng) for i in range(1, d + 1)]
        self.enc_relus = [ReLU() for _ in range(d)]
        self.enc_pools = [MaxPool2() for _ in range(d)]
        # decoder block j: upsample, concat skip at level d-1-j, conv, relu
        self.dec_convs = []
        self.dec_relus = [ReLU() for _ in range(d)]
        self.dec_ups = [Upsample2() for _ in range(d)]
        for j in range(d):
            skip_c = b * 2 ** (d - 1 - j)
            cur_c = b * 2**d if j == 0 else b * 2 ** (d - j)
            self.dec_convs.append(Conv2d(cur_c + skip_c, skip_c, rng))
        # small head init: the untrained net starts near-neutral chroma, so
        # clipping-induced luminance error stays small from step one
        self.head = Conv2d(b, 2, rng, weight_scale=0.02)
        self.head_tanh = Tanh()
        self.heads = AffineHeads(cfg.cond_dim, cfg.site_channels(), rng)
        self._cache = None

    # -- forward/backward over normalized tensors ---------------------------

    def _validate_spatial(self, x: np.ndarray):
        div = 2**self.cfg.depth
        if x.shape[1] % div or x.shape[2] % div:
            raise ValidationError(
                f"spatial dims {x.shape[1]}x{x.shape[2]} not divisible by {div}")

    def encode_features(self, x_norm: np.ndarray, train: bool = False) -> list[np.ndarray]:
        """L/100 input (N,H,W,1) -> feature stack [f0 .. f_depth]."""
        self._validate_spatial(x_norm)
        feats = [self.stem_relu.forward(self.stem.forward(x_norm, train), train)]
        for i in range(self.cfg.depth):
            x = self.enc_pools[i].forward(feats[-1], train)
            feats.append(self.enc_relus[i].forward(self.enc_convs[i].forward(x, train), train))
        return feats

    def decode_ab(self, feats: list[np.ndarray], c: np.ndarray | None,
                  r: np.ndarray, train: bool = False) -> np.ndarray:
        """Feature stack -> normalized ab in (-1, 1). DSG applied at the
        configured site; with c absent, r must be all-zero and the site is an
        exact identity."""
        d = self.cfg.depth
        site = self.cfg.site_index()
        r = np.asarray(r, dtype=np.float64).reshape(-1)
        if r.shape[0] != feats[0].shape[0]:
            raise ValidationError("relevance batch does not match feature batch")
        if c is None and np.any(r != 0.0):
            raise ValidationError("conditioning absent but relevance is nonzero")
        if c is not None and c.shape[-1] != self.cfg.cond_dim:
            raise ValidationError(
                f"conditioning length {c.shape[-1]} != configured {self.cfg.cond_dim}")
        dsg_cache = None
        cur = feats[d]
        for j in range(d):
            up = self.dec_ups[j].forward(cur, train)
            cat = np.concatenate([up, feats[d - 1 - j]], axis=3)
            z = self.dec_convs[j].forward(cat, train)
            if j == site and c is not None and np.any(r != 0.0):
                z, dsg_cache = dsg_forward(z, c, r, self.heads, train=train)
            cur = self.dec_relus[j].forward(z, train)
        ab_norm = self.head_tanh.forward(self.head.forward(cur, train), train)
        if train:
            self._cache = (dsg_cache, [f.shape[3] for f in feats])
        return ab_norm

    def forward_ab(self, x_norm: np.ndarray, c: np.ndarray | None, r,
                   train: bool = False) -> np.ndarray:
        feats = self.encode_features(x_norm, train=train)
        n = x_norm.shape[0]
        r_arr = np.asarray(r, dtype=np.float64).reshape(-1)
        if r_arr.size == 1:
            r_arr = np.full(n, float(r_arr[0]))
        return self.decode_ab(feats, c, r_arr, train=train)

    def backward_ab(self, dab_norm: np.ndarray):
        """Backprop through the whole net; returns dc (or None if the site
        was inactive). Parameter gradients accumulate on the layers."""
        dsg_cache, feat_channels = self._cache
        self._cache = None
        d = self.cfg.depth
        site = self.cfg.site_index()
        dc = None
        dcur = self.head.backward(self.head_tanh.backward(dab_norm))
        skip_grads: dict[int, np.ndarray] = {}
        for j in reversed(range(d)):
            dz = self.dec_relus[j].backward(dcur)
            if j == site and dsg_cache is not None:
                dz, dc = dsg_backward(dsg_cache, dz)
            dcat = self.dec_convs[j].backward(dz)
            skip_level = d - 1 - j
            cur_c = dcat.shape[3] - feat_channels[skip_level]
            skip_grads[skip_level] = dcat[..., cur_c:]
            dcur = self.dec_ups[j].backward(dcat[..., :cur_c])
        g = dcur  # grad w.r.t. feats[d]
        for i in reversed(range(self.cfg.depth)):
            g = self.enc_convs[i].backward(self.enc_relus[i].backward(g))
            g = self.enc_pools[i].backward(g)
            g = g + skip_grads[i]
        self.stem.backward(self.stem_relu.backward(g))
        return dc

    # -- spec surface --------------------------------------------------------

    def encode(self, x_l: GrayImage) -> list[np.ndarray]:
        """Multi-scale feature stack of a single grayscale image."""
        feats = self.encode_features(x_l.L[None] / 100.0, train=False)
        return [f[0] for f in feats]

    def generate_colors(self, features: list[np.ndarray], c: np.ndarray | None,
                        r: float) -> np.ndarray:
        feats = [f[None] for f in features]
        r_arr = np.full(1, float(r))
        ab_norm = self.decode_ab(feats, None if c is None else np.asarray(c)[None],
                                 r_arr, train=False)
        return ab_norm[0] * AB_SCALE

    def colorize(self, x_l: GrayImage, c: np.ndarray | None, r: float) -> RgbImage:
        ab = self.generate_colors(self.encode(x_l), c, r)
        return lab_to_rgb(merge_channels(x_l, ab))
