"""Semantic-guidance injection: AdaIN-style SG and its relevance-gated
dynamic variant DSG.

SG replaces each channel's spatial mean/std with an affine pair produced from
the conditioning vector by two small MLP heads. DSG blends SG output with the
untouched feature map using a per-sample scalar relevance in [0, 1]; at
relevance 0 the input passes through bitwise and the SG branch is skipped.

All functions have explicit backward passes; gradients are exercised against
central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .nn import Linear, Module, ReLU

DEFAULT_EPS = 1e-5


@dataclass
class RelevanceScore:
    """Scalar audio-visual relevance. The relevance network emits values
    strictly inside (0, 1); 0 is the degenerate no-audio value and 1 is
    accepted for gating-removed evaluation."""

    r: float

    def __post_init__(self):
        self.r = float(self.r)
        if not np.isfinite(self.r) or self.r < 0.0 or self.r > 1.0:
            raise ValidationError(f"relevance must lie in [0, 1], got {self.r}")


class AffineHeads(Module):
    """Two 2-layer MLPs mapping the conditioning vector to per-channel
    scale (gamma) and shift (beta).

    Final layers start at zero weight with bias 1 (gamma) / 0 (beta), so the
    injection begins as a plain instance normalization regardless of the
    conditioning input.
    """

    def __init__(self, cond_dim: int, channels: int, rng: np.random.Generator,
                 hidden: int | None = None):
        hidden = int(hidden or cond_dim)
        self.cond_dim = int(cond_dim)
        self.channels = int(channels)
        self.gamma_l1 = Linear(cond_dim, hidden, rng)
        self.gamma_l2 = Linear(hidden, channels, rng, zero_init=True, bias_init=1.0)
        self.beta_l1 = Linear(cond_dim, hidden, rng)
        self.beta_l2 = Linear(hidden, channels, rng, zero_init=True, bias_init=0.0)
        self._relu_g = ReLU()
        self._relu_b = ReLU()

    def forward(self, c: np.ndarray, train: bool = False):
        g = self.gamma_l2.forward(
            self._relu_g.forward(self.gamma_l1.forward(c, train), train), train)
        b = self.beta_l2.forward(
            self._relu_b.forward(self.beta_l1.forward(c, train), train), train)
        return g, b

    def backward(self, dgamma: np.ndarray, dbeta: np.ndarray) -> np.ndarray:
        dc_g = self.gamma_l1.backward(
            self._relu_g.backward(self.gamma_l2.backward(dgamma)))
        dc_b = self.beta_l1.backward(
            self._relu_b.backward(self.beta_l2.backward(dbeta)))
        return dc_g + dc_b


def _as_batched(x: np.ndarray, c: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    if c.ndim == 1:
        c = c[None]
    if x.ndim != 4:
        raise ValidationError(f"feature map must be HxWxC or NxHxWxC, got {x.shape}")
    if c.ndim != 2 or c.shape[0] != x.shape[0]:
        raise ValidationError("conditioning batch does not match feature batch")
    return x, c, squeeze


def _validate(x: np.ndarray, c: np.ndarray, heads: AffineHeads):
    if not np.all(np.isfinite(c)):
        raise ValidationError("conditioning vector contains non-finite values")
    if not np.all(np.isfinite(x)):
        raise ValidationError("feature map contains non-finite values")
    if c.shape[1] != heads.cond_dim:
        raise ValidationError(
            f"conditioning length {c.shape[1]} != heads.cond_dim {heads.cond_dim}")
    if x.shape[3] != heads.channels:
        raise ValidationError(
            f"feature channels {x.shape[3]} != heads.channels {heads.channels}")


def sg_forward(x: np.ndarray, c: np.ndarray, heads: AffineHeads,
               eps: float = DEFAULT_EPS, train: bool = False):
    """Batched SG. Returns (y, cache); cache is None when train=False."""
    gamma, beta = heads.forward(c, train=train)
    mu = x.mean(axis=(1, 2), keepdims=True)
    var = x.var(axis=(1, 2), keepdims=True)  # population variance
    istd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * istd
    y = gamma[:, None, None, :] * xhat + beta[:, None, None, :]
    cache = (xhat, istd, gamma, heads) if train else None
    return y, cache


def sg_backward(cache, dy: np.ndarray):
    """Backward of sg_forward; accumulates head gradients, returns (dx, dc)."""
    xhat, istd, gamma, heads = cache
    dgamma = (dy * xhat).sum(axis=(1, 2))
    dbeta = dy.sum(axis=(1, 2))
    dxhat = dy * gamma[:, None, None, :]
    m_d = dxhat.mean(axis=(1, 2), keepdims=True)
    m_dx = (dxhat * xhat).mean(axis=(1, 2), keepdims=True)
    dx = istd * (dxhat - m_d - xhat * m_dx)
    dc = heads.backward(dgamma, dbeta)
    return dx, dc


def dsg_forward(x: np.ndarray, c: np.ndarray, r: np.ndarray, heads: AffineHeads,
                eps: float = DEFAULT_EPS, train: bool = False):
    """Batched DSG: r*SG(x,c) + (1-r)*x with per-sample scalar r.

    Samples with r == 0 pass through bitwise. Returns (y, cache).
    """
    r = np.asarray(r, dtype=np.float64).reshape(-1)
    if r.shape[0] != x.shape[0]:
        raise ValidationError("relevance batch does not match feature batch")
    sg, sg_cache = sg_forward(x, c, heads, eps=eps, train=train)
    rb = r[:, None, None, None]
    y = x.copy()
    active = r != 0.0
    if np.any(active):
        y[active] = rb[active] * sg[active] + (1.0 - rb[active]) * x[active]
    cache = (sg_cache, r) if train else None
    return y, cache


def dsg_backward(cache, dy: np.ndarray):
    sg_cache, r = cache
    rb = r[:, None, None, None]
    dx_sg, dc = sg_backward(sg_cache, rb * dy)
    dx = (1.0 - rb) * dy + dx_sg
    return dx, dc


def sg_inject(x: np.ndarray, c: np.ndarray, heads: AffineHeads,
              eps: float = DEFAULT_EPS) -> np.ndarray:
    """AdaIN-based semantic guidance injection (evaluation mode)."""
    xb, cb, squeeze = _as_batched(x, c)
    _validate(xb, cb, heads)
    y, _ = sg_forward(xb, cb, heads, eps=eps, train=False)
    return y[0] if squeeze else y


def dsg_inject(x: np.ndarray, c: np.ndarray, r, heads: AffineHeads,
               eps: float = DEFAULT_EPS) -> np.ndarray:
    """Relevance-gated injection (evaluation mode).

    ``r`` may be a float, a RelevanceScore, or a per-sample vector. With
    r == 0 everywhere the SG branch is not evaluated at all.
    """
    if isinstance(r, RelevanceScore):
        r = r.r
    xb, cb, squeeze = _as_batched(x, c)
    _validate(xb, cb, heads)
    r_arr = np.asarray(r, dtype=np.float64).reshape(-1)
    if r_arr.size == 1:
        r_arr = np.full(xb.shape[0], float(r_arr[0]))
    if np.any(~np.isfinite(r_arr)) or r_arr.min() < 0.0 or r_arr.max() > 1.0:
        raise ValidationError("relevance values must lie in [0, 1]")
    if not r_arr.any():
        y = xb.copy()
    else:
        y, _ = dsg_forward(xb, cb, r_arr, heads, eps=eps, train=False)
    return y[0] if squeeze else y
