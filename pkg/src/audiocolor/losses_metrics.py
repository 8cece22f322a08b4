"""Training objectives and evaluation metrics.

Losses: smooth-L1 color loss on normalized ab, squared-L2 semantic
distillation loss, and binary cross-entropy for the relevance score. Each
loss pairs with an analytic gradient helper checked against finite
differences in the tests.

Metrics: PSNR on RGB over [0, 1]; SSIM on luma (Lab L / 100) with an 11x11
Gaussian window (sigma 1.5, K1=0.01, K2=0.03). A perceptual distance can be
plugged in by name; the default report omits it and says so.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .colorspace import RgbImage, rgb_array_to_lab
from .errors import ValidationError


@dataclass
class LossValue:
    value: float
    components: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValidationError(f"loss is non-finite: {self.value}")


# -- losses -------------------------------------------------------------------


def color_loss(pred_ab: np.ndarray, true_ab: np.ndarray) -> LossValue:
    """Mean smooth-L1 over all ab components (inputs already normalized)."""
    pred_ab = np.asarray(pred_ab, dtype=np.float64)
    true_ab = np.asarray(true_ab, dtype=np.float64)
    if pred_ab.shape != true_ab.shape:
        raise ValidationError(f"shape mismatch {pred_ab.shape} vs {true_ab.shape}")
    d = pred_ab - true_ab
    ad = np.abs(d)
    per = np.where(ad < 1.0, 0.5 * d * d, ad - 0.5)
    return LossValue(value=float(per.mean()), components={"smooth_l1": float(per.mean())})


def color_loss_grad(pred_ab: np.ndarray, true_ab: np.ndarray) -> np.ndarray:
    d = np.asarray(pred_ab, dtype=np.float64) - np.asarray(true_ab, dtype=np.float64)
    g = np.where(np.abs(d) < 1.0, d, np.sign(d))
    return g / d.size


def semantic_loss(f_a_s: np.ndarray, f_v_s: np.ndarray) -> LossValue:
    """Squared L2 distance, summed over dimensions. Accepts vectors or
    batches (mean over the batch)."""
    f_a_s = np.atleast_2d(np.asarray(f_a_s, dtype=np.float64))
    f_v_s = np.atleast_2d(np.asarray(f_v_s, dtype=np.float64))
    if f_a_s.shape != f_v_s.shape:
        raise ValidationError(f"length mismatch {f_a_s.shape} vs {f_v_s.shape}")
    per = ((f_a_s - f_v_s) ** 2).sum(axis=1)
    return LossValue(value=float(per.mean()), components={"sq_l2": float(per.mean())})


def semantic_loss_grad(f_a_s: np.ndarray, f_v_s: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. f_a_s: 2 (f_a_s - f_v_s), averaged over the batch."""
    a = np.atleast_2d(np.asarray(f_a_s, dtype=np.float64))
    v = np.atleast_2d(np.asarray(f_v_s, dtype=np.float64))
    g = 2.0 * (a - v) / a.shape[0]
    return g.reshape(np.shape(f_a_s))


def relevance_loss(r, h) -> LossValue:
    """Binary cross-entropy of relevance r in (0,1) against label h in {0,1}."""
    r_arr = np.atleast_1d(np.asarray(r, dtype=np.float64))
    h_arr = np.atleast_1d(np.asarray(h, dtype=np.float64))
    if r_arr.shape != h_arr.shape:
        raise ValidationError("r and h shapes differ")
    if np.any((r_arr <= 0.0) | (r_arr >= 1.0)):
        raise ValidationError("relevance must lie strictly inside (0, 1)")
    if np.any((h_arr != 0.0) & (h_arr != 1.0)):
        raise ValidationError("labels must be 0 or 1")
    per = -(h_arr * np.log(r_arr) + (1.0 - h_arr) * np.log(1.0 - r_arr))
    return LossValue(value=float(per.mean()), components={"bce": float(per.mean())})


def relevance_loss_grad(r, h) -> np.ndarray:
    r_arr = np.atleast_1d(np.asarray(r, dtype=np.float64))
    h_arr = np.atleast_1d(np.asarray(h, dtype=np.float64))
    g = (-h_arr / r_arr + (1.0 - h_arr) / (1.0 - r_arr)) / r_arr.size
    return g.reshape(np.shape(r)) if np.ndim(r) else g[0]


# -- metrics ------------------------------------------------------------------


def _pixels(img) -> np.ndarray:
    return img.pixels if isinstance(img, RgbImage) else np.asarray(img, dtype=np.float64)


def psnr(pred, ref) -> float:
    """PSNR in dB on [0,1] RGB; +inf for identical images."""
    p, q = _pixels(pred), _pixels(ref)
    if p.shape != q.shape:
        raise ValidationError(f"shape mismatch {p.shape} vs {q.shape}")
    mse = float(((p - q) ** 2).mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    k = kernel.shape[0]
    win = np.lib.stride_tricks.sliding_window_view(img, (k, k))
    return np.tensordot(win, kernel, axes=([2, 3], [0, 1]))


def luma(img) -> np.ndarray:
    """Lab L channel scaled to [0, 1]."""
    return rgb_array_to_lab(_pixels(img))[..., 0] / 100.0


def ssim(pred, ref) -> float:
    """Mean SSIM over luma with Gaussian weighting (valid region only)."""
    p, q = _pixels(pred), _pixels(ref)
    if p.shape != q.shape:
        raise ValidationError(f"shape mismatch {p.shape} vs {q.shape}")
    x, y = luma(p), luma(q)
    if min(x.shape) < SSIM_WINDOW:
        raise ValidationError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    kern = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    mu_x = _filter_valid(x, kern)
    mu_y = _filter_valid(y, kern)
    xx = _filter_valid(x * x, kern) - mu_x * mu_x
    yy = _filter_valid(y * y, kern) - mu_y * mu_y
    xy = _filter_valid(x * y, kern) - mu_x * mu_y
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (xx + yy + c2)
    return float((num / den).mean())


# -- perceptual plug-in registry ----------------------------------------------

_PERCEPTUAL: dict[str, Callable[[np.ndarray, np.ndarray], float]] = {}


def register_perceptual(name: str, fn: Callable[[np.ndarray, np.ndarray], float]):
    _PERCEPTUAL[name] = fn


def get_perceptual(name: str | None):
    if name is None:
        return None
    if name not in _PERCEPTUAL:
        raise ValidationError(
            f"perceptual metric {name!r} not registered (have {sorted(_PERCEPTUAL)})")
    return _PERCEPTUAL[name]


# -- report -------------------------------------------------------------------


@dataclass
class MetricsReport:
    mode: str
    rows: list[dict] = field(default_factory=list)
    perceptual_name: str | None = None
    extra_summary: dict = field(default_factory=dict)

    def add(self, name: str, psnr_db: float, ssim_val: float,
            perceptual: float | None = None, extra: dict | None = None):
        row = {
            "image": name,
            "psnr_db": None if math.isinf(psnr_db) else psnr_db,
            "psnr_infinite": bool(math.isinf(psnr_db)),
            "ssim": ssim_val,
        }
        if perceptual is not None:
            row["perceptual"] = perceptual
        if extra:
            row.update(extra)
        self.rows.append(row)

    def summary(self) -> dict:
        finite = [r["psnr_db"] for r in self.rows if not r["psnr_infinite"]]
        out = {
            "mode": self.mode,
            "count": len(self.rows),
            "psnr_mean_db": float(np.mean(finite)) if finite else None,
            "psnr_infinite_count": sum(r["psnr_infinite"] for r in self.rows),
            "ssim_mean": float(np.mean([r["ssim"] for r in self.rows])) if self.rows else None,
        }
        if self.perceptual_name is None:
            out["perceptual"] = "omitted (no perceptual plug-in configured)"
        else:
            vals = [r["perceptual"] for r in self.rows if "perceptual" in r]
            out["perceptual"] = {"name": self.perceptual_name,
                                 "mean": float(np.mean(vals)) if vals else None}
        out.update(self.extra_summary)
        return out

    def write_jsonl(self, path) -> None:
        """One JSON object per line: per-image rows, then a summary line."""
        with open(path, "w") as fh:
            for row in self.rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
            fh.write(json.dumps({"summary": self.summary()}, sort_keys=True) + "\n")

    def format_table(self) -> str:
        s = self.summary()
        psnr_s = "inf" if s["psnr_mean_db"] is None and s["psnr_infinite_count"] else (
            f"{s['psnr_mean_db']:.3f}" if s["psnr_mean_db"] is not None else "n/a")
        lines = [
            f"mode={self.mode} n={s['count']}",
            f"  PSNR mean [dB]: {psnr_s}"
            + (f" ({s['psnr_infinite_count']} infinite)" if s["psnr_infinite_count"] else ""),
            f"  SSIM mean     : {s['ssim_mean']:.4f}" if s["ssim_mean"] is not None else "  SSIM mean     : n/a",
            f"  perceptual    : {s['perceptual']}",
        ]
        return "\n".join(lines)
