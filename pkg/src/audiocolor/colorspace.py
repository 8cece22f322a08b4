"""sRGB <-> CIE Lab conversion and Lab channel plumbing.

Conventions, fixed for the whole package:

* sRGB companding, D65 white point. The white point is taken as the row sums
  of the sRGB->XYZ matrix so that achromatic pixels map to a == b == 0 up to
  float rounding, not up to illuminant table precision.
* Images are channels-last float64 arrays. RGB lives in [0, 1]; L in
  [0, 100]; ab nominally in [-128, 127].
* Out-of-gamut Lab values are clipped to [0, 1] in RGB; the clipped fraction
  is reported on the returned image.
* 8-bit PNG is the only file format. Quantization round(v*255) happens at the
  I/O boundary and nowhere else.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import ValidationError

# sRGB (linear) -> XYZ, D65, 2 degree observer.
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
# White point consistent with the matrix above (row sums = XYZ of RGB(1,1,1)).
_WHITE = _RGB_TO_XYZ.sum(axis=1)

_DELTA = 6.0 / 29.0


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{what} contains non-finite values")


@dataclass
class RgbImage:
    """H x W x 3 sRGB image with components in [0, 1]."""

    pixels: np.ndarray
    clip_fraction: float | None = field(default=None, compare=False)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValidationError(f"RgbImage expects HxWx3, got {self.pixels.shape}")
        _check_finite(self.pixels, "RgbImage")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ValidationError("RgbImage components must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class LabImage:
    """CIE Lab image split into L (HxWx1, [0,100]) and ab (HxWx2)."""

    L: np.ndarray
    ab: np.ndarray

    def __post_init__(self):
        self.L = np.asarray(self.L, dtype=np.float64)
        self.ab = np.asarray(self.ab, dtype=np.float64)
        if self.L.ndim == 2:
            self.L = self.L[:, :, None]
        if self.L.ndim != 3 or self.L.shape[2] != 1:
            raise ValidationError(f"LabImage.L expects HxWx1, got {self.L.shape}")
        if self.ab.ndim != 3 or self.ab.shape[2] != 2:
            raise ValidationError(f"LabImage.ab expects HxWx2, got {self.ab.shape}")
        if self.L.shape[:2] != self.ab.shape[:2]:
            raise ValidationError("LabImage L/ab spatial dims differ")
        _check_finite(self.L, "LabImage.L")
        _check_finite(self.ab, "LabImage.ab")
        if self.L.min() < 0.0 or self.L.max() > 100.0:
            raise ValidationError("LabImage.L must lie in [0, 100]")


@dataclass
class GrayImage:
    """Luminance-only image, HxWx1 with L in [0, 100]."""

    L: np.ndarray

    def __post_init__(self):
        self.L = np.asarray(self.L, dtype=np.float64)
        if self.L.ndim == 2:
            self.L = self.L[:, :, None]
        if self.L.ndim != 3 or self.L.shape[2] != 1:
            raise ValidationError(f"GrayImage expects HxWx1, got {self.L.shape}")
        _check_finite(self.L, "GrayImage")
        if self.L.min() < 0.0 or self.L.max() > 100.0:
            raise ValidationError("GrayImage.L must lie in [0, 100]")


def srgb_to_linear(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    v = np.maximum(v, 0.0)
    return np.where(v <= 0.0031308, v * 12.92, 1.055 * v ** (1.0 / 2.4) - 0.055)


def _f(t: np.ndarray) -> np.ndarray:
    return np.where(t > _DELTA**3, np.cbrt(t), t / (3.0 * _DELTA**2) + 4.0 / 29.0)


def _f_inv(t: np.ndarray) -> np.ndarray:
    return np.where(t > _DELTA, t**3, 3.0 * _DELTA**2 * (t - 4.0 / 29.0))


def rgb_array_to_lab(rgb: np.ndarray) -> np.ndarray:
    """sRGB [0,1] array (...x3) -> Lab array (...x3). No validation."""
    xyz = srgb_to_linear(rgb) @ _RGB_TO_XYZ.T
    fxyz = _f(xyz / _WHITE)
    L = 116.0 * fxyz[..., 1] - 16.0
    a = 500.0 * (fxyz[..., 0] - fxyz[..., 1])
    b = 200.0 * (fxyz[..., 1] - fxyz[..., 2])
    return np.stack([L, a, b], axis=-1)


def lab_array_to_rgb(lab: np.ndarray) -> tuple[np.ndarray, float]:
    """Lab array (...x3) -> clipped sRGB [0,1] array plus clipped fraction."""
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    xyz = np.stack([_f_inv(fx), _f_inv(fy), _f_inv(fz)], axis=-1) * _WHITE
    rgb = linear_to_srgb(xyz @ _XYZ_TO_RGB.T)
    clipped = (rgb < 0.0) | (rgb > 1.0)
    out_of_gamut = float(np.count_nonzero(clipped)) / max(rgb.size, 1)
    return np.clip(rgb, 0.0, 1.0), out_of_gamut


def rgb_to_lab(img: RgbImage) -> LabImage:
    lab = rgb_array_to_lab(img.pixels)
    # Guard against rounding pushing L a hair outside [0, 100].
    L = np.clip(lab[..., 0:1], 0.0, 100.0)
    return LabImage(L=L, ab=lab[..., 1:3])


def lab_to_rgb(img: LabImage) -> RgbImage:
    lab = np.concatenate([img.L, img.ab], axis=2)
    rgb, clip_fraction = lab_array_to_rgb(lab)
    return RgbImage(pixels=rgb, clip_fraction=clip_fraction)


def merge_channels(gray: GrayImage, ab: np.ndarray) -> LabImage:
    ab = np.asarray(ab, dtype=np.float64)
    if ab.ndim != 3 or ab.shape[2] != 2:
        raise ValidationError(f"ab channels must be HxWx2, got {ab.shape}")
    if ab.shape[:2] != gray.L.shape[:2]:
        raise ValidationError(
            f"spatial dims differ: gray {gray.L.shape[:2]} vs ab {ab.shape[:2]}"
        )
    return LabImage(L=gray.L.copy(), ab=ab.copy())


def split_channels(img: LabImage) -> tuple[GrayImage, np.ndarray]:
    return GrayImage(L=img.L.copy()), img.ab.copy()


def save_png(img: RgbImage, path) -> None:
    """Write 8-bit RGB PNG; quantization is round(v*255)."""
    q = np.rint(img.pixels * 255.0).astype(np.uint8)
    Image.fromarray(q, mode="RGB").save(path, format="PNG")


def load_png(path) -> RgbImage:
    """Read 8-bit RGB PNG; dequantization is v/255."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return RgbImage(pixels=arr / 255.0)


def save_gray_png(gray: GrayImage, path) -> None:
    """Write the L channel as 8-bit grayscale PNG (round(L/100*255))."""
    q = np.rint(gray.L[:, :, 0] / 100.0 * 255.0).astype(np.uint8)
    Image.fromarray(q, mode="L").save(path, format="PNG")


def load_gray_png(path) -> GrayImage:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64)
    return GrayImage(L=arr / 255.0 * 100.0)
