"""Minimal layer framework with hand-written backward passes.

Everything is float64 and channels-last. Layers cache activations only when
``train=True`` is passed to ``forward``; evaluation-mode forwards mutate no
state and are safe to run concurrently over shared parameters. One training
forward pairs with exactly one backward.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ValidationError


class Param:
    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)


class Module:
    """Base with recursive named-parameter discovery (attribute order)."""

    def named_params(self, prefix: str = "") -> dict[str, Param]:
        out: dict[str, Param] = {}
        for name, attr in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(attr, Param):
                out[key] = attr
            elif isinstance(attr, Module):
                out.update(attr.named_params(f"{key}/"))
            elif isinstance(attr, (list, tuple)):
                for i, item in enumerate(attr):
                    if isinstance(item, Module):
                        out.update(item.named_params(f"{key}.{i}/"))
                    elif isinstance(item, Param):
                        out[f"{key}.{i}"] = item
        return out

    def zero_grad(self):
        for p in self.named_params().values():
            p.grad[...] = 0.0

    def param_count(self) -> int:
        return sum(p.value.size for p in self.named_params().values())

    def load_values(self, blobs: dict[str, np.ndarray], prefix: str = ""):
        for name, p in self.named_params().items():
            key = prefix + name
            if key not in blobs:
                raise ValidationError(f"missing parameter blob {key!r}")
            arr = np.asarray(blobs[key], dtype=np.float64)
            if arr.shape != p.value.shape:
                raise ValidationError(
                    f"blob {key!r} has shape {arr.shape}, expected {p.value.shape}"
                )
            p.value = arr.copy()
            p.grad = np.zeros_like(p.value)

    def dump_values(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {prefix + k: p.value.copy() for k, p in self.named_params().items()}


def he_normal(rng: np.random.Generator, shape, fan_in: int, scale: float = 1.0):
    std = scale * np.sqrt(2.0 / fan_in)
    return rng.normal(0.0, std, size=shape)


class Conv2d(Module):
    """3x3-style same-padding conv, stride 1, odd kernel."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator, k: int = 3,
                 weight_scale: float = 1.0):
        if k % 2 != 1:
            raise ValidationError("Conv2d requires an odd kernel size")
        self.w = Param(he_normal(rng, (k, k, cin, cout), k * k * cin, weight_scale))
        self.b = Param(np.zeros(cout))
        self._cache = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        y = kernels.conv2d_forward(x, self.w.value, self.b.value)
        if train:
            self._cache = x
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x = self._cache
        kh, kw = self.w.value.shape[:2]
        dw, db = kernels.conv2d_backward_params(x, dy, kh, kw)
        self.w.grad += dw
        self.b.grad += db
        self._cache = None
        return kernels.conv2d_backward_input(dy, self.w.value)


class Linear(Module):
    def __init__(self, nin: int, nout: int, rng: np.random.Generator,
                 weight_scale: float = 1.0, zero_init: bool = False,
                 bias_init: float = 0.0):
        if zero_init:
            w = np.zeros((nin, nout))
        else:
            w = he_normal(rng, (nin, nout), nin, weight_scale)
        self.w = Param(w)
        self.b = Param(np.full(nout, float(bias_init)))
        self._cache = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        y = x @ self.w.value + self.b.value
        if train:
            self._cache = x
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x = self._cache
        self.w.grad += x.T @ dy
        self.b.grad += dy.sum(axis=0)
        self._cache = None
        return dy @ self.w.value.T


class ReLU(Module):
    def __init__(self):
        self._cache = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        y = np.maximum(x, 0.0)
        if train:
            self._cache = x > 0.0
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        mask = self._cache
        self._cache = None
        return dy * mask


class Tanh(Module):
    def __init__(self):
        self._cache = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        y = np.tanh(x)
        if train:
            self._cache = y
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        y = self._cache
        self._cache = None
        return dy * (1.0 - y * y)


class MaxPool2(Module):
    def __init__(self):
        self._cache = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        y, idx = kernels.maxpool2_forward(x)
        if train:
            self._cache = (idx, x.shape[1], x.shape[2])
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        idx, h, w = self._cache
        self._cache = None
        return kernels.maxpool2_backward(dy, idx, h, w)


class Upsample2(Module):
    """Nearest-neighbour 2x upsampling."""

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        return x.repeat(2, axis=1).repeat(2, axis=2)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        n, h, w, c = dy.shape
        return dy.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


class GlobalAvgPool(Module):
    def __init__(self):
        self._cache = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if train:
            self._cache = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        n, h, w, c = self._cache
        self._cache = None
        return np.broadcast_to(dy[:, None, None, :], (n, h, w, c)) / (h * w)


class Flatten(Module):
    def __init__(self):
        self._cache = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if train:
            self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        shape = self._cache
        self._cache = None
        return dy.reshape(shape)


class Sequential(Module):
    def __init__(self, layers: list[Module]):
        self.layers = list(layers)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def backward(self, dy: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy


class Adam:
    """Deterministic Adam over a fixed, name-sorted parameter dict."""

    def __init__(self, params: dict[str, Param], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(sorted(params.items()))
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.value) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in self.params.items()}

    def step(self):
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            g = p.grad
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            mhat = self.m[k] / b1t
            vhat = self.v[k] / b2t
            p.value = p.value - self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"t": np.array([self.t], dtype=np.int64)}
        for k in self.params:
            out[f"m/{k}"] = self.m[k].copy()
            out[f"v/{k}"] = self.v[k].copy()
        return out

    def load_state(self, blobs: dict[str, np.ndarray]):
        self.t = int(blobs["t"][0])
        for k in self.params:
            self.m[k] = np.asarray(blobs[f"m/{k}"], dtype=np.float64).copy()
            self.v[k] = np.asarray(blobs[f"v/{k}"], dtype=np.float64).copy()
