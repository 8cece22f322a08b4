"""Backend dispatch for the hot conv/pool kernels.

The active backend is chosen once, lazily, from the ``AUDIOCOLOR_BACKEND``
environment variable:

* ``auto`` (default): numba if it imports, else the pure-numpy fallback
* ``numba``: require the jitted kernels
* ``numpy``: force the im2col fallback

``set_backend()`` overrides the choice programmatically (used by tests and by
``benchmarks/bench_kernels.py`` to compare both paths in one process).
"""

from __future__ import annotations

import os

_active = None


def _load(name: str):
    if name == "numpy":
        from . import numpy_backend

        return numpy_backend
    if name == "numba":
        from . import numba_backend

        return numba_backend
    raise ValueError(f"unknown kernel backend {name!r} (expected numpy|numba|auto)")


def set_backend(name: str):
    """Force a backend by name; returns the backend module."""
    global _active
    _active = _load(name)
    return _active


def active():
    """Return the active backend module, resolving it on first use."""
    global _active
    if _active is None:
        choice = os.environ.get("AUDIOCOLOR_BACKEND", "auto").strip().lower()
        if choice in ("", "auto"):
            try:
                _active = _load("numba")
            except ImportError:
                _active = _load("numpy")
        else:
            _active = _load(choice)
    return _active


def conv2d_forward(x, w, b):
    return active().conv2d_forward(x, w, b)


def conv2d_backward_input(dy, w):
    return active().conv2d_backward_input(dy, w)


def conv2d_backward_params(x, dy, kh, kw):
    return active().conv2d_backward_params(x, dy, kh, kw)


def maxpool2_forward(x):
    return active().maxpool2_forward(x)


def maxpool2_backward(dy, idx, h, w):
    return active().maxpool2_backward(dy, idx, h, w)
