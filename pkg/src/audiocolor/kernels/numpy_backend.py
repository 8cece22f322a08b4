"""Pure-numpy conv/pool kernels (im2col + BLAS). Fallback for the numba path.

All kernels take channels-last float64 arrays. Convolutions are stride 1 with
'same' zero padding and odd kernel sizes.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"

# Keep the im2col scratch buffer below ~64 MB by chunking over the batch.
_COL_BUDGET = 8_000_000  # float64 elements


def _pad(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))


def _batch_chunks(n: int, per_item: int):
    step = max(1, _COL_BUDGET // max(per_item, 1))
    for s in range(0, n, step):
        yield s, min(n, s + step)


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    xp = _pad(x, kh // 2, kw // 2)
    wmat = w.reshape(kh * kw * cin, cout)
    y = np.empty((n, h, wd, cout))
    per_item = h * wd * kh * kw * cin
    for s, e in _batch_chunks(n, per_item):
        win = np.lib.stride_tricks.sliding_window_view(xp[s:e], (kh, kw), axis=(1, 2))
        # win: (b, h, w, cin, kh, kw) -> columns ordered (kh, kw, cin)
        cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
        out = cols.reshape(-1, kh * kw * cin) @ wmat + b
        y[s:e] = out.reshape(e - s, h, wd, cout)
    return y


def conv2d_backward_input(dy: np.ndarray, w: np.ndarray) -> np.ndarray:
    # Same-padding stride-1 conv: dx is the same conv of dy with the kernel
    # rotated 180 degrees and in/out channels swapped.
    kh, kw, cin, cout = w.shape
    w_rot = np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2))
    return conv2d_forward(dy, w_rot, np.zeros(cin))


def conv2d_backward_params(x: np.ndarray, dy: np.ndarray, kh: int, kw: int):
    n, h, wd, cin = x.shape
    cout = dy.shape[3]
    xp = _pad(x, kh // 2, kw // 2)
    dw = np.zeros((kh * kw * cin, cout))
    per_item = h * wd * kh * kw * cin
    for s, e in _batch_chunks(n, per_item):
        win = np.lib.stride_tricks.sliding_window_view(xp[s:e], (kh, kw), axis=(1, 2))
        cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
        dw += cols.reshape(-1, kh * kw * cin).T @ dy[s:e].reshape(-1, cout)
    db = dy.sum(axis=(0, 1, 2))
    return dw.reshape(kh, kw, cin, cout), db


def maxpool2_forward(x: np.ndarray):
    n, h, w, c = x.shape
    ho, wo = h // 2, w // 2
    q = x[:, : ho * 2, : wo * 2].reshape(n, ho, 2, wo, 2, c)
    quad = np.stack(
        [q[:, :, 0, :, 0], q[:, :, 0, :, 1], q[:, :, 1, :, 0], q[:, :, 1, :, 1]],
        axis=-1,
    )
    idx = quad.argmax(axis=-1).astype(np.int8)
    y = np.take_along_axis(quad, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return y, idx


def maxpool2_backward(dy: np.ndarray, idx: np.ndarray, h: int, w: int) -> np.ndarray:
    n, ho, wo, c = dy.shape
    dquad = np.zeros((n, ho, wo, c, 4))
    np.put_along_axis(dquad, idx[..., None].astype(np.intp), dy[..., None], axis=-1)
    core = np.zeros((n, ho, 2, wo, 2, c))
    core[:, :, 0, :, 0] = dquad[..., 0]
    core[:, :, 0, :, 1] = dquad[..., 1]
    core[:, :, 1, :, 0] = dquad[..., 2]
    core[:, :, 1, :, 1] = dquad[..., 3]
    dx = np.zeros((n, h, w, c))
    dx[:, : ho * 2, : wo * 2] = core.reshape(n, ho * 2, wo * 2, c)
    return dx
