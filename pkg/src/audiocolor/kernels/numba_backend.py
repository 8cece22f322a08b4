"""Numba-jitted conv/pool kernels. Loop order keeps the innermost axis over
output channels so LLVM can vectorize without fastmath (results stay
IEEE-ordered and run-to-run deterministic).
"""

from __future__ import annotations

import numpy as np
from numba import njit

NAME = "numba"


@njit(cache=True)
def _conv2d_forward(x, w, b):
    n, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    ph, pw = kh // 2, kw // 2
    y = np.empty((n, h, wd, cout))
    acc = np.empty(cout)
    for ni in range(n):
        for i in range(h):
            for j in range(wd):
                acc[:] = b
                for di in range(kh):
                    ii = i + di - ph
                    if ii < 0 or ii >= h:
                        continue
                    for dj in range(kw):
                        jj = j + dj - pw
                        if jj < 0 or jj >= wd:
                            continue
                        xrow = x[ni, ii, jj]
                        for ci in range(cin):
                            acc += xrow[ci] * w[di, dj, ci]
                y[ni, i, j] = acc
    return y


@njit(cache=True)
def _conv2d_backward_params(x, dy, kh, kw):
    n, h, wd, cin = x.shape
    cout = dy.shape[3]
    ph, pw = kh // 2, kw // 2
    dw = np.zeros((kh, kw, cin, cout))
    db = np.zeros(cout)
    for ni in range(n):
        for i in range(h):
            for j in range(wd):
                for co in range(cout):
                    db[co] += dy[ni, i, j, co]
                for di in range(kh):
                    ii = i + di - ph
                    if ii < 0 or ii >= h:
                        continue
                    for dj in range(kw):
                        jj = j + dj - pw
                        if jj < 0 or jj >= wd:
                            continue
                        for ci in range(cin):
                            xv = x[ni, ii, jj, ci]
                            for co in range(cout):
                                dw[di, dj, ci, co] += xv * dy[ni, i, j, co]
    return dw, db


@njit(cache=True)
def _maxpool2_forward(x):
    n, h, w, c = x.shape
    ho, wo = h // 2, w // 2
    y = np.empty((n, ho, wo, c))
    idx = np.empty((n, ho, wo, c), dtype=np.int8)
    for ni in range(n):
        for i in range(ho):
            for j in range(wo):
                for ci in range(c):
                    best = x[ni, 2 * i, 2 * j, ci]
                    bi = 0
                    v = x[ni, 2 * i, 2 * j + 1, ci]
                    if v > best:
                        best, bi = v, 1
                    v = x[ni, 2 * i + 1, 2 * j, ci]
                    if v > best:
                        best, bi = v, 2
                    v = x[ni, 2 * i + 1, 2 * j + 1, ci]
                    if v > best:
                        best, bi = v, 3
                    y[ni, i, j, ci] = best
                    idx[ni, i, j, ci] = bi
    return y, idx


@njit(cache=True)
def _maxpool2_backward(dy, idx, h, w):
    n, ho, wo, c = dy.shape
    dx = np.zeros((n, h, w, c))
    for ni in range(n):
        for i in range(ho):
            for j in range(wo):
                for ci in range(c):
                    k = idx[ni, i, j, ci]
                    dx[ni, 2 * i + k // 2, 2 * j + k % 2, ci] += dy[ni, i, j, ci]
    return dx


def _c(a):
    return np.ascontiguousarray(a)


def conv2d_forward(x, w, b):
    return _conv2d_forward(_c(x), _c(w), _c(b))


def conv2d_backward_input(dy, w):
    kh, kw, cin, cout = w.shape
    w_rot = np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2))
    return _conv2d_forward(_c(dy), w_rot, np.zeros(cin))


def conv2d_backward_params(x, dy, kh, kw):
    return _conv2d_backward_params(_c(x), _c(dy), kh, kw)


def maxpool2_forward(x):
    return _maxpool2_forward(_c(x))


def maxpool2_backward(dy, idx, h, w):
    return _maxpool2_backward(_c(dy), _c(idx), h, w)
