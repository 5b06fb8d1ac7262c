"""Hot inner-loop kernels with two interchangeable backends.

The convolution, pooling, and occlusion sweeps spend essentially all their
time in patch gather/scatter loops.  Those live here in two variants:

* ``numba``  -- @njit-compiled loops (the default when numba imports)
* ``numpy``  -- vectorized pure-numpy equivalents

Select with ``OCTPIPE_BACKEND=numba`` or ``OCTPIPE_BACKEND=numpy``.  The two
backends are bit-identical by construction: gathers are exact copies, maxima
are order-free, and every float32 accumulation runs in the same fixed
(dy, dx) order.  ``tests/test_kernels.py`` asserts the equality; the matrix
multiplies themselves always go through numpy BLAS in either backend.

Array layout conventions (all float32, C-order):
  im2col column index = c * 9 + dy * 3 + dx   (matches weight.reshape(F, C*9))
  pool argmax code    = wy * 2 + wx           (position inside the 2x2 window)
"""

from __future__ import annotations

import os

import numpy as np

NEG_INF = np.float32(-np.inf)


# ---------------------------------------------------------------- numpy ----

def im2col3x3_numpy(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2, w + 2), dtype=np.float32)
    xp[:, :, 1 : h + 1, 1 : w + 1] = x
    cols = np.empty((n, h, w, c, 9), dtype=np.float32)
    for dy in range(3):
        for dx in range(3):
            cols[:, :, :, :, dy * 3 + dx] = xp[:, :, dy : dy + h, dx : dx + w].transpose(0, 2, 3, 1)
    return cols.reshape(n, h * w, c * 9)


def col2im3x3_numpy(gcols: np.ndarray, h: int, w: int) -> np.ndarray:
    n = gcols.shape[0]
    c = gcols.shape[2] // 9
    g = gcols.reshape(n, h, w, c, 3, 3)
    gx = np.zeros((n, c, h, w), dtype=np.float32)
    # Accumulate offsets in fixed (dy, dx) order so float32 sums match the
    # numba path bit for bit.
    for dy in range(3):
        for dx in range(3):
            y0 = max(0, dy - 1)
            y1 = min(h, h + dy - 1)
            x0 = max(0, dx - 1)
            x1 = min(w, w + dx - 1)
            if y0 >= y1 or x0 >= x1:
                continue
            src = g[:, y0 - (dy - 1) : y1 - (dy - 1), x0 - (dx - 1) : x1 - (dx - 1), :, dy, dx]
            gx[:, :, y0:y1, x0:x1] += src.transpose(0, 3, 1, 2)
    return gx


def maxpool2_forward_numpy(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n, c, h, w = x.shape
    ho, wo = (h + 1) // 2, (w + 1) // 2
    xp = np.full((n, c, 2 * ho, 2 * wo), NEG_INF, dtype=np.float32)
    xp[:, :, :h, :w] = x
    win = xp.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    idx = win.argmax(axis=4).astype(np.uint8)
    out = win.max(axis=4)
    return out, idx


def maxpool2_backward_numpy(gout: np.ndarray, idx: np.ndarray, h: int, w: int) -> np.ndarray:
    n, c, ho, wo = gout.shape
    gx = np.zeros((n, c, h, w), dtype=np.float32)
    oy, ox = np.meshgrid(np.arange(ho), np.arange(wo), indexing="ij")
    iy = 2 * oy[None, None] + (idx >> 1)
    ix = 2 * ox[None, None] + (idx & 1)
    nn = np.arange(n)[:, None, None, None]
    cc = np.arange(c)[None, :, None, None]
    # 2x2 windows are disjoint, so winner positions never collide.
    gx[nn, cc, iy, ix] = gout
    return gx


def window_max_numpy(drops: np.ndarray, box: int, h: int, w: int) -> np.ndarray:
    hp, wp = drops.shape
    rowmax = np.full((h, wp), NEG_INF, dtype=np.float32)
    for i in range(h):
        y0 = max(0, i - box + 1)
        y1 = min(i, hp - 1)
        rowmax[i] = drops[y0 : y1 + 1].max(axis=0)
    heat = np.empty((h, w), dtype=np.float32)
    for j in range(w):
        x0 = max(0, j - box + 1)
        x1 = min(j, wp - 1)
        heat[:, j] = rowmax[:, x0 : x1 + 1].max(axis=1)
    return heat


# ---------------------------------------------------------------- numba ----

def _im2col3x3_loops(x):
    n, c, h, w = x.shape
    cols = np.zeros((n, h * w, c * 9), dtype=np.float32)
    for ni in range(n):
        for ci in range(c):
            for y in range(h):
                for xx in range(w):
                    p = y * w + xx
                    for dy in range(3):
                        sy = y + dy - 1
                        if sy < 0 or sy >= h:
                            continue
                        for dx in range(3):
                            sx = xx + dx - 1
                            if sx < 0 or sx >= w:
                                continue
                            cols[ni, p, ci * 9 + dy * 3 + dx] = x[ni, ci, sy, sx]
    return cols


def _col2im3x3_loops(gcols, h, w):
    n = gcols.shape[0]
    c = gcols.shape[2] // 9
    gx = np.zeros((n, c, h, w), dtype=np.float32)
    for ni in range(n):
        for ci in range(c):
            for y in range(h):
                for xx in range(w):
                    acc = np.float32(0.0)
                    for dy in range(3):
                        sy = y - dy + 1
                        if sy < 0 or sy >= h:
                            continue
                        for dx in range(3):
                            sx = xx - dx + 1
                            if sx < 0 or sx >= w:
                                continue
                            acc += gcols[ni, sy * w + sx, ci * 9 + dy * 3 + dx]
                    gx[ni, ci, y, xx] = acc
    return gx


def _maxpool2_forward_loops(x):
    n, c, h, w = x.shape
    ho = (h + 1) // 2
    wo = (w + 1) // 2
    out = np.empty((n, c, ho, wo), dtype=np.float32)
    idx = np.empty((n, c, ho, wo), dtype=np.uint8)
    for ni in range(n):
        for ci in range(c):
            for oy in range(ho):
                for ox in range(wo):
                    best = NEG_INF
                    code = np.uint8(0)
                    for wy in range(2):
                        iy = 2 * oy + wy
                        if iy >= h:
                            continue
                        for wx in range(2):
                            ix = 2 * ox + wx
                            if ix >= w:
                                continue
                            v = x[ni, ci, iy, ix]
                            if v > best:
                                best = v
                                code = np.uint8(wy * 2 + wx)
                    out[ni, ci, oy, ox] = best
                    idx[ni, ci, oy, ox] = code
    return out, idx


def _maxpool2_backward_loops(gout, idx, h, w):
    n, c, ho, wo = gout.shape
    gx = np.zeros((n, c, h, w), dtype=np.float32)
    for ni in range(n):
        for ci in range(c):
            for oy in range(ho):
                for ox in range(wo):
                    code = idx[ni, ci, oy, ox]
                    gx[ni, ci, 2 * oy + (code >> 1), 2 * ox + (code & 1)] = gout[ni, ci, oy, ox]
    return gx


def _window_max_loops(drops, box, h, w):
    hp, wp = drops.shape
    heat = np.empty((h, w), dtype=np.float32)
    for i in range(h):
        y0 = max(0, i - box + 1)
        y1 = min(i, hp - 1)
        for j in range(w):
            x0 = max(0, j - box + 1)
            x1 = min(j, wp - 1)
            best = NEG_INF
            for y in range(y0, y1 + 1):
                for x in range(x0, x1 + 1):
                    if drops[y, x] > best:
                        best = drops[y, x]
            heat[i, j] = best
    return heat


def _build_numba():
    from numba import njit

    jit = njit(cache=True, nogil=True)
    return {
        "im2col3x3": jit(_im2col3x3_loops),
        "col2im3x3": jit(_col2im3x3_loops),
        "maxpool2_forward": jit(_maxpool2_forward_loops),
        "maxpool2_backward": jit(_maxpool2_backward_loops),
        "window_max": jit(_window_max_loops),
    }


_NUMPY_IMPLS = {
    "im2col3x3": im2col3x3_numpy,
    "col2im3x3": col2im3x3_numpy,
    "maxpool2_forward": maxpool2_forward_numpy,
    "maxpool2_backward": maxpool2_backward_numpy,
    "window_max": window_max_numpy,
}


def _resolve_backend() -> tuple[str, dict]:
    choice = os.environ.get("OCTPIPE_BACKEND", "numba").lower()
    if choice not in ("numba", "numpy"):
        raise ValueError(f"OCTPIPE_BACKEND must be 'numba' or 'numpy', got {choice!r}")
    if choice == "numba":
        try:
            return "numba", _build_numba()
        except ImportError:
            return "numpy", _NUMPY_IMPLS
    return "numpy", _NUMPY_IMPLS


BACKEND, _impls = _resolve_backend()

im2col3x3 = _impls["im2col3x3"]
col2im3x3 = _impls["col2im3x3"]
maxpool2_forward = _impls["maxpool2_forward"]
maxpool2_backward = _impls["maxpool2_backward"]
window_max = _impls["window_max"]


def numba_impls() -> dict | None:
    """Numba variants regardless of the active backend (None if unavailable)."""
    try:
        return _build_numba()
    except ImportError:
        return None
