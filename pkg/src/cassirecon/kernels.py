"""Hot numeric kernels: patch extraction for convolutions and the sensing
operator's shifted-mask projections.

Every kernel exists twice: ``*_numpy`` (vectorised or slice-based numpy) and
``*_loops`` (plain loops, compiled with numba when available).  The public
names ``im2col``, ``col2im``, ``forward_project_kernel`` and
``adjoint_project_kernel`` are bound to one flavour at import time via
:mod:`cassirecon.accel`.  Loop orders match between flavours so accumulation
happens in the same sequence and results agree bit for bit.

im2col always dispatches to the numpy build: the strided gather beats the
compiled loop at every size we benchmarked (see benchmarks/bench_kernels.py);
the numba build is kept for the benchmark and the parity tests.

All kernels take and return contiguous float64 arrays.
"""

import numpy as np

from . import accel


# ---------------------------------------------------------------------------
# patch extraction (conv support)

def im2col_numpy(xp, kh, kw, stride):
    """Gather kh x kw patches of a padded (Hp, Wp, C) map into rows.

    Row layout is (ki, kj, c) fastest-varying c, matching a C-order reshape
    of a (kh, kw, Cin, Cout) weight tensor.
    """
    Hp, Wp, C = xp.shape
    ho = (Hp - kh) // stride + 1
    wo = (Wp - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(0, 1))
    win = win[::stride, ::stride]  # (ho, wo, C, kh, kw)
    cols = win.transpose(0, 1, 3, 4, 2).reshape(ho * wo, kh * kw * C)
    return np.ascontiguousarray(cols)


def _im2col_loops(xp, kh, kw, stride):
    Hp, Wp, C = xp.shape
    ho = (Hp - kh) // stride + 1
    wo = (Wp - kw) // stride + 1
    out = np.empty((ho * wo, kh * kw * C), np.float64)
    row = 0
    for i in range(ho):
        i0 = i * stride
        for j in range(wo):
            j0 = j * stride
            p = 0
            for ki in range(kh):
                for kj in range(kw):
                    for c in range(C):
                        out[row, p] = xp[i0 + ki, j0 + kj, c]
                        p += 1
            row += 1
    return out


def col2im_numpy(cols, Hp, Wp, C, kh, kw, stride):
    """Scatter-add patch rows back onto a (Hp, Wp, C) map (adjoint of im2col)."""
    ho = (Hp - kh) // stride + 1
    wo = (Wp - kw) // stride + 1
    g = cols.reshape(ho, wo, kh, kw, C)
    out = np.zeros((Hp, Wp, C), np.float64)
    for ki in range(kh):
        for kj in range(kw):
            out[ki:ki + ho * stride:stride, kj:kj + wo * stride:stride, :] += g[:, :, ki, kj, :]
    return out


def _col2im_loops(cols, Hp, Wp, C, kh, kw, stride):
    ho = (Hp - kh) // stride + 1
    wo = (Wp - kw) // stride + 1
    g = cols.reshape(ho, wo, kh, kw, C)
    out = np.zeros((Hp, Wp, C), np.float64)
    # (ki, kj) outermost: same accumulation order as the slice-based fallback
    for ki in range(kh):
        for kj in range(kw):
            for i in range(ho):
                for j in range(wo):
                    for c in range(C):
                        out[ki + i * stride, kj + j * stride, c] += g[i, j, ki, kj, c]
    return out


# ---------------------------------------------------------------------------
# sensing operator

def forward_project_numpy(x, phi, step):
    """Mask, shift and band-sum a cube: y[h, w'] = sum_b phi[h, w', b] * x[h, w' - s b, b]."""
    H, W, B = x.shape
    ws = phi.shape[1]
    y = np.zeros((H, ws), np.float64)
    for b in range(B):
        o = step * b
        y[:, o:o + W] += phi[:, o:o + W, b] * x[:, :, b]
    return y


def _forward_project_loops(x, phi, step):
    H, W, B = x.shape
    ws = phi.shape[1]
    y = np.zeros((H, ws), np.float64)
    for b in range(B):
        o = step * b
        for h in range(H):
            for w in range(W):
                y[h, o + w] += phi[h, o + w, b] * x[h, w, b]
    return y


def adjoint_project_numpy(y, phi, step):
    """Adjoint of the forward projection: x[h, w, b] = phi[h, w + s b, b] * y[h, w + s b]."""
    H, ws = y.shape
    B = phi.shape[2]
    W = ws - step * (B - 1)
    x = np.empty((H, W, B), np.float64)
    for b in range(B):
        o = step * b
        x[:, :, b] = phi[:, o:o + W, b] * y[:, o:o + W]
    return x


def _adjoint_project_loops(y, phi, step):
    H, ws = y.shape
    B = phi.shape[2]
    W = ws - step * (B - 1)
    x = np.empty((H, W, B), np.float64)
    for b in range(B):
        o = step * b
        for h in range(H):
            for w in range(W):
                x[h, w, b] = phi[h, o + w, b] * y[h, o + w]
    return x


# ---------------------------------------------------------------------------
# dispatch

if accel.USE_NUMBA:
    im2col_numba = accel.njit(cache=True)(_im2col_loops)
    col2im_numba = accel.njit(cache=True)(_col2im_loops)
    forward_project_numba = accel.njit(cache=True)(_forward_project_loops)
    adjoint_project_numba = accel.njit(cache=True)(_adjoint_project_loops)

    im2col = im2col_numpy  # measured faster than the compiled loop
    col2im = col2im_numba
    forward_project_kernel = forward_project_numba
    adjoint_project_kernel = adjoint_project_numba
else:
    im2col_numba = None
    col2im_numba = None
    forward_project_numba = None
    adjoint_project_numba = None

    im2col = im2col_numpy
    col2im = col2im_numpy
    forward_project_kernel = forward_project_numpy
    adjoint_project_kernel = adjoint_project_numpy
