"""Independent brute-force reference implementations used as test oracles.

Everything here is written from the operation definitions with plain loops
and dense matrices, deliberately not sharing code with the package.
"""

import numpy as np


def dense_sensing_matrix(mask, bands, step=1):
    """Assemble the full measurement x voxel matrix directly from the mask.

    Row index is the flattened measurement pixel (h, w + step*b); column
    index is the flattened (H, W, B) voxel in C order.
    """
    mask = np.asarray(mask, dtype=np.float64)
    H, W = mask.shape
    ws = W + step * (bands - 1)
    A = np.zeros((H * ws, H * W * bands))
    for h in range(H):
        for w in range(W):
            for b in range(bands):
                row = h * ws + (w + step * b)
                col = (h * W + w) * bands + b
                A[row, col] = mask[h, w]
    return A


def naive_dft2(x):
    """Direct O(N^2) evaluation of the orthonormal 2-D DFT."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
        squeeze = True
    else:
        squeeze = False
    H, W, C = x.shape
    out = np.zeros((H, W, C), dtype=np.complex128)
    for c in range(C):
        for u in range(H):
            for v in range(W):
                s = 0.0 + 0.0j
                for h in range(H):
                    for w in range(W):
                        s += x[h, w, c] * np.exp(-2j * np.pi * (h * u / H + w * v / W))
                out[u, v, c] = s / np.sqrt(H * W)
    return out[:, :, 0] if squeeze else out


def naive_layer_norm(f, gamma, beta, eps=1e-5):
    f = np.asarray(f, dtype=np.float64)
    out = np.empty_like(f)
    H, W, _ = f.shape
    for i in range(H):
        for j in range(W):
            v = f[i, j]
            m = v.mean()
            var = ((v - m) ** 2).mean()
            out[i, j] = (v - m) / np.sqrt(var + eps) * gamma + beta
    return out


def _softmax_col(col):
    e = np.exp(col - col.max())
    return e / e.sum()


def naive_spectral_attention(cube, wq, wk, wv, wo, bo, beta, heads):
    """Triple-loop evaluation of per-cube channel attention."""
    LL, C = cube.shape
    ch = C // heads
    q = cube @ wq
    k = cube @ wk
    v = cube @ wv
    out = np.zeros((LL, C))
    for h in range(heads):
        qs = q[:, h * ch:(h + 1) * ch]
        ks = k[:, h * ch:(h + 1) * ch]
        vs = v[:, h * ch:(h + 1) * ch]
        logits = np.zeros((ch, ch))
        for i in range(ch):
            for j in range(ch):
                acc = 0.0
                for l in range(LL):
                    acc += ks[l, i] * qs[l, j]
                logits[i, j] = acc / beta[h]
        attn = np.zeros_like(logits)
        for j in range(ch):
            attn[:, j] = _softmax_col(logits[:, j])
        for l in range(LL):
            for j in range(ch):
                acc = 0.0
                for i in range(ch):
                    acc += vs[l, i] * attn[i, j]
                out[l, h * ch + j] = acc
    return out @ wo + bo


def naive_feed_forward(f, w1, b1, w2, b2):
    H, W, _ = f.shape
    rows = []
    for i in range(H):
        for j in range(W):
            t = f[i, j] @ w1 + b1
            t = t / (1.0 + np.exp(-t)) * 1.0  # silu = x * sigmoid(x)
            rows.append(t @ w2 + b2)
    return np.asarray(rows).reshape(H, W, -1)


def naive_channel_gates(f, w1, b1, w2, b2):
    gap = f.mean(axis=(0, 1))
    hid = np.maximum(gap @ w1 + b1, 0.0)
    return 1.0 / (1.0 + np.exp(-(hid @ w2 + b2)))


def naive_psnr(ref, est, peak=1.0, cap=100.0):
    ref = np.asarray(ref, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if ref.ndim == 2:
        ref = ref[:, :, None]
        est = est[:, :, None]
    H, W, B = ref.shape
    vals = []
    for b in range(B):
        acc = 0.0
        for i in range(H):
            for j in range(W):
                d = ref[i, j, b] - est[i, j, b]
                acc += d * d
        mse = acc / (H * W)
        vals.append(cap if mse == 0.0 else min(10.0 * np.log10(peak * peak / mse), cap))
    return sum(vals) / len(vals)


def naive_ssim(ref, est, peak=1.0, window=11, sigma=1.5, k1=0.01, k2=0.03):
    """Window-by-window double-loop SSIM over valid positions."""
    ref = np.asarray(ref, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    r = np.arange(window) - (window - 1) / 2.0
    g1 = np.exp(-(r * r) / (2.0 * sigma * sigma))
    w = np.outer(g1, g1)
    w /= w.sum()
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    H, W = ref.shape
    scores = []
    for i in range(H - window + 1):
        for j in range(W - window + 1):
            x = ref[i:i + window, j:j + window]
            y = est[i:i + window, j:j + window]
            mx = (w * x).sum()
            my = (w * y).sum()
            vx = (w * x * x).sum() - mx * mx
            vy = (w * y * y).sum() - my * my
            cxy = (w * x * y).sum() - mx * my
            scores.append(((2 * mx * my + c1) * (2 * cxy + c2))
                          / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return float(np.mean(scores))
