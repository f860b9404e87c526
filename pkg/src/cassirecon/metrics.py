"""Image quality metrics.

PSNR is computed per band and averaged, with a 100 dB cap so identical
inputs give a finite, exact score.  SSIM is the standard single-scale
index with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
evaluated on fully interior (valid) windows and averaged; cubes are scored
per band and averaged.
"""

import numpy as np

from .errors import ShapeError

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(ref, est, peak=1.0):
    """Peak signal-to-noise ratio in dB, averaged over bands.

    Parameters
    ----------
    ref, est : (H, W) or (H, W, B) arrays of matching shape.
    peak : positive dynamic range of the data (1.0 for normalized cubes).
    """
    ref = np.asarray(ref, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if ref.shape != est.shape:
        raise ShapeError(f"reference shape {ref.shape} does not match estimate shape {est.shape}")
    if peak <= 0:
        raise ValueError(f"peak must be > 0, got {peak}")
    if ref.ndim == 2:
        ref = ref[:, :, None]
        est = est[:, :, None]
    vals = []
    for b in range(ref.shape[2]):
        mse = np.mean((ref[:, :, b] - est[:, :, b]) ** 2)
        if mse == 0.0:
            vals.append(PSNR_CAP_DB)
        else:
            vals.append(min(10.0 * np.log10(peak * peak / mse), PSNR_CAP_DB))
    return float(np.mean(vals))


def _gaussian_window(size, sigma):
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def _window_means(img, window):
    size = window.shape[0]
    win = np.lib.stride_tricks.sliding_window_view(img, (size, size))
    return np.einsum("ijkl,kl->ij", win, window)


def ssim(ref, est, peak=1.0):
    """Structural similarity index; bands of a cube are scored independently
    and averaged.  Inputs must be at least 11x11."""
    ref = np.asarray(ref, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if ref.shape != est.shape:
        raise ShapeError(f"reference shape {ref.shape} does not match estimate shape {est.shape}")
    if ref.ndim == 3:
        return float(np.mean([ssim(ref[:, :, b], est[:, :, b], peak) for b in range(ref.shape[2])]))
    if ref.ndim != 2:
        raise ShapeError(f"ssim expects 2-D bands or 3-D cubes, got shape {ref.shape}")
    if ref.shape[0] < SSIM_WINDOW or ref.shape[1] < SSIM_WINDOW:
        raise ShapeError(f"ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} inputs, got {ref.shape}")

    window = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2

    mu_x = _window_means(ref, window)
    mu_y = _window_means(est, window)
    xx = _window_means(ref * ref, window)
    yy = _window_means(est * est, window)
    xy = _window_means(ref * est, window)
    var_x = xx - mu_x * mu_x
    var_y = yy - mu_y * mu_y
    cov = xy - mu_x * mu_y

    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))
