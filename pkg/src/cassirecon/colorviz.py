"""Color rendering and frequency-domain visualization.

Cubes are reduced to sRGB by integrating each band against the CIE 1931
2-degree color-matching functions (5 nm table, linearly interpolated),
normalizing so a flat all-ones cube has unit luminance, applying the
D65-referenced XYZ -> linear sRGB matrix, gamma encoding, and rounding to
8 bits.  Rounding is `rint`, so output bytes are platform independent.
"""

import numpy as np

from .errors import ShapeError

# CIE 1931 2-degree standard observer, 380..780 nm at 5 nm steps: (x, y, z)
_CIE_START = 380.0
_CIE_STEP = 5.0
_CIE_1931 = np.array([
    [0.001368, 0.000039, 0.006450], [0.002236, 0.000064, 0.010550],
    [0.004243, 0.000120, 0.020050], [0.007650, 0.000217, 0.036210],
    [0.014310, 0.000396, 0.067850], [0.023190, 0.000640, 0.110200],
    [0.043510, 0.001210, 0.207400], [0.077630, 0.002180, 0.371300],
    [0.134380, 0.004000, 0.645600], [0.214770, 0.007300, 1.039050],
    [0.283900, 0.011600, 1.385600], [0.328500, 0.016840, 1.622960],
    [0.348280, 0.023000, 1.747060], [0.348060, 0.029800, 1.782600],
    [0.336200, 0.038000, 1.772110], [0.318700, 0.048000, 1.744100],
    [0.290800, 0.060000, 1.669200], [0.251100, 0.073900, 1.528100],
    [0.195360, 0.090980, 1.287640], [0.142100, 0.112600, 1.041900],
    [0.095640, 0.139020, 0.812950], [0.057950, 0.169300, 0.616200],
    [0.032010, 0.208020, 0.465180], [0.014700, 0.258600, 0.353300],
    [0.004900, 0.323000, 0.272000], [0.002400, 0.407300, 0.212300],
    [0.009300, 0.503000, 0.158200], [0.029100, 0.608200, 0.111700],
    [0.063270, 0.710000, 0.078250], [0.109600, 0.793200, 0.057250],
    [0.165500, 0.862000, 0.042160], [0.225750, 0.914850, 0.029840],
    [0.290400, 0.954000, 0.020300], [0.359700, 0.980300, 0.013400],
    [0.433450, 0.994950, 0.008750], [0.512050, 1.000000, 0.005750],
    [0.594500, 0.995000, 0.003900], [0.678400, 0.978600, 0.002750],
    [0.762100, 0.952000, 0.002100], [0.842500, 0.915400, 0.001800],
    [0.916300, 0.870000, 0.001650], [0.978600, 0.816300, 0.001400],
    [1.026300, 0.757000, 0.001100], [1.056700, 0.694900, 0.001000],
    [1.062200, 0.631000, 0.000800], [1.045600, 0.566800, 0.000600],
    [1.002600, 0.503000, 0.000340], [0.938400, 0.441200, 0.000240],
    [0.854450, 0.381000, 0.000190], [0.751400, 0.321000, 0.000100],
    [0.642400, 0.265000, 0.000050], [0.541900, 0.217000, 0.000030],
    [0.447900, 0.175000, 0.000020], [0.360800, 0.138200, 0.000010],
    [0.283500, 0.107000, 0.000000], [0.218700, 0.081600, 0.000000],
    [0.164900, 0.061000, 0.000000], [0.121200, 0.044580, 0.000000],
    [0.087400, 0.032000, 0.000000], [0.063600, 0.023200, 0.000000],
    [0.046770, 0.017000, 0.000000], [0.032900, 0.011920, 0.000000],
    [0.022700, 0.008210, 0.000000], [0.015840, 0.005723, 0.000000],
    [0.011359, 0.004102, 0.000000], [0.008111, 0.002929, 0.000000],
    [0.005790, 0.002091, 0.000000], [0.004109, 0.001484, 0.000000],
    [0.002899, 0.001047, 0.000000], [0.002049, 0.000740, 0.000000],
    [0.001440, 0.000520, 0.000000], [0.001000, 0.000361, 0.000000],
    [0.000690, 0.000249, 0.000000], [0.000476, 0.000172, 0.000000],
    [0.000332, 0.000120, 0.000000], [0.000235, 0.000085, 0.000000],
    [0.000166, 0.000060, 0.000000], [0.000117, 0.000042, 0.000000],
    [0.000083, 0.000030, 0.000000], [0.000059, 0.000021, 0.000000],
    [0.000042, 0.000015, 0.000000],
])

# IEC 61966-2-1 XYZ (D65) to linear sRGB
_XYZ_TO_SRGB = np.array([
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
])

DEFAULT_WAVELENGTH_LO = 450.0
DEFAULT_WAVELENGTH_HI = 650.0


def default_wavelengths(bands):
    """Evenly spaced band centers (nm) over the visible window used for cubes."""
    if bands == 1:
        return np.array([(DEFAULT_WAVELENGTH_LO + DEFAULT_WAVELENGTH_HI) / 2.0])
    return np.linspace(DEFAULT_WAVELENGTH_LO, DEFAULT_WAVELENGTH_HI, bands)


def cmf_at(wavelengths):
    """Interpolated (x, y, z) color-matching values at the given wavelengths (nm)."""
    wl = np.asarray(wavelengths, dtype=np.float64)
    grid = _CIE_START + _CIE_STEP * np.arange(len(_CIE_1931))
    return np.stack([np.interp(wl, grid, _CIE_1931[:, i], left=0.0, right=0.0)
                     for i in range(3)], axis=1)


def _gamma_encode(linear):
    a = 0.055
    return np.where(linear <= 0.0031308, 12.92 * linear,
                    (1 + a) * np.power(np.maximum(linear, 0.0), 1 / 2.4) - a)


def export_rgb(cube, wavelengths=None):
    """Render an (H, W, B) cube to an (H, W, 3) uint8 sRGB image.

    ``wavelengths`` gives each band's center in nm (defaults to the evenly
    spaced visible grid); its length must equal B.
    """
    cube = np.asarray(cube, dtype=np.float64)
    if cube.ndim != 3:
        raise ShapeError(f"expected an (H, W, B) cube, got shape {cube.shape}")
    bands = cube.shape[2]
    if wavelengths is None:
        wavelengths = default_wavelengths(bands)
    wavelengths = np.asarray(wavelengths, dtype=np.float64)
    if wavelengths.shape != (bands,):
        raise ShapeError(
            f"wavelength count {wavelengths.shape} does not match band count {bands}"
        )
    cmf = cmf_at(wavelengths)
    norm = cmf[:, 1].sum()
    if norm <= 0:
        raise ValueError("wavelengths fall entirely outside the visible table")
    xyz = np.tensordot(cube, cmf / norm, axes=([2], [0]))
    rgb_lin = np.clip(xyz @ _XYZ_TO_SRGB.T, 0.0, None)
    rgb = np.clip(_gamma_encode(rgb_lin), 0.0, 1.0)
    return np.clip(np.rint(255.0 * rgb), 0, 255).astype(np.uint8)


def save_png(image, path):
    """Write an (H, W) or (H, W, 3) uint8 array as PNG."""
    from PIL import Image

    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        raise ValueError("save_png expects uint8 data")
    Image.fromarray(arr).save(path, format="PNG")


def _to_u8(img):
    lo = float(img.min())
    hi = float(img.max())
    span = hi - lo if hi > lo else 1.0
    return np.clip(np.rint(255.0 * (img - lo) / span), 0, 255).astype(np.uint8)


def frequency_images(band):
    """Log-magnitude and phase views of one 2-D band, DC centered.

    Returns (amplitude_png, phase_png) uint8 arrays: the log of the
    spectrum magnitude, and the reconstruction obtained by keeping the
    phase while flattening the amplitude to a constant.
    """
    band = np.asarray(band, dtype=np.float64)
    if band.ndim != 2:
        raise ShapeError(f"expected a 2-D band, got shape {band.shape}")
    s = np.fft.fft2(band, norm="ortho")
    log_mag = np.log1p(np.abs(np.fft.fftshift(s)))
    phase_only = np.fft.ifft2(np.exp(1j * np.angle(s)), norm="ortho").real
    return _to_u8(log_mag), _to_u8(phase_only)
