"""Frequency-domain feature fusion.

A feature map's orthonormal 2-D spectrum is split into amplitude (pixel
intensity distribution) and phase (positional structure).  Cross-stage
fusion recombines the previous stage's encoder amplitude with its decoder
phase, inverse-transforms, and merges the result with the current encoder
feature through a 3x3 convolution.

Two surfaces are provided.  The plain-numpy functions (complex ndarrays)
are the reference implementations used throughout the test oracles; the
``t_``-prefixed tensor versions carry gradients and represent a spectrum as
a packed array with a leading (real, imag) axis of size 2.

Amplitude and phase recombination of two real signals is conjugate-symmetric,
so the inverse transform is real up to roundoff; the residue is checked
against ``IMAG_RESIDUE_TOL`` and anything larger is treated as a transform
bug, not noise.
"""

import numpy as np

from . import autodiff as ad
from . import nn
from .errors import NumericalError, ShapeError

#: hard ceiling on |imag| after the inverse transform of a recombined spectrum
IMAG_RESIDUE_TOL = 1e-6


# ---------------------------------------------------------------------------
# plain numpy surface

def fft2(x):
    """Orthonormal 2-D DFT over the leading two axes (1/sqrt(HW) scaling)."""
    return np.fft.fft2(np.asarray(x, dtype=np.float64), axes=(0, 1), norm="ortho")


def ifft2(s):
    """Inverse orthonormal 2-D DFT; returns the complex result unchanged."""
    return np.fft.ifft2(np.asarray(s, dtype=np.complex128), axes=(0, 1), norm="ortho")


def amplitude(s):
    """Spectrum magnitude sqrt(Re^2 + Im^2)."""
    return np.abs(s)


def phase(s):
    """Four-quadrant spectrum angle atan2(Im, Re) in (-pi, pi]."""
    s = np.asarray(s)
    return np.arctan2(s.imag, s.real)


def compose_from_amplitude_phase(amp, ph):
    """Rebuild a complex spectrum from magnitude and angle; negative magnitudes are rejected."""
    amp = np.asarray(amp, dtype=np.float64)
    ph = np.asarray(ph, dtype=np.float64)
    if amp.shape != ph.shape:
        raise ShapeError(f"amplitude shape {amp.shape} does not match phase shape {ph.shape}")
    if amp.size and amp.min() < 0.0:
        raise ValueError("amplitude must be nonnegative")
    return amp * np.cos(ph) + 1j * (amp * np.sin(ph))


def recombine(amp_source, phase_source):
    """Real map built from one signal's spectral amplitude and another's phase."""
    amp_source = np.asarray(amp_source, dtype=np.float64)
    phase_source = np.asarray(phase_source, dtype=np.float64)
    if amp_source.shape != phase_source.shape:
        raise ShapeError(
            f"amplitude source shape {amp_source.shape} does not match "
            f"phase source shape {phase_source.shape}"
        )
    s = compose_from_amplitude_phase(amplitude(fft2(amp_source)), phase(fft2(phase_source)))
    z = ifft2(s)
    residue = float(np.abs(z.imag).max()) if z.size else 0.0
    if residue > IMAG_RESIDUE_TOL:
        raise NumericalError(
            f"imaginary residue {residue:.3e} exceeds {IMAG_RESIDUE_TOL:.1e} after recombination"
        )
    return z.real


# ---------------------------------------------------------------------------
# gradient-linked surface (packed spectra)

def t_fft2(x):
    return ad.fft2_pack(x)


def t_ifft2_real(s, residual_tol=IMAG_RESIDUE_TOL):
    return ad.ifft2_real(s, residual_tol=residual_tol)


def t_amplitude(s):
    re = s[0]
    im = s[1]
    return ad.tsqrt(re * re + im * im)


def t_phase(s):
    return ad.atan2(s[1], s[0])


def t_compose(amp, ph):
    if amp.shape != ph.shape:
        raise ShapeError(f"amplitude shape {amp.shape} does not match phase shape {ph.shape}")
    if amp.size and amp.data.min() < 0.0:
        raise ValueError("amplitude must be nonnegative")
    re = amp * ad.tcos(ph)
    im = amp * ad.tsin(ph)
    one = (1,) + tuple(amp.shape)
    return ad.concat([ad.reshape(re, one), ad.reshape(im, one)], axis=0)


def init_stage_fusion(store, name, channels, rng, zero_init=False):
    """Fusion conv mapping the concatenated (recombined, current) pair back to `channels`."""
    nn.init_conv(store, name + ".conv", 3, 3, 2 * channels, channels, rng, zero_init=zero_init)


def fft_stage_fusion(enc_prev, dec_prev, enc_curr, store, name):
    """Recombine previous-stage encoder amplitude with decoder phase, then
    fuse with the current encoder feature.

    All three feature maps must share one shape; output has that shape.
    """
    if enc_prev.shape != dec_prev.shape:
        raise ShapeError(
            f"previous encoder feature {enc_prev.shape} does not match "
            f"previous decoder feature {dec_prev.shape}"
        )
    if enc_prev.shape != enc_curr.shape:
        raise ShapeError(
            f"previous-stage feature {enc_prev.shape} does not match "
            f"current encoder feature {enc_curr.shape}"
        )
    amp = t_amplitude(t_fft2(enc_prev))
    ph = t_phase(t_fft2(dec_prev))
    recombined = t_ifft2_real(t_compose(amp, ph), residual_tol=IMAG_RESIDUE_TOL)
    merged = ad.concat([recombined, enc_curr], axis=-1)
    return nn.conv(store, name + ".conv", merged)
