"""CASSI forward optics: coded-aperture modulation, per-band horizontal
dispersion, detector integration, optional Gaussian noise, and the exact
adjoint of the whole chain.

Cubes are (H, W, B) float arrays in the unshifted frame, measurements are
(H, Ws) with Ws = W + s*(B-1).  The sensing operator is kept in shifted-mask
form: a weight stack phi of shape (H, Ws, B) where band b occupies columns
[s*b, s*b + W).  Each voxel maps to exactly one measurement pixel, so the
Gram matrix of the flattened operator is diagonal; that diagonal is what
:func:`phi_phi_t_diag` returns and what every division in the reconstruction
is preconditioned by.

All functions here are pure; arrays are never mutated in place.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .errors import ShapeError

#: guard added to the Gram diagonal wherever it is divided by (mask zeros
#: make the diagonal vanish where no band contributes)
DIV_EPS = 1e-6


@dataclass(frozen=True)
class DispersionRule:
    """Per-band horizontal shift: band b (0-indexed) moves s*b columns right."""

    step: int = 1

    def __post_init__(self):
        if self.step < 1:
            raise ValueError(f"dispersion step must be >= 1, got {self.step}")

    def shift(self, band):
        return self.step * band


@dataclass(frozen=True)
class CodedAperture:
    """A single 2-D transmission mask shared by every band, weights in [0, 1]."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise ShapeError(f"coded aperture must be 2-D, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("coded aperture weights must be finite")
        if w.min() < 0.0 or w.max() > 1.0:
            raise ValueError("coded aperture weights must lie in [0, 1]")
        object.__setattr__(self, "weights", w)

    @property
    def height(self):
        return self.weights.shape[0]

    @property
    def width(self):
        return self.weights.shape[1]


@dataclass(frozen=True)
class NoiseConfig:
    """Additive detector noise. ``sigma = 0`` reproduces the noiseless path bit for bit."""

    kind: str = "none"
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("none", "gaussian"):
            raise ValueError(f"unknown noise kind: {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("noise sigma must be >= 0")

    def apply(self, y):
        if self.kind == "none" or self.sigma == 0.0:
            return y
        rng = np.random.default_rng(self.seed)
        return y + self.sigma * rng.standard_normal(y.shape)


@dataclass(frozen=True)
class ShiftedMaskStack:
    """The sensing operator in shifted-mask form: (H, Ws, B) weights plus the step."""

    weights: np.ndarray
    step: int = 1

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if w.ndim != 3:
            raise ShapeError(f"shifted mask stack must be 3-D, got shape {w.shape}")
        object.__setattr__(self, "weights", w)
        if self.width < 1:
            raise ShapeError(
                f"stack width {w.shape[1]} too small for {w.shape[2]} bands at step {self.step}"
            )

    @property
    def height(self):
        return self.weights.shape[0]

    @property
    def shifted_width(self):
        return self.weights.shape[1]

    @property
    def bands(self):
        return self.weights.shape[2]

    @property
    def width(self):
        """Width of the unshifted cube frame."""
        return self.shifted_width - self.step * (self.bands - 1)

    @property
    def cube_shape(self):
        return (self.height, self.width, self.bands)

    @property
    def measurement_shape(self):
        return (self.height, self.shifted_width)


def _check_cube(x, phi):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != phi.cube_shape:
        raise ShapeError(f"cube shape {x.shape} does not match operator cube shape {phi.cube_shape}")
    return x


def _check_measurement(y, phi):
    y = np.asarray(y, dtype=np.float64)
    if y.shape != phi.measurement_shape:
        raise ShapeError(
            f"measurement shape {y.shape} does not match operator measurement shape "
            f"{phi.measurement_shape}"
        )
    return y


def build_shifted_mask(mask, bands, rule=DispersionRule()):
    """Place one coded aperture at every band's dispersed position.

    Parameters
    ----------
    mask : CodedAperture or (H, W) array
    bands : int
        Number of spectral bands B.
    rule : DispersionRule
        Pixels of horizontal shift per band index.

    Returns
    -------
    ShiftedMaskStack
        Weights phi with phi[h, w + s*b, b] = mask[h, w] and zeros elsewhere.
    """
    if not isinstance(mask, CodedAperture):
        mask = CodedAperture(np.asarray(mask, dtype=np.float64))
    if bands < 1:
        raise ValueError(f"band count must be >= 1, got {bands}")
    H, W = mask.weights.shape
    ws = W + rule.step * (bands - 1)
    phi = np.zeros((H, ws, bands), dtype=np.float64)
    for b in range(bands):
        o = rule.shift(b)
        phi[:, o:o + W, b] = mask.weights
    return ShiftedMaskStack(phi, rule.step)


def forward_project(x, phi, noise=None):
    """Apply the sensing operator: modulate, disperse, integrate over bands.

    y[h, w'] = sum_b phi[h, w', b] * x[h, w' - s*b, b], plus noise when a
    :class:`NoiseConfig` other than ``none`` is supplied.
    """
    x = _check_cube(x, phi)
    y = kernels.forward_project_kernel(x, phi.weights, phi.step)
    if noise is not None:
        y = noise.apply(y)
    return y


def adjoint_project(y, phi):
    """Exact adjoint of :func:`forward_project` (noise disabled).

    (phi^T y)[h, w, b] = phi[h, w + s*b, b] * y[h, w + s*b].
    """
    y = _check_measurement(y, phi)
    return kernels.adjoint_project_kernel(y, phi.weights, phi.step)


def phi_phi_t_diag(phi):
    """Diagonal of the operator's Gram matrix as a measurement-shaped field.

    D[h, w'] = sum_b phi[h, w', b]^2.  Off-diagonal entries of the dense
    Gram matrix are identically zero because no two voxels share a
    measurement pixel within a band.
    """
    return np.einsum("hwb,hwb->hw", phi.weights, phi.weights)


def initialize_estimate(y, phi):
    """Diagonally-preconditioned back-projection used as the starting cube.

    z0 = phi^T (y / (D + eps)) with eps = ``DIV_EPS``; finite everywhere,
    including pixels the mask never illuminates.
    """
    y = _check_measurement(y, phi)
    d = phi_phi_t_diag(phi)
    return adjoint_project(y / (d + DIV_EPS), phi)


def unshift_mask(phi):
    """Map the shifted stack back to the cube frame: out[h, w, b] = phi[h, w + s*b, b]."""
    H, W, B = phi.cube_shape
    out = np.empty((H, W, B), dtype=np.float64)
    for b in range(B):
        o = phi.step * b
        out[:, :, b] = phi.weights[:, o:o + W, b]
    return out


# ---------------------------------------------------------------------------
# gradient-linked projections (phi is a fixed, non-learned operator; the
# backward of each linear map is its adjoint)

def forward_project_t(x, phi):
    """:func:`forward_project` on a Tensor cube, noiseless."""
    if x.shape != phi.cube_shape:
        raise ShapeError(f"cube shape {x.shape} does not match operator cube shape {phi.cube_shape}")
    data = kernels.forward_project_kernel(x.data, phi.weights, phi.step)

    def bw(g):
        ad._acc(x, kernels.adjoint_project_kernel(np.ascontiguousarray(g), phi.weights, phi.step))

    return ad._op(data, (x,), bw)


def adjoint_project_t(y, phi):
    """:func:`adjoint_project` on a Tensor measurement."""
    if y.shape != phi.measurement_shape:
        raise ShapeError(
            f"measurement shape {y.shape} does not match operator measurement shape "
            f"{phi.measurement_shape}"
        )
    data = kernels.adjoint_project_kernel(y.data, phi.weights, phi.step)

    def bw(g):
        ad._acc(y, kernels.forward_project_kernel(np.ascontiguousarray(g), phi.weights, phi.step))

    return ad._op(data, (y,), bw)
