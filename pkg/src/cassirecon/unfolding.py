"""The K-stage unfolded reconstruction loop.

Each stage alternates a physics-consistent data step with the learned
denoiser of :mod:`cassirecon.prior`.  Because the sensing operator's Gram
matrix is diagonal, both data-step variants reduce to element-wise divisions
in measurement space:

* ``exact_hqs_data_step``: the closed-form proximal update
  ``z + phi^T((y - phi z) / (D + mu))``, exact for the quadratic-penalty
  subproblem and used as the validation oracle.
* ``data_step``: the learned variant ``z + F * phi^T((y - phi z) / (D + eps))``
  where F is a per-voxel step field predicted from the current estimate and
  the (unshifted) sensing mask by a small convolution plus channel attention,
  bounded to (0, 2) by a scaled sigmoid.

Stages carry independent parameters; the denoiser of stage k >= 2 also
consumes the previous stage's encoder/decoder features through frequency
fusion.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nn, optics, prior
from .errors import ShapeError

#: bound of the sigmoid head that produces the per-voxel step field
STEP_FIELD_MAX = 2.0


@dataclass(frozen=True)
class UnfoldingConfig:
    """Shape of the unfolded model and its data-step mode."""

    stages: int = 2
    base_channels: int = 16
    cube_size: int = 8
    levels: int = 2
    heads: int = 2
    ffn_expand: int = 2
    ca_reduction: int = 4
    exact_hqs_mode: bool = False
    mu: float = 1.0

    def __post_init__(self):
        if self.stages < 1:
            raise ValueError(f"stage count must be >= 1, got {self.stages}")
        if self.cube_size < 1:
            raise ValueError(f"cube size must be >= 1, got {self.cube_size}")
        if self.levels < 1:
            raise ValueError(f"level count must be >= 1, got {self.levels}")
        if self.mu <= 0:
            raise ValueError(f"mu must be > 0, got {self.mu}")
        if self.base_channels % self.heads != 0:
            raise ValueError(
                f"base channels {self.base_channels} not divisible by heads {self.heads}"
            )


@dataclass
class StageState:
    """Carry between stages: the estimate plus the features frequency fusion consumes."""

    z: ad.Tensor
    enc_feats: list = field(default_factory=list)
    dec_feats: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# channel attention (squeeze-and-excitation gating)

def init_channel_attention(store, name, channels, reduction, rng, zero_init=False):
    hidden = max(1, channels // reduction)
    nn.init_linear(store, name + ".fc1", channels, hidden, rng, zero_init=zero_init)
    nn.init_linear(store, name + ".fc2", hidden, channels, rng, zero_init=zero_init)


def channel_attention(f, store, name):
    """Gate each channel by sigmoid(W2 relu(W1 global_average(f))).

    The gate depends on spatial averages only, so it is invariant to any
    spatial permutation of f.
    """
    c = f.shape[-1]
    w1 = store[name + ".fc1.w"]
    if w1.shape[0] != c:
        raise ShapeError(f"feature channels {c} do not match attention params {w1.shape}")
    gap = ad.reshape(ad.tmean(f, axis=(0, 1)), (1, c))
    hid = ad.relu(nn.linear(store, name + ".fc1", gap))
    gate = ad.sigmoid(nn.linear(store, name + ".fc2", hid))
    return f * ad.reshape(gate, (1, 1, c))


# ---------------------------------------------------------------------------
# pixel-adaptive step field

def init_pixel_step(store, name, bands, reduction, rng, zero_init=False):
    nn.init_conv(store, name + ".conv", 3, 3, 2 * bands, bands, rng, zero_init=zero_init)
    init_channel_attention(store, name + ".ca", bands, reduction, rng, zero_init=zero_init)


def estimate_pixel_step(z, phi, store, name):
    """Predict the (H, W, B) multiplicative step field in (0, 2).

    The sensing mask is unshifted back to the cube frame so it can be
    concatenated with the current estimate channel-wise.
    """
    z = ad.as_tensor(z)
    if z.shape != phi.cube_shape:
        raise ShapeError(f"estimate shape {z.shape} does not match operator cube shape {phi.cube_shape}")
    mask = ad.Tensor(optics.unshift_mask(phi))
    f = nn.conv(store, name + ".conv", ad.concat([z, mask], axis=-1))
    f = channel_attention(f, store, name + ".ca")
    return STEP_FIELD_MAX * ad.sigmoid(f)


# ---------------------------------------------------------------------------
# data steps

def _tensor_data_step(z, y, phi, step_field):
    d = optics.phi_phi_t_diag(phi) + optics.DIV_EPS
    resid = ad.as_tensor(y) - optics.forward_project_t(z, phi)
    back = optics.adjoint_project_t(resid / ad.Tensor(d), phi)
    return z + step_field * back


def data_step(z, y, phi, step_field):
    """Pixel-adaptive data update x = z + F * phi^T((y - phi z) / (D + eps)).

    Accepts plain arrays or Tensors for ``z`` and ``step_field``; returns a
    Tensor when either carries gradient linkage and an ndarray otherwise.
    Data-consistent inputs (y = phi z) are a fixed point for any F.
    """
    tensor_in = isinstance(z, ad.Tensor) or isinstance(step_field, ad.Tensor)
    z = ad.as_tensor(z)
    if z.shape != phi.cube_shape:
        raise ShapeError(f"estimate shape {z.shape} does not match operator cube shape {phi.cube_shape}")
    step_field = ad.as_tensor(step_field)
    if step_field.shape != phi.cube_shape:
        raise ShapeError(
            f"step field shape {step_field.shape} does not match cube shape {phi.cube_shape}"
        )
    out = _tensor_data_step(z, y, phi, step_field)
    return out if tensor_in else out.data


def exact_hqs_data_step(z, y, phi, mu):
    """Closed-form proximal data update, exact because the Gram matrix is diagonal.

    Solves argmin_x ||y - phi x||^2 + mu ||z - x||^2 via
    x = z + phi^T((y - phi z) / (D + mu)).
    """
    if mu <= 0:
        raise ValueError(f"mu must be > 0, got {mu}")
    tensor_in = isinstance(z, ad.Tensor)
    z = ad.as_tensor(z)
    if z.shape != phi.cube_shape:
        raise ShapeError(f"estimate shape {z.shape} does not match operator cube shape {phi.cube_shape}")
    d = optics.phi_phi_t_diag(phi) + mu
    resid = ad.as_tensor(y) - optics.forward_project_t(z, phi)
    out = z + optics.adjoint_project_t(resid / ad.Tensor(d), phi)
    return out if tensor_in else out.data


# ---------------------------------------------------------------------------
# model assembly

def stage_prefix(k):
    return f"stage{k}."


def init_model(bands, cfg, rng, zero_init=False):
    """Create the full parameter store for a K-stage model.

    Stage parameters are independent (no sharing); only stages after the
    first carry frequency-fusion layers.
    """
    store = ad.ParamStore()
    for k in range(cfg.stages):
        p = stage_prefix(k)
        init_pixel_step(store, p + "step", bands, cfg.ca_reduction, rng, zero_init=zero_init)
        prior.init_denoiser(
            store, p + "den.", bands, cfg, rng, with_fusion=(k > 0), zero_init=zero_init
        )
    return store


def run_stages(y, phi, store, cfg):
    """Run the K-stage loop from a measurement to a cube estimate.

    z0 is the preconditioned back-projection; each stage applies its data
    step (exact proximal form when ``cfg.exact_hqs_mode``) followed by its
    denoiser.  Returns the final (H, W, B) estimate as a Tensor; the whole
    computation is a pure, deterministic function of (y, phi, parameters).
    """
    if cfg.stages < 1:
        raise ValueError(f"stage count must be >= 1, got {cfg.stages}")
    y = np.asarray(y, dtype=np.float64)
    if y.shape != phi.measurement_shape:
        raise ShapeError(
            f"measurement shape {y.shape} does not match operator measurement shape "
            f"{phi.measurement_shape}"
        )
    state = StageState(z=ad.Tensor(optics.initialize_estimate(y, phi)))
    for k in range(cfg.stages):
        p = stage_prefix(k)
        if cfg.exact_hqs_mode:
            x = exact_hqs_data_step(state.z, y, phi, cfg.mu)
        else:
            step_field = estimate_pixel_step(state.z, phi, store, p + "step")
            x = data_step(state.z, y, phi, step_field)
        z, enc, dec = prior.run_denoiser(
            x, state.enc_feats, state.dec_feats, store, p + "den.", cfg
        )
        state = StageState(z=z, enc_feats=enc, dec_feats=dec)
    return state.z
