"""Snapshot spectral imaging: coded-aperture forward optics and a
pixel-adaptive unfolded reconstruction network, with its own
reverse-mode autodiff, metrics, binary I/O and CLI.
"""

from .autodiff import ParamStore, Tensor, backward, no_grad
from .optics import (
    CodedAperture,
    DispersionRule,
    NoiseConfig,
    ShiftedMaskStack,
    adjoint_project,
    build_shifted_mask,
    forward_project,
    initialize_estimate,
    phi_phi_t_diag,
)
from .unfolding import (
    StageState,
    UnfoldingConfig,
    channel_attention,
    data_step,
    estimate_pixel_step,
    exact_hqs_data_step,
    init_model,
    run_stages,
)
from .optim import AdamState, adam_step, cosine_rate, grad_check, train_toy
from .metrics import psnr, ssim
from .colorviz import export_rgb
from .hscio import RunConfig, load_checkpoint, load_config, load_hsc, save_checkpoint, save_hsc

__version__ = "0.1.0"
