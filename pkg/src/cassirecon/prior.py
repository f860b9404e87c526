"""The learned prior: a U-shaped denoiser built from windowed spectral
attention blocks.

Feature maps are (H, W, C) tensors.  Attention partitions the map into
non-overlapping L x L spatial cubes (reflect-padding the borders), projects
each cube to queries / keys / values, and forms a C_h x C_h channel-affinity
map per head: every output channel profile is a convex (softmax) mixture of
value channel profiles.  Alternating blocks cyclically shift the map by
L/2 before partitioning so information crosses cube borders.

The encoder of the U-shape optionally fuses features from the previous
unfolding stage in the frequency domain (see :mod:`cassirecon.fusion`);
the decoder carries attention blocks only.  All blocks are residual, so a
zero-initialized denoiser is the identity map.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import fusion, nn
from .errors import ShapeError

LAYER_NORM_EPS = 1e-5


# ---------------------------------------------------------------------------
# layer norm

def init_layer_norm(store, name, channels):
    store.add(name + ".g", np.ones(channels))
    store.add(name + ".b", np.zeros(channels))


def layer_norm(f, gamma, beta):
    """Normalize each spatial position to zero mean / unit variance over
    channels, then apply the affine parameters."""
    if f.shape[-1] != gamma.shape[-1]:
        raise ShapeError(f"feature channels {f.shape[-1]} do not match norm params {gamma.shape}")
    m = ad.tmean(f, axis=-1, keepdims=True)
    d = f - m
    var = ad.tmean(d * d, axis=-1, keepdims=True)
    xhat = d / ad.tsqrt(var + LAYER_NORM_EPS)
    return xhat * gamma + beta


# ---------------------------------------------------------------------------
# cube partitioning

@dataclass(frozen=True)
class PartitionInfo:
    """Geometry needed to invert a cube partition exactly."""

    height: int
    width: int
    padded_height: int
    padded_width: int
    cube_size: int

    @property
    def grid(self):
        return self.padded_height // self.cube_size, self.padded_width // self.cube_size


def partition_cubes(f, cube_size):
    """Split an (H, W, C) map into G = ceil(H/L) * ceil(W/L) cubes of shape
    (L*L, C), row-major, reflect-padding the borders."""
    if cube_size < 1:
        raise ValueError(f"cube size must be >= 1, got {cube_size}")
    H, W, C = f.shape
    L = cube_size
    hp = (L - H % L) % L
    wp = (L - W % L) % L
    fp = ad.pad2d_reflect(f, (0, hp), (0, wp))
    Hp, Wp = H + hp, W + wp
    gh, gw = Hp // L, Wp // L
    t = ad.reshape(fp, (gh, L, gw, L, C))
    t = ad.transpose(t, (0, 2, 1, 3, 4))
    cubes = ad.reshape(t, (gh * gw, L * L, C))
    return cubes, PartitionInfo(H, W, Hp, Wp, L)


def merge_cubes(cubes, info):
    """Inverse of :func:`partition_cubes`; padding is cropped away."""
    gh, gw = info.grid
    L = info.cube_size
    C = cubes.shape[-1]
    t = ad.reshape(cubes, (gh, gw, L, L, C))
    t = ad.transpose(t, (0, 2, 1, 3, 4))
    f = ad.reshape(t, (info.padded_height, info.padded_width, C))
    return f[: info.height, : info.width, :]


def spatial_shift(f, dy, dx):
    """Cyclic roll of the two spatial axes; invert with (-dy, -dx)."""
    if isinstance(f, ad.Tensor):
        return ad.roll(f, (dy, dx), (0, 1))
    return np.roll(np.asarray(f), (dy, dx), (0, 1))


# ---------------------------------------------------------------------------
# windowed spectral attention

def init_attention_block(store, name, channels, heads, ffn_expand, rng, zero_init=False):
    if channels % heads != 0:
        raise ValueError(f"channels {channels} not divisible by heads {heads}")
    init_layer_norm(store, name + ".ln1", channels)
    nn.init_linear(store, name + ".wq", channels, channels, rng, zero_init=zero_init, bias=False)
    nn.init_linear(store, name + ".wk", channels, channels, rng, zero_init=zero_init, bias=False)
    nn.init_linear(store, name + ".wv", channels, channels, rng, zero_init=zero_init, bias=False)
    nn.init_linear(store, name + ".wo", channels, channels, rng, zero_init=zero_init)
    # per-head temperature, positive through softplus, starts at sqrt(C_h)
    raw = np.log(np.expm1(np.sqrt(channels / heads)))
    store.add(name + ".beta_raw", np.full(heads, raw))
    init_layer_norm(store, name + ".ln2", channels)
    nn.init_linear(store, name + ".ffn1", channels, ffn_expand * channels, rng, zero_init=zero_init)
    nn.init_linear(store, name + ".ffn2", ffn_expand * channels, channels, rng, zero_init=zero_init)


def spectral_attention(cubes, store, name, heads, return_attn=False, beta_override=None):
    """Channel self-attention within each cube.

    cubes: (G, L*L, C).  Per head h, A = softmax(K_h^T Q_h / beta_h) over
    its first index, so each column of A sums to one and the output
    V_h A convexly mixes value channel profiles.  Heads are concatenated
    and passed through the output projection.
    """
    G, LL, C = cubes.shape
    if C % heads != 0:
        raise ShapeError(f"channels {C} not divisible by heads {heads}")
    ch = C // heads

    def split_heads(t):
        t = ad.reshape(t, (G, LL, heads, ch))
        return ad.transpose(t, (0, 2, 1, 3))  # (G, heads, LL, ch)

    q = split_heads(nn.linear(store, name + ".wq", cubes))
    k = split_heads(nn.linear(store, name + ".wk", cubes))
    v = split_heads(nn.linear(store, name + ".wv", cubes))

    if beta_override is None:
        beta = ad.softplus(store[name + ".beta_raw"])
    else:
        beta = ad.as_tensor(np.asarray(beta_override, dtype=np.float64))
    beta = ad.reshape(beta, (1, heads, 1, 1))

    logits = ad.matmul(ad.transpose(k, (0, 1, 3, 2)), q) / beta  # (G, heads, ch, ch)
    attn = ad.softmax(logits, axis=-2)
    out = ad.matmul(v, attn)  # (G, heads, LL, ch)
    out = ad.transpose(out, (0, 2, 1, 3))
    out = ad.reshape(out, (G, LL, C))
    out = nn.linear(store, name + ".wo", out)
    if return_attn:
        return out, attn
    return out


def feed_forward(f, store, name):
    """Pointwise expand, smooth gating nonlinearity, pointwise project back."""
    H, W, C = f.shape
    t = ad.reshape(f, (H * W, C))
    t = ad.silu(nn.linear(store, name + ".ffn1", t))
    t = nn.linear(store, name + ".ffn2", t)
    return ad.reshape(t, (H, W, t.shape[-1]))


def attention_block(f, store, name, cube_size, heads, shifted):
    """Residual attention block: f + Attn(LN(f)), then + FFN(LN(.)).

    When ``shifted``, the map is cyclically rolled by L/2 before
    partitioning and unrolled after, so consecutive blocks see different
    cube borders.
    """
    a = layer_norm(f, store[name + ".ln1.g"], store[name + ".ln1.b"])
    half = cube_size // 2
    if shifted and half:
        a = spatial_shift(a, half, half)
    cubes, info = partition_cubes(a, cube_size)
    a = merge_cubes(spectral_attention(cubes, store, name, heads), info)
    if shifted and half:
        a = spatial_shift(a, -half, -half)
    f = f + a
    b = layer_norm(f, store[name + ".ln2.g"], store[name + ".ln2.b"])
    return f + feed_forward(b, store, name)


# ---------------------------------------------------------------------------
# U-shaped denoiser

def _level_channels(channels, level):
    return channels * (1 << level)


def init_denoiser(store, prefix, bands, cfg, rng, with_fusion, zero_init=False):
    """Register every parameter of one stage's denoiser.

    ``with_fusion`` adds a frequency fusion layer per encoder level; the
    first stage has no previous features and carries none.
    """
    C = cfg.base_channels
    nn.init_conv(store, prefix + "in", 3, 3, bands, C, rng, zero_init=zero_init)
    for lvl in range(cfg.levels):
        c = _level_channels(C, lvl)
        if with_fusion:
            fusion.init_stage_fusion(store, prefix + f"enc{lvl}.fuse", c, rng, zero_init=zero_init)
        init_attention_block(store, prefix + f"enc{lvl}.blk0", c, cfg.heads, cfg.ffn_expand, rng, zero_init)
        init_attention_block(store, prefix + f"enc{lvl}.blk1", c, cfg.heads, cfg.ffn_expand, rng, zero_init)
        nn.init_conv(store, prefix + f"down{lvl}", 3, 3, c, 2 * c, rng, zero_init=zero_init)
    cb = _level_channels(C, cfg.levels)
    init_attention_block(store, prefix + "mid.blk0", cb, cfg.heads, cfg.ffn_expand, rng, zero_init)
    init_attention_block(store, prefix + "mid.blk1", cb, cfg.heads, cfg.ffn_expand, rng, zero_init)
    for lvl in reversed(range(cfg.levels)):
        c = _level_channels(C, lvl)
        nn.init_conv(store, prefix + f"up{lvl}", 3, 3, 2 * c, c, rng, zero_init=zero_init)
        nn.init_conv(store, prefix + f"skip{lvl}", 3, 3, 2 * c, c, rng, zero_init=zero_init)
        init_attention_block(store, prefix + f"dec{lvl}.blk0", c, cfg.heads, cfg.ffn_expand, rng, zero_init)
        init_attention_block(store, prefix + f"dec{lvl}.blk1", c, cfg.heads, cfg.ffn_expand, rng, zero_init)
    # a small output conv starts each denoiser near the identity, so the
    # untrained pipeline already tracks the data steps (gradients stay alive
    # everywhere, unlike an exactly-zero head)
    nn.init_conv(store, prefix + "out", 3, 3, C, bands, rng, zero_init=zero_init, scale=0.05)


def _check_prev_features(prev, expected_shapes, what):
    if len(prev) != len(expected_shapes):
        raise ShapeError(
            f"{what}: expected {len(expected_shapes)} levels, got {len(prev)}"
        )
    for lvl, (feat, shape) in enumerate(zip(prev, expected_shapes)):
        if tuple(feat.shape) != shape:
            raise ShapeError(
                f"{what} at level {lvl}: shape {tuple(feat.shape)} does not match {shape}"
            )


def run_denoiser(x, prev_enc, prev_dec, store, prefix, cfg):
    """One prior step: denoise a cube and hand this stage's features onward.

    x : (H, W, B) Tensor from the data step.
    prev_enc / prev_dec : per-level feature lists from the previous stage,
        both empty exactly at stage 1 (frequency fusion is then bypassed).

    Returns ``(denoised cube, enc_feats, dec_feats)``.  The cube keeps x's
    shape; enc_feats[l] and dec_feats[l] live at 1/2^l spatial resolution
    with ``base_channels * 2^l`` channels.
    """
    H, W, B = x.shape
    C = cfg.base_channels
    mult = 1 << cfg.levels
    hp = (mult - H % mult) % mult
    wp = (mult - W % mult) % mult
    f = ad.pad2d_reflect(x, (0, hp), (0, wp))
    Hp, Wp = H + hp, W + wp

    expected = [
        (Hp >> lvl, Wp >> lvl, _level_channels(C, lvl)) for lvl in range(cfg.levels)
    ]
    use_fusion = bool(prev_enc) or bool(prev_dec)
    if use_fusion:
        _check_prev_features(prev_enc, expected, "previous encoder features")
        _check_prev_features(prev_dec, expected, "previous decoder features")

    f = nn.conv(store, prefix + "in", f)
    enc_feats = []
    for lvl in range(cfg.levels):
        if use_fusion:
            f = fusion.fft_stage_fusion(
                prev_enc[lvl], prev_dec[lvl], f, store, prefix + f"enc{lvl}.fuse"
            )
        f = attention_block(f, store, prefix + f"enc{lvl}.blk0", cfg.cube_size, cfg.heads, False)
        f = attention_block(f, store, prefix + f"enc{lvl}.blk1", cfg.cube_size, cfg.heads, True)
        enc_feats.append(f)
        f = nn.conv(store, prefix + f"down{lvl}", f, stride=2)

    f = attention_block(f, store, prefix + "mid.blk0", cfg.cube_size, cfg.heads, False)
    f = attention_block(f, store, prefix + "mid.blk1", cfg.cube_size, cfg.heads, True)

    dec_feats = [None] * cfg.levels
    for lvl in reversed(range(cfg.levels)):
        f = nn.conv(store, prefix + f"up{lvl}", ad.upsample2(f))
        f = nn.conv(store, prefix + f"skip{lvl}", ad.concat([f, enc_feats[lvl]], axis=-1))
        f = attention_block(f, store, prefix + f"dec{lvl}.blk0", cfg.cube_size, cfg.heads, False)
        f = attention_block(f, store, prefix + f"dec{lvl}.blk1", cfg.cube_size, cfg.heads, True)
        dec_feats[lvl] = f

    r = nn.conv(store, prefix + "out", f)
    z = x + r[:H, :W, :]
    return z, enc_feats, dec_feats
