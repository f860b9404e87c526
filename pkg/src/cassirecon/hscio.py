"""Portable binary containers and run configuration.

HSC container (cubes, masks, measurements)
    magic ``HSC1`` | uint32 rank (2 or 3) | rank x uint32 dims | uint8 dtype
    tag (4 = float32, 8 = float64) | row-major little-endian payload.
    Save/load round-trips are bit exact for both dtypes.

Checkpoint container (named parameters)
    magic ``CKP1`` | uint8 format version (1) | uint32 count | per entry:
    uint16 name length + UTF-8 name | uint8 dtype tag | uint8 rank |
    rank x uint32 dims | payload.  Entry order is the store's insertion
    order, so files written from the same model are byte comparable.

Run configuration
    flat ``key=value`` text, ``#`` comments, unknown keys rejected.

CSV outputs use a header row, '.' decimals, LF endings, and repr-exact
floats so identical runs produce identical bytes.
"""

import struct
from dataclasses import dataclass, fields, replace

import numpy as np

from . import optics, unfolding
from .errors import ConfigError, FormatError

HSC_MAGIC = b"HSC1"
CKPT_MAGIC = b"CKP1"
CKPT_VERSION = 1

_DTYPE_TAGS = {4: np.dtype("<f4"), 8: np.dtype("<f8")}
_TAG_FOR = {np.dtype(np.float32): 4, np.dtype(np.float64): 8}


def save_hsc(path, array):
    """Write a rank-2 (measurement/mask) or rank-3 (cube) float array."""
    arr = np.asarray(array)
    if arr.ndim not in (2, 3):
        raise FormatError(f"HSC stores rank-2 or rank-3 arrays, got rank {arr.ndim}")
    if arr.dtype not in _TAG_FOR:
        arr = arr.astype(np.float64)
    tag = _TAG_FOR[arr.dtype]
    with open(path, "wb") as fh:
        fh.write(HSC_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(struct.pack("<B", tag))
        fh.write(np.ascontiguousarray(arr, dtype=_DTYPE_TAGS[tag]).tobytes())


def load_hsc(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != HSC_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {HSC_MAGIC!r}")
    off = 4
    (rank,) = struct.unpack_from("<I", raw, off)
    off += 4
    if rank not in (2, 3):
        raise FormatError(f"{path}: unsupported rank {rank}")
    dims = struct.unpack_from(f"<{rank}I", raw, off)
    off += 4 * rank
    (tag,) = struct.unpack_from("<B", raw, off)
    off += 1
    if tag not in _DTYPE_TAGS:
        raise FormatError(f"{path}: unknown dtype tag {tag}")
    dtype = _DTYPE_TAGS[tag]
    expected = int(np.prod(dims)) * dtype.itemsize
    payload = raw[off:]
    if len(payload) != expected:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


def save_checkpoint(path, store):
    """Serialize a parameter store (or plain name->array mapping)."""
    items = store.items() if hasattr(store, "items") else store
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<B", CKPT_VERSION))
        entries = [(name, np.asarray(getattr(t, "data", t))) for name, t in items]
        fh.write(struct.pack("<I", len(entries)))
        for name, arr in entries:
            if arr.dtype not in _TAG_FOR:
                arr = arr.astype(np.float64)
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", _TAG_FOR[arr.dtype]))
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype=_DTYPE_TAGS[_TAG_FOR[arr.dtype]]).tobytes())


def load_checkpoint(path):
    """Read a checkpoint into an ordered name -> float64 array dict."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {CKPT_MAGIC!r}")
    off = 4
    (version,) = struct.unpack_from("<B", raw, off)
    off += 1
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + nlen].decode("utf-8")
        off += nlen
        (tag,) = struct.unpack_from("<B", raw, off)
        off += 1
        if tag not in _DTYPE_TAGS:
            raise FormatError(f"{path}: unknown dtype tag {tag} for {name}")
        (rank,) = struct.unpack_from("<B", raw, off)
        off += 1
        dims = struct.unpack_from(f"<{rank}I", raw, off)
        off += 4 * rank
        dtype = _DTYPE_TAGS[tag]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        arr = np.frombuffer(raw[off:off + nbytes], dtype=dtype).reshape(dims)
        off += nbytes
        out[name] = arr.astype(np.float64)
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes")
    return out


# ---------------------------------------------------------------------------
# CSV writers

def format_float(v):
    # shortest representation that round-trips; bit-stable across runs
    return repr(float(v))


def write_loss_csv(path, losses, rates):
    with open(path, "w", newline="\n") as fh:
        fh.write("step,rate,loss\n")
        for step, (rate, loss) in enumerate(zip(rates, losses)):
            fh.write(f"{step},{format_float(rate)},{format_float(loss)}\n")


def write_metrics_csv(path, rows):
    """rows: iterables of (scene_id, psnr_db, ssim, wall_time_s)."""
    with open(path, "w", newline="\n") as fh:
        fh.write("scene,psnr_db,ssim,wall_time_s\n")
        for scene_id, p, s, wt in rows:
            fh.write(f"{scene_id},{format_float(p)},{format_float(s)},{format_float(wt)}\n")


# ---------------------------------------------------------------------------
# run configuration

@dataclass(frozen=True)
class RunConfig:
    """Everything a CLI run needs, parseable from flat key=value text."""

    stages: int = 2
    channels: int = 16
    cube_size: int = 8
    levels: int = 2
    heads: int = 2
    ffn_expand: int = 2
    ca_reduction: int = 4
    dispersion_step: int = 1
    noise: str = "none"
    noise_sigma: float = 0.0
    seed: int = 0
    exact_hqs: bool = False
    mu: float = 1.0
    train_steps: int = 200
    learn_rate: float = 4e-4
    loss: str = "mse"
    # optional path entries; command-line flags take precedence
    scene: str = ""
    mask: str = ""
    measurement: str = ""
    checkpoint: str = ""
    out: str = ""

    def unfolding_config(self):
        return unfolding.UnfoldingConfig(
            stages=self.stages,
            base_channels=self.channels,
            cube_size=self.cube_size,
            levels=self.levels,
            heads=self.heads,
            ffn_expand=self.ffn_expand,
            ca_reduction=self.ca_reduction,
            exact_hqs_mode=self.exact_hqs,
            mu=self.mu,
        )

    def noise_config(self):
        return optics.NoiseConfig(kind=self.noise, sigma=self.noise_sigma, seed=self.seed)


_BOOL_VALUES = {"1": True, "true": True, "yes": True, "0": False, "false": False, "no": False}


def _parse_value(name, kind, text):
    try:
        if kind is bool:
            key = text.strip().lower()
            if key not in _BOOL_VALUES:
                raise ValueError(text)
            return _BOOL_VALUES[key]
        return kind(text)
    except ValueError:
        raise ConfigError(f"config key {name!r}: cannot parse {text!r} as {kind.__name__}")


def parse_config(text, base=None):
    """Parse key=value lines into a RunConfig; unknown keys are rejected."""
    cfg = base or RunConfig()
    kinds = {f.name: f.type for f in fields(RunConfig)}
    types = {"int": int, "float": float, "str": str, "bool": bool}
    updates = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
        key, _, value = body.partition("=")
        key = key.strip()
        if key not in kinds:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        kind = types[kinds[key]] if isinstance(kinds[key], str) else kinds[key]
        updates[key] = _parse_value(key, kind, value.strip())
    cfg = replace(cfg, **updates)
    validate_config(cfg)
    return cfg


def load_config(path, base=None):
    with open(path, "r") as fh:
        return parse_config(fh.read(), base=base)


def validate_config(cfg):
    if cfg.noise not in ("none", "gaussian"):
        raise ConfigError(f"unknown noise kind {cfg.noise!r}")
    if cfg.loss not in ("mse", "charbonnier"):
        raise ConfigError(f"unknown loss {cfg.loss!r}")
    if cfg.dispersion_step < 1:
        raise ConfigError(f"dispersion_step must be >= 1, got {cfg.dispersion_step}")
    if cfg.train_steps < 1:
        raise ConfigError(f"train_steps must be >= 1, got {cfg.train_steps}")
    if cfg.learn_rate <= 0:
        raise ConfigError(f"learn_rate must be > 0, got {cfg.learn_rate}")
    try:
        cfg.unfolding_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
