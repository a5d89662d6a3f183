"""The convolutional color-constancy autoencoder and its model file format.

Encoder: four blocks of conv -> ReLU -> 2x2 max-pool -> dropout taking a
64x64 patch to a 256 x 4 x 4 map, then a global average pool and a 1x1
conv to the code. Decoder: 1x1 conv back to 256 channels, replicate to
4x4, then four upsample -> conv blocks mirroring the encoder kernels.
The optional head (1x1 convs of width 15 and 3) turns a 50-channel code
into an illuminant.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .nn import Tensor
from .nn import functional as F

ENCODER_BLOCKS = ((32, 5), (32, 5), (32, 4), (256, 3))
HEAD_WIDTHS = (15, 3)
CANONICAL_CODES = (3, 50)

MAGIC = b"C3AE"
FORMAT_VERSION = 1


class ConfigurationError(ValueError):
    """A model or training configuration does not support the request."""


class ModelFormatError(ValueError):
    """Base class for unreadable model files."""


class BadMagicError(ModelFormatError):
    pass


class UnsupportedVersionError(ModelFormatError):
    pass


class TruncatedFileError(ModelFormatError):
    pass


@dataclass(frozen=True)
class CAEConfig:
    code_channels: int = 50
    input_size: int = 64
    dropout_rate: float = 0.25
    with_head: bool | None = None

    def __post_init__(self):
        if self.code_channels < 1:
            raise ConfigurationError(f"code_channels must be positive, got {self.code_channels}")
        if self.input_size != 64:
            raise ConfigurationError(f"the architecture is defined for 64x64 patches, got {self.input_size}")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigurationError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.with_head is None:
            object.__setattr__(self, "with_head", self.code_channels != 3)

    @property
    def canonical(self) -> bool:
        return self.code_channels in CANONICAL_CODES

    @classmethod
    def fine_tuned(cls, **kw) -> "CAEConfig":
        return cls(code_channels=50, with_head=True, **kw)

    @classmethod
    def composite(cls, **kw) -> "CAEConfig":
        return cls(code_channels=3, with_head=False, **kw)


def layer_shapes(cfg: CAEConfig) -> dict[str, tuple[str, tuple[int, ...]]]:
    """Map each conv layer name to ``(group, kernel shape)``."""
    layers: dict[str, tuple[str, tuple[int, ...]]] = {}
    cin = 3
    for i, (cout, k) in enumerate(ENCODER_BLOCKS, 1):
        layers[f"enc{i}"] = ("encoder", (cout, cin, k, k))
        cin = cout
    layers["mid"] = ("middle", (cfg.code_channels, cin, 1, 1))
    layers["dec0"] = ("decoder", (cin, cfg.code_channels, 1, 1))
    # decoder block i undoes encoder block 5 - i
    mirrored = [(ENCODER_BLOCKS[i - 1][0] if i > 0 else 3, ENCODER_BLOCKS[i][1]) for i in range(3, -1, -1)]
    for j, (cout, k) in enumerate(mirrored, 1):
        layers[f"dec{j}"] = ("decoder", (cout, cin, k, k))
        cin = cout
    if cfg.with_head:
        layers["head1"] = ("head", (HEAD_WIDTHS[0], cfg.code_channels, 1, 1))
        layers["head2"] = ("head", (HEAD_WIDTHS[1], HEAD_WIDTHS[0], 1, 1))
    return layers


@dataclass
class CAEParams:
    """Named float32 parameter arrays plus the config that shaped them."""

    config: CAEConfig
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    has_decoder: bool = True

    def names(self, *groups: str) -> list[str]:
        """Parameter names, optionally restricted to the given layer groups."""
        out = []
        for layer, (group, _) in layer_shapes(self.config).items():
            if group == "decoder" and not self.has_decoder:
                continue
            if not groups or group in groups:
                out += [f"{layer}.weight", f"{layer}.bias"]
        return out

    def copy(self) -> "CAEParams":
        return CAEParams(self.config, {k: v.copy() for k, v in self.arrays.items()}, self.has_decoder)

    def estimator(self) -> "CAEParams":
        """The deployable illuminant estimator: everything except the decoder."""
        keep = self.names("encoder", "middle", "head")
        return CAEParams(self.config, {k: self.arrays[k].copy() for k in keep}, has_decoder=False)

    def tensors(self, trainable=()) -> dict[str, Tensor]:
        trainable = set(trainable)
        return {k: Tensor(v, requires_grad=k in trainable, name=k) for k, v in self.arrays.items()}


def build(config: CAEConfig, seed: int = 0) -> CAEParams:
    """He-normal conv weights, zero biases; deterministic per ``seed``."""
    rng = np.random.default_rng(seed)
    arrays: dict[str, np.ndarray] = {}
    for layer, (_, shape) in layer_shapes(config).items():
        fan_in = shape[1] * shape[2] * shape[3]
        arrays[f"{layer}.weight"] = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)
        arrays[f"{layer}.bias"] = np.zeros(shape[0], dtype=np.float32)
    return CAEParams(config, arrays)


def param_count(params: CAEParams) -> int:
    return int(sum(a.size for a in params.arrays.values()))


def _as_params(params) -> tuple[CAEConfig, dict[str, Tensor]]:
    if isinstance(params, CAEParams):
        return params.config, params.tensors()
    cfg, tensors = params
    return cfg, tensors


def _check_batch(batch, cfg: CAEConfig) -> Tensor:
    x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch, dtype=np.float32))
    s = cfg.input_size
    if x.data.ndim != 4 or x.shape[1:] != (3, s, s):
        raise ValueError(f"expected a batch of shape (N, 3, {s}, {s}), got {x.shape}")
    return x


def _conv(T, name, x):
    return F.conv2d(x, T[f"{name}.weight"], T[f"{name}.bias"])


def encode(params, batch, training: bool = False, rng=None) -> Tensor:
    """Run the encoder and middle layer; returns the ``(N, C, 1, 1)`` code."""
    cfg, T = _as_params(params)
    x = _check_batch(batch, cfg)
    for i in range(1, len(ENCODER_BLOCKS) + 1):
        x = F.relu(_conv(T, f"enc{i}", x))
        x = F.maxpool2(x)
        x = F.dropout(x, cfg.dropout_rate, training, rng)
    return _conv(T, "mid", F.global_avg_pool(x))


def decode(params, code: Tensor) -> Tensor:
    cfg, T = _as_params(params)
    if "dec0.weight" not in T:
        raise ConfigurationError("this parameter set has no decoder")
    x = F.relu(_conv(T, "dec0", code))
    x = F.upsample2_nearest(F.upsample2_nearest(x))
    n_blocks = len(ENCODER_BLOCKS)
    for j in range(1, n_blocks + 1):
        x = _conv(T, f"dec{j}", F.upsample2_nearest(x))
        x = F.relu(x) if j < n_blocks else F.sigmoid(x)
    return x


def forward_autoencode(params, batch, training: bool = False, rng=None) -> tuple[Tensor, Tensor]:
    """Reconstruct a batch; returns ``(reconstruction, code)`` with code ``(N, C)``."""
    code = encode(params, batch, training, rng)
    recon = decode(params, code)
    return recon, F.reshape(code, code.shape[:2])


def code_to_estimate(code: Tensor) -> Tensor:
    """Map raw ``(N, 3)`` outputs to positive unit-norm illuminants."""
    return F.l2_normalize(F.softplus(code))


def forward_estimate(params, batch, training: bool = False, rng=None, code: Tensor | None = None) -> Tensor:
    """Illuminant estimates ``(N, 3)``, positive and unit norm.

    Models with a head regress through it; 3-channel models without a head
    read the code directly. ``code`` may be passed to reuse an encoder pass.
    """
    cfg, T = _as_params(params)
    if not cfg.with_head and cfg.code_channels != 3:
        raise ConfigurationError(
            f"a {cfg.code_channels}-channel code needs a regression head to estimate illuminants"
        )
    if code is None:
        code = encode((cfg, T), batch, training, rng)
    if code.data.ndim == 2:
        code = F.reshape(code, code.shape + (1, 1))
    if cfg.with_head:
        code = _conv(T, "head2", F.relu(_conv(T, "head1", code)))
    return code_to_estimate(F.reshape(code, code.shape[:2]))


def save(params: CAEParams, path) -> None:
    """Write ``params`` as a versioned little-endian binary container."""
    cfg_blob = json.dumps({**asdict(params.config), "has_decoder": params.has_decoder}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(cfg_blob)), cfg_blob]
    parts.append(struct.pack("<I", len(params.arrays)))
    for name, arr in params.arrays.items():
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise TruncatedFileError(f"model file truncated at byte {len(self.blob)} (needed {self.pos + n})")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load(path, code_channels: int | None = None) -> CAEParams:
    """Read a model file written by :func:`save`.

    Args:
        path: Model file.
        code_channels: If given, the expected code width; a mismatch raises
            :class:`ConfigurationError`.
    """
    r = _Reader(Path(path).read_bytes())
    if r.take(len(MAGIC)) != MAGIC:
        raise BadMagicError(f"{path}: bad magic, not a model file")
    version, cfg_len = r.unpack("<HI")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported format version {version}")
    try:
        cfg_dict = json.loads(r.take(cfg_len).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{path}: corrupt config block") from exc
    has_decoder = cfg_dict.pop("has_decoder", True)
    cfg = CAEConfig(**cfg_dict)
    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        n = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(r.blob):
        raise ModelFormatError(f"{path}: {len(r.blob) - r.pos} trailing bytes after the last tensor")
    params = CAEParams(cfg, arrays, has_decoder)
    expected = set(params.names())
    if set(arrays) != expected:
        raise ModelFormatError(f"{path}: tensor names do not match the stored config")
    for name, (_, shape) in ((f"{k}.weight", v) for k, v in layer_shapes(cfg).items()):
        if name in arrays and arrays[name].shape != shape:
            raise ModelFormatError(f"{path}: {name} has shape {arrays[name].shape}, expected {shape}")
    if code_channels is not None and cfg.code_channels != code_channels:
        raise ConfigurationError(
            f"{path}: model has a {cfg.code_channels}-channel code, {code_channels} required"
        )
    return params


__all__ = [
    "BadMagicError",
    "CAEConfig",
    "CAEParams",
    "ConfigurationError",
    "ModelFormatError",
    "TruncatedFileError",
    "UnsupportedVersionError",
    "build",
    "code_to_estimate",
    "decode",
    "encode",
    "forward_autoencode",
    "forward_estimate",
    "layer_shapes",
    "load",
    "param_count",
    "save",
]
