"""Zero-initialized fusion of cropped detector features into recognizer features.

``F_r = F_i + Z_l(Tr(Z_c(C_f) + PE))`` where ``Z_c`` (1x1 conv) and ``Z_l``
(linear) start at exactly zero, so a fresh bridge returns ``F_i`` untouched
while still receiving non-zero gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .nn import Conv2d, Linear, ParameterStore, TransformerEncoderLayer

SEQ_MAX = 1024


class CapacityError(ValueError):
    """Requested sequence exceeds the positional table."""


def positional_encoding(seq: int, d: int, seq_max: int = SEQ_MAX) -> np.ndarray:
    """Fixed sinusoidal table of shape (seq, d)."""
    if seq > seq_max:
        raise CapacityError(f"sequence length {seq} exceeds capacity {seq_max}")
    pos = np.arange(seq, dtype=np.float64)[:, None]
    i = np.arange(d)[None, :]
    rates = 1.0 / np.power(10000.0, (2 * (i // 2)) / d)
    angles = pos * rates
    return np.where(i % 2 == 0, np.sin(angles), np.cos(angles))


@dataclass(frozen=True)
class BridgeConfig:
    det_channels: int = 32
    rec_dim: int = 32
    dim: int = 16
    heads: int = 2
    depth: int = 1
    init_mode: str = "zero"
    ffn_mult: int = 4


class BridgeState:
    def __init__(self, cfg: BridgeConfig = BridgeConfig(), rng: np.random.Generator | None = None,
                 prefix: str = "bridge"):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        self.store = ParameterStore()
        self.z_conv = Conv2d(self.store, f"{prefix}.z_conv", cfg.det_channels, cfg.dim, 1,
                             init_mode=cfg.init_mode, rng=rng)
        self.encoder = [
            TransformerEncoderLayer(self.store, f"{prefix}.encoder.{i}", cfg.dim, cfg.heads,
                                    cfg.ffn_mult, rng)
            for i in range(cfg.depth)
        ]
        self.z_linear = Linear(self.store, f"{prefix}.z_linear", cfg.dim, cfg.rec_dim,
                               init_mode=cfg.init_mode, rng=rng)
        self.pe = positional_encoding(SEQ_MAX, cfg.dim)

    def __call__(self, f_i: Tensor, c_f: Tensor) -> Tensor:
        return bridge_forward(self, f_i, c_f)


def bridge_forward(b: BridgeState, f_i: Tensor, c_f: Tensor) -> Tensor:
    """Fuse ``c_f`` (C, h, w) / (N, C, h, w) into ``f_i`` (seq, d_rec) / (N, seq, d_rec)."""
    batched = f_i.ndim == 3
    if batched != (c_f.ndim == 4):
        raise DimensionError(f"bridge: F_i {f_i.shape} and C_f {c_f.shape} disagree on batching")
    if f_i.shape[-1] != b.cfg.rec_dim:
        raise DimensionError(f"bridge: F_i last dim {f_i.shape[-1]} != {b.cfg.rec_dim}")
    if c_f.shape[-3] != b.cfg.det_channels:
        raise DimensionError(f"bridge z_conv: C_f channels {c_f.shape[-3]} != "
                             f"{b.cfg.det_channels}")
    if not batched:
        f_i = f_i.reshape(1, *f_i.shape)
        c_f = c_f.reshape(1, *c_f.shape)
    n, _, h, w = c_f.shape
    seq = h * w
    if seq > SEQ_MAX:
        raise CapacityError(f"bridge: {seq} feature tokens exceed capacity {SEQ_MAX}")
    z = b.z_conv(c_f).reshape(n, b.cfg.dim, seq).transpose(0, 2, 1)
    z = ad.add(z, Tensor(b.pe[:seq]))
    for layer in b.encoder:
        z = layer(z)
    z = b.z_linear(z)
    z = ad.resample_sequence(z, f_i.shape[1])
    out = ad.add(f_i, z)
    return out if batched else out.reshape(*out.shape[1:])


def trainable_parameters(b: BridgeState) -> list[tuple[str, Tensor]]:
    return b.store.trainable()


def bridge_parameter_count(cfg: BridgeConfig) -> int:
    """Closed-form parameter count for a bridge configuration."""
    d = cfg.dim
    conv = cfg.det_channels * d + d
    lin = d * cfg.rec_dim + cfg.rec_dim
    attn = d * 3 * d + 3 * d + d * d + d
    ffn = d * cfg.ffn_mult * d + cfg.ffn_mult * d + cfg.ffn_mult * d * d + d
    layer = attn + ffn + 4 * d
    return conv + lin + cfg.depth * layer
