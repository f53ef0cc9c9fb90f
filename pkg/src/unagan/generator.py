"""Hierarchical generator: a noise sequence (noise_dims x T') becomes a mel
matrix (mel_dims x S*T'), refined coarse-to-fine.

Wiring for L levels: h_1 = GBlock_1(z); o_1 = Head_1(h_1); then for each
finer level, h_l = GBlock_l(Up(h_{l-1})) and o_l = Head_l(h_l) + Up(o_{l-1}).
The output is o_L, so every level contributes an additive refinement and
each noise column governs an S-frame span plus conv spillover.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .blocks import GBlock, Head, upsample2x
from .errors import InvalidInput, ShapeError


@dataclass
class GeneratorConfig:
    n_levels: int = 3
    noise_dims: int = 20
    mel_dims: int = 80
    channels: list[int] = field(default_factory=lambda: [256, 256, 256])
    conv_groups: int = 4
    gru_layers: int = 1

    @property
    def downsample_factor(self) -> int:
        return 2 ** (self.n_levels - 1)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.n_levels < 1:
            raise InvalidInput(f"n_levels must be >= 1, got {self.n_levels}")
        if len(self.channels) != self.n_levels:
            raise InvalidInput(
                f"channels list has {len(self.channels)} entries for {self.n_levels} levels"
            )
        if self.noise_dims < 1 or self.mel_dims < 1:
            raise InvalidInput("noise_dims and mel_dims must be >= 1")
        if self.gru_layers < 1:
            raise InvalidInput(f"gru_layers must be >= 1, got {self.gru_layers}")

    def to_dict(self) -> dict:
        return {
            "n_levels": self.n_levels,
            "noise_dims": self.noise_dims,
            "mel_dims": self.mel_dims,
            "channels": list(self.channels),
            "conv_groups": self.conv_groups,
            "gru_layers": self.gru_layers,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        return cls(**d)


def sample_noise(t_prime: int, n_dims: int, rng: np.random.Generator) -> np.ndarray:
    """An (n_dims x t_prime) matrix of i.i.d. standard-normal draws."""
    if t_prime < 1 or n_dims < 1:
        raise InvalidInput(f"need t_prime >= 1 and n_dims >= 1, got {t_prime}, {n_dims}")
    return rng.standard_normal((n_dims, t_prime)).astype(np.float32)


class Generator(nn.Module):
    def __init__(self, cfg: GeneratorConfig, conv_only: bool = False, padding_mode: str = "zeros"):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        blocks, heads = [], []
        in_ch = cfg.noise_dims
        for ch in cfg.channels:
            blocks.append(
                GBlock(in_ch, ch, cfg.conv_groups, cfg.gru_layers, conv_only, padding_mode)
            )
            heads.append(Head(ch, cfg.mel_dims, padding_mode))
            in_ch = ch
        self.blocks = nn.ModuleList(blocks)
        self.heads = nn.ModuleList(heads)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        """(batch, noise_dims, T') -> (batch, mel_dims, S*T')."""
        if z.dim() != 3 or z.shape[1] != self.cfg.noise_dims:
            raise ShapeError(
                f"expected noise of shape (batch, {self.cfg.noise_dims}, t'), "
                f"got {tuple(z.shape)}"
            )
        h = self.blocks[0](z)
        o = self.heads[0](h)
        for block, head in zip(self.blocks[1:], self.heads[1:]):
            h = block(upsample2x(h))
            o = head(h) + upsample2x(o)
        return o


def generate(z: np.ndarray, model: Generator) -> np.ndarray:
    """Run one noise sequence through the generator in eval mode.

    z: (noise_dims, T') -> mel (mel_dims, S*T'), float32.
    """
    z = np.asarray(z, dtype=np.float32)
    if z.ndim != 2:
        raise ShapeError(f"noise must be 2-D, got shape {z.shape}")
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            out = model(torch.from_numpy(z).unsqueeze(0))
    finally:
        model.train(was_training)
    return out.squeeze(0).numpy()


def generate_frames(
    t_target: int, model: Generator, rng: np.random.Generator
) -> np.ndarray:
    """Generate exactly t_target frames: sample ceil(t_target/S) noise vectors,
    run the generator, trim trailing frames."""
    if t_target < 1:
        raise InvalidInput(f"t_target must be >= 1, got {t_target}")
    s = model.cfg.downsample_factor
    t_prime = -(-t_target // s)
    z = sample_noise(t_prime, model.cfg.noise_dims, rng)
    return generate(z, model)[:, :t_target]


def output_span(cfg: GeneratorConfig) -> tuple[int, int]:
    """Interval of output frames influenced by noise column t, as offsets
    (lo, hi) relative to S*t: the affected frames are [S*t + lo, S*t + hi].

    Derived by interval arithmetic over the conv stack (kernel 3 everywhere,
    nearest-neighbor upsampling); the recurrent path is excluded, so this
    describes the conv-only build, and the lower bound also holds for the
    full build because the GRU is causal.
    """
    gblock_radius = 2  # two kernel-3 convs
    h_lo = -gblock_radius
    h_hi = gblock_radius
    o_lo, o_hi = h_lo - 1, h_hi + 1  # head conv
    for _ in range(cfg.n_levels - 1):
        h_lo, h_hi = 2 * h_lo - gblock_radius, 2 * h_hi + 1 + gblock_radius
        o_lo, o_hi = 2 * o_lo, 2 * o_hi + 1  # upsampled coarse output
        o_lo = min(o_lo, h_lo - 1)
        o_hi = max(o_hi, h_hi + 1)
    return o_lo, o_hi


def receptive_radius(cfg: GeneratorConfig) -> int:
    """Smallest R with the affected frames inside [S*t - R, S*(t+1) + R)."""
    lo, hi = output_span(cfg)
    return max(-lo, hi - cfg.downsample_factor + 1)
