"""Building blocks: GBlock, Head, Up, the autoencoding discriminator, and the
noise encoder.

All blocks operate on (batch, channels, frames) tensors and preserve the
frame count unless stated otherwise. Convolutions have kernel size 3.
``padding_mode='circular'`` and ``conv_only=True`` are test hooks for
locality/equivariance checks; production models use zero padding with the
recurrent path enabled.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InvalidInput, ShapeError

LEAKY_SLOPE = 0.2

# (channels, time dilation) per 2D stage; each stage halves the frequency axis.
FRONTEND_2D = ((4, 2), (16, 4), (64, 8))
# Dilations of the five 1D stages.
BODY_1D_DILATIONS = (1, 16, 32, 64, 128)
BODY_1D_CHANNELS = 512


def upsample2x(x: torch.Tensor) -> torch.Tensor:
    """Nearest-neighbor temporal upsampling by 2: each column is duplicated."""
    return x.repeat_interleave(2, dim=-1)


def _check_channels(x: torch.Tensor, expected: int, who: str):
    if x.dim() != 3:
        raise ShapeError(f"{who}: expected (batch, channels, frames), got shape {tuple(x.shape)}")
    if x.shape[1] != expected:
        raise ShapeError(f"{who}: expected {expected} input channels, got {x.shape[1]}")


class GBlock(nn.Module):
    """Grouped conv -> BN -> LeakyReLU -> GRU -> grouped conv -> BN -> LeakyReLU,
    with a residual skip (1x1 projection when the channel count changes).

    The GRU is unidirectional with hidden size equal to out_channels, so the
    block stays causal-extendable in time.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        groups: int = 4,
        gru_layers: int = 1,
        conv_only: bool = False,
        padding_mode: str = "zeros",
    ):
        super().__init__()
        if in_channels % groups or out_channels % groups:
            raise InvalidInput(
                f"channel counts ({in_channels}, {out_channels}) must be divisible "
                f"by groups={groups}"
            )
        if gru_layers < 1:
            raise InvalidInput(f"gru_layers must be >= 1, got {gru_layers}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.conv_only = conv_only
        self.conv1 = nn.Conv1d(
            in_channels, out_channels, 3, padding=1, groups=groups, padding_mode=padding_mode
        )
        self.bn1 = nn.BatchNorm1d(out_channels)
        self.gru = (
            None
            if conv_only
            else nn.GRU(out_channels, out_channels, num_layers=gru_layers, batch_first=True)
        )
        self.conv2 = nn.Conv1d(
            out_channels, out_channels, 3, padding=1, groups=groups, padding_mode=padding_mode
        )
        self.bn2 = nn.BatchNorm1d(out_channels)
        self.skip = (
            nn.Conv1d(in_channels, out_channels, 1) if in_channels != out_channels else None
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_channels(x, self.in_channels, "GBlock")
        h = F.leaky_relu(self.bn1(self.conv1(x)), LEAKY_SLOPE)
        if self.gru is not None:
            h, _ = self.gru(h.transpose(1, 2))
            h = h.transpose(1, 2)
        h = F.leaky_relu(self.bn2(self.conv2(h)), LEAKY_SLOPE)
        return h + (self.skip(x) if self.skip is not None else x)


class Head(nn.Module):
    """Single same-padded conv projecting hidden features to mel channels."""

    def __init__(self, in_channels: int, out_channels: int = 80, padding_mode: str = "zeros"):
        super().__init__()
        self.in_channels = in_channels
        self.conv = nn.Conv1d(in_channels, out_channels, 3, padding=1, padding_mode=padding_mode)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_channels(x, self.in_channels, "Head")
        return self.conv(x)


class _Frontend2d(nn.Module):
    """Shared 2D stack: three conv/BN/LeakyReLU stages, stride 2 on frequency,
    dilated in time, then channel*frequency flattened to a 1D sequence."""

    def __init__(self, mel_bands: int, padding_mode: str):
        super().__init__()
        if mel_bands % 2 ** len(FRONTEND_2D):
            raise InvalidInput(
                f"mel_bands={mel_bands} must be divisible by {2 ** len(FRONTEND_2D)}"
            )
        self.mel_bands = mel_bands
        convs, bns = [], []
        in_ch = 1
        for out_ch, time_dil in FRONTEND_2D:
            convs.append(
                nn.Conv2d(
                    in_ch,
                    out_ch,
                    3,
                    stride=(2, 1),
                    padding=(1, time_dil),
                    dilation=(1, time_dil),
                    padding_mode=padding_mode,
                )
            )
            bns.append(nn.BatchNorm2d(out_ch))
            in_ch = out_ch
        self.convs = nn.ModuleList(convs)
        self.bns = nn.ModuleList(bns)
        self.out_channels = FRONTEND_2D[-1][0] * (mel_bands // 2 ** len(FRONTEND_2D))

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        _check_channels(mel, self.mel_bands, "2D frontend")
        h = mel.unsqueeze(1)  # (B, 1, bands, T)
        for conv, bn in zip(self.convs, self.bns):
            h = F.leaky_relu(bn(conv(h)), LEAKY_SLOPE)
        b, c, f, t = h.shape
        return h.reshape(b, c * f, t)


class _Conv1dStage(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, dilation: int, padding_mode: str):
        super().__init__()
        self.conv = nn.Conv1d(
            in_ch, out_ch, 3, padding=dilation, dilation=dilation, padding_mode=padding_mode
        )
        self.bn = nn.BatchNorm1d(out_ch)

    def forward(self, x):
        return F.leaky_relu(self.bn(self.conv(x)), LEAKY_SLOPE)


class Discriminator(nn.Module):
    """Autoencoding discriminator: reconstructs its (bands x T) input.

    Stack: three 2D stages (channels 4/16/64, frequency stride 2, time
    dilations 2/4/8), flatten channel*frequency, five 1D stages at 512
    channels (dilations 1/16/32/64/128), output conv back to mel bands.
    For 80 bands the shapes run (4,40,T) -> (16,20,T) -> (64,10,T) ->
    (640,T) -> (512,T)x5 -> (80,T).
    """

    def __init__(self, mel_bands: int = 80, padding_mode: str = "zeros"):
        super().__init__()
        self.mel_bands = mel_bands
        self.frontend = _Frontend2d(mel_bands, padding_mode)
        stages = []
        in_ch = self.frontend.out_channels
        for dil in BODY_1D_DILATIONS:
            stages.append(_Conv1dStage(in_ch, BODY_1D_CHANNELS, dil, padding_mode))
            in_ch = BODY_1D_CHANNELS
        self.body = nn.ModuleList(stages)
        self.out = nn.Conv1d(
            BODY_1D_CHANNELS, mel_bands, 3, padding=1, padding_mode=padding_mode
        )

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        h = self.frontend(mel)
        for stage in self.body:
            h = stage(h)
        return self.out(h)


class Encoder(nn.Module):
    """Predicts the noise sequence from a mel: same 2D front-end as the
    discriminator, then five 1D stages with average-pooling by 2 after each
    of the first log2(S) stages, and a final conv to noise_dims channels.

    Output shape is (noise_dims, T / S); T must be divisible by S.
    """

    def __init__(
        self,
        mel_bands: int = 80,
        noise_dims: int = 20,
        downsample_factor: int = 4,
        padding_mode: str = "zeros",
    ):
        super().__init__()
        n_pools = downsample_factor.bit_length() - 1
        if downsample_factor != 2**n_pools:
            raise InvalidInput(f"downsample_factor must be a power of 2, got {downsample_factor}")
        if n_pools > len(BODY_1D_DILATIONS):
            raise InvalidInput(
                f"downsample_factor {downsample_factor} needs more pooling stages than "
                f"the {len(BODY_1D_DILATIONS)} available 1D stages"
            )
        self.mel_bands = mel_bands
        self.downsample_factor = downsample_factor
        self.n_pools = n_pools
        self.frontend = _Frontend2d(mel_bands, padding_mode)
        stages = []
        in_ch = self.frontend.out_channels
        for dil in BODY_1D_DILATIONS:
            stages.append(_Conv1dStage(in_ch, BODY_1D_CHANNELS, dil, padding_mode))
            in_ch = BODY_1D_CHANNELS
        self.body = nn.ModuleList(stages)
        self.out = nn.Conv1d(BODY_1D_CHANNELS, noise_dims, 3, padding=1, padding_mode=padding_mode)

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        if mel.shape[-1] % self.downsample_factor:
            raise ShapeError(
                f"frame count {mel.shape[-1]} not divisible by "
                f"downsample factor {self.downsample_factor}"
            )
        h = self.frontend(mel)
        for i, stage in enumerate(self.body):
            h = stage(h)
            if i < self.n_pools:
                h = F.avg_pool1d(h, 2)
        return self.out(h)
