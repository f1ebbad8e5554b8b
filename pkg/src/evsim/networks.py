"""The four networks: volume generator, patch discriminator, flow and
reconstruction networks.

The generator is a U-Net taking a concatenated grayscale frame pair and
producing a non-negative [2B, H, W] event volume (ReLU head preserves
sparsity). Flow and reconstruction networks reuse the same backbone. The
discriminator is a 4-layer patch classifier conditioned on the frame pair,
with no normalization layers; the generator uses batch normalization
throughout and spectral normalization in its encoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn


@dataclass
class GeneratorConfig:
    base_channels: int = 32
    num_encoder_levels: int = 4
    num_residual_blocks: int = 2
    num_bins: int = 9
    use_spectral_norm_encoder: bool = True
    use_batch_norm: bool = True


@dataclass
class FlowNetConfig:
    base_channels: int = 32
    num_encoder_levels: int = 4
    num_residual_blocks: int = 2
    num_bins: int = 9
    use_spectral_norm_encoder: bool = True
    use_batch_norm: bool = True


@dataclass
class ReconNetConfig:
    base_channels: int = 32
    num_encoder_levels: int = 4
    num_residual_blocks: int = 2
    use_spectral_norm_encoder: bool = True
    use_batch_norm: bool = False


@dataclass
class DiscriminatorConfig:
    num_layers: int = 4
    base_channels: int = 64
    num_bins: int = 9


def spectral_normalize_step(weight: torch.Tensor, u: torch.Tensor | None = None,
                            num_iters: int = 1):
    """Power-iteration estimate of the largest singular value.

    Flattens `weight` to [out, -1], runs `num_iters` power iterations from
    `u` (a normalized all-ones vector if omitted), and returns
    (weight / sigma, sigma, u) with the updated left singular vector.
    """
    w = weight.detach().reshape(weight.shape[0], -1)
    if u is None:
        u = F.normalize(torch.ones(w.shape[0], dtype=w.dtype, device=w.device), dim=0)
    for _ in range(num_iters):
        v = F.normalize(w.t() @ u, dim=0, eps=1e-12)
        u = F.normalize(w @ v, dim=0, eps=1e-12)
    sigma = torch.dot(u, w @ v)
    return weight / sigma, sigma, u


class SpectralNormConv2d(nn.Conv2d):
    """Convolution whose weight is divided by a power-iteration estimate of
    its largest singular value.

    The left singular vector is a buffer updated only via
    `update_power_iteration` (the trainer calls it once per training step);
    forward passes use the current estimate, so inference is deterministic.
    """

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        u = torch.ones(self.out_channels)
        self.register_buffer("weight_u", F.normalize(u, dim=0))
        self.update_power_iteration(num_iters=3)

    def _normalized_weight(self) -> torch.Tensor:
        w = self.weight.reshape(self.out_channels, -1)
        with torch.no_grad():
            v = F.normalize(w.detach().t() @ self.weight_u, dim=0, eps=1e-12)
        sigma = torch.dot(self.weight_u, torch.mv(w, v))
        return self.weight / sigma

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self._conv_forward(x, self._normalized_weight(), self.bias)

    @torch.no_grad()
    def update_power_iteration(self, num_iters: int = 1) -> None:
        w = self.weight.detach().reshape(self.out_channels, -1)
        u = self.weight_u
        for _ in range(num_iters):
            v = F.normalize(w.t() @ u, dim=0, eps=1e-12)
            u = F.normalize(w @ v, dim=0, eps=1e-12)
        self.weight_u.copy_(u)


def update_spectral_norm(module: nn.Module, num_iters: int = 1) -> None:
    """Advance the power iteration of every spectral-normalized layer once."""
    for m in module.modules():
        if isinstance(m, SpectralNormConv2d):
            m.update_power_iteration(num_iters)


def _conv(in_ch, out_ch, stride=1, spectral=False, batch_norm=True, relu=True):
    cls = SpectralNormConv2d if spectral else nn.Conv2d
    layers = [cls(in_ch, out_ch, kernel_size=3, stride=stride, padding=1)]
    if batch_norm:
        layers.append(nn.BatchNorm2d(out_ch))
    if relu:
        layers.append(nn.ReLU(inplace=True))
    return nn.Sequential(*layers)


class ResidualBlock(nn.Module):
    def __init__(self, channels, batch_norm=True):
        super().__init__()
        self.body = nn.Sequential(
            _conv(channels, channels, batch_norm=batch_norm, relu=True),
            _conv(channels, channels, batch_norm=batch_norm, relu=False),
        )

    def forward(self, x):
        return F.relu(x + self.body(x))


class _DecoderLevel(nn.Module):
    """Nearest-neighbor upsample + conv, then fuse the matching encoder skip."""

    def __init__(self, in_ch, out_ch, skip_ch, batch_norm=True):
        super().__init__()
        self.up = _conv(in_ch, out_ch, batch_norm=batch_norm)
        self.fuse = _conv(out_ch + skip_ch, out_ch, batch_norm=batch_norm)

    def forward(self, x, skip):
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = self.up(x)
        return self.fuse(torch.cat([x, skip], dim=1))


def check_spatial_divisibility(h: int, w: int, levels: int) -> None:
    m = 2 ** levels
    if h % m or w % m:
        raise ValueError(
            f"spatial dims {h}x{w} must be divisible by {m}; "
            f"pad to {((h + m - 1) // m) * m}x{((w + m - 1) // m) * m}"
        )


class UNet(nn.Module):
    """Encoder-decoder backbone: stride-2 convolutions doubling channels per
    level, residual blocks at the bottleneck, nearest-upsample decoder with
    skip connections from matching encoder levels, and a 1x1 head."""

    def __init__(self, in_channels, out_channels, base_channels=32, levels=4,
                 residual_blocks=2, spectral_norm_encoder=True, batch_norm=True,
                 final_relu=False):
        super().__init__()
        self.levels = levels
        self.final_relu = final_relu
        chans = [base_channels * 2 ** i for i in range(levels)]
        self.encoder = nn.ModuleList()
        prev = in_channels
        for c in chans:
            self.encoder.append(_conv(prev, c, stride=2, spectral=spectral_norm_encoder,
                                      batch_norm=batch_norm))
            prev = c
        self.bottleneck = nn.Sequential(
            *[ResidualBlock(chans[-1], batch_norm=batch_norm) for _ in range(residual_blocks)])
        self.decoder = nn.ModuleList()
        for i in range(levels - 1, 0, -1):
            self.decoder.append(_DecoderLevel(chans[i], chans[i - 1], chans[i - 1],
                                              batch_norm=batch_norm))
        self.top = _conv(chans[0], chans[0], batch_norm=batch_norm)
        self.head = nn.Conv2d(chans[0], out_channels, kernel_size=1)

    def forward(self, x):
        check_spatial_divisibility(x.shape[-2], x.shape[-1], self.levels)
        skips = []
        for enc in self.encoder:
            x = enc(x)
            skips.append(x)
        x = self.bottleneck(x)
        for dec, skip in zip(self.decoder, reversed(skips[:-1])):
            x = dec(x, skip)
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = self.top(x)
        x = self.head(x)
        return F.relu(x) if self.final_relu else x


def _check_frames(i0: torch.Tensor, i1: torch.Tensor) -> None:
    if i0.ndim != 4 or i1.ndim != 4 or i0.shape[1] != 1 or i1.shape[1] != 1:
        raise ValueError(f"frames must be [N, 1, H, W], got {tuple(i0.shape)} and {tuple(i1.shape)}")
    if i0.shape != i1.shape:
        raise ValueError(f"frame shapes differ: {tuple(i0.shape)} vs {tuple(i1.shape)}")


class Generator(nn.Module):
    """Frame pair -> non-negative event volume [N, 2B, H, W]."""

    def __init__(self, config: GeneratorConfig | None = None):
        super().__init__()
        self.config = config or GeneratorConfig()
        self.net = UNet(
            in_channels=2,
            out_channels=2 * self.config.num_bins,
            base_channels=self.config.base_channels,
            levels=self.config.num_encoder_levels,
            residual_blocks=self.config.num_residual_blocks,
            spectral_norm_encoder=self.config.use_spectral_norm_encoder,
            batch_norm=self.config.use_batch_norm,
            final_relu=True,
        )

    def forward(self, i0: torch.Tensor, i1: torch.Tensor) -> torch.Tensor:
        _check_frames(i0, i1)
        return self.net(torch.cat([i0, i1], dim=1))


class PatchDiscriminator(nn.Module):
    """Event volume conditioned on its frame pair -> patch realism scores.

    Stride-2 convolutions only; the score map is input / 2^num_layers.
    """

    def __init__(self, config: DiscriminatorConfig | None = None):
        super().__init__()
        self.config = config or DiscriminatorConfig()
        c = self.config.base_channels
        in_ch = 2 * self.config.num_bins + 2
        layers = []
        for i in range(self.config.num_layers):
            out_ch = min(c * 2 ** i, 8 * c)
            layers += [nn.Conv2d(in_ch, out_ch, kernel_size=4, stride=2, padding=1),
                       nn.LeakyReLU(0.2, inplace=True)]
            in_ch = out_ch
        layers.append(nn.Conv2d(in_ch, 1, kernel_size=3, stride=1, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, volume: torch.Tensor, i0: torch.Tensor, i1: torch.Tensor) -> torch.Tensor:
        _check_frames(i0, i1)
        if volume.ndim != 4 or volume.shape[1] != 2 * self.config.num_bins:
            raise ValueError(
                f"volume must be [N, {2 * self.config.num_bins}, H, W], got {tuple(volume.shape)}")
        if volume.shape[-2:] != i0.shape[-2:]:
            raise ValueError(
                f"volume {tuple(volume.shape[-2:])} and frames {tuple(i0.shape[-2:])} misaligned")
        check_spatial_divisibility(volume.shape[-2], volume.shape[-1], self.config.num_layers)
        return self.net(torch.cat([volume, i0, i1], dim=1))


class FlowNet(nn.Module):
    """Event volume -> per-pixel backward flow [N, 2, H, W] in pixels."""

    def __init__(self, config: FlowNetConfig | None = None):
        super().__init__()
        self.config = config or FlowNetConfig()
        self.net = UNet(
            in_channels=2 * self.config.num_bins,
            out_channels=2,
            base_channels=self.config.base_channels,
            levels=self.config.num_encoder_levels,
            residual_blocks=self.config.num_residual_blocks,
            spectral_norm_encoder=self.config.use_spectral_norm_encoder,
            batch_norm=self.config.use_batch_norm,
        )

    def forward(self, volume: torch.Tensor) -> torch.Tensor:
        if volume.ndim != 4 or volume.shape[1] != 2 * self.config.num_bins:
            raise ValueError(
                f"volume must be [N, {2 * self.config.num_bins}, H, W], got {tuple(volume.shape)}")
        return self.net(volume)


class ReconNet(nn.Module):
    """Previous frame + time-collapsed volume -> predicted next frame."""

    def __init__(self, config: ReconNetConfig | None = None):
        super().__init__()
        self.config = config or ReconNetConfig()
        self.net = UNet(
            in_channels=2,
            out_channels=1,
            base_channels=self.config.base_channels,
            levels=self.config.num_encoder_levels,
            residual_blocks=self.config.num_residual_blocks,
            spectral_norm_encoder=self.config.use_spectral_norm_encoder,
            batch_norm=self.config.use_batch_norm,
        )

    def forward(self, i0: torch.Tensor, collapsed: torch.Tensor) -> torch.Tensor:
        if i0.shape != collapsed.shape or i0.ndim != 4 or i0.shape[1] != 1:
            raise ValueError(
                f"expected matching [N, 1, H, W] inputs, got {tuple(i0.shape)} "
                f"and {tuple(collapsed.shape)}")
        return self.net(torch.cat([i0, collapsed], dim=1))


def collapse_volume(volume: torch.Tensor, num_bins: int | None = None,
                    signed: bool = False) -> torch.Tensor:
    """Tensor counterpart of volumes.collapse_time: sum over the channel axis."""
    if signed:
        if num_bins is None:
            raise ValueError("signed collapse needs num_bins")
        return volume[:, :num_bins].sum(dim=1, keepdim=True) - \
            volume[:, num_bins:].sum(dim=1, keepdim=True)
    return volume.sum(dim=1, keepdim=True)
