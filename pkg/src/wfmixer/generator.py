"""FourierFormer blocks and the four-stage U-shaped inpainting generator."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .core_ops import ChannelLayerNorm, ConfigError, SphericalConv, StarReLU
from .fourier import MixerVariant, build_token_mixer

# Input height/width must be divisible by these so every stage keeps even,
# windowable dims down to the bottleneck.
HEIGHT_DIVISOR = 32
WIDTH_DIVISOR = 64


@dataclass
class GeneratorConfig:
    """Architecture hyperparameters of the U-shaped generator."""

    base_channels: int = 64
    blocks_per_stage: tuple[int, int, int, int] = (2, 2, 2, 2)
    mixer: MixerVariant = MixerVariant.WFM
    expansion: int = 4
    in_channels: int = 4
    out_channels: int = 3

    def __post_init__(self):
        self.mixer = MixerVariant(self.mixer)
        self.blocks_per_stage = tuple(int(b) for b in self.blocks_per_stage)
        if self.base_channels < 2 or self.base_channels % 2:
            raise ConfigError(
                f"base_channels must be an even integer >= 2, got {self.base_channels}"
            )
        if len(self.blocks_per_stage) != 4 or any(b < 1 for b in self.blocks_per_stage):
            raise ConfigError(
                f"blocks_per_stage needs four counts >= 1, got {self.blocks_per_stage}"
            )
        if self.expansion < 1:
            raise ConfigError(f"expansion must be >= 1, got {self.expansion}")

    @property
    def stage_channels(self) -> tuple[int, int, int, int]:
        c = self.base_channels
        return (c, 2 * c, 4 * c, 8 * c)

    def stage_dims(self, height: int, width: int):
        """Feature dims per stage: (2^(i-1)*C, H/2^(i+1), W/2^(i+1)) for i in 1..4."""
        return [
            (ch, height // 2 ** (i + 1), width // 2 ** (i + 1))
            for i, ch in enumerate(self.stage_channels, start=1)
        ]


def check_spatial_dims(height: int, width: int):
    if height % HEIGHT_DIVISOR or width % WIDTH_DIVISOR:
        raise ConfigError(
            f"input {height}x{width} invalid: height must be divisible by "
            f"{HEIGHT_DIVISOR} and width by {WIDTH_DIVISOR}"
        )


class ChannelMLP(nn.Module):
    """Two pointwise convolutions with StarReLU in between (no biases)."""

    def __init__(self, channels, expansion=4):
        super().__init__()
        hidden = channels * expansion
        self.fc1 = nn.Conv2d(channels, hidden, 1, bias=False)
        self.act = StarReLU()
        self.fc2 = nn.Conv2d(hidden, channels, 1, bias=False)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class FourierFormerBlock(nn.Module):
    """Pre-norm residual block: token mixing then channel mixing."""

    def __init__(self, channels, mixer=MixerVariant.WFM, expansion=4):
        super().__init__()
        self.norm1 = ChannelLayerNorm(channels)
        self.token_mixer = build_token_mixer(mixer, channels)
        self.norm2 = ChannelLayerNorm(channels)
        self.channel_mixer = ChannelMLP(channels, expansion)

    def forward(self, x):
        x = x + self.token_mixer(self.norm1(x))
        x = x + self.channel_mixer(self.norm2(x))
        return x


class Downsample(nn.Module):
    def __init__(self, in_channels, out_channels, kernel_size, stride):
        super().__init__()
        self.conv = SphericalConv(in_channels, out_channels, kernel_size, stride, bias=False)
        self.norm = ChannelLayerNorm(out_channels)

    def forward(self, x):
        return self.norm(self.conv(x))


class Upsample(nn.Module):
    """Nearest-neighbor resize followed by a spherical conv (no checkerboards)."""

    def __init__(self, in_channels, out_channels, scale=2, kernel_size=3):
        super().__init__()
        self.scale = scale
        self.conv = SphericalConv(in_channels, out_channels, kernel_size, 1, bias=False)
        self.norm = ChannelLayerNorm(out_channels)

    def forward(self, x):
        x = F.interpolate(x, scale_factor=self.scale, mode="nearest")
        return self.norm(self.conv(x))


class PixelShuffleUpsample(nn.Module):
    """Conv + pixel shuffle for the final x4 stage.

    Nearest resize at x4 leaves every output block sharing one feature
    vector, which caps texture fidelity; shuffling conv channels into
    position restores it.
    """

    def __init__(self, in_channels, out_channels, scale=4, kernel_size=3):
        super().__init__()
        self.conv = SphericalConv(
            in_channels, out_channels * scale * scale, kernel_size, 1, bias=False
        )
        self.shuffle = nn.PixelShuffle(scale)
        self.norm = ChannelLayerNorm(out_channels)

    def forward(self, x):
        return self.norm(self.shuffle(self.conv(x)))


class SkipFuse(nn.Module):
    """Concatenate decoder features with the encoder skip, project back down."""

    def __init__(self, channels):
        super().__init__()
        self.proj = nn.Conv2d(2 * channels, channels, 1, bias=False)

    def forward(self, x, skip):
        if x.shape[-2:] != skip.shape[-2:]:
            raise AssertionError(
                f"skip shape {tuple(skip.shape)} does not match decoder {tuple(x.shape)}"
            )
        return self.proj(torch.cat([x, skip], dim=-3))


def _stage(channels, count, mixer, expansion):
    return nn.Sequential(
        *[FourierFormerBlock(channels, mixer, expansion) for _ in range(count)]
    )


class PanoGenerator(nn.Module):
    """U-shaped encoder/decoder producing a clutter-free panorama.

    The encoder has four stages (downsample conv + L_i FourierFormer blocks:
    k7/s4 first, then k3/s2), the decoder mirrors them with nearest-resize
    upsampling and skip fusion, and the head maps to 3 sigmoid channels.
    """

    def __init__(self, config: GeneratorConfig | None = None):
        super().__init__()
        self.config = config or GeneratorConfig()
        cfg = self.config
        c1, c2, c3, c4 = cfg.stage_channels
        l1, l2, l3, l4 = cfg.blocks_per_stage

        self.down1 = Downsample(cfg.in_channels, c1, kernel_size=7, stride=4)
        self.down2 = Downsample(c1, c2, kernel_size=3, stride=2)
        self.down3 = Downsample(c2, c3, kernel_size=3, stride=2)
        self.down4 = Downsample(c3, c4, kernel_size=3, stride=2)
        self.enc1 = _stage(c1, l1, cfg.mixer, cfg.expansion)
        self.enc2 = _stage(c2, l2, cfg.mixer, cfg.expansion)
        self.enc3 = _stage(c3, l3, cfg.mixer, cfg.expansion)
        self.enc4 = _stage(c4, l4, cfg.mixer, cfg.expansion)

        self.dec4 = _stage(c4, l4, cfg.mixer, cfg.expansion)
        self.up4 = Upsample(c4, c3)
        self.fuse3 = SkipFuse(c3)
        self.dec3 = _stage(c3, l3, cfg.mixer, cfg.expansion)
        self.up3 = Upsample(c3, c2)
        self.fuse2 = SkipFuse(c2)
        self.dec2 = _stage(c2, l2, cfg.mixer, cfg.expansion)
        self.up2 = Upsample(c2, c1)
        self.fuse1 = SkipFuse(c1)
        self.dec1 = _stage(c1, l1, cfg.mixer, cfg.expansion)
        self.up1 = PixelShuffleUpsample(c1, c1, scale=4)
        self.head = nn.Conv2d(c1, cfg.out_channels, 1, bias=False)

    def encode(self, x):
        """Run the encoder; returns the bottleneck map and per-stage skips."""
        if x.shape[-3] != self.config.in_channels:
            raise ConfigError(
                f"expected {self.config.in_channels} input channels, got {x.shape[-3]}"
            )
        check_spatial_dims(x.shape[-2], x.shape[-1])
        s1 = self.enc1(self.down1(x))
        s2 = self.enc2(self.down2(s1))
        s3 = self.enc3(self.down3(s2))
        s4 = self.enc4(self.down4(s3))
        return s4, [s1, s2, s3, s4]

    def decode(self, bottleneck, skips):
        s1, s2, s3, _ = skips
        h = self.dec4(bottleneck)
        h = self.dec3(self.fuse3(self.up4(h), s3))
        h = self.dec2(self.fuse2(self.up3(h), s2))
        h = self.dec1(self.fuse1(self.up2(h), s1))
        h = self.up1(h)
        return torch.sigmoid(self.head(h))

    def forward(self, x):
        squeeze = x.dim() == 3
        if squeeze:
            x = x.unsqueeze(0)
        bottleneck, skips = self.encode(x)
        y = self.decode(bottleneck, skips)
        return y.squeeze(0) if squeeze else y

    def inpaint(self, image, mask):
        """Inpaint ``image`` where ``mask`` is 1; see :func:`build_input`."""
        return self.forward(build_input(image, mask))


def validate_image(image: torch.Tensor, name="image"):
    if image.shape[-3] != 3:
        raise ConfigError(f"{name} must have 3 channels, got {image.shape[-3]}")
    lo, hi = float(image.detach().min()), float(image.detach().max())
    if lo < 0 or hi > 1:
        raise ConfigError(f"{name} values must lie in [0,1], got range [{lo:.4g}, {hi:.4g}]")


def validate_mask(mask: torch.Tensor):
    if mask.shape[-3] != 1:
        raise ConfigError(f"mask must have a single channel, got {mask.shape[-3]}")
    with torch.no_grad():
        if not torch.logical_or(mask == 0, mask == 1).all():
            raise ConfigError("mask must be binary (0 = keep, 1 = hole)")


def build_input(image: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Stack the masked image with its mask: concat(image * (1 - mask), mask).

    Mask polarity is 1 = hole everywhere in this package; hole pixels are
    zeroed out of the image channels so the network only sees the mask there.
    """
    validate_image(image)
    validate_mask(mask)
    if image.shape[-2:] != mask.shape[-2:]:
        raise ConfigError(
            f"image {tuple(image.shape)} and mask {tuple(mask.shape)} disagree"
        )
    return torch.cat([image * (1.0 - mask), mask], dim=-3)


def composite(image: torch.Tensor, prediction: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Keep original pixels outside the hole, predicted pixels inside."""
    return image * (1.0 - mask) + prediction * mask


def count_parameters(module: nn.Module) -> int:
    """Number of trainable parameters."""
    return sum(p.numel() for p in module.parameters() if p.requires_grad)
