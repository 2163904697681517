"""Patch discriminator, perceptual feature extractors, and all loss terms.

Losses use numerically stable log-sigmoid forms throughout. Mask polarity is
1 = hole; on generated images only patches overlapping the hole are labelled
fake, the rest are pushed toward "real".
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .core_ops import ConfigError, SphericalConv

log = logging.getLogger(__name__)


@dataclass
class LossWeights:
    """Coefficients of the composite training objective."""

    rec: float = 10.0
    perc: float = 100.0
    adv: float = 10.0
    gp: float = 0.001
    fm: float = 30.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            value = float(value)
            if not value >= 0 or value != value or value == float("inf"):
                raise ConfigError(f"loss weight {name} must be finite and >= 0, got {value}")
            setattr(self, name, value)


class PatchDiscriminator(nn.Module):
    """Strided conv stack emitting a grid of per-patch realism logits.

    Four k4/s2 layers with leaky activations, instance normalization from the
    second layer on, and a final pointwise conv to one logit channel.
    """

    def __init__(self, in_channels=3, base_channels=64, num_layers=4):
        super().__init__()
        self.num_layers = num_layers
        layers = []
        ch_in = in_channels
        for i in range(num_layers):
            ch_out = base_channels * min(2**i, 8)
            block = [SphericalConv(ch_in, ch_out, kernel_size=4, stride=2, bias=True)]
            if i > 0:
                block.append(nn.InstanceNorm2d(ch_out, affine=False))
            block.append(nn.LeakyReLU(0.2))
            layers.append(nn.Sequential(*block))
            ch_in = ch_out
        self.stages = nn.ModuleList(layers)
        self.to_logits = nn.Conv2d(ch_in, 1, kernel_size=1, bias=True)

    def _run(self, img):
        h, w = img.shape[-2:]
        if h < 2**self.num_layers or w < 2**self.num_layers:
            raise ConfigError(
                f"image {h}x{w} too small for a {self.num_layers}-layer stride-2 stack"
            )
        feats = []
        x = img
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return self.to_logits(x), feats

    def forward(self, img):
        squeeze = img.dim() == 3
        if squeeze:
            img = img.unsqueeze(0)
        logits, _ = self._run(img)
        return logits.squeeze(0) if squeeze else logits

    def features(self, img):
        """Intermediate activations (every stage output, excluding logits)."""
        squeeze = img.dim() == 3
        if squeeze:
            img = img.unsqueeze(0)
        _, feats = self._run(img)
        return [f.squeeze(0) for f in feats] if squeeze else feats

    def forward_with_features(self, img):
        """Logits together with intermediate activations (one pass)."""
        squeeze = img.dim() == 3
        if squeeze:
            img = img.unsqueeze(0)
        logits, feats = self._run(img)
        if squeeze:
            return logits.squeeze(0), [f.squeeze(0) for f in feats]
        return logits, feats


# ---------------------------------------------------------------------------
# Perceptual feature extractors
# ---------------------------------------------------------------------------


class DeskFeatureExtractor(nn.Module):
    """Fixed-seed frozen dilated conv stack; a desk-scale stand-in for a
    pretrained high-receptive-field backbone (no external weights needed)."""

    DILATIONS = (1, 2, 4, 8)
    WIDTHS = (16, 32, 64, 64)

    def __init__(self, seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        layers = []
        ch_in = 3
        for width, dil in zip(self.WIDTHS, self.DILATIONS):
            conv = nn.Conv2d(ch_in, width, 3, padding=dil, dilation=dil, bias=False)
            with torch.no_grad():
                # He scaling keeps feature variance O(1) through depth, like
                # the pretrained backbones this stands in for
                std = (2.0 / (9.0 * ch_in)) ** 0.5
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * std)
            layers.append(conv)
            ch_in = width
        self.convs = nn.ModuleList(layers)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def forward(self, img):
        squeeze = img.dim() == 3
        if squeeze:
            img = img.unsqueeze(0)
        feats = []
        x = img
        for conv in self.convs:
            x = F.relu(conv(x))
            feats.append(x)
        return [f.squeeze(0) for f in feats] if squeeze else feats


class LowReceptiveFieldExtractor(nn.Module):
    """Shallow non-dilated frozen stack (the low-receptive-field ablation)."""

    WIDTHS = (16, 32, 64)

    def __init__(self, seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        layers = []
        ch_in = 3
        for width in self.WIDTHS:
            conv = nn.Conv2d(ch_in, width, 3, padding=1, bias=False)
            with torch.no_grad():
                std = (2.0 / (9.0 * ch_in)) ** 0.5
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * std)
            layers.append(conv)
            ch_in = width
        self.convs = nn.ModuleList(layers)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def forward(self, img):
        squeeze = img.dim() == 3
        if squeeze:
            img = img.unsqueeze(0)
        feats = []
        x = img
        for conv in self.convs:
            x = F.relu(conv(x))
            feats.append(x)
        return [f.squeeze(0) for f in feats] if squeeze else feats


class DilatedBackboneExtractor(nn.Module):
    """Pretrained dilated ResNet-50 features (production perceptual mode).

    Expects a state dict for torchvision's ``resnet50`` with the last two
    stages dilated (output stride 8), e.g. the backbone of an ADE20K
    segmentation model. Emits the four residual stage outputs.
    """

    MEAN = (0.485, 0.456, 0.406)
    STD = (0.229, 0.224, 0.225)

    def __init__(self, weights_path: str):
        super().__init__()
        try:
            from torchvision.models import resnet50
        except ImportError as exc:
            raise ConfigError(
                "perceptual mode 'hrf' needs torchvision (install extra 'hrf')"
            ) from exc
        net = resnet50(weights=None, replace_stride_with_dilation=[False, True, True])
        state = torch.load(weights_path, map_location="cpu")
        if isinstance(state, dict) and "state_dict" in state:
            state = state["state_dict"]
        missing, unexpected = net.load_state_dict(state, strict=False)
        if missing:
            raise ConfigError(
                f"perceptual weights at {weights_path} missing {len(missing)} keys "
                f"(first: {missing[0]})"
            )
        if unexpected:
            log.warning("perceptual weights: ignored %d unexpected keys", len(unexpected))
        self.stem = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool)
        self.layers = nn.ModuleList([net.layer1, net.layer2, net.layer3, net.layer4])
        self.register_buffer("mean", torch.tensor(self.MEAN).view(3, 1, 1))
        self.register_buffer("std", torch.tensor(self.STD).view(3, 1, 1))
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def forward(self, img):
        squeeze = img.dim() == 3
        if squeeze:
            img = img.unsqueeze(0)
        x = (img - self.mean) / self.std
        x = self.stem(x)
        feats = []
        for layer in self.layers:
            x = layer(x)
            feats.append(x)
        return [f.squeeze(0) for f in feats] if squeeze else feats


def build_perceptual_extractor(mode: str, weights_path: str | None = None, seed: int = 0):
    """Build the feature extractor for perceptual supervision.

    ``hrf`` loads pretrained dilated backbone weights from ``weights_path``
    and falls back to the desk stand-in (with a warning) when no path is
    given; ``lrf`` is the shallow ablation; ``desk`` the frozen stand-in.
    """
    if mode == "desk":
        return DeskFeatureExtractor(seed)
    if mode == "lrf":
        return LowReceptiveFieldExtractor(seed)
    if mode == "hrf":
        if weights_path is None:
            log.warning(
                "no perceptual weights configured (perceptual.weights); "
                "falling back to the desk-mode stand-in extractor"
            )
            return DeskFeatureExtractor(seed)
        return DilatedBackboneExtractor(weights_path)
    raise ConfigError(f"unknown perceptual mode {mode!r} (hrf, lrf, desk)")


# ---------------------------------------------------------------------------
# Loss terms
# ---------------------------------------------------------------------------


def _masked_mean(values: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    total = weights.sum()
    if total == 0:
        return values.new_zeros(())
    return (values * weights).sum() / total


def reconstruction_loss(target, prediction, mask) -> torch.Tensor:
    """Mean absolute error over unmasked pixels only (all channels).

    Empty support (mask of all ones) returns 0 by convention.
    """
    if target.shape != prediction.shape:
        raise ConfigError(
            f"shape mismatch {tuple(target.shape)} vs {tuple(prediction.shape)}"
        )
    keep = 1.0 - mask
    diff = (target - prediction).abs() * keep
    denom = keep.sum() * target.shape[-3]
    if denom == 0:
        return diff.new_zeros(())
    return diff.sum() / denom


def perceptual_loss(target, prediction, extractor) -> torch.Tensor:
    """Interlayer mean of intra-layer mean squared feature distances."""
    feats_t = extractor(target)
    feats_p = extractor(prediction)
    if len(feats_t) == 0:
        raise ConfigError("perceptual extractor returned zero layers")
    layer_means = [((ft - fp) ** 2).mean() for ft, fp in zip(feats_t, feats_p)]
    return torch.stack(layer_means).mean()


def patch_mask(mask: torch.Tensor, logits: torch.Tensor) -> torch.Tensor:
    """Downsample the pixel hole mask to the patch-logit grid.

    Area interpolation followed by a 0.5 threshold: a patch counts as fake
    when at least half of its pixels are holes.
    """
    squeeze = mask.dim() == 3
    if squeeze:
        mask = mask.unsqueeze(0)
    pooled = F.adaptive_avg_pool2d(mask, logits.shape[-2:])
    out = (pooled >= 0.5).to(mask.dtype)
    return out.squeeze(0) if squeeze else out


def discriminator_loss(logits_real, logits_fake, mask_patches) -> torch.Tensor:
    """Masked-patch discriminator objective.

    Real patches are all real; on the generated image, unmasked patches are
    still pushed toward "real" and only hole patches toward "fake". Each
    expectation averages over its own support.
    """
    if logits_fake.shape[-2:] != mask_patches.shape[-2:]:
        raise ConfigError(
            f"logit grid {tuple(logits_fake.shape)} does not match patch mask "
            f"{tuple(mask_patches.shape)}"
        )
    loss_real = -F.logsigmoid(logits_real).mean()
    keep = 1.0 - mask_patches
    loss_fake_keep = _masked_mean(-F.logsigmoid(logits_fake), keep)
    loss_fake_hole = _masked_mean(-F.logsigmoid(-logits_fake), mask_patches)
    return loss_real + loss_fake_keep + loss_fake_hole


def generator_adv_loss(logits_fake) -> torch.Tensor:
    """Non-saturating generator objective over all patches."""
    return -F.logsigmoid(logits_fake).mean()


def gradient_penalty(real, discriminator) -> torch.Tensor:
    """R1 penalty: expected squared input-gradient norm of D on real data."""
    if not torch.is_grad_enabled():
        raise RuntimeError(
            "gradient penalty needs an autograd graph; do not call it under no_grad"
        )
    x = real if real.requires_grad else real.detach().requires_grad_(True)
    batched = x if x.dim() == 4 else x.unsqueeze(0)
    logits = discriminator(batched)
    if not logits.requires_grad:  # discriminator constant in its input
        return real.new_zeros(())
    (grads,) = torch.autograd.grad(
        logits.sum(), batched, create_graph=True, allow_unused=True
    )
    if grads is None:
        return real.new_zeros(())
    return grads.flatten(1).pow(2).sum(dim=1).mean()


def feature_matching_loss(feats_real, feats_fake) -> torch.Tensor:
    """Sum over discriminator layers of the mean squared feature distance."""
    if len(feats_real) != len(feats_fake) or len(feats_real) == 0:
        raise ConfigError("feature lists must be non-empty and of equal length")
    per_layer = [((fr - ff) ** 2).mean() for fr, ff in zip(feats_real, feats_fake)]
    return torch.stack(per_layer).sum()


def total_generator_loss(rec, perc, adv, fm, weights) -> torch.Tensor:
    """Weighted sum of the generator terms (the gradient penalty belongs to
    the discriminator objective; it has no generator gradient)."""
    return (
        weights.rec * rec + weights.perc * perc + weights.adv * adv + weights.fm * fm
    )
