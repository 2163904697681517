"""Spatial primitives shared by every network block.

Panoramas are cyclic along width and mirror-like toward the poles, so all
convolutions route through :func:`spherical_pad` (wrap columns, reflect rows)
instead of zero padding.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

HEIGHT = "height"
WIDTH = "width"

_AXIS_TO_DIM = {HEIGHT: -2, WIDTH: -1}


class ConfigError(ValueError):
    """Raised when module parameters and inputs cannot be reconciled."""


def axis_dim(axis: str) -> int:
    if axis not in _AXIS_TO_DIM:
        raise ConfigError(f"unknown axis {axis!r}, expected 'height' or 'width'")
    return _AXIS_TO_DIM[axis]


def spherical_pad(x: torch.Tensor, pad_h: int, pad_w: int) -> torch.Tensor:
    """Pad the two trailing dims: columns wrap circularly, rows mirror-reflect.

    Reflection excludes the boundary row itself (row -1 is a copy of row 1),
    which avoids duplicating the pole rows. Requires ``pad_h < h`` and
    ``pad_w <= w`` so every padded index maps to a valid source pixel.
    """
    if pad_h < 0 or pad_w < 0:
        raise ConfigError(f"padding must be nonnegative, got ({pad_h}, {pad_w})")
    h, w = x.shape[-2:]
    if pad_h >= h:
        raise ConfigError(f"pad_h={pad_h} out of range for height {h} (need pad_h < h)")
    if pad_w > w:
        raise ConfigError(f"pad_w={pad_w} out of range for width {w} (need pad_w <= w)")
    if pad_h == 0 and pad_w == 0:
        return x
    squeeze = x.dim() == 3
    if squeeze:
        x = x.unsqueeze(0)
    if pad_w:
        x = F.pad(x, (pad_w, pad_w, 0, 0), mode="circular")
    if pad_h:
        x = F.pad(x, (0, 0, pad_h, pad_h), mode="reflect")
    return x.squeeze(0) if squeeze else x


def same_side_pad(kernel: int, stride: int, size: int) -> int:
    """Per-side padding so that the conv output length is ceil(size/stride)."""
    out = math.ceil(size / stride)
    needed = max(0, (out - 1) * stride + kernel - size)
    return (needed + 1) // 2


def _conv_pad(x: torch.Tensor, pad_h: int, pad_w: int) -> torch.Tensor:
    """Spherical padding for internal convs; 4D input.

    Rows too short to reflect (pad_h >= h, only reachable at the length-1
    bottleneck of minimum-size inputs) replicate instead, the natural limit
    of mirroring a single pole row.
    """
    if pad_w:
        x = F.pad(x, (pad_w, pad_w, 0, 0), mode="circular")
    if pad_h:
        mode = "reflect" if pad_h < x.shape[-2] else "replicate"
        x = F.pad(x, (0, 0, pad_h, pad_h), mode=mode)
    return x


def window_split(x: torch.Tensor, axis: str) -> tuple[torch.Tensor, torch.Tensor]:
    """Split a map into two equal halves along ``axis``."""
    dim = axis_dim(axis)
    n = x.shape[dim]
    if n % 2:
        raise ConfigError(
            f"{axis} length {n} is odd; window halving needs even dims "
            f"(pad or resize the input)"
        )
    a, b = torch.split(x, n // 2, dim=dim)
    return a, b


def window_merge(a: torch.Tensor, b: torch.Tensor, axis: str) -> torch.Tensor:
    """Concatenate two half-maps back along ``axis`` (inverse of window_split)."""
    if a.shape != b.shape:
        raise ConfigError(f"half shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    return torch.cat([a, b], dim=axis_dim(axis))


class StarReLU(nn.Module):
    """Squared ReLU with a learnable scalar scale and offset: s * relu(x)^2 + b."""

    def __init__(self, scale: float = 1.0, bias: float = 0.0):
        super().__init__()
        self.scale = nn.Parameter(torch.tensor(float(scale)))
        self.bias = nn.Parameter(torch.tensor(float(bias)))

    def forward(self, x):
        return self.scale * F.relu(x) ** 2 + self.bias


class ChannelLayerNorm(nn.Module):
    """Layer normalization over the channel dim at each spatial site (gain only)."""

    def __init__(self, channels: int, eps: float = 1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.eps = eps

    def forward(self, x):
        mu = x.mean(dim=-3, keepdim=True)
        var = x.var(dim=-3, keepdim=True, unbiased=False)
        y = (x - mu) / torch.sqrt(var + self.eps)
        return y * self.weight.view(-1, 1, 1)


class SphericalConv(nn.Module):
    """Conv2d preceded by spherical padding; output size = ceil(in/stride)."""

    def __init__(self, in_channels, out_channels, kernel_size, stride=1, bias=False):
        super().__init__()
        self.in_channels = in_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.conv = nn.Conv2d(
            in_channels, out_channels, kernel_size, stride=stride, padding=0, bias=bias
        )

    def forward(self, x):
        if x.shape[-3] != self.in_channels:
            raise ConfigError(
                f"expected {self.in_channels} input channels, got {x.shape[-3]}"
            )
        ph = same_side_pad(self.kernel_size, self.stride, x.shape[-2])
        pw = same_side_pad(self.kernel_size, self.stride, x.shape[-1])
        if pw > x.shape[-1]:
            raise ConfigError(
                f"width {x.shape[-1]} too small for kernel {self.kernel_size}"
            )
        squeeze = x.dim() == 3
        if squeeze:
            x = x.unsqueeze(0)
        y = self.conv(_conv_pad(x, ph, pw))
        return y.squeeze(0) if squeeze else y


class GatedConv(nn.Module):
    """Convolution modulated by a learned sigmoid gate.

    ``y = act(conv_feature(x)) * sigmoid(conv_gate(x))``. The feature branch
    carries no bias (block convention); the gate keeps one so it has a usable
    operating point.
    """

    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1):
        super().__init__()
        self.feature = SphericalConv(in_channels, out_channels, kernel_size, stride, bias=False)
        self.gate = SphericalConv(in_channels, out_channels, kernel_size, stride, bias=True)
        self.act = StarReLU()

    def forward(self, x):
        return self.act(self.feature(x)) * torch.sigmoid(self.gate(x))
