"""Fourier Units and the windowed Fourier token mixer with its ablation variants.

A Fourier Unit transforms one spatial axis (or both) with a real FFT, mixes
the stacked real/imaginary channels with a single pointwise map shared by all
frequency bins, and transforms back. Constant-per-bin mixing makes the unit a
global operator along the transformed axis while adding only O(C^2) weights.
"""

from __future__ import annotations

import enum

import torch
import torch.nn as nn

from .core_ops import (
    HEIGHT,
    WIDTH,
    ChannelLayerNorm,
    ConfigError,
    GatedConv,
    SphericalConv,
    StarReLU,
    axis_dim,
    window_merge,
    window_split,
)


class MixerVariant(str, enum.Enum):
    WFM = "wfm"
    FM_NO_WINDOW = "fm_no_window"
    WFM_2D = "wfm_2d"
    FFC = "ffc"
    GATED_ONLY = "gated_only"


BOTH = "both"


class FourierUnit(nn.Module):
    """Real FFT along an axis, shared per-bin channel mixing, inverse FFT.

    The mixing map acts on stacked (real, imag) channels with no additive
    bias, so empty frequency bins stay empty. Normalization (channel layer
    norm per bin) and activation (StarReLU) can be bypassed, which makes the
    unit exactly linear for analysis.
    """

    def __init__(self, in_channels, out_channels=None, axis=WIDTH,
                 use_norm=True, use_act=True):
        super().__init__()
        out_channels = in_channels if out_channels is None else out_channels
        if axis not in (HEIGHT, WIDTH, BOTH):
            raise ConfigError(f"unknown transform axis {axis!r}")
        self.axis = axis
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.mix = nn.Conv2d(2 * in_channels, 2 * out_channels, kernel_size=1, bias=False)
        self.norm = ChannelLayerNorm(2 * out_channels) if use_norm else None
        self.act = StarReLU() if use_act else None

    def set_identity_mixing(self):
        """Make the per-bin map the identity (requires in == out channels)."""
        if self.in_channels != self.out_channels:
            raise ConfigError("identity mixing needs matching channel counts")
        with torch.no_grad():
            eye = torch.eye(2 * self.in_channels, dtype=self.mix.weight.dtype)
            self.mix.weight.copy_(eye.view(*eye.shape, 1, 1))

    def forward(self, x):
        if not torch.isfinite(x).all():
            bad = (~torch.isfinite(x)).sum().item()
            raise FloatingPointError(
                f"fourier unit received {bad} non-finite entries "
                f"(shape {tuple(x.shape)}, axis {self.axis})"
            )
        squeeze = x.dim() == 3
        if squeeze:
            x = x.unsqueeze(0)
        h, w = x.shape[-2:]
        for name, n in ((HEIGHT, h), (WIDTH, w)):
            if self.axis in (name, BOTH) and n < 2:
                raise ConfigError(f"{name} length {n} too short to transform (need >= 2)")

        if self.axis == BOTH:
            spec = torch.fft.rfft2(x, dim=(-2, -1), norm="ortho")
        else:
            spec = torch.fft.rfft(x, dim=axis_dim(self.axis), norm="ortho")
        z = torch.cat([spec.real, spec.imag], dim=1)
        z = self.mix(z)
        if self.norm is not None:
            z = self.norm(z)
        if self.act is not None:
            z = self.act(z)
        re, im = torch.chunk(z, 2, dim=1)
        spec = torch.complex(re, im)
        if self.axis == BOTH:
            y = torch.fft.irfft2(spec, s=(h, w), dim=(-2, -1), norm="ortho")
        elif self.axis == HEIGHT:
            y = torch.fft.irfft(spec, n=h, dim=-2, norm="ortho")
        else:
            y = torch.fft.irfft(spec, n=w, dim=-1, norm="ortho")
        return y.squeeze(0) if squeeze else y


def _check_even_dims(x):
    h, w = x.shape[-2:]
    # length-1 axes arise at the deepest stage of small inputs and degrade
    # gracefully; odd lengths >= 3 can only come from contract violations.
    if (h % 2 and h > 1) or (w % 2 and w > 1):
        raise ConfigError(f"spatial dims must be even, got {h}x{w}")


class WFourierMixer(nn.Module):
    """Windowed Fourier token mixer.

    A gated convolution halves the channel count, four branches mix the
    halved map (full-height unit, full-width unit, and the same units applied
    to the two halves of their own axis), and a fusing gated convolution
    restores the input width. Windowed branches reuse the full-map unit of
    the same axis, so windowing adds no weights; with ``use_window=False``
    those branches simply see the full map again.

    Axes too short to window (< 4) fall back to the full-map unit, and
    length-1 axes pass through untransformed, so the deepest stages of small
    inputs still run.
    """

    def __init__(self, channels, use_window=True, use_norm=True, use_act=True):
        super().__init__()
        if channels % 2:
            raise ConfigError(f"mixer needs an even channel count, got {channels}")
        half = channels // 2
        self.use_window = use_window
        self.reduce = GatedConv(channels, half, kernel_size=3)
        self.unit_w = FourierUnit(half, axis=WIDTH, use_norm=use_norm, use_act=use_act)
        self.unit_h = FourierUnit(half, axis=HEIGHT, use_norm=use_norm, use_act=use_act)
        self.fuse = GatedConv(2 * channels, channels, kernel_size=3)

    def _full_branch(self, unit, x, n):
        return unit(x) if n >= 2 else x

    def _window_branch(self, unit, x, axis, n):
        if self.use_window and n >= 4:
            a, b = window_split(x, axis)
            return window_merge(unit(a), unit(b), axis)
        return self._full_branch(unit, x, n)

    def forward(self, x):
        _check_even_dims(x)
        h, w = x.shape[-2:]
        x = self.reduce(x)
        full_w = self._full_branch(self.unit_w, x, w)
        full_h = self._full_branch(self.unit_h, x, h)
        win_w = self._window_branch(self.unit_w, x, WIDTH, w)
        win_h = self._window_branch(self.unit_h, x, HEIGHT, h)
        return self.fuse(torch.cat([full_w, full_h, win_w, win_h], dim=-3))


class Fourier2dMixer(nn.Module):
    """Variant with a single Fourier Unit transforming both axes at once.

    Keeps the windowed weight-sharing idea: the full map and the two width
    halves go through the same 2D unit; the two branches are concatenated and
    fused back by a gated convolution.
    """

    def __init__(self, channels, use_window=True, use_norm=True, use_act=True):
        super().__init__()
        if channels % 2:
            raise ConfigError(f"mixer needs an even channel count, got {channels}")
        half = channels // 2
        self.use_window = use_window
        self.reduce = GatedConv(channels, half, kernel_size=3)
        self.unit = FourierUnit(half, axis=BOTH, use_norm=use_norm, use_act=use_act)
        self.fuse = GatedConv(channels, channels, kernel_size=3)

    def forward(self, x):
        _check_even_dims(x)
        h, w = x.shape[-2:]
        x = self.reduce(x)
        full = self.unit(x) if (h >= 2 and w >= 2) else x
        if self.use_window and w >= 4 and h >= 2:
            a, b = window_split(x, WIDTH)
            win = window_merge(self.unit(a), self.unit(b), WIDTH)
        else:
            win = full
        return self.fuse(torch.cat([full, win], dim=-3))


class FFCMixer(nn.Module):
    """Local/global two-branch mixer in the style of fast Fourier convolutions.

    Channels split into a local half (3x3 convs) and a global half (2D
    Fourier Unit), with cross connections between the branches.
    """

    def __init__(self, channels, use_norm=True, use_act=True):
        super().__init__()
        if channels % 2:
            raise ConfigError(f"mixer needs an even channel count, got {channels}")
        half = channels // 2
        self.half = half
        self.l2l = SphericalConv(half, half, 3)
        self.l2g = SphericalConv(half, half, 3)
        self.g2l = SphericalConv(half, half, 3)
        self.g2g = FourierUnit(half, axis=BOTH, use_norm=use_norm, use_act=use_act)
        self.act_l = StarReLU()
        self.act_g = StarReLU()

    def forward(self, x):
        _check_even_dims(x)
        h, w = x.shape[-2:]
        xl, xg = torch.split(x, self.half, dim=-3)
        spectral = self.g2g(xg) if (h >= 2 and w >= 2) else xg
        out_l = self.act_l(self.l2l(xl) + self.g2l(xg))
        out_g = self.act_g(self.l2g(xl) + spectral)
        return torch.cat([out_l, out_g], dim=-3)


class GatedOnlyMixer(nn.Module):
    """Token mixer built from gated convolutions alone (no spectral path)."""

    def __init__(self, channels):
        super().__init__()
        if channels % 2:
            raise ConfigError(f"mixer needs an even channel count, got {channels}")
        half = channels // 2
        self.reduce = GatedConv(channels, half, kernel_size=3)
        self.mid = GatedConv(half, half, kernel_size=3)
        self.fuse = GatedConv(half, channels, kernel_size=3)

    def forward(self, x):
        return self.fuse(self.mid(self.reduce(x)))


def build_token_mixer(variant, channels, use_norm=True, use_act=True) -> nn.Module:
    """Instantiate the token mixer for a :class:`MixerVariant`."""
    variant = MixerVariant(variant)
    if variant is MixerVariant.WFM:
        return WFourierMixer(channels, use_window=True, use_norm=use_norm, use_act=use_act)
    if variant is MixerVariant.FM_NO_WINDOW:
        return WFourierMixer(channels, use_window=False, use_norm=use_norm, use_act=use_act)
    if variant is MixerVariant.WFM_2D:
        return Fourier2dMixer(channels, use_norm=use_norm, use_act=use_act)
    if variant is MixerVariant.FFC:
        return FFCMixer(channels, use_norm=use_norm, use_act=use_act)
    if variant is MixerVariant.GATED_ONLY:
        return GatedOnlyMixer(channels)
    raise ConfigError(f"unknown mixer variant {variant!r}")
