"""Full-reference metrics and the mask-kind x coverage-interval protocol."""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .core_ops import ConfigError
from .masks import ALL_KINDS, EVAL_INTERVALS, MaskKind, generate_mask

PSNR_CAP_DB = 100.0

# Canonical SSIM parameters: 11x11 Gaussian window, sigma 1.5.
_SSIM_SIGMA = 1.5
_SSIM_RADIUS = 5
_SSIM_C1 = 0.01**2
_SSIM_C2 = 0.03**2


def mae(x, y) -> float:
    """Mean absolute error over all pixels and channels."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    return float(np.abs(x - y).mean())


def psnr(x, y) -> float:
    """Peak signal-to-noise ratio in dB for data range 1.0 (identical images
    report the 100 dB cap)."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    mse = float(((x - y) ** 2).mean())
    if mse == 0.0:
        return PSNR_CAP_DB
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window():
    offsets = np.arange(-_SSIM_RADIUS, _SSIM_RADIUS + 1, dtype=np.float64)
    g = np.exp(-0.5 * (offsets / _SSIM_SIGMA) ** 2)
    g /= g.sum()
    return np.outer(g, g)


_SSIM_WINDOW = _gaussian_window()


def _ssim_channel(a, b):
    win = _SSIM_WINDOW

    def smooth(img):
        return signal.convolve2d(img, win, mode="valid")

    mu_a = smooth(a)
    mu_b = smooth(b)
    var_a = smooth(a * a) - mu_a**2
    var_b = smooth(b * b) - mu_b**2
    cov = smooth(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + _SSIM_C1) * (2 * cov + _SSIM_C2)
    den = (mu_a**2 + mu_b**2 + _SSIM_C1) * (var_a + var_b + _SSIM_C2)
    return float((num / den).mean())


def ssim(x, y) -> float:
    """Mean local structural similarity, channel-averaged.

    Gaussian-weighted local statistics (11x11, sigma 1.5) with the usual
    stabilizer constants; windows that fall off the image are dropped.
    """
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ConfigError(f"shape mismatch {x.shape} vs {y.shape}")
    if x.ndim == 2:
        x, y = x[None], y[None]
    if min(x.shape[-2:]) < 2 * _SSIM_RADIUS + 1:
        raise ConfigError(f"images too small for an 11x11 SSIM window: {x.shape}")
    return float(np.mean([_ssim_channel(xc, yc) for xc, yc in zip(x, y)]))


# ---------------------------------------------------------------------------
# Evaluation grid
# ---------------------------------------------------------------------------


def interval_label(lo: float, hi: float) -> str:
    return f"{round(lo * 100)}-{round(hi * 100)}%"


@dataclass
class MetricsReport:
    """Per (mask kind, coverage interval) metric means plus sample counts."""

    cells: list[dict] = field(default_factory=list)
    composite: bool = False

    def cell(self, kind, interval) -> dict:
        label = interval_label(*interval) if isinstance(interval, tuple) else interval
        kind = MaskKind(kind).value
        for row in self.cells:
            if row["kind"] == kind and row["interval"] == label:
                return row
        raise KeyError(f"no cell for ({kind}, {label})")

    def to_json(self) -> str:
        return json.dumps({"composite": self.composite, "cells": self.cells}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        payload = json.loads(text)
        return cls(cells=payload["cells"], composite=payload.get("composite", False))

    def to_csv(self) -> str:
        lines = ["kind,interval,mae,psnr,ssim,n"]
        for row in self.cells:
            lines.append(
                f"{row['kind']},{row['interval']},{row['mae']:.6f},"
                f"{row['psnr']:.4f},{row['ssim']:.5f},{row['n']}"
            )
        return "\n".join(lines) + "\n"

    def to_markdown(self) -> str:
        lines = [
            "| Mask | Interval | MAE | PSNR | SSIM | n |",
            "|------|----------|-----|------|------|---|",
        ]
        last_kind = None
        for row in self.cells:
            kind = row["kind"] if row["kind"] != last_kind else ""
            last_kind = row["kind"]
            lines.append(
                f"| {kind} | {row['interval']} | {row['mae']:.4f} | "
                f"{row['psnr']:.3f} | {row['ssim']:.4f} | {row['n']} |"
            )
        return "\n".join(lines) + "\n"


def _cell_seed(base_seed: int, kind: str, interval_idx: int, scene_id: str) -> int:
    key = f"{base_seed}:{kind}:{interval_idx}:{scene_id}".encode()
    return zlib.crc32(key)


def evaluate(infer, pairs, kinds=ALL_KINDS, intervals=EVAL_INTERVALS,
             composite=False, seed: int = 0) -> MetricsReport:
    """Run the full mask-kind x interval grid over a dataset.

    ``infer(image, mask) -> image`` maps a (3,H,W) array and a (1,H,W) hole
    mask to a prediction. Masks come from fixed per-(cell, scene) seeds, so
    reports are deterministic and independent of iteration order. Metrics
    are computed on the full prediction unless ``composite`` is set, which
    pastes predicted pixels into the hole first.
    """
    pairs = list(pairs)
    if not pairs:
        raise ConfigError("evaluation dataset is empty")
    from .generator import composite as composite_images  # numpy-compatible

    report = MetricsReport(composite=composite)
    for kind in kinds:
        kind = MaskKind(kind)
        for idx, (lo, hi) in enumerate(intervals):
            sums = {"mae": 0.0, "psnr": 0.0, "ssim": 0.0}
            n = 0
            for pair in pairs:
                rng = np.random.default_rng(_cell_seed(seed, kind.value, idx, pair.scene_id))
                h, w = pair.empty.shape[-2:]
                mask = generate_mask(kind, h, w, lo, hi, rng, semantics=pair.semantics)
                pred = infer(pair.empty, mask)
                if composite:
                    pred = composite_images(pair.empty, pred, mask)
                sums["mae"] += mae(pair.empty, pred)
                sums["psnr"] += psnr(pair.empty, pred)
                sums["ssim"] += ssim(pair.empty, pred)
                n += 1
            report.cells.append({
                "kind": kind.value,
                "interval": interval_label(lo, hi),
                "mae": sums["mae"] / n,
                "psnr": sums["psnr"] / n,
                "ssim": sums["ssim"] / n,
                "n": n,
            })
    return report
