"""Command-line surface: train, eval, inpaint, make-masks, toy-data, report."""

from __future__ import annotations

import logging
import os
from pathlib import Path

import click
import torch
import yaml

from .core_ops import ConfigError
from .data import (
    load_image,
    load_mask_png,
    load_scene,
    save_image,
    save_mask_png,
    scan_split,
    write_toy_corpus,
)
from .generator import composite as composite_images
from .masks import MaskGenerationError, MaskKind, MaskSpec, make_mask
from .metrics import MetricsReport, evaluate
from .report import write_report
from .training import TrainConfig, ablation_preset, fit, load_generator

log = logging.getLogger(__name__)

DATA_ROOT_ENV = "WFM_DATA_ROOT"


def _parse_size(value: str) -> tuple[int, int]:
    try:
        w, h = value.lower().split("x")
        return int(w), int(h)
    except ValueError as exc:
        raise click.BadParameter(f"expected WxH, got {value!r}") from exc


def _parse_interval(value: str) -> tuple[float, float]:
    try:
        lo, hi = (float(p) for p in value.split(","))
        return lo, hi
    except ValueError as exc:
        raise click.BadParameter(f"expected lo,hi, got {value!r}") from exc


def _data_root(explicit):
    root = explicit or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise click.UsageError(
            f"no dataset root: pass --data or set {DATA_ROOT_ENV}"
        )
    return root


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
def main(verbose):
    """Panorama inpainting with windowed Fourier token mixers."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="YAML training config (TrainConfig fields).")
@click.option("--preset", default=None, help="Ablation preset applied on top.")
@click.option("--resume", type=click.Path(exists=True), default=None,
              help="Checkpoint to resume from.")
def train(config_path, preset, resume):
    """Train the inpainting model."""
    try:
        if config_path is None and resume:
            config = None  # continue under the checkpoint's own config
        else:
            payload = {}
            if config_path:
                payload = yaml.safe_load(Path(config_path).read_text()) or {}
            config = TrainConfig.from_dict(payload)
            if preset:
                config = ablation_preset(preset, config)
            if config.data_root is None:
                config = TrainConfig.from_dict(
                    {**config.to_dict(), "data_root": _data_root(None)}
                )
        trainer = fit(config, resume=resume)
    except ConfigError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"trained {trainer.step} steps; checkpoints in {trainer.config.out_dir}")


@main.command("eval")
@click.option("--ckpt", type=click.Path(exists=True), required=True)
@click.option("--data", type=click.Path(), default=None)
@click.option("--split", default="test", show_default=True)
@click.option("--composite", is_flag=True,
              help="Paste predictions into the hole before scoring.")
@click.option("--limit", type=int, default=None, help="Cap the number of scenes.")
@click.option("--out", "out_path", type=click.Path(), default="metrics.json",
              show_default=True)
def eval_cmd(ckpt, data, split, composite, limit, out_path):
    """Score a checkpoint over the mask-kind x ratio-interval grid."""
    root = _data_root(data)
    generator, config = load_generator(ckpt)
    records = scan_split(root, split, config.lighting)
    if limit:
        records = records[:limit]
    pairs = (load_scene(r, config.height, config.width) for r in records)

    def infer(image, mask):
        with torch.no_grad():
            out = generator.inpaint(torch.from_numpy(image), torch.from_numpy(mask))
        return out.numpy()

    try:
        report = evaluate(infer, pairs, composite=composite, seed=config.seed)
    except ConfigError as exc:
        raise click.ClickException(str(exc)) from exc
    Path(out_path).write_text(report.to_json())
    click.echo(report.to_markdown())
    click.echo(f"wrote {out_path}")


@main.command()
@click.option("--ckpt", type=click.Path(exists=True), required=True)
@click.option("--image", "image_path", type=click.Path(exists=True), required=True)
@click.option("--mask", "mask_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--composite", is_flag=True, help="Keep original pixels outside the hole.")
def inpaint(ckpt, image_path, mask_path, out_path, composite):
    """Inpaint one panorama (mask PNG: 255 = hole)."""
    generator, config = load_generator(ckpt)
    image = load_image(image_path)
    mask = load_mask_png(mask_path)
    if image.shape[-2:] != mask.shape[-2:]:
        raise click.ClickException(
            f"image {image.shape[-2:]} and mask {mask.shape[-2:]} dims differ"
        )
    img_t = torch.from_numpy(image)
    mask_t = torch.from_numpy(mask)
    try:
        with torch.no_grad():
            pred = generator.inpaint(img_t, mask_t)
        if composite:
            pred = composite_images(img_t, pred, mask_t)
    except ConfigError as exc:
        raise click.ClickException(str(exc)) from exc
    save_image(out_path, pred.numpy())
    click.echo(f"wrote {out_path}")


@main.command("make-masks")
@click.option("--kind", type=click.Choice([k.value for k in MaskKind]), required=True)
@click.option("--interval", required=True, help="Coverage interval lo,hi (e.g. 0.1,0.2).")
@click.option("--n", type=int, default=1, show_default=True)
@click.option("--size", default="512x256", show_default=True, help="WxH.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--semantic", type=click.Path(exists=True), default=None,
              help="Semantic map PNG (required for segmentation masks).")
def make_masks(kind, interval, n, size, seed, out_dir, semantic):
    """Write hole masks as 8-bit PNGs (255 = hole)."""
    width, height = _parse_size(size)
    lo, hi = _parse_interval(interval)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    semantics = None
    if semantic:
        from .data import load_semantic

        semantics = load_semantic(semantic)
    for i in range(n):
        try:
            spec = MaskSpec(kind=kind, height=height, width=width, lo=lo, hi=hi, seed=seed + i)
            mask = make_mask(spec, semantics=semantics)
        except (ConfigError, MaskGenerationError) as exc:
            raise click.ClickException(str(exc)) from exc
        name = f"{kind}_{round(lo*100)}-{round(hi*100)}_{seed + i:06d}.png"
        save_mask_png(out_dir / name, mask)
    click.echo(f"wrote {n} masks to {out_dir}")


@main.command("toy-data")
@click.option("--n", type=int, default=80, show_default=True)
@click.option("--size", default="128x64", show_default=True, help="WxH (W = 2H).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--val", "n_val", type=int, default=None, help="Validation scene count.")
@click.option("--test", "n_test", type=int, default=None, help="Test scene count.")
def toy_data(n, size, seed, out_dir, n_val, n_test):
    """Render a procedural toy-room corpus."""
    width, height = _parse_size(size)
    try:
        index = write_toy_corpus(out_dir, n, height, width, seed, n_val, n_test)
    except ConfigError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"wrote toy corpus index {index}")


@main.command()
@click.option("--in", "in_path", type=click.Path(exists=True), required=True,
              help="metrics.json produced by eval.")
@click.option("--format", "fmt", type=click.Choice(["csv", "md"]), default="csv",
              show_default=True)
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Output directory (default: next to the input).")
def report(in_path, fmt, out_dir):
    """Format an eval report and render its figures."""
    in_path = Path(in_path)
    report_obj = MetricsReport.from_json(in_path.read_text())
    out = Path(out_dir) if out_dir else in_path.parent
    written = write_report(report_obj, out, fmt)
    for path in written:
        click.echo(f"wrote {path}")


if __name__ == "__main__":
    main()
