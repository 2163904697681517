"""Adversarial training loop, configuration, checkpoints, ablation presets."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import adversarial as adv
from .adversarial import LossWeights, PatchDiscriminator, build_perceptual_extractor
from .core_ops import ConfigError
from .data import load_scene, make_training_sample, scan_split
from .fourier import MixerVariant
from .generator import GeneratorConfig, PanoGenerator, check_spatial_dims, count_parameters
from .masks import EVAL_INTERVALS, MaskKind, sample_training_mask
from .metrics import evaluate

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1

# Loss scalars every step emits: five generator terms, two discriminator terms.
SCALAR_KEYS = ("g_total", "g_rec", "g_perc", "g_adv", "g_fm", "d_adv", "d_gp")

# Per-epoch validation uses a small fixed grid to bound overhead.
VAL_KINDS = (MaskKind.RECTANGULAR, MaskKind.SEGMENTATION)
VAL_INTERVALS = (EVAL_INTERVALS[1], EVAL_INTERVALS[3])


class TrainingDiverged(RuntimeError):
    """Raised when a loss turns non-finite, with enough context to replay."""


@dataclass
class TrainConfig:
    """Everything the training loop needs; YAML-serializable and flat."""

    height: int = 256
    width: int = 512
    epochs: int = 40
    batch_size: int = 6
    g_lr: float = 1e-3
    d_lr: float = 1e-4
    weight_decay: float = 0.01
    base_channels: int = 64
    blocks_per_stage: tuple[int, int, int, int] = (2, 2, 2, 2)
    mixer: str = "wfm"
    expansion: int = 4
    d_base_channels: int | None = None  # None: proportional to base_channels
    perceptual: str = "desk"
    perceptual_weights: str | None = None
    loss_weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    data_root: str | None = None
    lighting: str = "raw"
    out_dir: str = "runs/default"
    mask_ratio_lo: float = 0.01
    mask_ratio_hi: float = 0.5
    update_order: str = "d_first"
    grad_clip: float | None = None
    max_steps: int | None = None
    val_scenes: int = 8
    cache_scenes: int = 512
    device: str = "cpu"

    def __post_init__(self):
        if isinstance(self.loss_weights, dict):
            self.loss_weights = LossWeights(**self.loss_weights)
        self.blocks_per_stage = tuple(int(b) for b in self.blocks_per_stage)
        self.mixer = MixerVariant(self.mixer).value
        check_spatial_dims(self.height, self.width)
        for name in ("g_lr", "d_lr", "weight_decay"):
            v = getattr(self, name)
            if not (v >= 0 and v == v and v != float("inf")):
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not (0 < self.mask_ratio_lo < self.mask_ratio_hi <= 0.5):
            raise ConfigError(
                f"mask ratio range must satisfy 0 < lo < hi <= 0.5, got "
                f"({self.mask_ratio_lo}, {self.mask_ratio_hi})"
            )
        if self.update_order not in ("d_first", "g_first"):
            raise ConfigError(f"update_order must be d_first or g_first")
        if self.perceptual not in ("hrf", "lrf", "desk"):
            raise ConfigError(f"unknown perceptual mode {self.perceptual!r}")

    def to_dict(self) -> dict:
        payload = asdict(self)
        payload["blocks_per_stage"] = list(self.blocks_per_stage)
        return payload

    @classmethod
    def from_dict(cls, payload: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "loss_weights" in payload and isinstance(payload["loss_weights"], dict):
            extra = set(payload["loss_weights"]) - set(LossWeights.__dataclass_fields__)
            if extra:
                raise ConfigError(f"unknown loss_weights keys: {sorted(extra)}")
        return cls(**payload)

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(
            base_channels=self.base_channels,
            blocks_per_stage=self.blocks_per_stage,
            mixer=self.mixer,
            expansion=self.expansion,
        )


# Config axes the ablation presets toggle; "wfm" is the baseline.
ABLATION_PRESETS = {
    "wfm": {},
    "fm_no_window": {"mixer": "fm_no_window"},
    "wfm_2d": {"mixer": "wfm_2d"},
    "ffc": {"mixer": "ffc"},
    "gated_only": {"mixer": "gated_only"},
    "lrfpl": {"perceptual": "lrf"},
}


def ablation_preset(name: str, base: TrainConfig | None = None) -> TrainConfig:
    """Return a config differing from the baseline only along the named axis."""
    if name not in ABLATION_PRESETS:
        raise ConfigError(
            f"unknown preset {name!r}; available: {sorted(ABLATION_PRESETS)}"
        )
    base = base if base is not None else TrainConfig()
    return replace(base, **ABLATION_PRESETS[name])


def _make_optimizer(module, lr, weight_decay):
    decay, no_decay = [], []
    for p in module.parameters():
        if not p.requires_grad:
            continue
        (decay if p.ndim >= 2 else no_decay).append(p)
    return torch.optim.AdamW(
        [
            {"params": decay, "weight_decay": weight_decay},
            {"params": no_decay, "weight_decay": 0.0},
        ],
        lr=lr,
    )


class Trainer:
    """Owns the models, optimizers and rng streams of one training run."""

    def __init__(self, config: TrainConfig):
        self.config = config
        torch.manual_seed(config.seed)
        self.device = torch.device(config.device)
        self.generator = PanoGenerator(config.generator_config()).to(self.device)
        d_base = config.d_base_channels or config.base_channels
        self.discriminator = PatchDiscriminator(base_channels=d_base).to(self.device)
        self.extractor = build_perceptual_extractor(
            config.perceptual, config.perceptual_weights, seed=config.seed
        ).to(self.device)
        self.opt_g = _make_optimizer(self.generator, config.g_lr, config.weight_decay)
        self.opt_d = _make_optimizer(self.discriminator, config.d_lr, config.weight_decay)
        self.mask_rng = np.random.default_rng([config.seed, 0x6D61736B])
        self.epoch = 0
        self.step = 0
        self.history: list[dict] = []
        self.val_history: list[dict] = []
        log.info(
            "trainer ready: generator %.2fM params, discriminator %.2fM params, mixer=%s",
            count_parameters(self.generator) / 1e6,
            count_parameters(self.discriminator) / 1e6,
            config.mixer,
        )

    # -- single step ---------------------------------------------------------

    def _check_finite(self, scalars, context):
        bad = {k: v for k, v in scalars.items() if not np.isfinite(v)}
        if bad:
            raise TrainingDiverged(
                f"non-finite losses {bad} at step {self.step} ({context}); "
                f"seed={self.config.seed}, replay the step with this seed to debug"
            )

    def _update_discriminator(self, x_in, target, mask):
        with torch.no_grad():
            fake = self.generator(x_in)
        logits_real = self.discriminator(target)
        logits_fake = self.discriminator(fake)
        pm = adv.patch_mask(mask, logits_fake)
        d_adv = adv.discriminator_loss(logits_real, logits_fake, pm)
        d_gp = adv.gradient_penalty(target, self.discriminator)
        total = d_adv + self.config.loss_weights.gp * d_gp
        self.opt_d.zero_grad(set_to_none=True)
        total.backward()
        if self.config.grad_clip:
            torch.nn.utils.clip_grad_norm_(
                self.discriminator.parameters(), self.config.grad_clip
            )
        self.opt_d.step()
        return {"d_adv": float(d_adv.detach()), "d_gp": float(d_gp.detach())}

    def _update_generator(self, x_in, target, mask):
        w = self.config.loss_weights
        fake = self.generator(x_in)
        rec = adv.reconstruction_loss(target, fake, mask)
        perc = adv.perceptual_loss(target, fake, self.extractor)
        logits_fake, feats_fake = self.discriminator.forward_with_features(fake)
        g_adv = adv.generator_adv_loss(logits_fake)
        with torch.no_grad():
            feats_real = self.discriminator.features(target)
        fm = adv.feature_matching_loss(feats_real, feats_fake)
        total = adv.total_generator_loss(rec, perc, g_adv, fm, w)
        self.opt_g.zero_grad(set_to_none=True)
        total.backward()
        if self.config.grad_clip:
            torch.nn.utils.clip_grad_norm_(self.generator.parameters(), self.config.grad_clip)
        self.opt_g.step()
        return {
            "g_total": float(total.detach()),
            "g_rec": float(rec.detach()),
            "g_perc": float(perc.detach()),
            "g_adv": float(g_adv.detach()),
            "g_fm": float(fm.detach()),
        }

    def train_step(self, batch) -> dict:
        """One alternating update; returns the seven loss scalars."""
        x_in, target, mask = (t.to(self.device) for t in batch)
        if self.config.update_order == "d_first":
            scalars = self._update_discriminator(x_in, target, mask)
            scalars.update(self._update_generator(x_in, target, mask))
        else:
            scalars = self._update_generator(x_in, target, mask)
            scalars.update(self._update_discriminator(x_in, target, mask))
        self._check_finite(scalars, f"batch shape {tuple(x_in.shape)}")
        self.step += 1
        scalars = {k: scalars[k] for k in SCALAR_KEYS}
        self.history.append({"step": self.step, **scalars})
        return scalars

    # -- data plumbing ---------------------------------------------------------

    def make_batch(self, pairs) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Sample a training mask per scene and collate to tensors."""
        xs, ts, ms = [], [], []
        for pair in pairs:
            h, w = pair.empty.shape[-2:]
            mask = sample_training_mask(
                h, w, self.mask_rng, semantics=pair.semantics,
                ratio_range=(self.config.mask_ratio_lo, self.config.mask_ratio_hi),
            )
            x_in, target, mask = make_training_sample(pair, mask)
            xs.append(torch.from_numpy(x_in))
            ts.append(torch.from_numpy(target))
            ms.append(torch.from_numpy(mask))
        return torch.stack(xs), torch.stack(ts), torch.stack(ms)

    def infer_fn(self):
        """Numpy-facing inference closure over a read-only weight snapshot."""
        gen = self.generator

        def infer(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
            was_training = gen.training
            gen.eval()
            try:
                with torch.no_grad():
                    img_t = torch.from_numpy(np.ascontiguousarray(image)).to(self.device)
                    mask_t = torch.from_numpy(np.ascontiguousarray(mask)).to(self.device)
                    out = gen.inpaint(img_t, mask_t)
            finally:
                gen.train(was_training)
            return out.cpu().numpy()

        return infer

    # -- checkpointing ---------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "format_version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "generator": self.generator.state_dict(),
            "discriminator": self.discriminator.state_dict(),
            "g_opt": self.opt_g.state_dict(),
            "d_opt": self.opt_d.state_dict(),
            "epoch": self.epoch,
            "step": self.step,
            "torch_rng": torch.get_rng_state(),
            "mask_rng": self.mask_rng.bit_generator.state,
            "history": self.history,
            "val_history": self.val_history,
            "param_counts": {
                "generator": count_parameters(self.generator),
                "discriminator": count_parameters(self.discriminator),
            },
        }

    def load_state_dict(self, payload: dict):
        if payload.get("format_version") != CHECKPOINT_VERSION:
            raise ConfigError(
                f"checkpoint version {payload.get('format_version')} unsupported "
                f"(expected {CHECKPOINT_VERSION})"
            )
        self.generator.load_state_dict(payload["generator"])
        self.discriminator.load_state_dict(payload["discriminator"])
        self.opt_g.load_state_dict(payload["g_opt"])
        self.opt_d.load_state_dict(payload["d_opt"])
        self.epoch = payload["epoch"]
        self.step = payload["step"]
        torch.set_rng_state(payload["torch_rng"])
        self.mask_rng.bit_generator.state = payload["mask_rng"]
        self.history = list(payload["history"])
        self.val_history = list(payload["val_history"])


def save_checkpoint(trainer: Trainer, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(trainer.state_dict(), path)
    return path


def load_checkpoint(path, device: str | None = None) -> Trainer:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    config = TrainConfig.from_dict(payload["config"])
    if device is not None:
        config = replace(config, device=device)
    trainer = Trainer(config)
    trainer.load_state_dict(payload)
    return trainer


def load_generator(path, device: str = "cpu") -> tuple[PanoGenerator, TrainConfig]:
    """Load just the generator (and its config) for inference."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    config = TrainConfig.from_dict(payload["config"])
    gen = PanoGenerator(config.generator_config()).to(device)
    gen.load_state_dict(payload["generator"])
    gen.eval()
    return gen, config


# ---------------------------------------------------------------------------
# The epoch loop
# ---------------------------------------------------------------------------


def _batched(order, batch_size):
    for start in range(0, len(order), batch_size):
        yield order[start : start + batch_size]


def fit(config: TrainConfig | None = None, resume: str | None = None) -> Trainer:
    """Train on the configured dataset root; returns the trainer.

    Checkpoints land in ``config.out_dir`` every epoch along with a loss
    history CSV and a loss-curve figure. ``resume`` restores weights,
    optimizer state, counters and rng streams from a checkpoint; the passed
    config (when given) governs the continued run and must be architecture
    compatible. With ``config=None`` the checkpoint's own config is reused.
    """
    if config is None:
        if resume is None:
            raise ConfigError("fit needs a config, a checkpoint to resume, or both")
        payload = torch.load(resume, map_location="cpu", weights_only=False)
        config = TrainConfig.from_dict(payload["config"])
    if config.data_root is None:
        raise ConfigError("config.data_root is required for training")
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    trainer = Trainer(config)
    if resume:
        trainer.load_state_dict(torch.load(resume, map_location="cpu", weights_only=False))

    records = scan_split(config.data_root, "train", config.lighting)
    if not records:
        raise ConfigError(f"no training scenes under {config.data_root}")
    val_records = scan_split(config.data_root, "val", config.lighting)[: config.val_scenes]

    cache = None
    if len(records) <= config.cache_scenes:
        cache = [load_scene(r, config.height, config.width) for r in records]
    val_pairs = [load_scene(r, config.height, config.width) for r in val_records]

    t_start = time.time()
    done = False
    while trainer.epoch < config.epochs and not done:
        order_rng = np.random.default_rng([config.seed, trainer.epoch])
        order = order_rng.permutation(len(records))
        for chunk in _batched(order, config.batch_size):
            if cache is not None:
                pairs = [cache[i] for i in chunk]
            else:
                pairs = [load_scene(records[i], config.height, config.width) for i in chunk]
            scalars = trainer.train_step(trainer.make_batch(pairs))
            if trainer.step % 50 == 0:
                log.info(
                    "step %d: g_total=%.4f g_rec=%.4f d_adv=%.4f",
                    trainer.step, scalars["g_total"], scalars["g_rec"], scalars["d_adv"],
                )
            if config.max_steps is not None and trainer.step >= config.max_steps:
                done = True
                break
        trainer.epoch += 1
        if val_pairs:
            report = evaluate(
                trainer.infer_fn(), val_pairs, kinds=VAL_KINDS, intervals=VAL_INTERVALS,
                seed=config.seed,
            )
            mean_psnr = float(np.mean([c["psnr"] for c in report.cells]))
            trainer.val_history.append(
                {"epoch": trainer.epoch, "step": trainer.step, "psnr": mean_psnr,
                 "cells": report.cells}
            )
            log.info("epoch %d: val psnr %.3f dB", trainer.epoch, mean_psnr)
        save_checkpoint(trainer, out_dir / f"ckpt_epoch_{trainer.epoch:03d}.pt")
        save_checkpoint(trainer, out_dir / "latest.pt")

    _write_history(trainer, out_dir)
    log.info("training finished after %.1fs (%d steps)", time.time() - t_start, trainer.step)
    return trainer


def _write_history(trainer: Trainer, out_dir: Path):
    from .report import render_loss_curves

    lines = ["step," + ",".join(SCALAR_KEYS)]
    for row in trainer.history:
        lines.append(
            f"{row['step']}," + ",".join(f"{row[k]:.6g}" for k in SCALAR_KEYS)
        )
    (out_dir / "loss_history.csv").write_text("\n".join(lines) + "\n")
    if trainer.history:
        render_loss_curves(trainer.history, out_dir / "loss_curves.png")
