"""Scene ingestion: Structured3D-style trees, toy corpora, and IO helpers.

A scene pair couples an empty (clutter-free) panorama with its furnished
rendering and a semantic label map. Masks are applied to empty panoramas
during training; cluttered renders only supply semantics, never pixels,
because the two configurations are lit differently.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from .core_ops import ConfigError

log = logging.getLogger(__name__)

# NYU40-style ids shared by loaders and the toy renderer.
WALL_LABEL = 1
FLOOR_LABEL = 2
CEILING_LABEL = 22
CLUTTER_LABEL = 40
VOID_LABEL = 0
STRUCTURAL_LABELS = (WALL_LABEL, FLOOR_LABEL, CEILING_LABEL)

# Official Structured3D scene-number ranges per split.
SPLIT_RANGES = {"train": (0, 2999), "val": (3000, 3249), "test": (3250, 3499)}
EXPECTED_COUNTS = {"train": 18362, "val": 1776, "test": 1697}

TOY_INDEX = "index.json"
TOY_FORMAT = "wfmixer-toy-v1"


@dataclass
class ScenePair:
    """Empty/cluttered panoramas plus a semantic map, all sharing dims."""

    empty: np.ndarray  # (3, H, W) float32 in [0, 1]
    cluttered: np.ndarray  # (3, H, W) float32 in [0, 1]
    semantics: np.ndarray  # (H, W) int32
    scene_id: str


@dataclass
class SceneRecord:
    scene_id: str
    empty_path: Path
    cluttered_path: Path
    semantic_path: Path
    split: str


# ---------------------------------------------------------------------------
# Image IO
# ---------------------------------------------------------------------------


def load_image(path) -> np.ndarray:
    """PNG/JPEG to float32 (3, H, W) in [0, 1]."""
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)


def save_image(path, image: np.ndarray):
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    arr = (arr.transpose(1, 2, 0) * 255.0).round().astype(np.uint8)
    Image.fromarray(arr).save(path)


def load_semantic(path) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=np.int32)


def save_semantic(path, semantics: np.ndarray):
    Image.fromarray(semantics.astype(np.uint8), mode="L").save(path)


def save_mask_png(path, mask: np.ndarray):
    """Write a hole mask as 8-bit grayscale, 255 = hole, 0 = keep."""
    arr = (np.asarray(mask).reshape(mask.shape[-2:]) * 255).round().astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def load_mask_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("L"), dtype=np.float32)
    return (arr > 127).astype(np.float32)[None, :, :]


def resize_pair(pair: ScenePair, height: int, width: int) -> ScenePair:
    """Area-resize a pair to the configured resolution (nearest for labels)."""
    if pair.empty.shape[1:] == (height, width):
        return pair

    def _resize_img(img):
        hwc = img.transpose(1, 2, 0)
        out = cv2.resize(hwc, (width, height), interpolation=cv2.INTER_AREA)
        return np.clip(out.transpose(2, 0, 1), 0.0, 1.0).astype(np.float32)

    sem = cv2.resize(
        pair.semantics.astype(np.int32), (width, height), interpolation=cv2.INTER_NEAREST
    )
    return ScenePair(
        empty=_resize_img(pair.empty),
        cluttered=_resize_img(pair.cluttered),
        semantics=sem.astype(np.int32),
        scene_id=pair.scene_id,
    )


# ---------------------------------------------------------------------------
# Split scanning and loading
# ---------------------------------------------------------------------------


def _scan_structured3d(root: Path, split: str, lighting: str) -> list[SceneRecord]:
    lo, hi = SPLIT_RANGES[split]
    rgb_name = f"rgb_{lighting}light.png"
    records = []
    for scene_dir in sorted(root.glob("scene_*")):
        m = re.fullmatch(r"scene_(\d+)", scene_dir.name)
        if not m or not (lo <= int(m.group(1)) <= hi):
            continue
        for room_dir in sorted((scene_dir / "2D_rendering").glob("*")):
            pano = room_dir / "panorama"
            empty = pano / "empty" / rgb_name
            full = pano / "full" / rgb_name
            semantic = pano / "full" / "semantic.png"
            scene_id = f"{scene_dir.name}/{room_dir.name}"
            if not empty.exists():
                log.warning("skipping %s: empty-room rendering missing", scene_id)
                continue
            if not full.exists() or not semantic.exists():
                log.warning("skipping %s: cluttered rendering or semantics missing", scene_id)
                continue
            records.append(SceneRecord(scene_id, empty, full, semantic, split))
    return records


def _scan_toy(root: Path, split: str) -> list[SceneRecord]:
    index = json.loads((root / TOY_INDEX).read_text())
    if index.get("format") != TOY_FORMAT:
        raise ConfigError(f"unrecognized toy corpus format in {root / TOY_INDEX}")
    records = []
    for entry in index["scenes"]:
        if entry["split"] != split:
            continue
        records.append(
            SceneRecord(
                scene_id=entry["id"],
                empty_path=root / entry["empty"],
                cluttered_path=root / entry["cluttered"],
                semantic_path=root / entry["semantic"],
                split=split,
            )
        )
    return records


def scan_split(root, split: str, lighting: str = "raw") -> list[SceneRecord]:
    """List the scene records of a split in deterministic (sorted) order."""
    if split not in SPLIT_RANGES:
        raise ConfigError(f"unknown split {split!r}, expected train/val/test")
    root = Path(root)
    if (root / TOY_INDEX).exists():
        records = _scan_toy(root, split)
    else:
        records = _scan_structured3d(root, split, lighting)
        expected = EXPECTED_COUNTS[split]
        if len(records) != expected:
            log.warning(
                "split %s has %d scenes (the full dataset has %d); "
                "proceeding with the local copy",
                split, len(records), expected,
            )
    if not records:
        log.warning("split %s under %s is empty", split, root)
    return sorted(records, key=lambda r: r.scene_id)


def load_scene(record: SceneRecord, height=None, width=None) -> ScenePair:
    pair = ScenePair(
        empty=load_image(record.empty_path),
        cluttered=load_image(record.cluttered_path),
        semantics=load_semantic(record.semantic_path),
        scene_id=record.scene_id,
    )
    if height is not None and width is not None:
        pair = resize_pair(pair, height, width)
    return pair


def load_split(root, split: str, height=None, width=None, lighting: str = "raw"):
    """Iterate the scene pairs of a split in deterministic order."""
    for record in scan_split(root, split, lighting):
        yield load_scene(record, height, width)


def make_training_sample(pair: ScenePair, mask: np.ndarray):
    """Build (network input, target, mask) from a pair and a hole mask.

    The target is the empty panorama; the cluttered render never reaches the
    loss path (it exists for semantics only).
    """
    if mask.shape[-2:] != pair.empty.shape[-2:]:
        raise ConfigError(
            f"mask {mask.shape} does not match scene {pair.empty.shape}"
        )
    masked = pair.empty * (1.0 - mask)
    x_in = np.concatenate([masked, mask], axis=0).astype(np.float32)
    return x_in, pair.empty, mask


# ---------------------------------------------------------------------------
# Procedural toy rooms
# ---------------------------------------------------------------------------


def _ray_directions(height: int, width: int):
    i = (np.arange(height) + 0.5) / height
    j = (np.arange(width) + 0.5) / width
    lat = math.pi * (0.5 - i)  # +pi/2 at the top row
    lon = 2.0 * math.pi * j - math.pi
    lat = lat[:, None] * np.ones((1, width))
    lon = lon[None, :] * np.ones((height, 1))
    dx = np.cos(lat) * np.cos(lon)
    dy = np.cos(lat) * np.sin(lon)
    dz = np.sin(lat)
    return np.stack([dx, dy, dz], axis=0)


def _exit_ts(origin, dirs, lo, hi):
    """Per-axis positive boundary distances for a ray inside an AABB."""
    ts = np.empty_like(dirs)
    for a in range(3):
        d = dirs[a]
        t = np.full(d.shape, np.inf)
        pos = d > 1e-12
        neg = d < -1e-12
        t[pos] = (hi[a] - origin[a]) / d[pos]
        t[neg] = (lo[a] - origin[a]) / d[neg]
        ts[a] = t
    return ts


def _box_entry_t(origin, dirs, lo, hi):
    """Slab-method entry distance to an AABB seen from outside (inf = miss)."""
    t_near = np.full(dirs.shape[1:], -np.inf)
    t_far = np.full(dirs.shape[1:], np.inf)
    for a in range(3):
        d = dirs[a]
        safe = np.where(np.abs(d) < 1e-12, 1e-12, d)
        t1 = (lo[a] - origin[a]) / safe
        t2 = (hi[a] - origin[a]) / safe
        t_near = np.maximum(t_near, np.minimum(t1, t2))
        t_far = np.minimum(t_far, np.maximum(t1, t2))
    hit = (t_near <= t_far) & (t_near > 1e-9)
    return np.where(hit, t_near, np.inf)


def toy_scene(rng, height: int, width: int) -> ScenePair:
    """Render a random textured cuboid room and a cluttered copy of it.

    Per-pixel ray casting from a camera inside the room: the floor carries a
    checker grid, walls carry vertical stripes, the ceiling is plain, and
    1-5 colored boxes rest on the floor in the cluttered render. Structural
    pixels are bit-identical between the two renders.
    """
    if width != 2 * height:
        raise ConfigError(f"equirectangular renders need W = 2H, got {height}x{width}")
    if height < 32:
        raise ConfigError(f"toy scenes need height >= 32, got {height}")

    room = np.array([rng.uniform(3.0, 8.0), rng.uniform(3.0, 8.0), rng.uniform(2.4, 3.5)])
    cam = np.array([
        rng.uniform(0.3, 0.7) * room[0],
        rng.uniform(0.3, 0.7) * room[1],
        rng.uniform(0.35, 0.65) * room[2],
    ])
    dirs = _ray_directions(height, width)
    ts = _exit_ts(cam, dirs, np.zeros(3), room)
    t_room = ts.min(axis=0)
    face_axis = ts.argmin(axis=0)
    hit = cam[:, None, None] + dirs * t_room[None]

    floor_base = rng.uniform(0.25, 0.75, size=3)
    floor_alt = np.clip(floor_base + rng.uniform(-0.25, 0.25, size=3), 0.05, 0.95)
    wall_base = rng.uniform(0.35, 0.85, size=3)
    wall_alt = np.clip(wall_base + rng.uniform(-0.2, 0.2, size=3), 0.05, 0.95)
    ceil_color = rng.uniform(0.6, 0.95, size=3)
    # texture periods stay >= a handful of pixels at desk resolutions; the
    # corpus exists to exercise structural regularity, not microtexture
    grid = rng.uniform(1.2, 3.0)
    stripe = rng.uniform(1.0, 2.5)

    img = np.zeros((3, height, width), dtype=np.float32)
    sem = np.zeros((height, width), dtype=np.int32)

    is_floor = (face_axis == 2) & (dirs[2] < 0)
    is_ceil = (face_axis == 2) & (dirs[2] >= 0)
    is_wall = face_axis != 2

    checker = ((np.floor(hit[0] / grid) + np.floor(hit[1] / grid)) % 2).astype(bool)
    floor_col = np.where(checker[None], floor_alt[:, None, None], floor_base[:, None, None])
    wall_coord = np.where(face_axis == 0, hit[1], hit[0])
    stripes = (np.floor(wall_coord / stripe) % 2).astype(bool)
    wall_col = np.where(stripes[None], wall_alt[:, None, None], wall_base[:, None, None])

    img[:, is_floor] = floor_col[:, is_floor]
    img[:, is_ceil] = ceil_color[:, None]
    img[:, is_wall] = wall_col[:, is_wall]
    sem[is_floor] = FLOOR_LABEL
    sem[is_ceil] = CEILING_LABEL
    sem[is_wall] = WALL_LABEL

    empty = img.copy()
    sem_empty = sem.copy()

    cluttered = img.copy()
    sem_cluttered = sem.copy()
    n_boxes = int(rng.integers(1, 6))
    for _ in range(n_boxes):
        bw = rng.uniform(0.4, 1.6)
        bd = rng.uniform(0.4, 1.6)
        bh = rng.uniform(0.2, min(1.2, 0.8 * cam[2]))
        x0 = rng.uniform(0.0, room[0] - bw)
        y0 = rng.uniform(0.0, room[1] - bd)
        lo = np.array([x0, y0, 0.0])
        hi = np.array([x0 + bw, y0 + bd, bh])
        t_box = _box_entry_t(cam, dirs, lo, hi)
        covered = t_box < t_room
        if not covered.any():
            continue
        color = rng.uniform(0.1, 0.9, size=3)
        cluttered[:, covered] = color[:, None]
        sem_cluttered[covered] = CLUTTER_LABEL

    scene_id = f"toy_{rng.integers(0, 10**9):09d}"
    # empty and cluttered share the structural semantic map by construction
    del sem_empty
    return ScenePair(
        empty=empty.astype(np.float32),
        cluttered=cluttered.astype(np.float32),
        semantics=sem_cluttered,
        scene_id=scene_id,
    )


def write_toy_corpus(out_dir, n: int, height: int, width: int, seed: int = 0,
                     n_val: int | None = None, n_test: int | None = None) -> Path:
    """Render a toy corpus to PNG triplets plus a JSON index; returns the
    index path. The first scenes are train, then val, then test."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if n_val is None:
        n_val = max(1, n // 10)
    if n_test is None:
        n_test = max(1, n // 10)
    if n_val + n_test >= n:
        raise ConfigError(f"cannot carve val={n_val} test={n_test} out of {n} scenes")
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(n):
        pair = toy_scene(rng, height, width)
        split = "train" if i < n - n_val - n_test else ("val" if i < n - n_test else "test")
        stem = f"{i:05d}"
        save_image(out_dir / f"{stem}_empty.png", pair.empty)
        save_image(out_dir / f"{stem}_cluttered.png", pair.cluttered)
        save_semantic(out_dir / f"{stem}_semantic.png", pair.semantics)
        entries.append({
            "id": stem,
            "split": split,
            "empty": f"{stem}_empty.png",
            "cluttered": f"{stem}_cluttered.png",
            "semantic": f"{stem}_semantic.png",
        })
    index = {
        "format": TOY_FORMAT,
        "height": height,
        "width": width,
        "seed": seed,
        "scenes": entries,
    }
    index_path = out_dir / TOY_INDEX
    index_path.write_text(json.dumps(index, indent=2))
    return index_path


def clutter_statistics(pairs) -> dict:
    """Per-scene clutter pixel ratios in 5% bins, with mean and 75th pct."""
    ratios = []
    for pair in pairs:
        sem = pair.semantics
        clutter = ~np.isin(sem, STRUCTURAL_LABELS + (VOID_LABEL,))
        ratios.append(float(clutter.mean()))
    if not ratios:
        raise ConfigError("no scenes to compute clutter statistics from")
    ratios = np.asarray(ratios)
    edges = np.arange(0.0, 1.0001, 0.05)
    counts, _ = np.histogram(ratios, bins=edges)
    return {
        "bin_edges": edges.tolist(),
        "counts": counts.tolist(),
        "mean": float(ratios.mean()),
        "p75": float(np.percentile(ratios, 75)),
        "count": int(ratios.size),
    }
