"""Bi-temporal patch pipeline: ingestion, synthesis, degradation, splits, augmentation.

Images are numpy float32 arrays of shape (H, W, 3) with values in [0, 1];
change masks are (H, W) uint8 arrays with values in {0, 1}.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image


class DataError(ValueError):
    """Raised for malformed scenes, masks, or dataset layouts."""


def _check_image(img: np.ndarray, name: str) -> None:
    if img.ndim != 3 or img.shape[2] != 3:
        raise DataError(f"{name} must have shape (H, W, 3), got {img.shape}")
    if img.min() < 0.0 or img.max() > 1.0:
        raise DataError(f"{name} values must lie in [0, 1]")


def _check_mask(mask: np.ndarray, name: str) -> None:
    if mask.ndim != 2:
        raise DataError(f"{name} must have shape (H, W), got {mask.shape}")
    if mask.dtype.kind not in "iub":
        raise DataError(f"{name} must have an integer dtype, got {mask.dtype}")
    if ((mask != 0) & (mask != 1)).any():
        raise DataError(f"{name} must be binary")


@dataclass
class RawScenePair:
    """Full-scene bi-temporal pair with its change ground truth."""

    image_t1: np.ndarray
    image_t2: np.ndarray
    gt_mask: np.ndarray
    name: str = "scene"

    def __post_init__(self):
        _check_image(self.image_t1, "image_t1")
        _check_image(self.image_t2, "image_t2")
        _check_mask(self.gt_mask, "gt_mask")
        if not (self.image_t1.shape[:2] == self.image_t2.shape[:2] == self.gt_mask.shape):
            raise DataError(
                "scene/mask size mismatch: "
                f"{self.image_t1.shape[:2]} / {self.image_t2.shape[:2]} / {self.gt_mask.shape}"
            )


@dataclass
class PatchPair:
    """One training-ready patch: HR pair, simulated LR input, bicubic baseline, gt."""

    hr_t1: np.ndarray
    hr_t2: np.ndarray
    lr_t2: np.ndarray
    bicubic_t2: np.ndarray
    gt: np.ndarray
    patch_id: str
    source: str = ""
    row: int = 0
    col: int = 0


@dataclass
class DatasetSplit:
    train: list = field(default_factory=list)
    val: list = field(default_factory=list)
    test: list = field(default_factory=list)
    split_seed: int = 0


def crop_to_patches(scene: RawScenePair, patch_size: int):
    """Cut a scene into non-overlapping patch_size squares in row-major order.

    Trailing remainder rows/columns are discarded. Returns
    (hr_t1, hr_t2, gt, row_offset, col_offset) tuples.
    """
    if patch_size < 16:
        raise DataError(f"patch_size must be >= 16, got {patch_size}")
    h, w = scene.gt_mask.shape
    if h < patch_size or w < patch_size:
        raise DataError(f"scene {h}x{w} smaller than one {patch_size} patch")
    out = []
    for i in range(h // patch_size):
        for j in range(w // patch_size):
            r, c = i * patch_size, j * patch_size
            out.append((
                scene.image_t1[r:r + patch_size, c:c + patch_size],
                scene.image_t2[r:r + patch_size, c:c + patch_size],
                scene.gt_mask[r:r + patch_size, c:c + patch_size],
                r, c,
            ))
    return out


def split_dataset(patches: list, ratios=(8, 1, 1), seed: int = 0) -> DatasetSplit:
    """Deterministic shuffled split. val/test sizes are floored, remainder to train."""
    if any(r <= 0 for r in ratios):
        raise DataError("ratios must be positive")
    n = len(patches)
    if n < 3:
        raise DataError(f"need at least 3 patches to split, got {n}")
    total = sum(ratios)
    n_val = int(n * ratios[1] // total)
    n_test = int(n * ratios[2] // total)
    n_train = n - n_val - n_test
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    shuffled = [patches[i] for i in order]
    return DatasetSplit(
        train=shuffled[:n_train],
        val=shuffled[n_train:n_train + n_val],
        test=shuffled[n_train + n_val:],
        split_seed=seed,
    )


def degrade(hr: np.ndarray, n: int, method: str = "bicubic") -> np.ndarray:
    """Downsample an HR image by factor n to simulate the LR acquisition."""
    if n not in (4, 8):
        raise DataError(f"scale factor must be 4 or 8, got {n}")
    h, w = hr.shape[:2]
    if h % n or w % n:
        raise DataError(f"dimensions {h}x{w} not divisible by {n}")
    t = torch.from_numpy(np.ascontiguousarray(hr)).permute(2, 0, 1).unsqueeze(0)
    if method == "bicubic":
        out = F.interpolate(t, scale_factor=1.0 / n, mode="bicubic", antialias=True)
    elif method == "area":
        out = F.interpolate(t, scale_factor=1.0 / n, mode="area")
    else:
        raise DataError(f"unknown degradation method {method!r}")
    out = out.clamp(0.0, 1.0).squeeze(0).permute(1, 2, 0)
    return out.numpy().astype(np.float32)


def bicubic_upsample(lr: np.ndarray, n: int) -> np.ndarray:
    """Bicubic interpolation back to the HR grid; the no-SR baseline input."""
    if n < 1:
        raise DataError(f"scale factor must be >= 1, got {n}")
    if n == 1:
        return lr.astype(np.float32).copy()
    t = torch.from_numpy(np.ascontiguousarray(lr)).permute(2, 0, 1).unsqueeze(0)
    out = F.interpolate(t, scale_factor=float(n), mode="bicubic", align_corners=False)
    out = out.clamp(0.0, 1.0).squeeze(0).permute(1, 2, 0)
    return out.numpy().astype(np.float32)


def make_patch_pair(hr_t1, hr_t2, gt, n: int, patch_id: str, source: str = "",
                    row: int = 0, col: int = 0, method: str = "bicubic") -> PatchPair:
    """Assemble a PatchPair, regenerating lr/bicubic from hr_t2 for the given scale."""
    hr_t1 = np.ascontiguousarray(hr_t1, dtype=np.float32)
    hr_t2 = np.ascontiguousarray(hr_t2, dtype=np.float32)
    gt = np.ascontiguousarray(gt, dtype=np.uint8)
    if n == 1:
        lr = hr_t2.copy()
        bic = hr_t2.copy()
    else:
        lr = degrade(hr_t2, n, method=method)
        bic = bicubic_upsample(lr, n)
    return PatchPair(hr_t1=hr_t1, hr_t2=hr_t2, lr_t2=lr, bicubic_t2=bic, gt=gt,
                     patch_id=patch_id, source=source, row=row, col=col)


def build_patch_pairs(scenes, patch_size: int, n: int, method: str = "bicubic"):
    """Crop every scene and build PatchPairs with stable ids scene/row/col."""
    pairs = []
    for scene in scenes:
        for hr_t1, hr_t2, gt, r, c in crop_to_patches(scene, patch_size):
            pid = f"{scene.name}_{r}_{c}"
            pairs.append(make_patch_pair(hr_t1, hr_t2, gt, n, pid,
                                         source=scene.name, row=r, col=c, method=method))
    return pairs


def augment_rotations(pair: PatchPair, method: str = "bicubic"):
    """Original plus 90/180/270-degree rotations, gt rotated jointly.

    lr/bicubic are regenerated from the rotated hr_t2 rather than rotated.
    """
    h, w = pair.gt.shape
    if h != w:
        raise DataError(f"rotation augmentation needs square patches, got {h}x{w}")
    n = pair.hr_t2.shape[0] // pair.lr_t2.shape[0]
    out = [pair]
    for k, tag in ((1, "r90"), (2, "r180"), (3, "r270")):
        t1 = np.rot90(pair.hr_t1, k, axes=(0, 1))
        t2 = np.rot90(pair.hr_t2, k, axes=(0, 1))
        gt = np.rot90(pair.gt, k, axes=(0, 1))
        out.append(make_patch_pair(t1, t2, gt, n, f"{pair.patch_id}_{tag}",
                                   source=pair.source, row=pair.row, col=pair.col,
                                   method=method))
    return out


@dataclass
class SynthConfig:
    """Knobs for the synthetic change-pair generator."""

    n_pairs: int = 8
    scene_size: int = 64
    shape_count: tuple = (3, 6)
    shape_frac: tuple = (0.125, 0.34)
    change_prob: float = 0.5
    noise_amp: float = 0.01

    def __post_init__(self):
        if self.scene_size <= 0 or self.n_pairs <= 0:
            raise DataError("scene_size and n_pairs must be positive")
        if not 0.0 <= self.change_prob <= 1.0:
            raise DataError(f"change_prob must lie in [0,1], got {self.change_prob}")


def _textured_background(rng, size):
    coarse = rng.uniform(0.35, 0.65, size=(max(size // 8, 2), max(size // 8, 2), 3))
    t = torch.from_numpy(coarse).permute(2, 0, 1).unsqueeze(0)
    bg = F.interpolate(t, size=(size, size), mode="bicubic", align_corners=False)
    return bg.clamp(0.0, 1.0).squeeze(0).permute(1, 2, 0).numpy()


def _random_shape(rng, size, frac=(0.125, 0.34)):
    """Occupancy mask and color for one random rectangle or ellipse."""
    mask = np.zeros((size, size), dtype=bool)
    kind = rng.integers(2)
    lo = max(int(size * frac[0]), 2)
    hi = max(int(size * frac[1]), lo + 1)
    sh = int(rng.integers(lo, hi))
    sw = int(rng.integers(lo, hi))
    r0 = int(rng.integers(0, size - sh))
    c0 = int(rng.integers(0, size - sw))
    if kind == 0:
        mask[r0:r0 + sh, c0:c0 + sw] = True
    else:
        yy, xx = np.mgrid[0:size, 0:size]
        cy, cx = r0 + sh / 2.0, c0 + sw / 2.0
        mask = ((yy - cy) / (sh / 2.0)) ** 2 + ((xx - cx) / (sw / 2.0)) ** 2 <= 1.0
    # dark or bright colors, well separated from the mid-gray background
    color = np.where(rng.random(3) < 0.5, rng.uniform(0.0, 0.15, 3), rng.uniform(0.85, 1.0, 3))
    return mask, color.astype(np.float64)


def compose_pair(bg: np.ndarray, shapes_t1, shapes_t2):
    """Paint shape lists over a shared background; gt marks exactly the pixels
    whose shape occupancy differs between the two timestamps."""

    def paint(shapes):
        img = bg.copy()
        occ = np.zeros(bg.shape[:2], dtype=bool)
        for mask, color in shapes:
            img[mask] = color
            occ |= mask
        return img, occ

    img1, occ1 = paint(shapes_t1)
    img2, occ2 = paint(shapes_t2)
    return img1, img2, (occ1 != occ2).astype(np.uint8)


def synth_generate(config: SynthConfig, seed: int = 0):
    """Deterministic synthetic bi-temporal pairs with exact change ground truth.

    Both timestamps share a textured background; T2 removes or moves a random
    subset of T1's shapes and may add new ones. gt marks exactly the pixels
    where shape occupancy differs between the two timestamps.
    """
    rng = np.random.default_rng(seed)
    scenes = []
    size = config.scene_size
    for idx in range(config.n_pairs):
        bg = _textured_background(rng, size)
        n_shapes = int(rng.integers(config.shape_count[0], config.shape_count[1] + 1))
        shapes_t1, shapes_t2 = [], []
        for _ in range(n_shapes):
            mask, color = _random_shape(rng, size, config.shape_frac)
            shapes_t1.append((mask, color))
            if rng.random() < config.change_prob:
                action = rng.integers(3)  # 0 remove, 1 move, 2 keep + add another
                if action == 0:
                    continue
                if action == 1:
                    shapes_t2.append(_random_shape(rng, size, config.shape_frac))
                    continue
                shapes_t2.append((mask, color))
                shapes_t2.append(_random_shape(rng, size, config.shape_frac))
            else:
                shapes_t2.append((mask, color))

        img1, img2, gt = compose_pair(bg, shapes_t1, shapes_t2)
        if config.noise_amp > 0:
            img1 = img1 + rng.uniform(-config.noise_amp, config.noise_amp, img1.shape)
            img2 = img2 + rng.uniform(-config.noise_amp, config.noise_amp, img2.shape)
        img1 = np.clip(img1, 0.0, 1.0).astype(np.float32)
        img2 = np.clip(img2, 0.0, 1.0).astype(np.float32)
        scenes.append(RawScenePair(img1, img2, gt, name=f"synth{idx:04d}"))
    return scenes


# --- dataset directory layout: {root}/A, {root}/B, {root}/label -----------------

def write_dataset_dir(scenes, root: str) -> None:
    for sub in ("A", "B", "label"):
        os.makedirs(os.path.join(root, sub), exist_ok=True)
    for scene in scenes:
        fname = f"{scene.name}.png"
        _save_png(scene.image_t1, os.path.join(root, "A", fname))
        _save_png(scene.image_t2, os.path.join(root, "B", fname))
        Image.fromarray((scene.gt_mask * 255).astype(np.uint8)).save(
            os.path.join(root, "label", fname))


def load_dataset_dir(root: str):
    """Read scenes from the A/B/label layout; filenames must match across folders."""
    a_dir = os.path.join(root, "A")
    if not os.path.isdir(a_dir):
        raise FileNotFoundError(f"dataset root {root!r} has no A/ directory")
    scenes = []
    for fname in sorted(os.listdir(a_dir)):
        if not fname.lower().endswith((".png", ".tif", ".tiff")):
            continue
        t1 = _load_png(os.path.join(root, "A", fname))
        t2 = _load_png(os.path.join(root, "B", fname))
        lab = np.asarray(Image.open(os.path.join(root, "label", fname)).convert("L"))
        gt = (lab > 127).astype(np.uint8)
        scenes.append(RawScenePair(t1, t2, gt, name=os.path.splitext(fname)[0]))
    if not scenes:
        raise FileNotFoundError(f"no rasters found under {root!r}")
    return scenes


def _save_png(img: np.ndarray, path: str) -> None:
    Image.fromarray((np.clip(img, 0, 1) * 255).round().astype(np.uint8)).save(path)


def _load_png(path: str) -> np.ndarray:
    return (np.asarray(Image.open(path).convert("RGB")).astype(np.float32) / 255.0)


def write_manifest(path: str, pairs, split_of: dict) -> None:
    """Line-delimited patch manifest: patch_id, source file, row, col, split."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["patch_id", "source", "row", "col", "split"])
        for p in pairs:
            w.writerow([p.patch_id, p.source, p.row, p.col, split_of.get(p.patch_id, "")])
