"""Change-detection metrics (precision/recall/F1/IoU), restoration metrics
(PSNR/SSIM), split evaluation, and report rendering."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .cd import distance_map, threshold_segment

PSNR_CAP_DB = 100.0


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class MetricReport:
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    iou: float = 0.0
    psnr_sr: float = float("nan")
    ssim_sr: float = float("nan")
    psnr_bicubic: float = float("nan")
    ssim_bicubic: float = float("nan")
    per_patch: list = field(default_factory=list)


def confusion(pred: np.ndarray, gt: np.ndarray) -> ConfusionCounts:
    """Pixel-wise confusion counts; the positive class is changed (1)."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    for name, arr in (("pred", pred), ("gt", gt)):
        if not np.all(np.isin(arr, [0, 1])):
            raise ValueError(f"{name} must be binary")
    p = pred.astype(bool)
    g = gt.astype(bool)
    return ConfusionCounts(
        tp=int(np.count_nonzero(p & g)),
        fp=int(np.count_nonzero(p & ~g)),
        tn=int(np.count_nonzero(~p & ~g)),
        fn=int(np.count_nonzero(~p & g)),
    )


def metrics(c: ConfusionCounts):
    """precision, recall, f1, iou with the all-negative convention.

    When neither gt nor prediction contains positives all four metrics are 1;
    a zero denominator with positives elsewhere yields 0 for that ratio.
    """
    if c.tp == 0 and c.fp == 0 and c.fn == 0:
        return 1.0, 1.0, 1.0, 1.0
    precision = c.tp / (c.tp + c.fp) if (c.tp + c.fp) else 0.0
    recall = c.tp / (c.tp + c.fn) if (c.tp + c.fn) else 0.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) else 0.0
    iou = c.tp / (c.tp + c.fp + c.fn)
    return precision, recall, f1, iou


def psnr(a: np.ndarray, b: np.ndarray, max_val: float = 1.0) -> float:
    """10 log10(max_val^2 / MSE) in dB, capped at 100 dB for identical inputs.

    MSE is taken over all channels jointly.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(max_val ** 2 / mse), PSNR_CAP_DB)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Windowed structural similarity: 11x11 Gaussian window, sigma 1.5,
    C1=(0.01)^2, C2=(0.03)^2 for unit dynamic range; color inputs are
    converted to grayscale by channel mean."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 3:
        a = a.mean(axis=2)
        b = b.mean(axis=2)
    if a.shape[0] < 11 or a.shape[1] < 11:
        raise ValueError(f"images {a.shape} smaller than the 11x11 window")
    win = torch.from_numpy(_gaussian_window()).reshape(1, 1, 11, 11)
    x = torch.from_numpy(a).reshape(1, 1, *a.shape)
    y = torch.from_numpy(b).reshape(1, 1, *b.shape)
    mu_x = F.conv2d(x, win)
    mu_y = F.conv2d(y, win)
    mu_x2, mu_y2, mu_xy = mu_x ** 2, mu_y ** 2, mu_x * mu_y
    var_x = F.conv2d(x * x, win) - mu_x2
    var_y = F.conv2d(y * y, win) - mu_y2
    cov = F.conv2d(x * y, win) - mu_xy
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    num = (2 * mu_xy + c1) * (2 * cov + c2)
    den = (mu_x2 + mu_y2 + c1) * (var_x + var_y + c2)
    return float((num / den).mean())


def infer_patch(models, pair, cfg, theta: float):
    """Run one patch through the pipeline; returns (dt, pred, sr or None)."""
    with torch.no_grad():
        hr1 = _to_tensor(pair.hr_t1)
        if cfg.use_srm:
            models.generator.eval()
            sr = models.generator(_to_tensor(pair.lr_t2))
            t2_in = sr
        else:
            sr = None
            t2_in = _to_tensor(pair.hr_t2 if cfg.scale_n == 1 else pair.bicubic_t2)
        models.change_net.eval()
        f1 = models.change_net(hr1)
        f2 = models.change_net(t2_in)
        dt = distance_map(f1, f2, out_size=pair.gt.shape)
        pred = threshold_segment(dt, theta)
    dt_np = dt.squeeze(0).squeeze(0).numpy()
    pred_np = pred.squeeze(0).squeeze(0).numpy()
    sr_np = None if sr is None else sr.squeeze(0).permute(1, 2, 0).numpy()
    return dt_np, pred_np, sr_np


def _to_tensor(img: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(img)).permute(2, 0, 1).unsqueeze(0)


def evaluate_split(models, split_pairs, cfg, theta: float) -> MetricReport:
    """Accumulate confusion over a split globally; with the SR module active also
    report PSNR/SSIM of SR-vs-HR and bicubic-vs-HR."""
    if not split_pairs:
        raise ValueError("cannot evaluate an empty split")
    total = ConfusionCounts()
    psnr_sr, ssim_sr, psnr_bic, ssim_bic = [], [], [], []
    per_patch = []
    for pair in split_pairs:
        dt, pred, sr = infer_patch(models, pair, cfg, theta)
        c = confusion(pred, pair.gt)
        total = total + c
        rec = {"patch_id": pair.patch_id, "tp": c.tp, "fp": c.fp, "tn": c.tn, "fn": c.fn}
        if sr is not None:
            rec["psnr_sr"] = psnr(sr, pair.hr_t2)
            rec["ssim_sr"] = ssim(sr, pair.hr_t2)
            rec["psnr_bicubic"] = psnr(pair.bicubic_t2, pair.hr_t2)
            rec["ssim_bicubic"] = ssim(pair.bicubic_t2, pair.hr_t2)
            psnr_sr.append(rec["psnr_sr"])
            ssim_sr.append(rec["ssim_sr"])
            psnr_bic.append(rec["psnr_bicubic"])
            ssim_bic.append(rec["ssim_bicubic"])
        per_patch.append(rec)
    p, r, f1, iou = metrics(total)
    report = MetricReport(precision=p, recall=r, f1=f1, iou=iou, per_patch=per_patch)
    if psnr_sr:
        report.psnr_sr = float(np.mean(psnr_sr))
        report.ssim_sr = float(np.mean(ssim_sr))
        report.psnr_bicubic = float(np.mean(psnr_bic))
        report.ssim_bicubic = float(np.mean(ssim_bic))
    return report


def write_report_csv(path: str, rows: list) -> None:
    """rows: dicts with variant, mode, P, R, F1, IoU and optional PSNR/SSIM columns."""
    cols = ["variant", "mode", "precision", "recall", "f1", "iou",
            "psnr_sr", "ssim_sr", "psnr_bicubic", "ssim_bicubic"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow(row)


def write_report_text(path: str, rows: list) -> None:
    with open(path, "w") as fh:
        fh.write(f"{'variant':<12}{'mode':<6}{'Pre':>8}{'Rec':>8}{'F1':>8}{'IoU':>8}"
                 f"{'PSNR_sr':>9}{'SSIM_sr':>9}{'PSNR_bic':>10}{'SSIM_bic':>10}\n")
        for r in rows:
            fh.write(f"{r['variant']:<12}{r['mode']:<6}"
                     f"{r['precision']:>8.4f}{r['recall']:>8.4f}"
                     f"{r['f1']:>8.4f}{r['iou']:>8.4f}"
                     f"{_fmt(r.get('psnr_sr')):>9}{_fmt(r.get('ssim_sr')):>9}"
                     f"{_fmt(r.get('psnr_bicubic')):>10}{_fmt(r.get('ssim_bicubic')):>10}\n")


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and v != v):
        return "-"
    return f"{v:.4f}"


def save_distance_png(dt: np.ndarray, margin: float, path: str) -> None:
    """16-bit grayscale rendering: value = clamp(dt/m * 32767)."""
    scaled = np.clip(dt / margin * 32767.0, 0, 65535).astype(np.uint16)
    Image.fromarray(scaled).save(path)


def save_mask_png(mask: np.ndarray, path: str) -> None:
    Image.fromarray((np.asarray(mask) > 0)).convert("1").save(path)
