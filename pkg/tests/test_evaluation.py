import math

import numpy as np
import pytest

from srcd.evaluation import (ConfusionCounts, MetricReport, confusion, metrics,
                             psnr, ssim, write_report_csv, write_report_text)


def loop_confusion(pred, gt):
    tp = fp = tn = fn = 0
    for p, g in zip(pred.ravel(), gt.ravel()):
        if p and g:
            tp += 1
        elif p and not g:
            fp += 1
        elif not p and not g:
            tn += 1
        else:
            fn += 1
    return tp, fp, tn, fn


class TestConfusion:
    def test_all_ones(self):
        ones = np.ones((10, 10), dtype=np.uint8)
        c = confusion(ones, ones)
        assert (c.tp, c.fp, c.tn, c.fn) == (100, 0, 0, 0)

    def test_all_false_alarms(self):
        c = confusion(np.ones((10, 10), dtype=np.uint8), np.zeros((10, 10), dtype=np.uint8))
        assert (c.tp, c.fp, c.tn, c.fn) == (0, 100, 0, 0)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            pred = (rng.random((16, 16)) < 0.5).astype(np.uint8)
            gt = (rng.random((16, 16)) < 0.5).astype(np.uint8)
            c = confusion(pred, gt)
            assert (c.tp, c.fp, c.tn, c.fn) == loop_confusion(pred, gt)

    def test_additivity(self):
        rng = np.random.default_rng(1)
        patches = [((rng.random((8, 8)) < 0.5).astype(np.uint8),
                    (rng.random((8, 8)) < 0.5).astype(np.uint8)) for _ in range(5)]
        total = confusion(np.concatenate([p for p, _ in patches]),
                          np.concatenate([g for _, g in patches]))
        summed = ConfusionCounts()
        for p, g in patches:
            summed = summed + confusion(p, g)
        assert (total.tp, total.fp, total.tn, total.fn) == \
               (summed.tp, summed.fp, summed.tn, summed.fn)

    def test_non_binary_rejected(self):
        with pytest.raises(ValueError):
            confusion(np.full((4, 4), 2), np.zeros((4, 4), dtype=np.uint8))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            confusion(np.zeros((4, 4), dtype=np.uint8), np.zeros((4, 5), dtype=np.uint8))


class TestMetrics:
    def test_direct_substitution(self):
        p, r, f1, iou = metrics(ConfusionCounts(tp=50, fp=10, tn=0, fn=10))
        assert p == pytest.approx(5 / 6)
        assert r == pytest.approx(5 / 6)
        assert f1 == pytest.approx(5 / 6)
        assert iou == pytest.approx(50 / 70)

    def test_perfect_prediction(self):
        assert metrics(ConfusionCounts(tp=10, tn=90)) == (1.0, 1.0, 1.0, 1.0)

    def test_all_negative_convention(self):
        assert metrics(ConfusionCounts(tn=100)) == (1.0, 1.0, 1.0, 1.0)

    def test_one_sided_zero(self):
        # gt empty but prediction fires: precision 0
        p, r, f1, iou = metrics(ConfusionCounts(fp=5, tn=95))
        assert p == 0.0 and f1 == 0.0 and iou == 0.0
        # prediction empty but gt has positives: recall 0
        p, r, f1, iou = metrics(ConfusionCounts(fn=5, tn=95))
        assert r == 0.0 and f1 == 0.0 and iou == 0.0

    def test_f1_iou_identity(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            c = ConfusionCounts(*(int(v) for v in rng.integers(0, 50, 4)))
            p, r, f1, iou = metrics(c)
            assert 0.0 <= min(p, r, f1, iou) and max(p, r, f1, iou) <= 1.0
            assert f1 == pytest.approx(2 * iou / (1 + iou), abs=1e-9)
            assert iou <= f1 + 1e-12


class TestPsnr:
    def test_identity_capped(self):
        img = np.random.default_rng(0).random((16, 16, 3))
        assert psnr(img, img) == 100.0

    def test_known_mse(self):
        a = np.zeros((10, 10))
        b = np.full((10, 10), 0.1)  # MSE 0.01
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)
        b = np.full((10, 10), 0.01)  # MSE 1e-4
        assert psnr(a, b) == pytest.approx(40.0, abs=1e-9)

    def test_noise_monotonicity(self):
        rng = np.random.default_rng(3)
        img = rng.random((32, 32, 3)) * 0.5 + 0.25
        noise = rng.standard_normal(img.shape)
        vals = [psnr(img, img + amp * noise) for amp in (0.01, 0.02, 0.04, 0.08, 0.16)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((4, 4)), np.zeros((4, 5)))


def loop_ssim(a, b, size=11, sigma=1.5):
    """Straightforward windowed reference: explicit loops over window positions."""
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    win = np.outer(g, g)
    win /= win.sum()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    h, w = a.shape
    vals = []
    for i in range(h - size + 1):
        for j in range(w - size + 1):
            pa = a[i:i + size, j:j + size]
            pb = b[i:i + size, j:j + size]
            mu_a = (win * pa).sum()
            mu_b = (win * pb).sum()
            var_a = (win * pa * pa).sum() - mu_a ** 2
            var_b = (win * pb * pb).sum() - mu_b ** 2
            cov = (win * pa * pb).sum() - mu_a * mu_b
            vals.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                        / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))
    return float(np.mean(vals))


class TestSsim:
    def test_identity(self):
        img = np.random.default_rng(0).random((16, 16))
        assert ssim(img, img) == pytest.approx(1.0, abs=1e-6)

    def test_constant_luminance_gap(self):
        a = np.zeros((16, 16))
        b = np.ones((16, 16))
        val = ssim(a, b)
        assert val < 0.01
        assert val == pytest.approx(loop_ssim(a, b), abs=1e-9)

    def test_matches_loop_reference(self):
        rng = np.random.default_rng(4)
        a = rng.random((14, 18))
        b = rng.random((14, 18))
        assert ssim(a, b) == pytest.approx(loop_ssim(a, b), abs=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            a = rng.random((16, 16, 3))
            b = rng.random((16, 16, 3))
            assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-9)

    def test_range(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            v = ssim(rng.random((12, 12)), rng.random((12, 12)))
            assert -1.0 <= v <= 1.0

    def test_too_small_rejected(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))


class TestReports:
    def test_csv_and_text(self, tmp_path):
        rows = [{"variant": "Base", "mode": "X4", "precision": 0.5, "recall": 0.25,
                 "f1": 1 / 3, "iou": 0.2, "psnr_sr": float("nan"),
                 "ssim_sr": float("nan"), "psnr_bicubic": float("nan"),
                 "ssim_bicubic": float("nan")}]
        csv_path = tmp_path / "r.csv"
        txt_path = tmp_path / "r.txt"
        write_report_csv(str(csv_path), rows)
        write_report_text(str(txt_path), rows)
        lines = csv_path.read_text().strip().splitlines()
        assert lines[0].startswith("variant,mode,precision")
        assert lines[1].startswith("Base,X4,0.5")
        assert "Base" in txt_path.read_text()
