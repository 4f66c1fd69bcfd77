import csv
import math

import numpy as np
import pytest
import torch

from spsr.errors import PluginMissingError, ShapeError
from spsr.metrics import (BT601_WEIGHTS, PSNR_CAP_DB, SSIM_SIGMA, SSIM_WINDOW,
                          EvalReport, EvalRow, evaluate_pairs,
                          external_perceptual_metric, luma, psnr,
                          register_perceptual_plugin, ssim,
                          unregister_perceptual_plugin)


def _luma_np(img):
    arr = img.numpy()
    return 0.299 * arr[0] + 0.587 * arr[1] + 0.114 * arr[2]


def _psnr_oracle(a, b, border, mode):
    x, y = a.numpy().astype(np.float64), b.numpy().astype(np.float64)
    if border:
        x = x[:, border:-border, border:-border]
        y = y[:, border:-border, border:-border]
    if mode == "y":
        x = 0.299 * x[0] + 0.587 * x[1] + 0.114 * x[2]
        y = 0.299 * y[0] + 0.587 * y[1] + 0.114 * y[2]
    mse = np.mean((x - y) ** 2)
    if mse == 0:
        return PSNR_CAP_DB
    return min(10 * math.log10(1 / mse), PSNR_CAP_DB)


def _ssim_plane_oracle(x, y):
    """Direct sliding-window SSIM: loop every valid window position."""
    half = (SSIM_WINDOW - 1) / 2
    coords = np.arange(SSIM_WINDOW) - half
    g = np.exp(-(coords ** 2) / (2 * SSIM_SIGMA ** 2))
    w = np.outer(g, g)
    w /= w.sum()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    h, wd = x.shape
    vals = []
    for r in range(h - SSIM_WINDOW + 1):
        for c in range(wd - SSIM_WINDOW + 1):
            px = x[r:r + SSIM_WINDOW, c:c + SSIM_WINDOW]
            py = y[r:r + SSIM_WINDOW, c:c + SSIM_WINDOW]
            mx, my = (w * px).sum(), (w * py).sum()
            vx = (w * px * px).sum() - mx * mx
            vy = (w * py * py).sum() - my * my
            cov = (w * px * py).sum() - mx * my
            vals.append(((2 * mx * my + c1) * (2 * cov + c2))
                        / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def _ssim_oracle(a, b, border, mode):
    x, y = a.numpy().astype(np.float64), b.numpy().astype(np.float64)
    if border:
        x = x[:, border:-border, border:-border]
        y = y[:, border:-border, border:-border]
    if mode == "y":
        return _ssim_plane_oracle(0.299 * x[0] + 0.587 * x[1] + 0.114 * x[2],
                                  0.299 * y[0] + 0.587 * y[1] + 0.114 * y[2])
    return float(np.mean([_ssim_plane_oracle(x[c], y[c]) for c in range(x.shape[0])]))


def test_luma_matches_weights():
    gen = torch.Generator().manual_seed(0)
    img = torch.rand(3, 6, 7, generator=gen)
    out = luma(img)
    assert out.shape == (1, 6, 7)
    assert np.allclose(out[0].numpy(), _luma_np(img), atol=1e-6)
    assert math.isclose(sum(BT601_WEIGHTS), 1.0, abs_tol=1e-12)


@pytest.mark.parametrize("mode", ["y", "rgb"])
@pytest.mark.parametrize("border", [0, 4])
def test_psnr_matches_oracle_on_random_pairs(mode, border):
    gen = torch.Generator().manual_seed(1)
    for trial in range(20):
        a = torch.rand(3, 24, 30, generator=gen)
        b = (a + 0.1 * torch.randn(3, 24, 30, generator=gen)).clamp(0, 1)
        got = psnr(a, b, border_crop=border, channel_mode=mode)
        want = _psnr_oracle(a, b, border, mode)
        assert got == pytest.approx(want, abs=1e-6), trial


@pytest.mark.parametrize("mode", ["y", "rgb"])
def test_ssim_matches_sliding_window_oracle(mode):
    gen = torch.Generator().manual_seed(2)
    for trial in range(20):
        a = torch.rand(3, 22, 26, generator=gen)
        b = (a + 0.15 * torch.randn(3, 22, 26, generator=gen)).clamp(0, 1)
        got = ssim(a, b, border_crop=4, channel_mode=mode)
        want = _ssim_oracle(a, b, 4, mode)
        assert got == pytest.approx(want, abs=1e-5), trial


def test_identical_images_hit_the_caps():
    img = torch.rand(3, 20, 20, generator=torch.Generator().manual_seed(3))
    assert psnr(img, img.clone()) == PSNR_CAP_DB
    assert ssim(img, img.clone()) == pytest.approx(1.0, abs=1e-12)


def test_psnr_known_offset():
    a = torch.zeros(3, 20, 20)
    b = torch.full((3, 20, 20), 0.1)
    # MSE = 0.01 in any channel mode -> 20 dB (up to float32 rounding of 0.1)
    assert psnr(a, b, border_crop=0, channel_mode="rgb") == pytest.approx(20.0, abs=1e-6)
    assert psnr(a, b, border_crop=0, channel_mode="y") == pytest.approx(20.0, abs=1e-6)


def test_metrics_monotone_in_noise():
    gen = torch.Generator().manual_seed(4)
    a = torch.rand(3, 32, 32, generator=gen)
    noise = torch.randn(3, 32, 32, generator=gen)
    psnrs, ssims = [], []
    for amp in (0.02, 0.05, 0.1, 0.2):
        noisy = (a + amp * noise).clamp(0, 1)
        psnrs.append(psnr(a, noisy))
        ssims.append(ssim(a, noisy))
    assert psnrs == sorted(psnrs, reverse=True)
    assert ssims == sorted(ssims, reverse=True)


def test_shape_and_mode_errors():
    a = torch.rand(3, 16, 16)
    with pytest.raises(ShapeError):
        psnr(a, torch.rand(3, 16, 17))
    with pytest.raises(ShapeError):
        psnr(a.unsqueeze(0), a.unsqueeze(0))
    with pytest.raises(ShapeError):
        psnr(a, a, channel_mode="yuv")
    with pytest.raises(ShapeError):
        psnr(torch.rand(1, 16, 16), torch.rand(1, 16, 16), channel_mode="y")
    with pytest.raises(ShapeError):
        psnr(a, a, border_crop=8)  # nothing left
    with pytest.raises(ShapeError):
        ssim(torch.rand(3, 14, 14), torch.rand(3, 14, 14))  # < window after crop
    with pytest.raises(ShapeError):
        psnr(a, a, border_crop=-1)
    # rgb mode accepts single-channel images
    g = torch.rand(1, 16, 16)
    assert psnr(g, g, border_crop=0, channel_mode="rgb") == PSNR_CAP_DB


def test_perceptual_plugin_registry():
    calls = []

    def fake_metric(a, b):
        calls.append((a.shape, b.shape))
        return 0.125

    register_perceptual_plugin("toy", fake_metric)
    try:
        a, b = torch.rand(3, 8, 8), torch.rand(3, 8, 8)
        assert external_perceptual_metric(a, b, "toy") == 0.125
        assert calls == [((3, 8, 8), (3, 8, 8))]
        with pytest.raises(PluginMissingError) as err:
            external_perceptual_metric(a, b, "lpips")
        assert "toy" in str(err.value)
    finally:
        unregister_perceptual_plugin("toy")
    with pytest.raises(PluginMissingError):
        external_perceptual_metric(a, b, "toy")


def test_evaluate_pairs_and_csv(tmp_path):
    gen = torch.Generator().manual_seed(5)
    register_perceptual_plugin("neg_mse", lambda a, b: -float(((a - b) ** 2).mean()))
    try:
        pairs = []
        for i in range(3):
            ref = torch.rand(3, 24, 24, generator=gen)
            out = (ref + 0.05 * torch.randn(3, 24, 24, generator=gen)).clamp(0, 1)
            pairs.append((f"img_{i}", out, ref))
        report = evaluate_pairs(pairs, border_crop=4, channel_mode="y",
                                plugins=["neg_mse"])
        assert len(report.rows) == 3
        assert report.mean_psnr == pytest.approx(
            sum(r.psnr for r in report.rows) / 3)
        assert report.mean_extra("neg_mse") < 0

        csv_path = tmp_path / "reports" / "metrics.csv"
        report.write_csv(csv_path)
        with open(csv_path) as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["image_id", "psnr", "ssim", "neg_mse"]
        assert [r[0] for r in rows[1:]] == ["img_0", "img_1", "img_2", "mean"]
        assert float(rows[-1][1]) == pytest.approx(report.mean_psnr, abs=1e-3)
    finally:
        unregister_perceptual_plugin("neg_mse")
    with pytest.raises(ShapeError):
        evaluate_pairs([])


def test_report_mean_helpers():
    rows = [EvalRow("a", 30.0, 0.9, {"x": 1.0}), EvalRow("b", 34.0, 0.7, {"x": 3.0})]
    rep = EvalReport(rows, 4, "y", ["x"])
    assert rep.mean_psnr == 32.0
    assert rep.mean_ssim == pytest.approx(0.8)
    assert rep.mean_extra("x") == 2.0
