"""PSNR and SSIM on [0, 1] images, plus a pluggable perceptual-metric hook.

Reporting conventions follow the usual x4 benchmark protocol: crop 4
border pixels per side, convert to luma first. Luma is the full-range
BT.601 weighted sum 0.299 R + 0.587 G + 0.114 B. Because published
evaluation protocols vary in exactly these knobs, every report echoes the
settings it was computed with.
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import torch
import torch.nn.functional as F

from .errors import PluginMissingError, ShapeError

PSNR_CAP_DB = 99.0
BT601_WEIGHTS = (0.299, 0.587, 0.114)
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
CHANNEL_MODES = ("rgb", "y")


def _check_pair(a: torch.Tensor, b: torch.Tensor, channel_mode: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.dim() != 3:
        raise ShapeError(f"expected [C, H, W] images, got {tuple(a.shape)}")
    if channel_mode not in CHANNEL_MODES:
        raise ShapeError(f"channel_mode must be one of {CHANNEL_MODES}, got {channel_mode!r}")
    if channel_mode == "y" and a.shape[0] != 3:
        raise ShapeError(f"luma conversion needs 3 channels, got {a.shape[0]}")


def luma(img: torch.Tensor) -> torch.Tensor:
    """Full-range BT.601 luma of a [3, H, W] image, kept as [1, H, W]."""
    w = torch.tensor(BT601_WEIGHTS, dtype=img.dtype).view(3, 1, 1)
    return (img * w).sum(dim=0, keepdim=True)


def _crop(img: torch.Tensor, border: int) -> torch.Tensor:
    if border < 0:
        raise ShapeError(f"border_crop must be >= 0, got {border}")
    if border == 0:
        return img
    if img.shape[-2] <= 2 * border or img.shape[-1] <= 2 * border:
        raise ShapeError(
            f"image {img.shape[-2]}x{img.shape[-1]} vanishes under a "
            f"{border}-pixel border crop"
        )
    return img[..., border:-border, border:-border]


def psnr(a: torch.Tensor, b: torch.Tensor, border_crop: int = 4,
         channel_mode: str = "y") -> float:
    """10 log10(1 / MSE) in dB, capped at 99 for (near-)identical inputs."""
    _check_pair(a, b, channel_mode)
    a = _crop(a, border_crop)
    b = _crop(b, border_crop)
    if channel_mode == "y":
        a, b = luma(a), luma(b)
    mse = float(((a - b) ** 2).double().mean())
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP_DB)


def _gaussian_window(dtype: torch.dtype) -> torch.Tensor:
    half = (SSIM_WINDOW - 1) / 2
    coords = torch.arange(SSIM_WINDOW, dtype=dtype) - half
    g = torch.exp(-(coords ** 2) / (2 * SSIM_SIGMA ** 2))
    window = g.view(-1, 1) * g.view(1, -1)
    return (window / window.sum()).view(1, 1, SSIM_WINDOW, SSIM_WINDOW)


def ssim(a: torch.Tensor, b: torch.Tensor, border_crop: int = 4,
         channel_mode: str = "y") -> float:
    """Single-scale SSIM with the standard 11x11 sigma-1.5 Gaussian window.

    Means, variances and covariance come from valid (unpadded) window
    positions only; rgb mode averages the per-channel indices. Dynamic
    range is fixed to 1.
    """
    _check_pair(a, b, channel_mode)
    a = _crop(a, border_crop)
    b = _crop(b, border_crop)
    if channel_mode == "y":
        a, b = luma(a), luma(b)
    if a.shape[-2] < SSIM_WINDOW or a.shape[-1] < SSIM_WINDOW:
        raise ShapeError(
            f"image {a.shape[-2]}x{a.shape[-1]} after crop is smaller than the "
            f"{SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    x = a.unsqueeze(1).double()
    y = b.unsqueeze(1).double()
    window = _gaussian_window(torch.float64)
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2

    mu_x = F.conv2d(x, window)
    mu_y = F.conv2d(y, window)
    var_x = F.conv2d(x * x, window) - mu_x * mu_x
    var_y = F.conv2d(y * y, window) - mu_y * mu_y
    cov = F.conv2d(x * y, window) - mu_x * mu_y
    index = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / \
            ((mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2))
    return float(index.mean())


_PERCEPTUAL_PLUGINS: dict[str, Callable] = {}


def register_perceptual_plugin(name: str, fn: Callable) -> None:
    """Expose fn(a, b) -> float under ``name`` for eval reports."""
    _PERCEPTUAL_PLUGINS[name] = fn


def unregister_perceptual_plugin(name: str) -> None:
    _PERCEPTUAL_PLUGINS.pop(name, None)


def external_perceptual_metric(a: torch.Tensor, b: torch.Tensor, plugin: str) -> float:
    """Forward the pair to a registered perceptual metric, unmodified."""
    if plugin not in _PERCEPTUAL_PLUGINS:
        known = ", ".join(sorted(_PERCEPTUAL_PLUGINS)) or "none"
        raise PluginMissingError(
            f"no perceptual metric plugin named {plugin!r} is registered "
            f"(registered: {known})"
        )
    return float(_PERCEPTUAL_PLUGINS[plugin](a, b))


@dataclass
class EvalRow:
    image_id: str
    psnr: float
    ssim: float
    extras: dict = field(default_factory=dict)


@dataclass
class EvalReport:
    rows: list
    border_crop: int
    channel_mode: str
    plugin_names: list

    @property
    def mean_psnr(self) -> float:
        return sum(r.psnr for r in self.rows) / len(self.rows)

    @property
    def mean_ssim(self) -> float:
        return sum(r.ssim for r in self.rows) / len(self.rows)

    def mean_extra(self, name: str) -> float:
        return sum(r.extras[name] for r in self.rows) / len(self.rows)

    def write_csv(self, path: Path) -> None:
        """Per-image rows followed by the dataset mean row."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["image_id", "psnr", "ssim"] + list(self.plugin_names))
            for row in self.rows:
                writer.writerow([row.image_id, f"{row.psnr:.4f}", f"{row.ssim:.5f}"]
                                + [f"{row.extras[p]:.6f}" for p in self.plugin_names])
            writer.writerow(["mean", f"{self.mean_psnr:.4f}", f"{self.mean_ssim:.5f}"]
                            + [f"{self.mean_extra(p):.6f}" for p in self.plugin_names])


def evaluate_pairs(pairs: Sequence, border_crop: int = 4, channel_mode: str = "y",
                   plugins: Optional[Sequence[str]] = None) -> EvalReport:
    """Score (image_id, result, reference) triples into a report."""
    plugins = list(plugins or [])
    rows = []
    for image_id, out_img, ref_img in pairs:
        extras = {p: external_perceptual_metric(out_img, ref_img, p) for p in plugins}
        rows.append(EvalRow(image_id,
                            psnr(out_img, ref_img, border_crop, channel_mode),
                            ssim(out_img, ref_img, border_crop, channel_mode),
                            extras))
    if not rows:
        raise ShapeError("nothing to evaluate: empty pair list")
    return EvalReport(rows, border_crop, channel_mode, plugins)
