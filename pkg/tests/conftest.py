"""Shared fixtures: synthetic image factories and the acceptance summary."""

import numpy as np
import pytest
import torch
from PIL import Image

_ACCEPTANCE_LINES = []


def record_acceptance(line: str) -> None:
    _ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def fd_directional_check(fn, x, *, eps: float = 1e-5, n_dirs: int = 2,
                         rtol: float = 1e-3, seed: int = 0) -> None:
    """Compare autograd against central finite differences along random rays.

    ``fn`` maps a tensor shaped like ``x`` to a scalar. Everything runs in
    the dtype of ``x`` (use float64 for tight tolerances). ``eps`` is kept
    small so piecewise-linear activations rarely change segment inside the
    probe window.
    """
    x = x.detach().clone().requires_grad_(True)
    (grad,) = torch.autograd.grad(fn(x), x)
    gen = torch.Generator().manual_seed(seed)
    for _ in range(n_dirs):
        u = torch.randn(x.shape, generator=gen, dtype=x.dtype)
        u = u / u.norm()
        with torch.no_grad():
            f_plus = fn(x + eps * u).item()
            f_minus = fn(x - eps * u).item()
        fd = (f_plus - f_minus) / (2 * eps)
        analytic = (grad * u).sum().item()
        scale = max(abs(fd), abs(analytic), 1e-8)
        assert abs(fd - analytic) <= rtol * scale, (
            f"directional derivative mismatch: fd={fd:.10g} autograd={analytic:.10g}"
        )


def structured_image(seed: int, size: int = 160) -> torch.Tensor:
    """A [3, size, size] float image with edges, flats, and smooth ramps.

    Piecewise-constant shapes over smooth gradients give the local
    correlations the self-supervised tasks rely on, without shipping any
    photographs.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    img = np.zeros((size, size, 3))
    for c in range(3):
        img[..., c] = (xx * rng.uniform(-1, 1) + yy * rng.uniform(-1, 1)) / (2 * size)
    img -= img.min()
    img /= max(img.max(), 1e-9)
    margin = max(2, size // 13)
    for _ in range(12):
        r0, c0 = rng.integers(0, size - margin, 2)
        rh, cw = rng.integers(max(2, size // 20), size // 2, 2)
        img[r0:r0 + rh, c0:c0 + cw] = rng.uniform(0, 1, 3)
    for _ in range(8):
        cy, cx = rng.integers(margin, size - margin, 2)
        rad = rng.integers(2, max(3, size // 6))
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 < rad ** 2
        img[mask] = rng.uniform(0, 1, 3)
    return torch.from_numpy(img).permute(2, 0, 1).float()


def textured_image(seed: int, size: int = 240) -> torch.Tensor:
    """A [3, size, size] float image that is textured everywhere.

    Oriented sinusoid gratings and soft additive discs ride on global color
    ramps whose orientation is fixed corpus-wide: red always brightens
    rightward and green downward (blue drifts freely). Any small window is
    therefore (a) discriminable from nearby windows and (b) roughly
    localizable from its colors alone — and the color-to-position code is
    the same in every image, so it is learnable across a corpus. The
    piecewise-flat ``structured_image`` lacks (b): a permutation-solving
    head gets no cue about where on the canvas a window came from, and
    stays at chance. Randomly oriented ramps fail more subtly: each image
    encodes position differently, leaving the position code unlearnable.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.zeros((size, size, 3))
    img[..., 0] = 0.5 + rng.uniform(0.3, 0.5) * (xx - 0.5)
    img[..., 1] = 0.5 + rng.uniform(0.3, 0.5) * (yy - 0.5)
    img[..., 2] = (0.5 + rng.uniform(-0.4, 0.4) * (xx - 0.5)
                   + rng.uniform(-0.4, 0.4) * (yy - 0.5))
    for _ in range(6):
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(4, 40)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
        img += rng.uniform(0.02, 0.07) * wave[..., None] * rng.uniform(0.3, 1.0, 3)
    for _ in range(10):
        cy, cx = rng.uniform(0, 1, 2)
        rad = rng.uniform(0.04, 0.2)
        mask = ((yy - cy) ** 2 + (xx - cx) ** 2 < rad ** 2)[..., None]
        img += mask * rng.uniform(-0.08, 0.08, 3)
    img += 0.005 * rng.standard_normal((size, size, 3))
    return torch.from_numpy(img.clip(0, 1)).permute(2, 0, 1).float()


def write_png(img: torch.Tensor, path) -> None:
    arr = (img.clamp(0, 1) * 255).round().byte().permute(1, 2, 0).numpy()
    Image.fromarray(arr).save(path)


@pytest.fixture()
def toy_dataset_dir(tmp_path):
    """Directory with <root>/HR/ holding four structured 160x160 PNGs."""
    hr = tmp_path / "set" / "HR"
    hr.mkdir(parents=True)
    for i in range(4):
        write_png(structured_image(seed=100 + i), hr / f"toy_{i:02d}.png")
    return tmp_path / "set"
