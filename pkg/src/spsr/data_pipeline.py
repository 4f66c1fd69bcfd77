"""Dataset loading, bicubic degradation, and patch sampling.

Layout on disk: ``<root>/HR/*.png`` holding 8-bit RGB images, plus an
optional ``<root>/LRx4/*.png`` cache of pre-downscaled copies with matching
filenames. Images travel through the pipeline as float tensors in [0, 1],
channels first, and are re-quantized to 8-bit only when written back out.

The degradation kernel is the Keys cubic with a = -0.5, applied separably
with the center-aligned sampling grid and border replication used by the
common benchmark resizer; downscaling stretches the kernel by the inverse
scale (antialiasing) and renormalizes. Everything is plain weight-matrix
arithmetic, so repeated calls are bit-identical.
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np
import torch
from PIL import Image

from .errors import ConfigError, DataError, ShapeError

logger = logging.getLogger("spsr.data")

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")
MIN_TRAIN_SIZE = 128


def _cubic(x: torch.Tensor, a: float = -0.5) -> torch.Tensor:
    ax = x.abs()
    ax2 = ax * ax
    ax3 = ax2 * ax
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return near * (ax <= 1) + far * ((ax > 1) & (ax < 2))


@lru_cache(maxsize=64)
def _resize_weights(in_len: int, out_len: int, scale: float,
                    antialias: bool) -> tuple[torch.Tensor, torch.Tensor]:
    """Row-normalized kernel weights and source indices for one axis.

    Output sample i sits at u = (i + 0.5)/scale - 0.5 on the input grid.
    When shrinking with antialias the kernel is widened to 4/scale and its
    argument compressed by scale; indices beyond the border replicate edge
    samples, and each row is renormalized to sum to one.
    """
    positions = torch.arange(out_len, dtype=torch.float64)
    u = (positions + 0.5) / scale - 0.5
    if scale < 1 and antialias:
        width = 4.0 / scale
        kernel = lambda t: _cubic(scale * t)
    else:
        width = 4.0
        kernel = _cubic
    support = int(math.ceil(width)) + 2
    left = torch.floor(u - width / 2)
    idx = left.view(-1, 1) + torch.arange(support, dtype=torch.float64).view(1, -1)
    weights = kernel(u.view(-1, 1) - idx)
    weights = weights / weights.sum(dim=1, keepdim=True)
    idx = idx.long().clamp_(0, in_len - 1)
    return weights, idx


def _resize_axis(img: torch.Tensor, out_len: int, scale: float,
                 antialias: bool, dim: int) -> torch.Tensor:
    """Resample one axis; dim must be negative (-2 rows, -1 columns)."""
    weights, idx = _resize_weights(img.shape[dim], out_len, scale, antialias)
    weights = weights.to(img.dtype)
    support = weights.shape[1]
    gathered = img.index_select(dim, idx.reshape(-1)).unflatten(dim, (out_len, support))
    shape = [1] * gathered.dim()
    shape[dim] = support
    shape[dim - 1] = out_len
    return (gathered * weights.reshape(shape)).sum(dim=dim)


def bicubic_resize(img: torch.Tensor, factor: float, antialias: bool = True) -> torch.Tensor:
    """Separable cubic resize by ``factor`` (output size = ceil(size * factor)).

    Accepts [C, H, W] or [B, C, H, W]; output values are not clamped, so
    slight over/undershoot around edges survives (quantization clamps on
    save). Differentiable with respect to ``img``.
    """
    if img.dim() not in (3, 4):
        raise ShapeError(f"expected [C,H,W] or [B,C,H,W], got {tuple(img.shape)}")
    if factor <= 0:
        raise ShapeError(f"resize factor must be positive, got {factor}")
    out_h = math.ceil(img.shape[-2] * factor)
    out_w = math.ceil(img.shape[-1] * factor)
    if out_h < 1 or out_w < 1:
        raise ShapeError(
            f"degenerate output size {out_h}x{out_w} from factor {factor} on "
            f"{img.shape[-2]}x{img.shape[-1]}"
        )
    out = _resize_axis(img, out_h, factor, antialias, dim=-2)
    out = _resize_axis(out, out_w, factor, antialias, dim=-1)
    return out


class DatasetItem(NamedTuple):
    hr: torch.Tensor
    image_id: str
    lr: Optional[torch.Tensor] = None


@dataclass
class DatasetSpec:
    root: Path
    split: str = "train"
    hr_subdir: str = "HR"
    lr_subdir: str = "LRx4"
    cache_lr: bool = False
    scale: int = 4

    def validate(self) -> None:
        if self.split not in ("train", "test"):
            raise ConfigError(f"split must be 'train' or 'test', got {self.split!r}")
        if self.scale < 1:
            raise ConfigError(f"scale must be >= 1, got {self.scale}")


def load_image(path: Path) -> torch.Tensor:
    """Decode one image file to a float32 [3, H, W] tensor in [0, 1]."""
    with Image.open(path) as handle:
        arr = np.asarray(handle.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous()


def save_image(img: torch.Tensor, path: Path) -> None:
    """Quantize a [3, H, W] tensor in [0, 1] to an 8-bit PNG."""
    if img.dim() != 3 or img.shape[0] != 3:
        raise ShapeError(f"expected a [3, H, W] image, got {tuple(img.shape)}")
    arr = (img.detach().clamp(0, 1) * 255.0).round().to(torch.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr.permute(1, 2, 0).numpy()).save(path)


def load_dataset(spec: DatasetSpec) -> list[DatasetItem]:
    """Load every readable image under the HR subdirectory, name order.

    Unreadable files and training images below 128 pixels a side are
    skipped with a warning; an empty result is an error. With cache_lr,
    a same-named file under the LR subdirectory rides along when its
    dimensions agree with the scale.
    """
    spec.validate()
    hr_dir = Path(spec.root) / spec.hr_subdir
    if not hr_dir.is_dir():
        raise DataError(f"dataset directory not found: {hr_dir}")
    files = sorted(p for p in hr_dir.iterdir()
                   if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS)
    items = []
    for path in files:
        try:
            hr = load_image(path)
        except Exception as exc:
            logger.warning("skipping unreadable image %s: %s", path, exc)
            continue
        if spec.split == "train" and min(hr.shape[-2:]) < MIN_TRAIN_SIZE:
            logger.warning("skipping %s: %dx%d below the %d-pixel training minimum",
                           path, hr.shape[-2], hr.shape[-1], MIN_TRAIN_SIZE)
            continue
        lr = None
        if spec.cache_lr:
            lr_path = Path(spec.root) / spec.lr_subdir / path.name
            if lr_path.is_file():
                try:
                    lr = load_image(lr_path)
                except Exception as exc:
                    logger.warning("ignoring unreadable cached LR %s: %s", lr_path, exc)
                if lr is not None and (
                        lr.shape[-2] != math.ceil(hr.shape[-2] / spec.scale)
                        or lr.shape[-1] != math.ceil(hr.shape[-1] / spec.scale)):
                    logger.warning("ignoring cached LR %s: size %dx%d does not match "
                                   "HR %dx%d at scale %d", lr_path, lr.shape[-2],
                                   lr.shape[-1], hr.shape[-2], hr.shape[-1], spec.scale)
                    lr = None
            else:
                logger.warning("no cached LR for %s under %s", path.name, spec.lr_subdir)
        items.append(DatasetItem(hr, path.stem, lr))
    if not items:
        raise DataError(f"no usable images under {hr_dir}")
    return items


class PatchBatch(NamedTuple):
    lr: torch.Tensor
    hr: torch.Tensor
    source_ids: list


def _rand_index(n: int, rng: torch.Generator) -> int:
    return int(torch.randint(n, (1,), generator=rng).item())


def sample_patch_batch(dataset: Sequence, batch_size: int = 15, lr_patch: int = 32, *,
                       rng: torch.Generator, scale: int = 4,
                       augment: bool = True) -> PatchBatch:
    """Randomly crop aligned LR/HR patch pairs from the dataset.

    HR crops are (scale * lr_patch) square with corners on the scale grid,
    so LR pixel (i, j) covers exactly the HR block starting at
    (scale*i, scale*j). LR comes from the cached copy when present and from
    bicubic downscaling otherwise. Augmentation applies a coin-flip
    horizontal flip and a random 90-degree rotation to both members.
    """
    if batch_size < 1 or lr_patch < 1:
        raise ConfigError("batch_size and lr_patch must be positive")
    hr_patch = lr_patch * scale
    items = [it if isinstance(it, DatasetItem) else DatasetItem(*it) for it in dataset]
    usable = []
    for it in items:
        if it.hr.shape[-2] >= hr_patch and it.hr.shape[-1] >= hr_patch:
            usable.append(it)
        else:
            logger.warning("image %s smaller than %dx%d, not sampled",
                           it.image_id, hr_patch, hr_patch)
    if not usable:
        raise DataError(f"no image admits a {hr_patch}x{hr_patch} crop")

    lrs, hrs, ids = [], [], []
    for _ in range(batch_size):
        item = usable[_rand_index(len(usable), rng)]
        r0 = scale * _rand_index((item.hr.shape[-2] - hr_patch) // scale + 1, rng)
        c0 = scale * _rand_index((item.hr.shape[-1] - hr_patch) // scale + 1, rng)
        hr = item.hr[:, r0:r0 + hr_patch, c0:c0 + hr_patch]
        if item.lr is not None:
            lr = item.lr[:, r0 // scale:r0 // scale + lr_patch,
                         c0 // scale:c0 // scale + lr_patch]
        else:
            lr = bicubic_resize(hr, 1.0 / scale)
        if augment:
            if _rand_index(2, rng):
                hr = torch.flip(hr, dims=(-1,))
                lr = torch.flip(lr, dims=(-1,))
            quarter_turns = _rand_index(4, rng)
            if quarter_turns:
                hr = torch.rot90(hr, quarter_turns, dims=(-2, -1))
                lr = torch.rot90(lr, quarter_turns, dims=(-2, -1))
        lrs.append(lr)
        hrs.append(hr)
        ids.append(item.image_id)
    return PatchBatch(torch.stack(lrs), torch.stack(hrs), ids)
