"""Training objectives for all three model variants.

Adversarial terms default to the relativistic-average form: each logit is
offset by the mean logit of the opposing class before the sigmoid,

    d_loss = -E[log sig(real - mean fake)] - E[log(1 - sig(fake - mean real))]
    g_loss = -E[log(1 - sig(real - mean fake))] - E[log sig(fake - mean real)]

computed through binary_cross_entropy_with_logits so large logits never
overflow. The plain (non-relativistic) form is available behind the
``relativistic`` flag. All losses are means over elements, so magnitudes
(and the published trade-off weights) are independent of patch size.

Variant objectives:

    spsr-g:   per + b_i*pix_i + g_i*adv_i + b_gm*pix_gm + g_gm*adv_gm + b_gb*pix_gb
    spsr-p/j: per + b_i*pix_i + b_sf*pix_sf + g_sf*adv_sf + b_gb*pix_gb

where the structure (sf) terms replace the image-space adversarial and both
gradient-space terms, and the gradient-branch supervision pix_gb is kept in
every variant because the branch itself is always present.
"""

from contextlib import contextmanager
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .critics import Discriminator, PerceptualExtractor, discriminate, perceptual_features
from .errors import ConfigError, ShapeError
from .generator import GeneratorOutput
from .gradient_ops import extract_gradient_map
from .nse import NSE, extract_structure_features

VARIANTS = ("spsr-g", "spsr-p", "spsr-j")


@dataclass
class LossWeights:
    beta_i: float = 0.01        # pixel loss on the SR image
    gamma_i: float = 0.005      # adversarial loss on the SR image
    beta_gm_sr: float = 0.01    # pixel loss on M(SR) vs M(HR)
    gamma_gm_sr: float = 0.005  # adversarial loss on gradient maps
    beta_gm_gb: float = 0.5     # gradient-branch supervision
    beta_sf: float = 1e-7       # pixel loss on structure features
    gamma_sf: float = 0.1       # adversarial loss on structure features

    def validate(self) -> None:
        for name, value in vars(self).items():
            if value < 0:
                raise ConfigError(f"loss weight {name} must be >= 0, got {value}")


@dataclass
class LossModels:
    """Critics needed by total_generator_loss; unused ones may stay None."""
    perceptual: PerceptualExtractor
    disc_image: Discriminator | None = None
    disc_gm: Discriminator | None = None
    disc_sf: Discriminator | None = None
    nse: NSE | None = None


@contextmanager
def _frozen(module):
    """Block gradient accumulation into ``module``'s parameters."""
    params = list(module.parameters())
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad_(False)
    try:
        yield
    finally:
        for p, flag in zip(params, flags):
            p.requires_grad_(flag)


def pixel_l1(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def perceptual_loss(sr: torch.Tensor, hr: torch.Tensor,
                    ex: PerceptualExtractor) -> torch.Tensor:
    if sr.shape != hr.shape:
        raise ShapeError(f"shape mismatch: {tuple(sr.shape)} vs {tuple(hr.shape)}")
    return pixel_l1(perceptual_features(sr, ex), perceptual_features(hr, ex))


def _check_logits(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> None:
    if real_logits.numel() == 0 or fake_logits.numel() == 0:
        raise ShapeError("adversarial losses need non-empty logit batches")


def ragan_d_loss(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    _check_logits(real_logits, fake_logits)
    rel_real = real_logits - fake_logits.mean()
    rel_fake = fake_logits - real_logits.mean()
    return (F.binary_cross_entropy_with_logits(rel_real, torch.ones_like(rel_real))
            + F.binary_cross_entropy_with_logits(rel_fake, torch.zeros_like(rel_fake)))


def ragan_g_loss(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    _check_logits(real_logits, fake_logits)
    rel_real = real_logits - fake_logits.mean()
    rel_fake = fake_logits - real_logits.mean()
    return (F.binary_cross_entropy_with_logits(rel_real, torch.zeros_like(rel_real))
            + F.binary_cross_entropy_with_logits(rel_fake, torch.ones_like(rel_fake)))


def standard_d_loss(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    _check_logits(real_logits, fake_logits)
    return (F.binary_cross_entropy_with_logits(real_logits, torch.ones_like(real_logits))
            + F.binary_cross_entropy_with_logits(fake_logits, torch.zeros_like(fake_logits)))


def standard_g_loss(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    _check_logits(real_logits, fake_logits)
    return F.binary_cross_entropy_with_logits(fake_logits, torch.ones_like(fake_logits))


def adversarial_pair_from_logits(real_logits, fake_logits, relativistic: bool = True):
    if relativistic:
        return ragan_d_loss(real_logits, fake_logits), ragan_g_loss(real_logits, fake_logits)
    return standard_d_loss(real_logits, fake_logits), standard_g_loss(real_logits, fake_logits)


def gradient_pixel_loss(sr: torch.Tensor, hr: torch.Tensor) -> torch.Tensor:
    return pixel_l1(extract_gradient_map(sr), extract_gradient_map(hr))


def gradient_adversarial_pair(d_gm: Discriminator, sr: torch.Tensor, hr: torch.Tensor,
                              relativistic: bool = True):
    real = discriminate(d_gm, extract_gradient_map(hr))
    fake = discriminate(d_gm, extract_gradient_map(sr))
    return adversarial_pair_from_logits(real, fake, relativistic)


def gradient_branch_loss(predicted_gm: torch.Tensor, hr: torch.Tensor) -> torch.Tensor:
    return pixel_l1(predicted_gm, extract_gradient_map(hr))


def structure_pixel_loss(sr: torch.Tensor, hr: torch.Tensor, nse: NSE) -> torch.Tensor:
    with _frozen(nse):
        return pixel_l1(extract_structure_features(nse, sr),
                        extract_structure_features(nse, hr))


def structure_adversarial_pair(d_sf: Discriminator, sr: torch.Tensor, hr: torch.Tensor,
                               nse: NSE, relativistic: bool = True):
    with _frozen(nse):
        real = discriminate(d_sf, extract_structure_features(nse, hr))
        fake = discriminate(d_sf, extract_structure_features(nse, sr))
    return adversarial_pair_from_logits(real, fake, relativistic)


def _require(models: LossModels, variant: str, **needed):
    for name, value in needed.items():
        if value is None:
            raise ConfigError(f"variant {variant} needs models.{name}")


def total_generator_loss(variant: str, outputs: GeneratorOutput, hr: torch.Tensor,
                         weights: LossWeights, models: LossModels,
                         relativistic: bool = True):
    """Weighted variant objective plus the per-term (pre-weighting) breakdown."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    weights.validate()
    sr = outputs.sr_image
    terms = {
        "per": perceptual_loss(sr, hr, models.perceptual),
        "pix_i": pixel_l1(sr, hr),
        "pix_gb": gradient_branch_loss(outputs.predicted_gradient_map, hr),
    }
    if variant == "spsr-g":
        _require(models, variant, disc_image=models.disc_image, disc_gm=models.disc_gm)
        real = discriminate(models.disc_image, hr)
        fake = discriminate(models.disc_image, sr)
        _, terms["adv_i"] = adversarial_pair_from_logits(real, fake, relativistic)
        terms["pix_gm"] = gradient_pixel_loss(sr, hr)
        _, terms["adv_gm"] = gradient_adversarial_pair(models.disc_gm, sr, hr, relativistic)
        total = (terms["per"]
                 + weights.beta_i * terms["pix_i"]
                 + weights.gamma_i * terms["adv_i"]
                 + weights.beta_gm_sr * terms["pix_gm"]
                 + weights.gamma_gm_sr * terms["adv_gm"]
                 + weights.beta_gm_gb * terms["pix_gb"])
    else:
        _require(models, variant, disc_sf=models.disc_sf, nse=models.nse)
        terms["pix_sf"] = structure_pixel_loss(sr, hr, models.nse)
        _, terms["adv_sf"] = structure_adversarial_pair(
            models.disc_sf, sr, hr, models.nse, relativistic)
        total = (terms["per"]
                 + weights.beta_i * terms["pix_i"]
                 + weights.beta_sf * terms["pix_sf"]
                 + weights.gamma_sf * terms["adv_sf"]
                 + weights.beta_gm_gb * terms["pix_gb"])
    terms["total"] = total
    return total, terms
