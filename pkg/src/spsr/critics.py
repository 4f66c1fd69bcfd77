"""Discriminators and the perceptual feature extractor.

Three discriminators share one VGG-style template (strided conv +
InstanceNorm + LeakyReLU stacks that halve the spatial size down to 4x4,
then two dense layers emitting a single logit per sample): one for images,
one for gradient maps (both 3-channel, full patch resolution), and one for
32-channel structure-feature grids, which enter at 1/4 the patch size and
therefore skip the first two downsampling stages.

InstanceNorm is used instead of BatchNorm so evaluation outputs are
strictly per-sample (logits never depend on batch companions).

The perceptual extractor is a 19-layer-VGG-shaped conv stack producing
pre-activation features of a chosen stage. No pretrained weights ship with
the package: pass a state-dict path, or the "random" sentinel for a
fixed-seed randomly initialized extractor (used throughout the tests).
Inputs are raw [0, 1] images; apply your own normalization before calling
if externally trained weights expect it.
"""

from dataclasses import dataclass

import torch
from torch import nn

from .blocks import init_conv_linear, seeded_rng
from .errors import ConfigError, ShapeError

DISCRIMINATOR_KINDS = ("image", "gradient_map", "structure_feature")
_KIND_CHANNELS = {"image": 3, "gradient_map": 3, "structure_feature": 32}

RANDOM_WEIGHTS = "random"
_RANDOM_WEIGHTS_SEED = 991


@dataclass
class DiscriminatorConfig:
    kind: str
    in_channels: int
    input_size: int

    @classmethod
    def for_kind(cls, kind: str, hr_patch_size: int = 128) -> "DiscriminatorConfig":
        """Config matching what the pipeline feeds each discriminator.

        Image and gradient-map critics see full HR patches; the
        structure-feature critic sees the extractor's stride-4 grid.
        """
        if kind == "structure_feature":
            return cls(kind, 32, hr_patch_size // 4)
        return cls(kind, 3, hr_patch_size)

    def validate(self) -> None:
        if self.kind not in DISCRIMINATOR_KINDS:
            raise ConfigError(f"unknown discriminator kind {self.kind!r}")
        expected = _KIND_CHANNELS[self.kind]
        if self.in_channels != expected:
            raise ConfigError(
                f"kind={self.kind} requires in_channels={expected}, got {self.in_channels}"
            )
        size = self.input_size
        if size < 8 or size & (size - 1) != 0:
            raise ConfigError(f"input_size must be a power of two >= 8, got {size}")


class Discriminator(nn.Module):
    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        config.validate()
        self.config = config
        layers: list[nn.Module] = [
            nn.Conv2d(config.in_channels, 64, 3, 1, 1),
            nn.LeakyReLU(0.2, inplace=True),
        ]
        width = 64
        size = config.input_size
        while size > 4:
            next_width = min(width * 2, 512)
            layers += [
                nn.Conv2d(width, next_width, 4, 2, 1),
                nn.InstanceNorm2d(next_width, affine=True),
                nn.LeakyReLU(0.2, inplace=True),
            ]
            width, size = next_width, size // 2
        self.features = nn.Sequential(*layers)
        self.classifier = nn.Sequential(
            nn.Linear(width * 4 * 4, 100),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Linear(100, 1),
        )

    def forward(self, x):
        h = self.features(x)
        return self.classifier(h.flatten(1)).squeeze(1)


def build_discriminator(config: DiscriminatorConfig, rng_seed: int) -> Discriminator:
    model = Discriminator(config)
    init_conv_linear(model, seeded_rng(rng_seed), negative_slope=0.2)
    return model


def discriminate(d: Discriminator, batch: torch.Tensor) -> torch.Tensor:
    """One unnormalized logit per sample (sigmoid happens inside the losses)."""
    cfg = d.config
    if (batch.dim() != 4 or batch.shape[1] != cfg.in_channels
            or batch.shape[2] != cfg.input_size or batch.shape[3] != cfg.input_size):
        raise ShapeError(
            f"{cfg.kind} discriminator expects [B, {cfg.in_channels}, "
            f"{cfg.input_size}, {cfg.input_size}], got {tuple(batch.shape)}"
        )
    return d(batch)


# VGG-19 conv plan: (output channels, convs per block); a 2x2 max-pool
# follows each block. layer_id names the last conv of a block, whose
# pre-activation output we expose.
_VGG19_BLOCKS = ((64, 2), (128, 2), (256, 4), (512, 4), (512, 4))

PERCEPTUAL_LAYERS = {
    "conv1_2": 1,
    "conv2_2": 2,
    "conv3_4": 4,
    "conv4_4": 8,
    "conv5_4": 16,
}


class PerceptualExtractor(nn.Module):
    """Frozen VGG-19-style feature stack cut at ``layer_id`` (pre-activation)."""

    def __init__(self, layer_id: str = "conv5_4", weights_path: str = RANDOM_WEIGHTS):
        super().__init__()
        if layer_id not in PERCEPTUAL_LAYERS:
            raise ConfigError(
                f"unknown perceptual layer {layer_id!r}; choose from "
                f"{sorted(PERCEPTUAL_LAYERS)}"
            )
        self.layer_id = layer_id
        self.stride = PERCEPTUAL_LAYERS[layer_id]
        target_block = int(layer_id[4]) - 1

        layers: list[nn.Module] = []
        in_ch = 3
        for block, (out_ch, n_convs) in enumerate(_VGG19_BLOCKS):
            for conv in range(n_convs):
                layers.append(nn.Conv2d(in_ch, out_ch, 3, 1, 1))
                in_ch = out_ch
                last_of_target = block == target_block and conv == n_convs - 1
                if last_of_target:
                    break
                layers.append(nn.ReLU(inplace=True))
            if last_of_target:
                break
            layers.append(nn.MaxPool2d(2))
        self.features = nn.Sequential(*layers)
        self.out_channels = in_ch

        if weights_path == RANDOM_WEIGHTS:
            init_conv_linear(self, seeded_rng(_RANDOM_WEIGHTS_SEED))
        else:
            try:
                state = torch.load(weights_path, map_location="cpu", weights_only=True)
            except (OSError, RuntimeError) as exc:
                raise ConfigError(
                    f"cannot read perceptual weights file {weights_path!r}: {exc}"
                ) from exc
            self.load_state_dict(state)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def forward(self, x):
        return self.features(x)


def perceptual_features(x: torch.Tensor, ex: PerceptualExtractor) -> torch.Tensor:
    if x.dim() != 4 or x.shape[1] != 3:
        raise ShapeError(f"perceptual extractor expects [B, 3, H, W], got {tuple(x.shape)}")
    return ex(x)
