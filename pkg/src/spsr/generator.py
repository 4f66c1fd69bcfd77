"""Two-branch x4 super-resolution generator.

The SR branch is an RRDB trunk (ESRGAN backbone with its final
reconstruction layer removed). The gradient branch translates the LR
gradient map toward an HR one, consuming SR-trunk features tapped at fixed
block indices; its next-to-last features are fed back and fused with the SR
branch before reconstruction, and a 1x1 head turns the same features into
the predicted HR gradient map.

Both branches upsample by two nearest-neighbor x2 + conv stages, so tap
features (LR resolution) and fused features (HR resolution) stay aligned.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import torch
from torch import nn

from .blocks import RRDB, UpsampleConv, init_conv_linear, seeded_rng
from .errors import ConfigError, ShapeError
from .gradient_ops import extract_gradient_map

MIN_LR_SIZE = 8


@dataclass
class GeneratorConfig:
    num_rrdb_blocks: int = 23
    tap_indices: list[int] = field(default_factory=lambda: [5, 10, 15, 20])
    base_channels: int = 64
    growth_channels: int = 32
    scale_factor: int = 4
    num_gradient_blocks: int = 4

    def validate(self) -> None:
        if self.scale_factor != 4:
            raise ConfigError(f"only scale_factor=4 is supported, got {self.scale_factor}")
        if self.num_rrdb_blocks < 1:
            raise ConfigError(f"num_rrdb_blocks must be >= 1, got {self.num_rrdb_blocks}")
        if not self.tap_indices:
            raise ConfigError("tap_indices must be non-empty")
        if any(b <= a for a, b in zip(self.tap_indices, self.tap_indices[1:])):
            raise ConfigError(f"tap_indices must be strictly increasing, got {self.tap_indices}")
        if self.tap_indices[0] < 1 or self.tap_indices[-1] > self.num_rrdb_blocks:
            raise ConfigError(
                f"tap_indices must lie in [1, num_rrdb_blocks={self.num_rrdb_blocks}], "
                f"got {self.tap_indices}"
            )
        if self.num_gradient_blocks != len(self.tap_indices):
            raise ConfigError(
                f"num_gradient_blocks ({self.num_gradient_blocks}) must equal the "
                f"number of taps ({len(self.tap_indices)})"
            )
        if self.base_channels < 1 or self.growth_channels < 1:
            raise ConfigError("base_channels and growth_channels must be positive")


class GeneratorOutput(NamedTuple):
    sr_image: torch.Tensor
    predicted_gradient_map: torch.Tensor
    gradient_features: torch.Tensor


class Generator(nn.Module):
    def __init__(self, config: GeneratorConfig):
        super().__init__()
        config.validate()
        self.config = config
        c, g = config.base_channels, config.growth_channels

        # SR branch (trunk runs at LR resolution, then two x2 stages).
        self.conv_first = nn.Conv2d(3, c, 3, 1, 1)
        self.trunk = nn.ModuleList(RRDB(c, g) for _ in range(config.num_rrdb_blocks))
        self.trunk_conv = nn.Conv2d(c, c, 3, 1, 1)
        self.sr_up1 = UpsampleConv(c)
        self.sr_up2 = UpsampleConv(c)

        # Gradient branch: one (tap fuse, RRDB) pair per trunk tap.
        self.grad_conv_in = nn.Conv2d(3, c, 3, 1, 1)
        self.grad_tap_fuse = nn.ModuleList(
            nn.Conv2d(2 * c, c, 1) for _ in config.tap_indices
        )
        self.grad_blocks = nn.ModuleList(RRDB(c, g) for _ in config.tap_indices)
        self.grad_up1 = UpsampleConv(c)
        self.grad_up2 = UpsampleConv(c)
        self.grad_map_head = nn.Conv2d(c, 3, 1)

        # Fusion of the two branches at HR resolution.
        self.fusion_conv = nn.Conv2d(2 * c, c, 1)
        self.fusion_block = RRDB(c, g)
        self.conv_hr = nn.Conv2d(c, c, 3, 1, 1)
        self.conv_last = nn.Conv2d(c, 3, 3, 1, 1)
        self.act = nn.LeakyReLU(0.2, inplace=True)

    def forward(self, lr: torch.Tensor, zero_gradient_features: bool = False) -> GeneratorOutput:
        taps_wanted = set(self.config.tap_indices)
        taps = []
        x0 = self.conv_first(lr)
        x = x0
        for idx, block in enumerate(self.trunk, start=1):
            x = block(x)
            if idx in taps_wanted:
                taps.append(x)
        x = x0 + self.trunk_conv(x)
        sr_feat = self.sr_up2(self.sr_up1(x))

        grad = self.grad_conv_in(extract_gradient_map(lr))
        for fuse, block, tap in zip(self.grad_tap_fuse, self.grad_blocks, taps):
            grad = block(fuse(torch.cat((grad, tap), 1)))
        grad_feat = self.grad_up2(self.grad_up1(grad))
        predicted_gm = self.grad_map_head(grad_feat)

        fused_in = torch.zeros_like(grad_feat) if zero_gradient_features else grad_feat
        fused = self.fusion_block(self.fusion_conv(torch.cat((sr_feat, fused_in), 1)))
        sr = self.conv_last(self.act(self.conv_hr(fused)))
        return GeneratorOutput(sr, predicted_gm, grad_feat)


def build_generator(config: GeneratorConfig, rng_seed: int) -> Generator:
    """Build the generator with deterministic, residual-friendly (0.1x) init."""
    model = Generator(config)
    init_conv_linear(model, seeded_rng(rng_seed), scale=0.1, negative_slope=0.2)
    return model


def super_resolve(gen: Generator, lr: torch.Tensor,
                  zero_gradient_features: bool = False) -> GeneratorOutput:
    """Run the generator on an LR batch, checking the input contract."""
    if lr.dim() != 4 or lr.shape[1] != 3:
        raise ShapeError(f"expected [B, 3, H, W] LR input, got {tuple(lr.shape)}")
    if lr.shape[-2] < MIN_LR_SIZE or lr.shape[-1] < MIN_LR_SIZE:
        raise ShapeError(
            f"LR input must be at least {MIN_LR_SIZE}x{MIN_LR_SIZE}, "
            f"got {lr.shape[-2]}x{lr.shape[-1]}"
        )
    return gen(lr, zero_gradient_features=zero_gradient_features)
