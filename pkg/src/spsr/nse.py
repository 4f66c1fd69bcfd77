"""Neural structure extractor (NSE).

A small residual CNN that maps a 3-channel image to a 32-channel feature
grid at 1/4 spatial resolution. Each feature vector summarizes exactly one
31x31 input window, which is what makes the self-supervised pretext tasks
(and their disjoint-receptive-field sampling) well defined.

Layer plan for the default config (kernel 3, strides [2, 1, 1, 2, 1, 1]):

    conv1  3 -> 64   stride 2
    conv2 64 -> 64   stride 1  \\  skip around the pair
    conv3 64 -> 64   stride 1  /
    conv4 64 -> 32   stride 2
    conv5 32 -> 32   stride 1  \\  skip around the pair
    conv6 32 -> 32   stride 1  /

This is the unique placement of the two stride-2 layers that reaches a
receptive field of exactly 31 with total stride 4 (see
``receptive_field_of``). Skips wrap the stride-1 pairs, where input and
output shapes match without projection.
"""

from dataclasses import dataclass, field

import torch
from torch import nn

from .blocks import init_conv_linear, seeded_rng
from .errors import ConfigError, ShapeError

STRUCTURE_CHANNELS = 32
RECEPTIVE_FIELD = 31
FEATURE_STRIDE = 4


@dataclass
class NSEConfig:
    num_conv_layers: int = 6
    kernel_size: int = 3
    strides: list[int] = field(default_factory=lambda: [2, 1, 1, 2, 1, 1])
    hidden_channels: int = 64
    out_channels: int = 32
    num_skip_connections: int = 2

    def validate(self) -> None:
        if self.num_conv_layers != 6 or len(self.strides) != 6:
            raise ConfigError(
                f"extractor expects 6 conv layers, got num_conv_layers="
                f"{self.num_conv_layers}, strides={self.strides}"
            )
        if self.num_skip_connections != 2:
            raise ConfigError(f"expected 2 skip connections, got {self.num_skip_connections}")
        rf, stride = receptive_field_of(self)
        if stride != FEATURE_STRIDE:
            raise ConfigError(f"total stride must be {FEATURE_STRIDE}, got {stride}")
        if rf != RECEPTIVE_FIELD:
            raise ConfigError(f"receptive field must be {RECEPTIVE_FIELD}, got {rf}")
        if self.strides[1:3] != [1, 1] or self.strides[4:6] != [1, 1]:
            raise ConfigError(
                f"skip connections wrap the stride-1 pairs (layers 2-3 and 5-6); "
                f"strides {self.strides} break that"
            )


def receptive_field_of(config: NSEConfig) -> tuple[int, int]:
    """Receptive field and total stride of a plain conv stack.

    Standard recurrence: rf grows by (k - 1) * jump per layer, jump
    multiplies by that layer's stride.
    """
    rf, jump = 1, 1
    for s in config.strides:
        rf += (config.kernel_size - 1) * jump
        jump *= s
    return rf, jump


def min_input_size(config: NSEConfig | None = None) -> int:
    return RECEPTIVE_FIELD


class NSE(nn.Module):
    """Structure extractor; forward maps [B,3,H,W] -> [B,32,ceil(H/4),ceil(W/4)]."""

    def __init__(self, config: NSEConfig):
        super().__init__()
        config.validate()
        self.config = config
        k = config.kernel_size
        p = k // 2
        hidden, out = config.hidden_channels, config.out_channels
        s = config.strides
        self.conv1 = nn.Conv2d(3, hidden, k, s[0], p)
        self.conv2 = nn.Conv2d(hidden, hidden, k, s[1], p)
        self.conv3 = nn.Conv2d(hidden, hidden, k, s[2], p)
        self.conv4 = nn.Conv2d(hidden, out, k, s[3], p)
        self.conv5 = nn.Conv2d(out, out, k, s[4], p)
        self.conv6 = nn.Conv2d(out, out, k, s[5], p)
        self.act = nn.ReLU(inplace=True)

    def forward(self, img):
        x = self.act(self.conv1(img))
        x = self.act(x + self.conv3(self.act(self.conv2(x))))
        x = self.act(self.conv4(x))
        x = self.act(x + self.conv6(self.act(self.conv5(x))))
        return x


def build_nse(config: NSEConfig, rng_seed: int) -> NSE:
    """Build and deterministically initialize an extractor."""
    model = NSE(config)
    init_conv_linear(model, seeded_rng(rng_seed))
    return model


def extract_structure_features(nse: NSE, img: torch.Tensor) -> torch.Tensor:
    """Run the extractor on a batch of images, checking the input contract."""
    if img.dim() != 4 or img.shape[1] != 3:
        raise ShapeError(f"expected [B, 3, H, W] input, got {tuple(img.shape)}")
    if img.shape[-2] < RECEPTIVE_FIELD or img.shape[-1] < RECEPTIVE_FIELD:
        raise ShapeError(
            f"input must be at least {RECEPTIVE_FIELD}x{RECEPTIVE_FIELD}, "
            f"got {img.shape[-2]}x{img.shape[-1]}"
        )
    return nse(img)


def input_window(row: int, col: int) -> tuple[int, int, int, int]:
    """Inclusive input-pixel bounds (r0, r1, c0, c1) feeding feature (row, col).

    With same-padded kernel-3 convolutions the window is centered at
    stride * position with halfwidth (rf - 1) / 2; callers clip to the image.
    """
    half = (RECEPTIVE_FIELD - 1) // 2
    return (FEATURE_STRIDE * row - half, FEATURE_STRIDE * row + half,
            FEATURE_STRIDE * col - half, FEATURE_STRIDE * col + half)
