"""Shared network building blocks and deterministic initialization.

All models in this package are initialized from an explicit
``torch.Generator`` so that the same seed always yields bit-identical
parameters, independent of global RNG state.
"""

import math

import torch
from torch import nn


def seeded_rng(seed: int) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(int(seed))
    return gen


def init_conv_linear(root: nn.Module, rng: torch.Generator, scale: float = 1.0,
                     negative_slope: float = 0.0) -> None:
    """Kaiming-normal init for every Conv2d/Linear under ``root``.

    Weights are drawn from ``rng`` (module traversal order is deterministic),
    then multiplied by ``scale``; biases are zeroed. ``scale`` < 1 is the
    usual residual-dense trick to keep deep residual stacks stable early on.
    """
    gain = math.sqrt(2.0 / (1.0 + negative_slope ** 2))
    with torch.no_grad():
        for m in root.modules():
            if isinstance(m, nn.Conv2d):
                fan_in = m.in_channels // m.groups * m.kernel_size[0] * m.kernel_size[1]
            elif isinstance(m, nn.Linear):
                fan_in = m.in_features
            else:
                continue
            std = gain / math.sqrt(fan_in)
            m.weight.normal_(0.0, std, generator=rng)
            m.weight.mul_(scale)
            if m.bias is not None:
                m.bias.zero_()


class ResidualDenseBlock(nn.Module):
    """Five densely connected convolutions with a scaled residual."""

    def __init__(self, channels: int = 64, growth: int = 32, res_scale: float = 0.2):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, growth, 3, 1, 1)
        self.conv2 = nn.Conv2d(channels + growth, growth, 3, 1, 1)
        self.conv3 = nn.Conv2d(channels + 2 * growth, growth, 3, 1, 1)
        self.conv4 = nn.Conv2d(channels + 3 * growth, growth, 3, 1, 1)
        self.conv5 = nn.Conv2d(channels + 4 * growth, channels, 3, 1, 1)
        self.act = nn.LeakyReLU(0.2, inplace=True)
        self.res_scale = res_scale

    def forward(self, x):
        h1 = self.act(self.conv1(x))
        h2 = self.act(self.conv2(torch.cat((x, h1), 1)))
        h3 = self.act(self.conv3(torch.cat((x, h1, h2), 1)))
        h4 = self.act(self.conv4(torch.cat((x, h1, h2, h3), 1)))
        h5 = self.conv5(torch.cat((x, h1, h2, h3, h4), 1))
        return x + self.res_scale * h5


class RRDB(nn.Module):
    """Residual-in-residual dense block: three dense blocks plus a scaled skip."""

    def __init__(self, channels: int = 64, growth: int = 32, res_scale: float = 0.2):
        super().__init__()
        self.dense1 = ResidualDenseBlock(channels, growth, res_scale)
        self.dense2 = ResidualDenseBlock(channels, growth, res_scale)
        self.dense3 = ResidualDenseBlock(channels, growth, res_scale)
        self.res_scale = res_scale

    def forward(self, x):
        h = self.dense3(self.dense2(self.dense1(x)))
        return x + self.res_scale * h


class UpsampleConv(nn.Module):
    """Nearest-neighbor x2 followed by a 3x3 convolution and LeakyReLU."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, 1, 1)
        self.act = nn.LeakyReLU(0.2, inplace=True)

    def forward(self, x):
        x = nn.functional.interpolate(x, scale_factor=2, mode="nearest")
        return self.act(self.conv(x))
