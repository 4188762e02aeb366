"""Multi-level visual conditioning.

A small residual CNN stands in for a large transformer backbone; the
interface only promises N feature levels resampled to a common grid, so
the backbone is swappable.  Each level feeds a visual-specific branch
(two stacked conv blocks: 3x3 conv, batch norm, GELU, 1x1 conv) and an
auxiliary prediction head for deep supervision.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.bn1 = nn.BatchNorm2d(channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.bn2 = nn.BatchNorm2d(channels)

    def forward(self, x):
        y = F.gelu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        return F.gelu(x + y)


class TinyResBackbone(nn.Module):
    """N-stage residual CNN; every stage is resampled to the stride grid.

    Stage i lives at stride ``stride * 2**i`` and is projected to a
    common channel width before bilinear resampling to the stride grid.
    """

    def __init__(self, channels: int = 64, levels: int = 4, stride: int = 4, in_channels: int = 3):
        super().__init__()
        if levels < 2:
            raise ValueError(f"need at least 2 levels, got {levels}")
        if stride < 1:
            raise ValueError(f"stride must be >= 1, got {stride}")
        self.channels = channels
        self.levels = levels
        self.stride = stride

        width = max(channels // 2, 8)
        stem: list[nn.Module] = []
        ch, s = in_channels, 1
        while s < stride:
            stem += [nn.Conv2d(ch, width, 3, stride=2, padding=1), nn.BatchNorm2d(width), nn.GELU()]
            ch, s = width, s * 2
        if not stem:
            stem = [nn.Conv2d(ch, width, 3, padding=1), nn.BatchNorm2d(width), nn.GELU()]
            ch = width
        self.stem = nn.Sequential(*stem)

        widths = [min(width * 2**i, channels * 2) for i in range(levels)]
        self.stages = nn.ModuleList()
        self.downs = nn.ModuleList()
        prev = ch
        for i, w in enumerate(widths):
            down_stride = 1 if i == 0 else 2
            self.downs.append(
                nn.Sequential(
                    nn.Conv2d(prev, w, 3, stride=down_stride, padding=1),
                    nn.BatchNorm2d(w),
                    nn.GELU(),
                )
            )
            self.stages.append(ResidualBlock(w))
            prev = w
        self.level_proj = nn.ModuleList(nn.Conv2d(w, channels, 1) for w in widths)

    @property
    def min_image_size(self) -> int:
        return self.stride * 2 ** (self.levels - 1)

    def extract(self, image: torch.Tensor) -> list[torch.Tensor]:
        """(B,3,H,W) image -> N feature fields at the common stride grid."""
        if image.dim() != 4:
            raise ValueError(f"expected (B,C,H,W) image, got shape {tuple(image.shape)}")
        h, w = image.shape[-2:]
        if h < self.min_image_size or w < self.min_image_size:
            raise ValueError(
                f"image {h}x{w} smaller than the minimum size {self.min_image_size} "
                f"for {self.levels} levels at stride {self.stride}"
            )
        grid = (h // self.stride, w // self.stride)
        x = self.stem(image)
        levels = []
        for down, stage, proj in zip(self.downs, self.stages, self.level_proj):
            x = stage(down(x))
            y = proj(x)
            if y.shape[-2:] != grid:
                y = F.interpolate(y, size=grid, mode="bilinear", align_corners=False)
            levels.append(y)
        return levels

    def forward(self, image: torch.Tensor) -> list[torch.Tensor]:
        return self.extract(image)


class SpecificBranch(nn.Module):
    """Two stacked blocks of (3x3 conv, batch norm, GELU, 1x1 conv)."""

    def __init__(self, channels: int):
        super().__init__()

        def block():
            return nn.Sequential(
                nn.Conv2d(channels, channels, 3, padding=1),
                nn.BatchNorm2d(channels),
                nn.GELU(),
                nn.Conv2d(channels, channels, 1),
            )

        self.block1 = block()
        self.block2 = block()

    def forward(self, x):
        return self.block2(self.block1(x))


def make_aux_head(channels: int, num_classes: int) -> nn.Module:
    return nn.Conv2d(channels, num_classes, 1)
