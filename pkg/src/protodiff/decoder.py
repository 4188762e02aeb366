"""Diffusion decoder: level interaction, mask-gated aggregation, prediction.

The noisy label latent is resampled to the feature grid, concatenated
with each raw backbone level and turned into a per-level sigmoid mask.
Masks gate the visual-specific condition features, which are summed and
decoded into segmentation logits at image resolution.  Time enters as a
sinusoidal embedding added channelwise to each interaction input.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


def timestep_embedding(t: torch.Tensor, dim: int, max_period: int = 10_000) -> torch.Tensor:
    """(B,) integer times -> (B, dim) sinusoidal embedding."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float32, device=t.device) / half)
    args = t.float().unsqueeze(1) * freqs.unsqueeze(0)
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    if dim % 2 == 1:
        emb = F.pad(emb, (0, 1))
    return emb


class LevelInteraction(nn.Module):
    """Concat(z_t, X_l) + time -> one sigmoid mask map per level."""

    def __init__(self, latent_channels: int, channels: int, time_dim: int):
        super().__init__()
        in_ch = latent_channels + channels
        self.time_proj = nn.Linear(time_dim, in_ch)
        self.block1 = nn.Sequential(
            nn.Conv2d(in_ch, channels, 3, padding=1),
            nn.BatchNorm2d(channels),
            nn.GELU(),
            nn.Conv2d(channels, channels, 1),
        )
        self.block2 = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.BatchNorm2d(channels),
            nn.GELU(),
            nn.Conv2d(channels, channels, 1),
        )
        self.to_mask = nn.Conv2d(channels, 1, 1)

    def forward(self, z_t: torch.Tensor, x_level: torch.Tensor, time_emb: torch.Tensor) -> torch.Tensor:
        if z_t.shape[-2:] != x_level.shape[-2:]:
            raise ValueError(
                f"latent grid {tuple(z_t.shape[-2:])} != feature grid {tuple(x_level.shape[-2:])}"
            )
        x = torch.cat([z_t, x_level], dim=1)
        x = x + self.time_proj(time_emb).unsqueeze(-1).unsqueeze(-1)
        x = self.block2(self.block1(x))
        return torch.sigmoid(self.to_mask(x))


class PredictionBranch(nn.Module):
    """Stacked conv blocks mapping aggregated features to class logits."""

    def __init__(self, channels: int, num_classes: int, blocks: int = 3):
        super().__init__()
        if blocks < 1:
            raise ValueError(f"need at least 1 block, got {blocks}")
        layers = []
        for i in range(blocks):
            out_ch = num_classes if i == blocks - 1 else channels
            layers.append(
                nn.Sequential(
                    nn.Conv2d(channels, channels, 3, padding=1),
                    nn.BatchNorm2d(channels),
                    nn.GELU(),
                    nn.Conv2d(channels, out_ch, 1),
                )
            )
        self.blocks = nn.Sequential(*layers)

    def forward(self, x):
        return self.blocks(x)


class DiffusionDecoder(nn.Module):
    def __init__(
        self,
        levels: int,
        latent_channels: int,
        channels: int,
        num_classes: int,
        time_dim: int = 64,
        blocks: int = 3,
    ):
        super().__init__()
        self.time_dim = time_dim
        self.interactions = nn.ModuleList(
            LevelInteraction(latent_channels, channels, time_dim) for _ in range(levels)
        )
        self.prediction = PredictionBranch(channels, num_classes, blocks)

    def level_interaction(
        self, z_t: torch.Tensor, x_levels: list[torch.Tensor], t: torch.Tensor
    ) -> list[torch.Tensor]:
        """Per-level gating masks in (0, 1).

        z_t is bilinearly resampled to the feature grid; t is a (B,)
        integer tensor.
        """
        if len(x_levels) != len(self.interactions):
            raise ValueError(f"got {len(x_levels)} levels, model has {len(self.interactions)}")
        grid = x_levels[0].shape[-2:]
        if z_t.shape[-2:] != grid:
            z_t = F.interpolate(z_t, size=grid, mode="bilinear", align_corners=False)
        emb = timestep_embedding(t, self.time_dim)
        return [inter(z_t, x, emb) for inter, x in zip(self.interactions, x_levels)]

    @staticmethod
    def aggregate(masks: list[torch.Tensor], cond_levels: list[torch.Tensor]) -> torch.Tensor:
        """Mask-weighted sum of condition features, masks broadcast over channels."""
        if len(masks) != len(cond_levels):
            raise ValueError(f"{len(masks)} masks vs {len(cond_levels)} condition levels")
        out = masks[0] * cond_levels[0]
        for m, f in zip(masks[1:], cond_levels[1:]):
            if m.shape[-2:] != f.shape[-2:]:
                raise ValueError(f"mask grid {tuple(m.shape[-2:])} != feature grid {tuple(f.shape[-2:])}")
            out = out + m * f
        return out

    def predict(self, aggregated: torch.Tensor, out_size: tuple[int, int]) -> torch.Tensor:
        """Aggregated features -> logits upsampled to image resolution."""
        logits = self.prediction(aggregated)
        if logits.shape[-2:] != tuple(out_size):
            logits = F.interpolate(logits, size=out_size, mode="bilinear", align_corners=False)
        return logits
