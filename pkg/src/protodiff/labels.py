"""Dense label maps <-> scaled label latents.

Discrete label maps are one-hot encoded, passed through a small learned
encoder (a 1x1 then a 3x3 convolution, no nonlinearity), min-max
normalized to [-1, +1] per sample and multiplied by the scale s.  The
same path re-encodes model predictions between reverse steps.
"""

from __future__ import annotations

import warnings

import torch
import torch.nn as nn
import torch.nn.functional as F


def one_hot(labels: torch.Tensor, num_classes: int) -> torch.Tensor:
    """(B,H,W) or (H,W) integer map -> (B,C,H,W) float one-hot field."""
    if labels.dim() == 2:
        labels = labels.unsqueeze(0)
    if labels.dim() != 3:
        raise ValueError(f"expected (B,H,W) or (H,W) label map, got shape {tuple(labels.shape)}")
    if labels.numel() == 0:
        raise ValueError("empty label map")
    lo, hi = int(labels.min()), int(labels.max())
    if lo < 0 or hi >= num_classes:
        raise ValueError(f"label indices span [{lo}, {hi}], outside [0, {num_classes})")
    return F.one_hot(labels.long(), num_classes).permute(0, 3, 1, 2).float()


class LabelEncoder(nn.Module):
    """Two-stage local linear filter: 1x1 conv then 3x3 conv."""

    def __init__(self, num_classes: int, latent_channels: int = 8):
        super().__init__()
        self.num_classes = num_classes
        self.latent_channels = latent_channels
        self.conv1 = nn.Conv2d(num_classes, latent_channels, kernel_size=1)
        self.conv2 = nn.Conv2d(latent_channels, latent_channels, kernel_size=3, padding=1)

    def forward(self, onehot: torch.Tensor) -> torch.Tensor:
        if onehot.dim() != 4 or onehot.shape[1] != self.num_classes:
            raise ValueError(
                f"expected (B,{self.num_classes},H,W) one-hot field, got shape {tuple(onehot.shape)}"
            )
        return self.conv2(self.conv1(onehot))


def encode_labels(onehot: torch.Tensor, encoder: LabelEncoder, s: float) -> torch.Tensor:
    """Encode a one-hot (or soft) label field into the clean latent z0.

    The encoder output is affinely rescaled per sample so its minimum
    maps to -1 and its maximum to +1, then multiplied by s.  A constant
    (degenerate) output maps to zeros.
    """
    if s <= 0:
        raise ValueError(f"scale s must be > 0, got {s}")
    raw = encoder(onehot)
    flat = raw.reshape(raw.shape[0], -1)
    mn = flat.amin(dim=1).view(-1, 1, 1, 1)
    mx = flat.amax(dim=1).view(-1, 1, 1, 1)
    span = mx - mn
    degenerate = span.reshape(-1) == 0
    if degenerate.any():
        warnings.warn("constant label-encoder output; latent set to zeros", RuntimeWarning)
        span = torch.where(span == 0, torch.ones_like(span), span)
        normalized = ((raw - mn) / span) * 2.0 - 1.0
        normalized = torch.where(degenerate.view(-1, 1, 1, 1), torch.zeros_like(normalized), normalized)
    else:
        normalized = ((raw - mn) / span) * 2.0 - 1.0
    return normalized * s


def reencode_prediction(
    logits: torch.Tensor, encoder: LabelEncoder, s: float, mode: str = "hard"
) -> torch.Tensor:
    """Turn segmentation logits back into a clean latent z0_hat.

    hard: argmax -> one-hot -> encode (argmax ties go to the lowest class
    index).  soft: per-pixel softmax -> encode.
    """
    if not torch.isfinite(logits).all():
        raise ValueError("non-finite logits cannot be re-encoded")
    if mode == "hard":
        labels = logits.argmax(dim=1)
        field = one_hot(labels, encoder.num_classes)
    elif mode == "soft":
        field = F.softmax(logits, dim=1)
    else:
        raise ValueError(f"unknown reencode mode {mode!r}; expected 'hard' or 'soft'")
    return encode_labels(field, encoder, s)
