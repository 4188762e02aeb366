"""Full denoising network: conditioning, label codec, projector, decoder."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .backbone import SpecificBranch, TinyResBackbone, make_aux_head
from .config import Config
from .decoder import DiffusionDecoder
from .labels import LabelEncoder, encode_labels, one_hot, reencode_prediction
from .prototypes import LatentProjector


@dataclass
class Conditions:
    """Cached per-image conditioning: raw levels, specific features, aux logits."""

    x_levels: list[torch.Tensor]
    f_levels: list[torch.Tensor]
    aux_logits: list[torch.Tensor]
    image_size: tuple[int, int]


class ProtoDiffNet(nn.Module):
    def __init__(
        self,
        num_classes: int,
        channels: int = 64,
        levels: int = 4,
        stride: int = 4,
        latent_channels: int = 8,
        proj_dim: int = 16,
        time_dim: int = 64,
        pred_blocks: int = 3,
        scale_s: float = 0.1,
        reencode_mode: str = "hard",
    ):
        super().__init__()
        if num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {num_classes}")
        self.num_classes = num_classes
        self.latent_channels = latent_channels
        self.scale_s = scale_s
        self.reencode_mode = reencode_mode

        self.backbone = TinyResBackbone(channels=channels, levels=levels, stride=stride)
        self.branches = nn.ModuleList(SpecificBranch(channels) for _ in range(levels))
        self.aux_heads = nn.ModuleList(make_aux_head(channels, num_classes) for _ in range(levels))
        self.label_encoder = LabelEncoder(num_classes, latent_channels)
        self.projector = LatentProjector(latent_channels, proj_dim)
        self.decoder = DiffusionDecoder(
            levels=levels,
            latent_channels=latent_channels,
            channels=channels,
            num_classes=num_classes,
            time_dim=time_dim,
            blocks=pred_blocks,
        )

    def encode_image(self, image: torch.Tensor) -> Conditions:
        x_levels = self.backbone.extract(image)
        f_levels = [branch(x) for branch, x in zip(self.branches, x_levels)]
        aux_logits = [head(f) for head, f in zip(self.aux_heads, f_levels)]
        return Conditions(
            x_levels=x_levels,
            f_levels=f_levels,
            aux_logits=aux_logits,
            image_size=tuple(image.shape[-2:]),
        )

    def denoise(self, z_t: torch.Tensor, conds: Conditions, t) -> torch.Tensor:
        """Predict segmentation logits from the noisy latent and conditions."""
        if not torch.is_tensor(t):
            t = torch.full((z_t.shape[0],), int(t), dtype=torch.long, device=z_t.device)
        masks = self.decoder.level_interaction(z_t, conds.x_levels, t)
        aggregated = self.decoder.aggregate(masks, conds.f_levels)
        return self.decoder.predict(aggregated, conds.image_size)

    def forward(self, z_t: torch.Tensor, image: torch.Tensor, t) -> tuple[torch.Tensor, list[torch.Tensor]]:
        conds = self.encode_image(image)
        return self.denoise(z_t, conds, t), conds.aux_logits

    def encode_label_map(self, labels: torch.Tensor) -> torch.Tensor:
        """(B,H,W) integer labels -> clean latent z0 in [-s, +s]."""
        return encode_labels(one_hot(labels, self.num_classes), self.label_encoder, self.scale_s)

    def reencode(self, logits: torch.Tensor) -> torch.Tensor:
        return reencode_prediction(logits, self.label_encoder, self.scale_s, self.reencode_mode)

    def has_finite_parameters(self) -> bool:
        return all(torch.isfinite(p).all() for p in self.parameters())


def build_model(cfg: Config, num_classes: int, seed: int | None = None) -> ProtoDiffNet:
    """Construct a network from config with seeded parameter init."""
    if seed is None:
        seed = cfg["train.seed"]
    torch.manual_seed(seed)
    return ProtoDiffNet(
        num_classes=num_classes,
        channels=cfg["backbone.channels"],
        levels=cfg["backbone.levels"],
        stride=cfg["backbone.stride"],
        latent_channels=cfg["label.latent_channels"],
        proj_dim=cfg["proto.dim"],
        time_dim=cfg["decoder.time_embed_dim"],
        pred_blocks=cfg["decoder.blocks"],
        scale_s=cfg["label.scale_s"],
        reencode_mode=cfg["label.reencode_mode"],
    )
