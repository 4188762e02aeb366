"""Flat key=value configuration with documented defaults.

Config files are plain text, one ``section.key = value`` per line, ``#``
starts a comment.  Unknown keys are rejected so typos fail loudly.  The
environment variable ``PROTODIFF_SEED`` overrides every seed key.
"""

from __future__ import annotations

import os
from typing import Any

# key -> (default, help)
DEFAULTS: dict[str, tuple[Any, str]] = {
    # diffusion process
    "diffusion.T": (1000, "total diffusion steps"),
    "diffusion.s_c": (0.008, "cosine schedule offset"),
    "diffusion.steps": (3, "number of denoising steps at inference"),
    "diffusion.t_diff": (1, "asymmetric re-noising time shift at inference"),
    # label latent encoding
    "label.scale_s": (0.1, "scale applied to the normalized label latent"),
    "label.latent_channels": (8, "channel count of the label latent"),
    "label.reencode_mode": ("hard", "how predictions are re-encoded: hard|soft"),
    # prototype bank
    "proto.K": (10, "prototypes per class"),
    "proto.tau": (0.1, "contrastive temperature"),
    "proto.mu": (0.999, "prototype EMA momentum"),
    "proto.dim": (16, "dimension of projected pixel embeddings"),
    "proto.max_pixels": (1024, "labeled pixels per image joining the contrastive terms"),
    "proto.seed": (0, "seed for prototype init and pixel subsampling"),
    "proto.use_pseudo": (True, "let pseudo-labeled pixels drive prototypes and losses"),
    # visual backbone
    "backbone.kind": ("tiny_res", "backbone architecture"),
    "backbone.channels": (64, "channel width of the condition features"),
    "backbone.levels": (4, "number of feature levels"),
    "backbone.stride": (4, "stride of the common feature grid"),
    # diffusion decoder
    "decoder.blocks": (3, "convolutional blocks in the prediction branch"),
    "decoder.time_embed_dim": (64, "sinusoidal time embedding width"),
    # training
    "train.iterations": (2000, "optimizer steps"),
    "train.batch_size": (8, "samples per step"),
    "train.lr": (5e-4, "initial learning rate"),
    "train.weight_decay": (1e-6, "optimizer weight decay"),
    "train.lr_power": (0.9, "polynomial learning-rate decay exponent"),
    "train.lambda_aux": (0.4, "weight of the auxiliary cross-entropy terms"),
    "train.lambda_inter": (0.1, "weight of the inter-class contrastive loss"),
    "train.lambda_intra": (0.1, "weight of the intra-class compactness loss"),
    "train.lambda_pseudo": (1.0, "per-pixel CE weight for pseudo-labeled samples"),
    "train.gt_ratio": (0.5, "fraction of each batch drawn from the GT pool"),
    "train.seed": (0, "master seed for training"),
    "train.checkpoint_every": (1000, "iterations between periodic checkpoints"),
    # data
    "data.root": ("", "dataset root directory"),
    "data.num_classes": (3, "semantic classes incl. background"),
    "data.image_size": (64, "synthetic image side length"),
}

SEED_KEYS = ("train.seed", "proto.seed")


class Config:
    """Typed view over a flat key-value mapping with defaults."""

    def __init__(self, values: dict[str, Any] | None = None):
        self._values = {k: v for k, (v, _) in DEFAULTS.items()}
        if values:
            for k, v in values.items():
                self.set(k, v)
        self._apply_env()

    def _apply_env(self) -> None:
        env_seed = os.environ.get("PROTODIFF_SEED")
        if env_seed is not None:
            for key in SEED_KEYS:
                self._values[key] = int(env_seed)

    def set(self, key: str, value: Any) -> None:
        if key not in DEFAULTS:
            raise KeyError(f"unknown config key {key!r}")
        default = DEFAULTS[key][0]
        self._values[key] = _coerce(key, value, type(default))

    def get(self, key: str) -> Any:
        if key not in DEFAULTS:
            raise KeyError(f"unknown config key {key!r}")
        return self._values[key]

    def __getitem__(self, key: str) -> Any:
        return self.get(key)

    def as_dict(self) -> dict[str, Any]:
        return dict(self._values)

    @classmethod
    def load(cls, path: str) -> "Config":
        values: dict[str, Any] = {}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
                key, value = (part.strip() for part in line.split("=", 1))
                values[key] = value
        return cls(values)

    def dump(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for key in sorted(self._values):
                fh.write(f"{key} = {self._values[key]}  # {DEFAULTS[key][1]}\n")


def _coerce(key: str, value: Any, kind: type) -> Any:
    if isinstance(value, kind) and not (kind is int and isinstance(value, bool)):
        return value
    text = str(value).strip()
    try:
        if kind is bool:
            if text.lower() in ("true", "1", "yes", "on"):
                return True
            if text.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError as exc:
        raise ValueError(f"config key {key!r}: cannot parse {value!r} as {kind.__name__}") from exc
