"""Training loop: noisy-latent denoising with contrastive regularization.

Each step samples a batch mixing ground-truth and pseudo-labeled images,
encodes labels to the clean latent, corrupts it to a per-sample random
time, decodes conditioned on the image, and optimizes

    total = ce + lambda_aux * mean(aux ce) + lambda_inter * inter + lambda_intra * intra

followed by a momentum update of the prototype bank.  All randomness
flows through two seeded generators (loop + pixel subsampling) whose
states are checkpointed, so seeded runs and resumed runs reproduce loss
traces bitwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Sequence

import torch
import torch.nn.functional as F

from .config import Config
from .data import GROUND_TRUTH, PSEUDO, SegSample
from .model import ProtoDiffNet, build_model
from .prototypes import PrototypeBank
from .schedule import NoiseSchedule

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 8
    lr: float = 5e-4
    weight_decay: float = 1e-6
    lr_power: float = 0.9
    lambda_aux: float = 0.4
    lambda_inter: float = 0.1
    lambda_intra: float = 0.1
    lambda_pseudo: float = 1.0
    gt_ratio: float = 0.5
    seed: int = 0
    checkpoint_every: int = 1000
    max_pixels: int = 1024
    use_pseudo_pixels: bool = True

    def __post_init__(self):
        if self.iterations <= 0:
            raise ValueError(f"iterations must be > 0, got {self.iterations}")
        for name in ("lambda_aux", "lambda_inter", "lambda_intra", "lambda_pseudo"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0.0 <= self.gt_ratio <= 1.0:
            raise ValueError(f"gt_ratio must lie in [0, 1], got {self.gt_ratio}")

    @classmethod
    def from_config(cls, cfg: Config) -> "TrainConfig":
        return cls(
            iterations=cfg["train.iterations"],
            batch_size=cfg["train.batch_size"],
            lr=cfg["train.lr"],
            weight_decay=cfg["train.weight_decay"],
            lr_power=cfg["train.lr_power"],
            lambda_aux=cfg["train.lambda_aux"],
            lambda_inter=cfg["train.lambda_inter"],
            lambda_intra=cfg["train.lambda_intra"],
            lambda_pseudo=cfg["train.lambda_pseudo"],
            gt_ratio=cfg["train.gt_ratio"],
            seed=cfg["train.seed"],
            checkpoint_every=cfg["train.checkpoint_every"],
            max_pixels=cfg["proto.max_pixels"],
            use_pseudo_pixels=cfg["proto.use_pseudo"],
        )


def build_batch(
    gt_pool: Sequence[tuple[torch.Tensor, torch.Tensor]],
    pseudo_pool: Sequence[tuple[torch.Tensor, torch.Tensor]],
    batch_size: int,
    ratio: float,
    rng: torch.Generator,
) -> list[SegSample]:
    """Draw a batch of samples tagged with their label source.

    ratio is the ground-truth fraction; counts round to the nearest
    integer.  Pools are (image, label) pairs; sampling is uniform with
    replacement through the given generator.
    """
    n_gt = round(ratio * batch_size)
    n_pseudo = batch_size - n_gt
    if n_gt > 0 and len(gt_pool) == 0:
        raise ValueError("ground-truth pool is empty but gt_ratio requires GT samples")
    if n_pseudo > 0 and len(pseudo_pool) == 0:
        raise ValueError("pseudo pool is empty but gt_ratio requires pseudo samples")
    batch = []
    if n_gt > 0:
        for i in torch.randint(len(gt_pool), (n_gt,), generator=rng):
            img, lab = gt_pool[int(i)]
            batch.append(SegSample(image=img, label=lab, source=GROUND_TRUTH))
    if n_pseudo > 0:
        for i in torch.randint(len(pseudo_pool), (n_pseudo,), generator=rng):
            img, lab = pseudo_pool[int(i)]
            batch.append(SegSample(image=img, label=lab, source=PSEUDO))
    return batch


def compose_loss(ce_final, ce_aux, inter, intra, cfg: TrainConfig):
    """Weighted sum of the loss components (pure arithmetic)."""
    aux = sum(ce_aux) / len(ce_aux) if len(ce_aux) else 0.0
    return ce_final + cfg.lambda_aux * aux + cfg.lambda_inter * inter + cfg.lambda_intra * intra


def _weighted_ce(logits: torch.Tensor, labels: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """Per-pixel CE with per-sample weights, normalized by the weight mass."""
    ce = F.cross_entropy(logits, labels, reduction="none")
    w = weights.view(-1, 1, 1).expand_as(ce)
    mass = w.sum()
    if mass == 0:
        return logits.sum() * 0.0
    return (ce * w).sum() / mass


class Trainer:
    """Owns the model, prototype bank, optimizer and all loop randomness."""

    def __init__(
        self,
        model: ProtoDiffNet,
        bank: PrototypeBank,
        schedule: NoiseSchedule,
        cfg: TrainConfig,
        gt_pool,
        pseudo_pool,
        proto_seed: int = 0,
        config: Config | None = None,
    ):
        self.model = model
        self.bank = bank
        self.schedule = schedule
        self.cfg = cfg
        self.config = config
        self.gt_pool = gt_pool
        self.pseudo_pool = pseudo_pool
        self.optimizer = torch.optim.Adam(
            model.parameters(), lr=cfg.lr, betas=(0.9, 0.999), weight_decay=cfg.weight_decay
        )
        self.loop_rng = torch.Generator().manual_seed(cfg.seed)
        self.pixel_rng = torch.Generator().manual_seed(proto_seed)
        self.proto_seed = proto_seed
        self.iteration = 0
        self._last_pixels = None

    # -- learning rate -----------------------------------------------------

    def lr_at(self, iteration: int) -> float:
        frac = min(iteration / self.cfg.iterations, 1.0)
        return self.cfg.lr * (1.0 - frac) ** self.cfg.lr_power

    # -- one optimization step ----------------------------------------------

    def train_step(self, batch: list[SegSample]) -> dict:
        model, cfg = self.model, self.cfg
        model.train()
        images = torch.stack([s.image for s in batch])
        labels = torch.stack([s.label for s in batch])
        is_pseudo = torch.tensor([s.source == PSEUDO for s in batch])
        weights = torch.ones(len(batch))
        weights[is_pseudo] = cfg.lambda_pseudo

        t = torch.randint(1, self.schedule.T + 1, (len(batch),), generator=self.loop_rng)
        z0 = model.encode_label_map(labels)
        eps = torch.randn(z0.shape, generator=self.loop_rng)
        z_t = torch.stack(
            [self.schedule.forward_noise(z0[i], int(t[i]), eps[i]) for i in range(len(batch))]
        )

        logits, aux_logits = model(z_t, images, t)
        ce = _weighted_ce(logits, labels, weights)
        ce_aux = []
        for aux in aux_logits:
            small = F.interpolate(labels.unsqueeze(1).float(), size=aux.shape[-2:], mode="nearest-exact")
            ce_aux.append(_weighted_ce(aux, small.squeeze(1).long(), weights))

        inter, intra = self._contrastive_terms(z0, labels, is_pseudo)
        total = compose_loss(ce, ce_aux, inter, intra, cfg)

        if not torch.isfinite(total):
            parts = {"ce": float(ce), "aux": [float(a) for a in ce_aux], "inter": float(inter), "intra": float(intra)}
            raise RuntimeError(
                f"non-finite loss at iteration {self.iteration}: {parts}; "
                f"batch sources {[s.source for s in batch]}"
            )

        lr = self.lr_at(self.iteration)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        self.optimizer.zero_grad()
        total.backward()
        self.optimizer.step()

        if self._last_pixels is not None:
            emb, classes, ks = self._last_pixels
            self.bank.update(emb, classes, ks)

        self.iteration += 1
        aux_mean = float(sum(float(a) for a in ce_aux) / len(ce_aux)) if ce_aux else 0.0
        return {
            "iter": self.iteration,
            "lr": lr,
            "ce": float(ce),
            "aux": aux_mean,
            "inter": float(inter),
            "intra": float(intra),
            "total": float(total),
        }

    def _contrastive_terms(self, z0: torch.Tensor, labels: torch.Tensor, is_pseudo: torch.Tensor):
        """Project the clean latent, subsample pixels, compute both losses."""
        cfg = self.cfg
        self._last_pixels = None
        if cfg.lambda_inter == 0 and cfg.lambda_intra == 0:
            zero = torch.zeros(())
            return zero, zero
        emb_field = self.model.projector(z0)  # (B, D, H, W)
        b, d, h, w = emb_field.shape
        emb_sel, cls_sel = [], []
        for i in range(b):
            if bool(is_pseudo[i]) and not cfg.use_pseudo_pixels:
                continue
            n = h * w
            take = min(cfg.max_pixels, n)
            idx = torch.randperm(n, generator=self.pixel_rng)[:take]
            emb_sel.append(emb_field[i].reshape(d, n).T[idx])
            cls_sel.append(labels[i].reshape(n)[idx])
        if not emb_sel:
            zero = torch.zeros(())
            return zero, zero
        emb = torch.cat(emb_sel)
        classes = torch.cat(cls_sel)
        ks = self.bank.assign(emb.detach(), classes)
        inter = self.bank.inter_loss(emb, classes, ks).mean()
        intra = self.bank.intra_loss(emb, classes, ks).mean()
        self._last_pixels = (emb.detach(), classes, ks)
        return inter, intra

    # -- full loop -----------------------------------------------------------

    def fit(
        self,
        iterations: int | None = None,
        log_stream: IO[str] | None = None,
        out_dir: str | Path | None = None,
    ) -> list[dict]:
        iterations = self.cfg.iterations if iterations is None else iterations
        out_dir = Path(out_dir) if out_dir is not None else None
        history = []
        for _ in range(iterations):
            batch = build_batch(
                self.gt_pool, self.pseudo_pool, self.cfg.batch_size, self.cfg.gt_ratio, self.loop_rng
            )
            record = self.train_step(batch)
            history.append(record)
            if log_stream is not None:
                log_stream.write(json.dumps(record) + "\n")
            if out_dir is not None and self.iteration % self.cfg.checkpoint_every == 0:
                self.save_checkpoint(out_dir / f"checkpoint_{self.iteration:06d}.pt")
        return history

    # -- checkpointing ---------------------------------------------------------

    def save_checkpoint(self, path: str | Path) -> None:
        payload = {
            "version": CHECKPOINT_VERSION,
            "iteration": self.iteration,
            "num_classes": self.model.num_classes,
            "model": self.model.state_dict(),
            "prototypes": self.bank.protos,
            "optimizer": self.optimizer.state_dict(),
            "loop_rng": self.loop_rng.get_state(),
            "pixel_rng": self.pixel_rng.get_state(),
            "train_config": self.cfg.__dict__,
            "proto_seed": self.proto_seed,
            "config": self.config.as_dict() if self.config is not None else None,
        }
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        torch.save(payload, path)

    def load_checkpoint(self, path: str | Path) -> None:
        payload = torch.load(path, weights_only=False)
        if payload.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {payload.get('version')!r}")
        self.model.load_state_dict(payload["model"])
        self.bank.protos = payload["prototypes"]
        self.optimizer.load_state_dict(payload["optimizer"])
        self.loop_rng.set_state(payload["loop_rng"])
        self.pixel_rng.set_state(payload["pixel_rng"])
        self.iteration = payload["iteration"]


def load_model_from_checkpoint(path: str | Path) -> tuple[ProtoDiffNet, Config, dict]:
    """Rebuild the network for inference from a checkpoint's config snapshot."""
    payload = torch.load(path, weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')!r}")
    if payload.get("config") is None:
        raise ValueError(f"checkpoint {path} carries no config snapshot")
    cfg = Config(payload["config"])
    model = build_model(cfg, payload["num_classes"])
    model.load_state_dict(payload["model"])
    model.eval()
    return model, cfg, payload
