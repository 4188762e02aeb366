"""Iterative denoising inference.

Sampling starts from unit-variance Gaussian noise in the label-latent
space and walks the time grid: at each grid time the network predicts
logits, the prediction is re-encoded into a clean latent estimate, and a
deterministic reverse step re-noises it toward the next (shifted) time.
The final label map is the argmax of the last logits.

The model only needs three methods — ``encode_image``, ``denoise`` and
``reencode`` — so a stub denoiser can be plugged in for testing.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .schedule import NoiseSchedule, TimeGrid

_SEED_STRIDE = 1_000_003  # per-image stream: seed * stride + index


@dataclass
class StepRecord:
    t: int
    t_next: int
    t_target: int
    mean_abs: float


@dataclass
class SampleTrace:
    records: list[StepRecord] = field(default_factory=list)
    intermediate: list[torch.Tensor] | None = None


def sample(
    model,
    image: torch.Tensor,
    schedule: NoiseSchedule,
    grid: TimeGrid,
    seed: int = 0,
    latent_channels: int | None = None,
    trace: bool = False,
) -> tuple[torch.Tensor, SampleTrace]:
    """Denoise one image into a label map.

    image: (3,H,W) or (1,3,H,W) normalized tensor.  Returns the (H,W)
    long prediction and a trace whose records follow the grid exactly.
    """
    if hasattr(model, "has_finite_parameters") and not model.has_finite_parameters():
        raise RuntimeError("model state contains non-finite parameters")
    if image.dim() == 3:
        image = image.unsqueeze(0)
    if image.dim() != 4 or image.shape[0] != 1:
        raise ValueError(f"expected a single (3,H,W) image, got shape {tuple(image.shape)}")
    if latent_channels is None:
        latent_channels = getattr(model, "latent_channels")

    h, w = image.shape[-2:]
    gen = torch.Generator().manual_seed(seed)
    z = torch.randn(1, latent_channels, h, w, generator=gen)

    out = SampleTrace(intermediate=[] if trace else None)
    with torch.no_grad():
        conds = model.encode_image(image)
        logits = None
        for t, t_next, t_target in grid.transitions():
            logits = model.denoise(z, conds, t)
            z0_hat = model.reencode(logits)
            z = schedule.ddim_step(z, z0_hat, t, t_target)
            out.records.append(StepRecord(t=t, t_next=t_next, t_target=t_target, mean_abs=float(z.abs().mean())))
            if trace:
                out.intermediate.append(logits.argmax(dim=1)[0].clone())
    return logits.argmax(dim=1)[0], out


def batch_infer(
    model,
    images,
    schedule: NoiseSchedule,
    grid: TimeGrid,
    seed: int = 0,
    continue_on_error: bool = False,
    trace: bool = False,
):
    """Run :func:`sample` over a sequence of images, in input order.

    Per-image noise streams derive from (seed, index), so results do not
    depend on processing order.  Returns (predictions, traces, timings,
    errors); failed images hold None when continue_on_error is set.
    """
    predictions, traces, timings, errors = [], [], [], []
    for idx, image in enumerate(images):
        start = time.perf_counter()
        try:
            pred, tr = sample(
                model, image, schedule, grid, seed=seed * _SEED_STRIDE + idx, trace=trace
            )
        except Exception as exc:
            if not continue_on_error:
                raise
            predictions.append(None)
            traces.append(None)
            timings.append(time.perf_counter() - start)
            errors.append((idx, exc))
            continue
        predictions.append(pred)
        traces.append(tr)
        timings.append(time.perf_counter() - start)
        errors.append(None)
    return predictions, traces, timings, errors
