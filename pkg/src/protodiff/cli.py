"""Command-line entry points: make-synthetic, train, infer, eval."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from .config import Config
from .data import (
    class_palette,
    load_arrays,
    load_dataset,
    make_synthetic,
    read_image,
    read_mask,
    image_to_tensor,
    write_mask,
)
from .metrics import iou_from_confusion, confusion_matrix
from .model import build_model
from .prototypes import PrototypeBank
from .sampler import sample
from .schedule import NoiseSchedule, make_time_grid
from .training import Trainer, TrainConfig, load_model_from_checkpoint


def _cmd_make_synthetic(args) -> int:
    for split, n in (("train", args.train), ("val", args.val)):
        if n <= 0:
            continue
        manifest = make_synthetic(
            args.out,
            split,
            n,
            image_size=args.size,
            num_classes=args.classes,
            seed=args.seed if split == "train" else args.seed + 1,
            noise_rate=args.noise_rate,
            pseudo=True,
        )
        print(f"wrote {len(manifest)} {split} images to {Path(args.out) / split}")
    return 0


def _build_pools(manifest):
    images, masks, pseudos = load_arrays(manifest)
    gt_pool = [(img, m) for img, m in zip(images, masks) if m is not None]
    pseudo_pool = [(img, p) for img, p in zip(images, pseudos) if p is not None]
    return gt_pool, pseudo_pool


def _cmd_train(args) -> int:
    cfg = Config.load(args.config)
    root = cfg["data.root"]
    if not root:
        print("config key data.root must point at a dataset", file=sys.stderr)
        return 2
    manifest = load_dataset(root, "train", cfg["data.num_classes"])
    gt_pool, pseudo_pool = _build_pools(manifest)

    model = build_model(cfg, manifest.num_classes)
    bank = PrototypeBank(
        manifest.num_classes,
        K=cfg["proto.K"],
        dim=cfg["proto.dim"],
        tau=cfg["proto.tau"],
        mu=cfg["proto.mu"],
        seed=cfg["proto.seed"],
    )
    schedule = NoiseSchedule(cfg["diffusion.T"], cfg["diffusion.s_c"])
    trainer = Trainer(
        model,
        bank,
        schedule,
        TrainConfig.from_config(cfg),
        gt_pool,
        pseudo_pool,
        proto_seed=cfg["proto.seed"],
        config=cfg,
    )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config_snapshot.txt")
    with open(out / "metrics.jsonl", "w", encoding="utf-8") as log:
        history = trainer.fit(log_stream=log, out_dir=out)
    trainer.save_checkpoint(out / "checkpoint_final.pt")
    print(f"trained {trainer.iteration} iterations; final total loss {history[-1]['total']:.4f}")
    print(f"checkpoint: {out / 'checkpoint_final.pt'}")
    return 0


def _overlay(image: np.ndarray, mask: np.ndarray, num_classes: int) -> np.ndarray:
    palette = np.array(class_palette(num_classes), dtype=np.float64).reshape(256, 3)
    colors = palette[mask]
    blend = 0.55 * image.astype(np.float64) + 0.45 * colors
    return np.clip(blend, 0, 255).astype(np.uint8)


def _cmd_infer(args) -> int:
    model, cfg, payload = load_model_from_checkpoint(args.ckpt)
    if args.config:
        cfg = Config.load(args.config)
    steps = args.steps if args.steps is not None else cfg["diffusion.steps"]
    t_diff = args.t_diff if args.t_diff is not None else cfg["diffusion.t_diff"]
    schedule = NoiseSchedule(cfg["diffusion.T"], cfg["diffusion.s_c"])
    grid = make_time_grid(schedule.T, steps, t_diff)

    images_dir = Path(args.images)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = sorted(images_dir.glob("*.png"))
    if not paths:
        print(f"no .png images under {images_dir}", file=sys.stderr)
        return 2

    num_classes = payload["num_classes"]
    for idx, path in enumerate(paths):
        raw = read_image(path)
        pred, tr = sample(
            model, image_to_tensor(raw), schedule, grid, seed=args.seed * 1_000_003 + idx, trace=args.trace
        )
        mask = pred.numpy().astype(np.uint8)
        write_mask(out / path.name, mask, num_classes)
        if args.overlay:
            from PIL import Image

            Image.fromarray(_overlay(raw, mask, num_classes)).save(out / f"{path.stem}_overlay.png")
        if args.trace:
            trace_dir = out / f"{path.stem}_trace"
            trace_dir.mkdir(exist_ok=True)
            with open(trace_dir / "steps.jsonl", "w", encoding="utf-8") as fh:
                for rec in tr.records:
                    fh.write(json.dumps(rec.__dict__) + "\n")
            for step, inter in enumerate(tr.intermediate):
                write_mask(trace_dir / f"step_{step:02d}.png", inter.numpy().astype(np.uint8), num_classes)
    print(f"wrote {len(paths)} predictions to {out}")
    return 0


def _cmd_eval(args) -> int:
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    gt_files = {p.name: p for p in sorted(gt_dir.glob("*.png"))}
    pairs = [(p, gt_files[p.name]) for p in sorted(pred_dir.glob("*.png")) if p.name in gt_files]
    if not pairs:
        print("no matching prediction/reference file names", file=sys.stderr)
        return 2
    cm = np.zeros((args.classes, args.classes), dtype=np.int64)
    for pred_path, gt_path in pairs:
        cm += confusion_matrix(read_mask(pred_path), read_mask(gt_path), args.classes)
    mean_iou, per_class = iou_from_confusion(cm)
    for c, iou in enumerate(per_class):
        shown = "n/a (zero union)" if np.isnan(iou) else f"{iou:.4f}"
        print(f"class {c}: IoU {shown}")
    print(f"mIoU over {len(pairs)} images: {mean_iou:.4f}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="protodiff", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-synthetic", help="generate the synthetic shapes dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=int, default=200)
    p.add_argument("--val", type=int, default=50)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--noise-rate", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_make_synthetic)

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer", help="denoise predictions for a directory of images")
    p.add_argument("--config", default=None)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--t-diff", dest="t_diff", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", action="store_true")
    p.add_argument("--overlay", action="store_true")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("eval", help="mIoU between prediction and reference mask directories")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--classes", type=int, required=True)
    p.set_defaults(func=_cmd_eval)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
