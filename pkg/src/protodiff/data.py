"""Dataset I/O and the synthetic shapes benchmark.

Layout: ``<root>/<split>/images/*.png`` (RGB), ``<root>/<split>/masks/*.png``
and optional ``<root>/<split>/pseudo_masks/*.png`` (8-bit indexed, pixel
value = class index).  The synthetic generator paints colored shapes —
circle, rectangle, vessel-like curve — over a textured background and can
emit corrupted pseudo masks emulating noisy machine-generated labels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

GROUND_TRUTH = "ground_truth"
PSEUDO = "pseudo"

# indexed-color palette: background black, then saturated class colors
_PALETTE_COLORS = [
    (0, 0, 0), (230, 60, 60), (60, 110, 230), (60, 200, 90), (235, 200, 50),
    (200, 70, 210), (70, 210, 210), (240, 140, 40), (150, 150, 150),
]


def class_palette(num_classes: int) -> list[int]:
    colors = [_PALETTE_COLORS[c % len(_PALETTE_COLORS)] for c in range(num_classes)]
    flat = [v for rgb in colors for v in rgb]
    return flat + [0] * (768 - len(flat))


def write_mask(path: str | Path, mask: np.ndarray, num_classes: int) -> None:
    img = Image.fromarray(mask.astype(np.uint8), mode="P")
    img.putpalette(class_palette(max(num_classes, int(mask.max()) + 1)))
    img.save(path)


def read_mask(path: str | Path) -> np.ndarray:
    return np.array(Image.open(path), dtype=np.uint8)


def read_image(path: str | Path) -> np.ndarray:
    return np.array(Image.open(path).convert("RGB"), dtype=np.uint8)


def image_to_tensor(image: np.ndarray) -> torch.Tensor:
    """uint8 HxWx3 -> float (3,H,W) in [-1, 1]."""
    x = torch.from_numpy(np.ascontiguousarray(image)).float().permute(2, 0, 1) / 255.0
    return x * 2.0 - 1.0


@dataclass
class SegSample:
    image: torch.Tensor  # (3,H,W) normalized
    label: torch.Tensor  # (H,W) long
    source: str  # GROUND_TRUTH or PSEUDO


@dataclass
class ManifestEntry:
    stem: str
    image: Path
    mask: Path | None
    pseudo_mask: Path | None


@dataclass
class DatasetManifest:
    root: Path
    split: str
    num_classes: int
    entries: list[ManifestEntry] = field(default_factory=list)

    @property
    def gt_entries(self) -> list[ManifestEntry]:
        return [e for e in self.entries if e.mask is not None]

    @property
    def pseudo_entries(self) -> list[ManifestEntry]:
        return [e for e in self.entries if e.pseudo_mask is not None]

    def __len__(self) -> int:
        return len(self.entries)


def load_dataset(root: str | Path, split: str, num_classes: int | None = None) -> DatasetManifest:
    """Scan a split directory into a manifest, validating masks eagerly.

    Entries are ordered lexicographically by filename.  num_classes falls
    back to the generator's meta.json, then to the largest index found.
    """
    root = Path(root)
    split_dir = root / split
    images_dir = split_dir / "images"
    masks_dir = split_dir / "masks"
    pseudo_dir = split_dir / "pseudo_masks"
    if not images_dir.is_dir():
        raise FileNotFoundError(f"no images directory at {images_dir}")

    if num_classes is None:
        meta_path = root / "meta.json"
        if meta_path.exists():
            num_classes = int(json.loads(meta_path.read_text())["num_classes"])

    entries = []
    max_seen = -1
    for image_path in sorted(images_dir.glob("*.png")):
        stem = image_path.stem
        mask_path = masks_dir / image_path.name
        if masks_dir.is_dir() and not mask_path.exists():
            raise FileNotFoundError(f"missing mask for {image_path.name} in {masks_dir}")
        mask_path = mask_path if mask_path.exists() else None
        pseudo_path = pseudo_dir / image_path.name
        pseudo_path = pseudo_path if pseudo_path.exists() else None
        for p in (mask_path, pseudo_path):
            if p is not None:
                m = read_mask(p)
                max_seen = max(max_seen, int(m.max()))
                if num_classes is not None and int(m.max()) >= num_classes:
                    raise ValueError(
                        f"mask {p} contains class index {int(m.max())} >= num_classes={num_classes}"
                    )
        entries.append(ManifestEntry(stem=stem, image=image_path, mask=mask_path, pseudo_mask=pseudo_path))

    if num_classes is None:
        num_classes = max_seen + 1 if max_seen >= 0 else 2
    return DatasetManifest(root=root, split=split, num_classes=num_classes, entries=entries)


def load_arrays(manifest: DatasetManifest):
    """Materialize a manifest into memory tensors (desk-scale datasets)."""
    images, masks, pseudos = [], [], []
    for e in manifest.entries:
        images.append(image_to_tensor(read_image(e.image)))
        masks.append(torch.from_numpy(read_mask(e.mask).astype(np.int64)) if e.mask else None)
        pseudos.append(torch.from_numpy(read_mask(e.pseudo_mask).astype(np.int64)) if e.pseudo_mask else None)
    return images, masks, pseudos


# ---------------------------------------------------------------------------
# synthetic shapes


def _shift(mask: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(mask)
    h, w = mask.shape
    ys = slice(max(dy, 0), h + min(dy, 0))
    xs = slice(max(dx, 0), w + min(dx, 0))
    ys_src = slice(max(-dy, 0), h + min(-dy, 0))
    xs_src = slice(max(-dx, 0), w + min(-dx, 0))
    out[ys, xs] = mask[ys_src, xs_src]
    return out


def _dilate(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        out |= _shift(mask, dy, dx)
    return out


def _erode(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        out &= _shift(mask, dy, dx)
    return out


def _textured_background(rng: np.random.Generator, size: int) -> np.ndarray:
    base = rng.uniform(40, 110, size=3)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    ramp = rng.uniform(-30, 30) * xx + rng.uniform(-30, 30) * yy
    img = base[None, None, :] + ramp[..., None] + rng.normal(0, 8, size=(size, size, 3))
    return img


_CLASS_BASE_COLORS = [
    (210, 70, 70),  # class 1: warm red
    (70, 100, 215),  # class 2: blue
    (80, 190, 100),  # class 3: green
    (220, 190, 70),  # class 4: yellow
    (190, 80, 200),  # class 5: purple
]


def _draw_circle(rng, size):
    r = rng.uniform(max(6, size * 0.12), size * 0.28)
    cy = rng.uniform(r, size - r)
    cx = rng.uniform(r, size - r)
    yy, xx = np.mgrid[0:size, 0:size]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r**2


def _draw_rectangle(rng, size):
    hh = rng.uniform(max(5, size * 0.10), size * 0.25)
    hw = rng.uniform(max(5, size * 0.10), size * 0.25)
    cy = rng.uniform(hh, size - hh)
    cx = rng.uniform(hw, size - hw)
    yy, xx = np.mgrid[0:size, 0:size]
    return (np.abs(yy - cy) <= hh) & (np.abs(xx - cx) <= hw)


def _draw_vessel(rng, size):
    # quadratic bezier tube of random thickness
    pts = rng.uniform(0, size, size=(3, 2))
    ts = np.linspace(0.0, 1.0, 4 * size)[:, None]
    curve = ((1 - ts) ** 2) * pts[0] + 2 * ts * (1 - ts) * pts[1] + (ts**2) * pts[2]
    width = rng.uniform(1.5, max(2.5, size * 0.05))
    yy, xx = np.mgrid[0:size, 0:size]
    d2 = (yy[..., None] - curve[:, 0]) ** 2 + (xx[..., None] - curve[:, 1]) ** 2
    return d2.min(axis=-1) <= width**2


_SHAPE_PAINTERS = [_draw_circle, _draw_rectangle, _draw_vessel]


def _corrupt_mask(rng: np.random.Generator, mask: np.ndarray, num_classes: int, rate: float) -> np.ndarray:
    """Boundary erosion/dilation of one class region plus random flips."""
    out = mask.copy()
    if rate <= 0:
        return out
    present = [c for c in range(1, num_classes) if (mask == c).any()]
    if present and rng.random() < 0.5:
        c = int(rng.choice(present))
        region = mask == c
        morphed = _erode(region) if rng.random() < 0.5 else _dilate(region)
        out[region & ~morphed] = 0
        out[morphed & ~region] = c
    flips = rng.random(mask.shape) < rate
    random_other = (out + rng.integers(1, num_classes, size=mask.shape)) % num_classes
    out[flips] = random_other[flips]
    return out.astype(np.uint8)


def make_synthetic(
    root: str | Path,
    split: str,
    n: int,
    image_size: int = 64,
    num_classes: int = 3,
    seed: int = 0,
    noise_rate: float = 0.0,
    pseudo: bool = True,
) -> DatasetManifest:
    """Write n synthetic images + masks (+ corrupted pseudo masks) to disk.

    Each image contains one instance of every foreground class; shape kind
    cycles circle / rectangle / vessel with the class index.  Deterministic
    for a fixed (seed, split): rerunning rewrites bitwise-identical files.
    """
    if num_classes < 2:
        raise ValueError(f"need num_classes >= 2, got {num_classes}")
    root = Path(root)
    split_dir = root / split
    (split_dir / "images").mkdir(parents=True, exist_ok=True)
    (split_dir / "masks").mkdir(parents=True, exist_ok=True)
    if pseudo:
        (split_dir / "pseudo_masks").mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    for idx in range(n):
        img = _textured_background(rng, image_size)
        mask = np.zeros((image_size, image_size), dtype=np.uint8)
        for c in range(1, num_classes):
            painter = _SHAPE_PAINTERS[(c - 1) % len(_SHAPE_PAINTERS)]
            region = painter(rng, image_size)
            base = np.array(_CLASS_BASE_COLORS[(c - 1) % len(_CLASS_BASE_COLORS)], dtype=np.float64)
            color = base + rng.uniform(-25, 25, size=3)
            img[region] = color[None, :] + rng.normal(0, 6, size=(int(region.sum()), 3))
            mask[region] = c
        img = np.clip(img, 0, 255).astype(np.uint8)

        name = f"img_{idx:05d}.png"
        Image.fromarray(img, mode="RGB").save(split_dir / "images" / name)
        write_mask(split_dir / "masks" / name, mask, num_classes)
        if pseudo:
            corrupted = _corrupt_mask(rng, mask, num_classes, noise_rate)
            write_mask(split_dir / "pseudo_masks" / name, corrupted, num_classes)

    meta = {"num_classes": num_classes, "image_size": image_size, "seed": seed, "noise_rate": noise_rate}
    meta_path = root / "meta.json"
    if not meta_path.exists():
        meta_path.write_text(json.dumps(meta, indent=2) + "\n")
    return load_dataset(root, split, num_classes)
