"""Datasets: a synthetic shape-classification toy set and a raw-tensor loader.

The synthetic set draws one colored geometric shape per image on a noisy
background; the label is the shape kind (square, disk, cross, stripe).  It
is deliberately easy so that an overfitting sanity run converges quickly.

The directory format for real tensors is two numpy files, ``images.npy``
with float (K, 3, H, W) pixels in [0, 1] and ``labels.npy`` with integer
class ids.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import get_dtype

SHAPE_KINDS = ("square", "disk", "cross", "stripe")


@dataclass
class Dataset:
    images: np.ndarray      # (K, 3, H, W)
    labels: np.ndarray      # (K,)
    num_classes: int
    class_names: tuple

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def hw(self) -> int:
        return self.images.shape[2]


def _draw_shape(img: np.ndarray, kind: int, rng: np.random.Generator) -> None:
    """Paint one shape in a random saturated color at a random position."""
    _, H, W = img.shape
    color = rng.uniform(0.7, 1.0, size=3)
    color[rng.integers(0, 3)] = rng.uniform(0.0, 0.2)   # keep hues distinct
    size = int(rng.integers(max(3, H // 4), max(4, H // 2)))
    r0 = int(rng.integers(0, H - size + 1))
    c0 = int(rng.integers(0, W - size + 1))
    yy, xx = np.mgrid[0:size, 0:size]
    if kind == 0:      # filled square
        mask = np.ones((size, size), dtype=bool)
    elif kind == 1:    # disk
        cy = cx = (size - 1) / 2.0
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= (size / 2.0) ** 2
    elif kind == 2:    # plus-shaped cross
        t = max(1, size // 3)
        lo, hi = (size - t) // 2, (size + t) // 2
        mask = np.zeros((size, size), dtype=bool)
        mask[lo:hi, :] = True
        mask[:, lo:hi] = True
    elif kind == 3:    # diagonal stripe
        mask = np.abs(yy - xx) <= max(1, size // 4)
    else:
        raise ValueError(f"unknown shape kind {kind}")
    region = img[:, r0:r0 + size, c0:c0 + size]
    region[:, mask] = color[:, None]


def make_synthetic(count: int, num_classes: int, hw: int,
                   seed: int = 0) -> Dataset:
    if not 2 <= num_classes <= len(SHAPE_KINDS):
        raise ValueError(f"num_classes must be in 2..{len(SHAPE_KINDS)}, got {num_classes}")
    rng = np.random.default_rng(seed)
    images = np.empty((count, 3, hw, hw), dtype=get_dtype())
    labels = np.empty(count, dtype=np.int64)
    for i in range(count):
        kind = i % num_classes          # balanced classes
        img = rng.uniform(0.0, 0.3, size=(3, hw, hw))
        _draw_shape(img, kind, rng)
        images[i] = img
        labels[i] = kind
    return Dataset(images, labels, num_classes, SHAPE_KINDS[:num_classes])


def parse_synthetic_arg(arg: str) -> Dataset:
    """Parse "synthetic[:count=64,classes=4,size=32,seed=0]"."""
    opts = {"count": 64, "classes": 4, "size": 32, "seed": 0}
    body = arg.split(":", 1)
    if len(body) == 2 and body[1]:
        for item in body[1].split(","):
            k, _, v = item.partition("=")
            if k not in opts or not v:
                raise ValueError(f"bad synthetic dataset option {item!r}; "
                                 f"known keys: {sorted(opts)}")
            opts[k] = int(v)
    return make_synthetic(opts["count"], opts["classes"], opts["size"],
                          seed=opts["seed"])


def load_dir(path) -> Dataset:
    """Load the raw-tensor directory format (images.npy + labels.npy)."""
    root = Path(path)
    img_file, lab_file = root / "images.npy", root / "labels.npy"
    if not img_file.exists() or not lab_file.exists():
        raise FileNotFoundError(f"{root}: expected images.npy and labels.npy")
    images = np.load(img_file).astype(get_dtype())
    labels = np.load(lab_file).astype(np.int64)
    if images.ndim != 4 or images.shape[1] != 3:
        raise ValueError(f"{img_file}: expected (K, 3, H, W), got {images.shape}")
    if labels.shape != (images.shape[0],):
        raise ValueError(f"{lab_file}: {labels.shape} labels for "
                         f"{images.shape[0]} images")
    if labels.min() < 0:
        raise ValueError(f"{lab_file}: negative labels")
    k = int(labels.max()) + 1
    return Dataset(images, labels, k, tuple(f"class{i}" for i in range(k)))


def load_data(arg: str) -> Dataset:
    if arg == "synthetic" or arg.startswith("synthetic:"):
        return parse_synthetic_arg(arg)
    return load_dir(arg)


def save_dir(ds: Dataset, path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    np.save(root / "images.npy", ds.images)
    np.save(root / "labels.npy", ds.labels)
