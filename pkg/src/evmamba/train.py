"""Training loop: AdamW with decoupled weight decay, warmup-cosine schedule.

Batching is plain data parallelism: every sample runs its own forward graph
and the gradients sum into the shared parameters before one optimizer step.
The per-epoch metrics log is an append-only CSV (epoch,loss,acc,lr): mean
training loss over the epoch, end-of-epoch accuracy on the unaugmented
training set (so evaluating the same split afterwards reproduces the last
logged value), and the last learning rate.  The log bytes are reproducible
for a fixed seed in 64-bit mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ops
from .data import Dataset
from .model import Model
from .tensor import Tensor, no_grad


class TrainingDiverged(RuntimeError):
    pass


def lr_at(step: int, base_lr: float, warmup_steps: int, total_steps: int) -> float:
    """Linear warmup to base_lr, then cosine decay to exactly 0 at total_steps."""
    if total_steps <= 0:
        raise ValueError(f"total_steps must be positive, got {total_steps}")
    if warmup_steps >= total_steps:
        raise ValueError(f"warmup ({warmup_steps}) must be shorter than the "
                         f"schedule ({total_steps})")
    if step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Adam moments plus weight decay applied directly to the weights."""

    def __init__(self, params, *, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.05):
        self.params: list[Tensor] = list(params)
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= lr * (update + self.weight_decay * p.data)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    lr: float = 3e-3
    warmup_epochs: int = 2
    weight_decay: float = 0.05
    seed: int = 0
    flip_augment: bool = True        # horizontal flip, the only augmentation
    stop_at_acc: float | None = None


def train(model: Model, ds: Dataset, cfg: TrainConfig, out_dir=None,
          log=None) -> list[dict]:
    """Run the loop; returns one metrics row per epoch and optionally writes
    metrics.csv under out_dir as the epochs finish."""
    rng = np.random.default_rng(cfg.seed)
    n = len(ds)
    steps_per_epoch = max(1, -(-n // cfg.batch_size))
    total_steps = cfg.epochs * steps_per_epoch
    warmup_steps = cfg.warmup_epochs * steps_per_epoch
    opt = AdamW([t for _, t in model.parameters()],
                weight_decay=cfg.weight_decay)

    csv_file = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_file = open(out / "metrics.csv", "w")
        csv_file.write("epoch,loss,acc,lr\n")
        csv_file.flush()

    history: list[dict] = []
    step = 0
    try:
        for epoch in range(cfg.epochs):
            order = rng.permutation(n)
            flip = (rng.random(n) < 0.5) if cfg.flip_augment else np.zeros(n, bool)
            seen = 0
            loss_sum = 0.0
            lr = lr_at(step, cfg.lr, warmup_steps, total_steps)
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                rows, targets = [], []
                for i in idx:
                    img = ds.images[i]
                    if flip[i]:
                        img = img[:, :, ::-1]
                    rows.append(model.forward_single(Tensor(np.ascontiguousarray(img))))
                    targets.append(int(ds.labels[i]))
                logits = ops.stack_rows(rows)
                loss = ops.cross_entropy(logits, targets)
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingDiverged(
                        f"non-finite loss {value} at epoch {epoch} step {step}")
                model.zero_grad()
                loss.backward()
                lr = lr_at(step, cfg.lr, warmup_steps, total_steps)
                opt.step(lr)
                step += 1
                seen += len(idx)
                loss_sum += value * len(idx)
            acc, _ = evaluate(model, ds)
            row = {"epoch": epoch, "loss": loss_sum / seen, "acc": acc, "lr": lr}
            history.append(row)
            if csv_file is not None:
                csv_file.write(f"{epoch},{row['loss']!r},{row['acc']!r},{row['lr']!r}\n")
                csv_file.flush()
            if log is not None:
                log(f"epoch {epoch}: loss {row['loss']:.4f} "
                    f"acc {row['acc']:.3f} lr {row['lr']:.2e}")
            if cfg.stop_at_acc is not None and row["acc"] >= cfg.stop_at_acc:
                break
    finally:
        if csv_file is not None:
            csv_file.close()
    return history


def evaluate(model: Model, ds: Dataset) -> tuple[float, np.ndarray]:
    """Accuracy and confusion counts (rows true class, columns predicted)."""
    k = ds.num_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    with no_grad():
        for i in range(len(ds)):
            logits = model.forward_single(Tensor(ds.images[i]))
            confusion[int(ds.labels[i]), int(logits.data.argmax())] += 1
    acc = float(np.trace(confusion)) / max(1, len(ds))
    return acc, confusion
