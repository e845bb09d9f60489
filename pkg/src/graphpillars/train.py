"""Adam optimizer and the mini-batch training loop."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .autodiff import Tensor, no_grad
from .config import RunConfig, dump_config
from .errors import ConfigError, NonFiniteLossError
from .model import Detector, build_model, save_checkpoint
from .scene import Scene, augment


class Adam:
    def __init__(self, params: list[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        if lr < 0:
            raise ConfigError("learning rate must be non-negative")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.lr == 0.0:
                continue
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float | None


@dataclass
class TrainResult:
    model: Detector
    curve: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_state: dict | None = None

    @property
    def train_losses(self) -> list[float]:
        return [r.train_loss for r in self.curve]


def _check_finite(terms: dict[str, Tensor], total: Tensor) -> None:
    for name, term in terms.items():
        value = term.item()
        if not math.isfinite(value):
            raise NonFiniteLossError(name, value)
    if not math.isfinite(total.item()):
        raise NonFiniteLossError("total", total.item())


def evaluate_loss(model: Detector, scenes: list[Scene], batch_size: int,
                  class_weights: dict[str, float] | None = None) -> float:
    """Mean batch loss without gradient tracking."""
    losses = []
    with no_grad():
        for start in range(0, len(scenes), batch_size):
            losses.append(model.loss(scenes[start:start + batch_size], class_weights).total.item())
    return float(np.mean(losses)) if losses else float("nan")


def train(model: Detector | None, scenes: list[Scene], cfg: RunConfig,
          val_scenes: list[Scene] | None = None,
          log: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Train with Adam on shuffled mini-batches; keep the parameters of the best epoch.

    Each epoch draws its shuffle and augmentation from a generator seeded by
    ``(seed, epoch)``. The best epoch is chosen on validation loss when
    validation scenes are given, otherwise on training loss.
    """
    if not scenes:
        raise ConfigError("training needs at least one scene")
    model = model or build_model(cfg)
    tcfg = cfg.train
    class_weights = cfg.loss.class_weights()
    aug = tcfg.augment_config(model.spec.extent)
    opt = Adam(model.parameters(), lr=tcfg.lr)
    result = TrainResult(model)
    best = math.inf
    for epoch in range(1, tcfg.epochs + 1):
        rng = np.random.default_rng([tcfg.seed, epoch])
        order = rng.permutation(len(scenes))
        batch_losses = []
        for start in range(0, len(order), tcfg.batch_size):
            batch = [scenes[i] for i in order[start:start + tcfg.batch_size]]
            if aug is not None:
                batch = [augment(s, rng, aug) for s in batch]
            opt.zero_grad()
            loss = model.loss(batch, class_weights)
            _check_finite(loss.terms, loss.total)
            loss.total.backward()
            opt.step()
            batch_losses.append(loss.total.item())
        train_loss = float(np.mean(batch_losses))
        val_loss = evaluate_loss(model, val_scenes, tcfg.batch_size, class_weights) if val_scenes else None
        record = EpochRecord(epoch, train_loss, val_loss)
        result.curve.append(record)
        if log is not None:
            log(record)
        score = val_loss if val_loss is not None else train_loss
        if score < best:
            best = score
            result.best_epoch = epoch
            result.best_state = model.state_dict()
    if result.best_state is not None:
        model.load_state_dict(result.best_state)
    return result


def write_loss_curve(curve: list[EpochRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for r in curve:
            writer.writerow([r.epoch, repr(r.train_loss), "" if r.val_loss is None else repr(r.val_loss)])


def read_loss_curve(path) -> list[EpochRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [EpochRecord(int(r["epoch"]), float(r["train_loss"]),
                        float(r["val_loss"]) if r["val_loss"] else None) for r in rows]


def write_run(result: TrainResult, cfg: RunConfig, out_dir) -> Path:
    """Checkpoint, sidecar, loss curve and effective config under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "model.pgw"
    save_checkpoint(result.model, ckpt, result.best_epoch, cfg.digest())
    write_loss_curve(result.curve, out / "loss.csv")
    payload = {"config": cfg.to_dict(), "config_hash": cfg.digest()}
    (out / "config.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    (out / "config.ini").write_text(dump_config(cfg))
    return ckpt
