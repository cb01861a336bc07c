"""Behavior-cloning training loop with literal SGD and adaptive-moment modes.

The loop is deterministic for a fixed seed: shuffling uses its own Generator,
parameters update in their stable named order, and no threading is involved,
so repeated runs produce bit-identical parameters.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape
from .errors import ConfigurationError, InputError, NumericError
from .model import mse_loss


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 8
    optimizer: str = "adam"
    lr: float | None = None          # None -> per-optimizer default
    seed: int = 0
    shuffle: bool = True
    log_path: str | None = None      # JSON-lines, one record per epoch
    max_steps: int | None = None     # hard cap across epochs (sweep budgets)
    clip_norm: float | None = 1.0    # global gradient-norm ceiling; None disables
    # optional piecewise-constant step-size schedule: [(last_epoch, lr), ...]
    # sorted ascending; epochs past the last entry keep its lr
    schedule: list | None = None

    def resolved_lr(self) -> float:
        if self.lr is not None:
            return self.lr
        return {"sgd": 1e-2, "adam": 1e-3}[self.optimizer]

    def lr_for_epoch(self, epoch: int) -> float:
        if self.schedule:
            for last_epoch, lr in self.schedule:
                if epoch <= last_epoch:
                    return lr
            return self.schedule[-1][1]
        return self.resolved_lr()

    def validate(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be >= 1")
        if self.schedule:
            bounds = [b for b, _ in self.schedule]
            if bounds != sorted(bounds):
                raise ConfigurationError(
                    f"schedule epochs must ascend, got {bounds}")
        return self


class SGD:
    def __init__(self, params, lr: float = 1e-2):
        self.params = list(params)
        self.lr = lr

    def step(self):
        for p in self.params:
            if p.grad is not None:
                p.data = p.data - self.lr * p.grad


class Adam:
    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1t = 1.0 - self.b1 ** self.t
        b2t = 1.0 - self.b2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g * g
            mhat = self.m[i] / b1t
            vhat = self.v[i] / b2t
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(model, config: TrainConfig):
    params = model.parameters()
    if config.optimizer == "sgd":
        return SGD(params, lr=config.resolved_lr())
    return Adam(params, lr=config.resolved_lr())


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm.

    Occasional batches hit near-singular corners of the recurrent scan and
    emit gradients orders of magnitude above typical; uniform rescaling keeps
    those steps from dominating the adaptive moment estimates.
    """
    total = np.sqrt(sum(float((p.grad ** 2).sum())
                        for p in params if p.grad is not None))
    if np.isfinite(total) and total > max_norm:
        scale = max_norm / total
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


def train_model(model, images: np.ndarray, actions: np.ndarray,
                config: TrainConfig, progress=None) -> list[dict]:
    """Minibatch MSE minimization; returns per-epoch metric records.

    ``progress``, if given, is called with each epoch's record as it lands
    (same dict that goes into the returned history and the JSONL log).
    """
    config.validate()
    n = images.shape[0]
    if n == 0:
        raise InputError("training set is empty")
    if actions.shape[0] != n:
        raise InputError(f"{n} images but {actions.shape[0]} actions")
    rng = np.random.default_rng(config.seed)
    opt = make_optimizer(model, config)
    model.train()
    history: list[dict] = []
    loss_trail: list[float] = []
    log_file = open(config.log_path, "a") if config.log_path else None
    steps_done = 0
    try:
        for epoch in range(config.epochs):
            opt.lr = config.lr_for_epoch(epoch)
            order = rng.permutation(n) if config.shuffle else np.arange(n)
            t0 = time.monotonic()
            losses = []
            for start in range(0, n, config.batch_size):
                if config.max_steps is not None and steps_done >= config.max_steps:
                    break
                idx = order[start:start + config.batch_size]
                xb, yb = images[idx], actions[idx]
                model.zero_grad()
                with Tape() as tape:
                    loss = mse_loss(model(xb), yb)
                    tape.backward(loss)
                lv = loss.data.item()
                if not np.isfinite(lv):
                    raise NumericError(
                        f"non-finite training loss {lv!r} at epoch {epoch}, "
                        f"batch {start // config.batch_size}; "
                        f"recent losses: {loss_trail[-10:]}")
                if config.clip_norm is not None:
                    clip_grad_norm(opt.params, config.clip_norm)
                opt.step()
                losses.append(lv)
                loss_trail.append(lv)
                steps_done += 1
            record = {
                "epoch": epoch,
                "loss": float(np.mean(losses)) if losses else float("nan"),
                "steps": steps_done,
                "wall_seconds": time.monotonic() - t0,
            }
            history.append(record)
            if log_file:
                log_file.write(json.dumps(record, sort_keys=True) + "\n")
                log_file.flush()
            if progress is not None:
                progress(record)
            if config.max_steps is not None and steps_done >= config.max_steps:
                break
    finally:
        if log_file:
            log_file.close()
    model.eval()
    return history
