"""Standard and adversarial training.

Adversarial training minimises the expected worst-case loss over the
eps-ball: every minibatch is replaced by the output of an inner attack before
the parameter update.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import attacks, grad_core
from .attacks import AttackConfig, derive_seed
from .data import Dataset
from .errors import DomainError, TrainingDivergedError
from .grad_core import Model, ModelSpec

log = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "momentum")


@dataclass(frozen=True)
class AdversarialSpec:
    """Inner maximisation used during training."""

    attack: AttackConfig
    kind: str = "pgd"
    mix_ratio: float = 1.0  # fraction of each minibatch replaced by attacked inputs

    def __post_init__(self):
        if self.kind not in attacks.ATTACK_KINDS:
            raise DomainError(f"unknown inner attack {self.kind!r}")
        if not 0.0 <= self.mix_ratio <= 1.0:
            raise DomainError("mix_ratio must lie in [0, 1]")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 0.1
    optimizer: str = "momentum"
    momentum: float = 0.9
    seed: int = 0
    lr_decay_every: int = 0  # 0 disables step decay
    lr_decay_factor: float = 0.1
    adversarial: Optional[AdversarialSpec] = None
    eval_robust: bool = False  # log robust accuracy of the inner attack each epoch

    def __post_init__(self):
        if self.epochs < 0:
            raise DomainError("epochs must be >= 0")
        if self.batch_size < 1:
            raise DomainError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise DomainError("learning_rate must be positive")
        if self.optimizer not in OPTIMIZERS:
            raise DomainError(f"optimizer must be one of {OPTIMIZERS}")


@dataclass
class EpochLog:
    epoch: int
    clean_loss: float
    clean_accuracy: float
    robust_accuracy: Optional[float] = None


@dataclass
class TrainResult:
    model: Model
    history: List[EpochLog] = field(default_factory=list)


def accuracy(model: Model, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(grad_core.predict(model, x) == y))


def _adversarial_batch(model, xb, yb, adv: AdversarialSpec, seed: int) -> np.ndarray:
    k = int(round(adv.mix_ratio * xb.shape[0]))
    if k == 0:
        return xb
    res = attacks.run_attack(model, xb[:k], yb[:k], adv.attack.with_(seed=seed), adv.kind)
    if k == xb.shape[0]:
        return res.adversarial
    return np.concatenate([res.adversarial, xb[k:]])


def _train(dataset: Dataset, model_spec, cfg: TrainConfig) -> TrainResult:
    if len(dataset) == 0:
        raise DomainError("cannot train on an empty dataset")
    if isinstance(model_spec, Model):
        model = model_spec.copy()
    else:
        model = grad_core.init_model(model_spec, derive_seed(cfg.seed, 0))
    if model.input_dim != dataset.dim:
        raise DomainError(f"model expects width {model.input_dim}, data has {dataset.dim}")

    shuffle_rng = np.random.default_rng(derive_seed(cfg.seed, 1))
    velocity = [(np.zeros_like(w), np.zeros_like(b)) for w, b in model.params()]
    x_all, y_all = dataset.images, dataset.labels
    history: List[EpochLog] = []
    lr = cfg.learning_rate

    for epoch in range(cfg.epochs):
        if cfg.lr_decay_every and epoch and epoch % cfg.lr_decay_every == 0:
            lr *= cfg.lr_decay_factor
        order = shuffle_rng.permutation(len(dataset))
        for step, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            xb, yb = x_all[idx], y_all[idx]
            if cfg.adversarial is not None:
                xb = _adversarial_batch(model, xb, yb, cfg.adversarial, derive_seed(cfg.seed, 2, epoch, step))
            batch_loss, grads = grad_core.loss_and_param_gradient(model, xb, yb)
            if not math.isfinite(batch_loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, step {step} (lr={lr})"
                )
            for layer, (gw, gb), vel in zip(model.layers, grads, velocity):
                if cfg.optimizer == "momentum":
                    vel[0][...] = cfg.momentum * vel[0] + gw
                    vel[1][...] = cfg.momentum * vel[1] + gb
                    gw, gb = vel
                layer.weight -= lr * gw
                layer.bias -= lr * gb

        losses = grad_core.loss(model, x_all, y_all)
        entry = EpochLog(epoch, float(np.mean(losses)), accuracy(model, x_all, y_all))
        if not math.isfinite(entry.clean_loss):
            raise TrainingDivergedError(f"non-finite training loss after epoch {epoch}")
        if cfg.eval_robust and cfg.adversarial is not None:
            adv = cfg.adversarial
            res = attacks.run_attack(model, x_all, y_all, adv.attack.with_(seed=derive_seed(cfg.seed, 3, epoch)), adv.kind)
            entry.robust_accuracy = res.accuracy
        history.append(entry)
        log.info("epoch %d loss %.4f acc %.4f robust %s", epoch, entry.clean_loss,
                 entry.clean_accuracy, entry.robust_accuracy)
    return TrainResult(model, history)


def train_standard(dataset: Dataset, model_spec, cfg: TrainConfig) -> TrainResult:
    """Plain ERM. ``model_spec`` is a :class:`ModelSpec` or a model to start from."""
    if cfg.adversarial is not None:
        cfg = TrainConfig(**{**cfg.__dict__, "adversarial": None})
    return _train(dataset, model_spec, cfg)


def train_adversarial(dataset: Dataset, model_spec, cfg: TrainConfig) -> TrainResult:
    if cfg.adversarial is None:
        raise DomainError("adversarial training needs cfg.adversarial")
    return _train(dataset, model_spec, cfg)


def write_log_csv(history: List[EpochLog], path) -> None:
    with open(Path(path), "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["epoch", "clean_loss", "clean_accuracy", "robust_accuracy"])
        for e in history:
            writer.writerow([
                e.epoch, repr(e.clean_loss), repr(e.clean_accuracy),
                "" if e.robust_accuracy is None else repr(e.robust_accuracy),
            ])
