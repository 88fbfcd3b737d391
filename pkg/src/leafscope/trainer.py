"""Two-phase fine-tuning loop.

Phase one trains only the head with the trunk frozen; phase two unfreezes
everything at a reduced base learning rate. Within each phase the learning
rate follows ``base * 0.1 ** (epoch // 10)`` with the epoch counter restarting
at the phase boundary. Early stopping watches one metric over the whole run
and the returned classifier carries the best epoch's weights.
"""
from __future__ import annotations

import copy
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from decimal import Decimal
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .dataset import one_hot
from .errors import ConfigError, DataError, DivergenceError, LabelError, NumericError
from .model import Classifier, save_checkpoint, set_trainable_phase, softmax
from .streams import BatchStream

log = logging.getLogger(__name__)

MONITORS = {"val_accuracy": "max", "val_loss": "min", "train_accuracy": "max", "train_loss": "min"}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 150
    batch_size: int = 32
    base_learning_rate: float = 1e-4
    weight_decay: float = 1e-7
    early_stop_patience: int = 10
    early_stop_monitor: str = "val_accuracy"
    early_stopping: bool = True
    phase1_epochs: int = 10
    phase2_lr_scale: float = 0.1
    adam_epsilon: float = 1e-7
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.phase1_epochs < 0:
            raise ConfigError(f"phase1_epochs must be >= 0, got {self.phase1_epochs}")
        if self.base_learning_rate <= 0 or self.phase2_lr_scale <= 0:
            raise ConfigError("learning rates must be > 0")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.early_stop_patience < 1:
            raise ConfigError(f"early_stop_patience must be >= 1, got {self.early_stop_patience}")
        if self.early_stop_monitor not in MONITORS:
            raise ConfigError(f"early_stop_monitor must be one of {sorted(MONITORS)}")

    @property
    def phase2_base_learning_rate(self) -> float:
        return float(Decimal(repr(self.base_learning_rate)) * Decimal(repr(self.phase2_lr_scale)))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    learning_rate: float
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float
    wall_time: float = 0.0


@dataclass
class TrainingHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False
    monitor: str = "val_accuracy"

    def __len__(self) -> int:
        return len(self.records)

    def values(self, metric: str | None = None) -> list[float]:
        return [getattr(r, metric or self.monitor) for r in self.records]

    def to_dict(self) -> dict:
        return {
            "records": [asdict(r) for r in self.records],
            "best_epoch": self.best_epoch,
            "stopped_early": self.stopped_early,
            "monitor": self.monitor,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainingHistory":
        return cls([EpochRecord(**r) for r in doc["records"]], doc["best_epoch"],
                   doc["stopped_early"], doc.get("monitor", "val_accuracy"))

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1) + "\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "TrainingHistory":
        return cls.from_dict(json.loads(Path(path).read_text()))


def lr_at_epoch(base_lr: float, epoch: int) -> float:
    """``base_lr * 0.1 ** (epoch // 10)`` evaluated in decimal, so 1e-4 steps to 1e-5, 1e-6, ..."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    return float(Decimal(repr(base_lr)) * Decimal("0.1") ** (epoch // 10))


def sparse_cross_entropy(logits, labels) -> float:
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    y = np.atleast_1d(np.asarray(labels))
    if len(y) != len(z):
        raise LabelError(f"{len(z)} logit rows but {len(y)} labels")
    if np.any(y < 0) or np.any(y >= z.shape[1]):
        raise LabelError(f"labels must lie in [0, {z.shape[1]})")
    if not np.all(np.isfinite(z)):
        raise NumericError("logits contain non-finite values")
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    return float(np.mean(lse - z[np.arange(len(y)), y]))


def cross_entropy_grad(logits, label: int) -> np.ndarray:
    """Gradient of the loss with respect to the logits: probabilities minus one-hot."""
    z = np.asarray(logits, dtype=np.float64)
    return softmax(z) - one_hot(int(label), z.shape[-1])


def head_gradients(pooled, label: int, weight, bias) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss and analytic (dW, db) for an affine head with identity norm and no dropout."""
    g = np.asarray(pooled, dtype=np.float64)
    z = g @ weight + bias
    dz = cross_entropy_grad(z, label)
    return sparse_cross_entropy(z, label), np.outer(g, dz), dz


def early_stop_decision(history: TrainingHistory | list[float], patience: int,
                        mode: str | None = None) -> tuple[bool, int]:
    """Stop once ``patience`` epochs have passed without a strict improvement.

    ``best_epoch`` is the earliest epoch holding the best monitored value.
    """
    if isinstance(history, TrainingHistory):
        values = history.values()
        mode = mode or MONITORS[history.monitor]
    else:
        values = list(history)
        mode = mode or "max"
    if not values:
        raise DataError("early stopping needs at least one epoch record")
    arr = np.asarray(values, dtype=np.float64)
    best = int(np.argmax(arr) if mode == "max" else np.argmin(arr))
    return (len(values) - 1 - best) >= patience, best


@torch.no_grad()
def evaluate_stream(classifier: Classifier, stream: BatchStream) -> tuple[float, float, np.ndarray, np.ndarray]:
    """Mean loss, accuracy, true labels and predictions over a stream in inference mode."""
    was_training = classifier.training
    classifier.eval()
    total_loss, y_true, y_pred = 0.0, [], []
    try:
        for x, y in stream.eval_view().batches():
            logits = classifier(x)
            total_loss += F.cross_entropy(logits.double(), y, reduction="sum").item()
            y_true.append(y.numpy())
            y_pred.append(logits.argmax(dim=1).numpy())
    finally:
        classifier.train(was_training)
    y_true_arr = np.concatenate(y_true)
    y_pred_arr = np.concatenate(y_pred)
    return total_loss / len(y_true_arr), float(np.mean(y_true_arr == y_pred_arr)), y_true_arr, y_pred_arr


def make_optimizer(classifier: Classifier, lr: float, config: TrainConfig) -> torch.optim.Optimizer:
    params = [p for p in classifier.parameters() if p.requires_grad]
    return torch.optim.AdamW(params, lr=lr, weight_decay=config.weight_decay, eps=config.adam_epsilon)


def _train_epoch(classifier, stream, optimizer, epoch) -> tuple[float, float]:
    classifier.train()
    total_loss, correct, seen = 0.0, 0, 0
    for b, (x, y) in enumerate(stream.batches(epoch)):
        optimizer.zero_grad(set_to_none=True)
        logits = classifier(x)
        loss = F.cross_entropy(logits, y)
        if not torch.isfinite(loss):
            raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {b}")
        loss.backward()
        optimizer.step()
        total_loss += loss.item() * len(y)
        correct += int((logits.argmax(dim=1) == y).sum())
        seen += len(y)
    if seen == 0:
        raise DataError("training stream yielded no batches")
    return total_loss / seen, correct / seen


def train(classifier: Classifier, train_data: BatchStream, val_data: BatchStream,
          config: TrainConfig, run_dir: str | Path | None = None,
          config_hash: str = "") -> tuple[Classifier, TrainingHistory]:
    if len(train_data) == 0 or len(val_data) == 0:
        raise DataError("train and validation streams must be non-empty")
    torch.manual_seed(config.seed)
    run_dir = Path(run_dir) if run_dir is not None else None
    ckpt_dir = run_dir / classifier.backbone.name if run_dir is not None else None
    history = TrainingHistory(monitor=config.early_stop_monitor)
    best_state = copy.deepcopy(classifier.state_dict())

    phases = [
        ("head_only", min(config.phase1_epochs, config.epochs), config.base_learning_rate),
        ("full_finetune", max(config.epochs - config.phase1_epochs, 0), config.phase2_base_learning_rate),
    ]
    epoch = 0
    for phase, n_epochs, base_lr in phases:
        if n_epochs == 0:
            continue
        set_trainable_phase(classifier, phase)
        optimizer = make_optimizer(classifier, base_lr, config)
        for local in range(n_epochs):
            lr = lr_at_epoch(base_lr, local)
            for group in optimizer.param_groups:
                group["lr"] = lr
            t0 = time.perf_counter()
            train_loss, train_acc = _train_epoch(classifier, train_data, optimizer, epoch)
            val_loss, val_acc, _, _ = evaluate_stream(classifier, val_data)
            if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            history.records.append(EpochRecord(epoch, phase, lr, train_loss, train_acc, val_loss, val_acc,
                                               time.perf_counter() - t0))
            should_stop, best = early_stop_decision(history, config.early_stop_patience)
            history.best_epoch = best
            log.info("epoch %d [%s] lr=%.3g loss=%.4f acc=%.4f val_loss=%.4f val_acc=%.4f",
                     epoch, phase, lr, train_loss, train_acc, val_loss, val_acc)
            if best == epoch:
                best_state = copy.deepcopy(classifier.state_dict())
                if ckpt_dir is not None:
                    save_checkpoint(classifier, ckpt_dir, config_hash)
                    history.save(run_dir / "history.json")
            epoch += 1
            if config.early_stopping and should_stop:
                history.stopped_early = True
                break
        if history.stopped_early:
            break

    classifier.load_state_dict(best_state)
    if run_dir is not None:
        history.save(run_dir / "history.json")
    return classifier, history
