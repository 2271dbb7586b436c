"""Training and evaluation loops.

Training minimizes softmax cross-entropy with Adam.  One group sample set
is drawn per batch (configurable to once per run) from a counter-based
substream of the run seed, so a (seed, config, data) triple reproduces the
metrics bitwise.  Per-epoch metrics are appended to a CSV file and mirrored
as JSON lines when an output directory is given.

Evaluation draws one fixed sample set from the eval seed and reuses it for
every batch, which makes the result independent of the batch size.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import Dataset
from .errors import ConfigError, TrainingFault
from .nets import Model, ModelConfig, load_checkpoint, save_checkpoint
from .sampling import sample_group_set, substream

Array = np.ndarray

METRICS_HEADER = ["epoch", "split", "loss", "accuracy", "seconds"]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 3
    batch_size: int = 128
    lr: float = 1e-4
    seed: int = 0
    subset: int = 0  # 0: use the full dataset
    resample_per_batch: bool = True
    select_best_val: bool = False
    stop_at_train_accuracy: float = 0.0  # 0: never stop early

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.subset < 0:
            raise ConfigError("subset must be >= 0")


@dataclass(frozen=True)
class MetricsRecord:
    epoch: int
    split: str
    loss: float
    accuracy: float
    seconds: float

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ConfigError(f"accuracy {self.accuracy} outside [0, 1]")

    def as_dict(self) -> dict:
        return {"epoch": self.epoch, "split": self.split, "loss": self.loss,
                "accuracy": self.accuracy, "seconds": self.seconds}


class MetricsWriter:
    """Single-writer CSV plus JSON-lines mirror with identical fields."""

    def __init__(self, outdir: Path | None):
        self.records: list[MetricsRecord] = []
        self.outdir = Path(outdir) if outdir is not None else None
        if self.outdir is not None:
            self.outdir.mkdir(parents=True, exist_ok=True)
            self.csv_path = self.outdir / "metrics.csv"
            with open(self.csv_path, "w", newline="") as fh:
                csv.writer(fh).writerow(METRICS_HEADER)
            self.jsonl_path = self.outdir / "metrics.jsonl"
            self.jsonl_path.write_text("")

    def append(self, record: MetricsRecord) -> None:
        self.records.append(record)
        if self.outdir is not None:
            with open(self.csv_path, "a", newline="") as fh:
                csv.writer(fh).writerow(
                    [record.epoch, record.split, repr(record.loss),
                     repr(record.accuracy), repr(record.seconds)]
                )
            with open(self.jsonl_path, "a") as fh:
                fh.write(json.dumps(record.as_dict()) + "\n")


@dataclass
class TrainResult:
    model: Model
    metrics: list[MetricsRecord]
    checkpoint_path: Path | None
    steps: int
    faults: int


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, dataset: Dataset,
          val_dataset: Dataset | None = None, outdir=None,
          log=print) -> TrainResult:
    """Train a model; returns the model, metrics, and the checkpoint path.

    A non-finite loss aborts with a :class:`TrainingFault` carrying the run
    seed and batch index; non-finite gradients only skip the offending
    parameter update and are counted as faults.
    """
    writer = MetricsWriter(Path(outdir) if outdir is not None else None)
    data = dataset
    if train_cfg.subset and train_cfg.subset < len(dataset):
        order = substream(train_cfg.seed, "subset").permutation(len(dataset))
        data = dataset.subset(order[: train_cfg.subset])

    model = Model(replace(model_cfg, init_seed=train_cfg.seed))
    opt = ad.Adam(model.parameters(), lr=train_cfg.lr)
    fixed_samples = model.sample_set(seed=train_cfg.seed)

    n = len(data)
    best_val = -1.0
    checkpoint_path = writer.outdir / "model.ckpt" if writer.outdir is not None else None
    faults = 0
    steps = 0

    for epoch in range(train_cfg.epochs):
        tic = time.perf_counter()
        order = substream(train_cfg.seed, "shuffle", epoch).permutation(n)
        losses = []
        hits = 0
        for b, start in enumerate(range(0, n, train_cfg.batch_size)):
            idx = order[start : start + train_cfg.batch_size]
            images = data.images[idx]
            labels = data.labels[idx]
            if train_cfg.resample_per_batch:
                samples = sample_group_set(train_cfg.seed, model.cfg.kind, model.cfg.sampler,
                                           model.cfg.n_samples, stream=("train-batch", epoch, b))
            else:
                samples = fixed_samples
            logits = model.forward(images, samples)
            loss = ad.cross_entropy(logits, labels)
            if not np.isfinite(loss.item()):
                raise TrainingFault(
                    f"non-finite loss {loss.item()!r} at epoch {epoch} batch {b}",
                    seed=train_cfg.seed, batch_index=b,
                )
            opt.zero_grad()
            loss.backward()
            skipped = opt.step()
            if skipped:
                faults += skipped
                log(f"[train] epoch {epoch} batch {b}: skipped {skipped} non-finite updates")
            steps += 1
            losses.append(loss.item())
            hits += int((logits.data.argmax(axis=1) == labels).sum())
        epoch_acc = hits / n
        record = MetricsRecord(epoch, "train", float(np.mean(losses)), epoch_acc,
                               time.perf_counter() - tic)
        writer.append(record)
        log(f"[train] {json.dumps(record.as_dict())}")

        if val_dataset is not None:
            val = evaluate(model, val_dataset, seed=train_cfg.seed)
            vrec = MetricsRecord(epoch, "val", val.loss, val.accuracy,
                                 time.perf_counter() - tic)
            writer.append(vrec)
            log(f"[train] {json.dumps(vrec.as_dict())}")
            if train_cfg.select_best_val and val.accuracy > best_val and checkpoint_path:
                best_val = val.accuracy
                _write_checkpoint(checkpoint_path, model, train_cfg)
        if train_cfg.stop_at_train_accuracy and epoch_acc >= train_cfg.stop_at_train_accuracy:
            break

    if checkpoint_path and (not train_cfg.select_best_val or best_val < 0):
        _write_checkpoint(checkpoint_path, model, train_cfg)
    return TrainResult(model, writer.records, checkpoint_path, steps, faults)


def _write_checkpoint(path: Path, model: Model, train_cfg: TrainConfig) -> None:
    state = {name: tensor.data for name, tensor in model.named_parameters().items()}
    save_checkpoint(path, model.cfg, state,
                    {"train_seed": train_cfg.seed, "init_seed": model.cfg.init_seed})


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    loss: float
    confusion: Array  # [true, predicted]
    n: int


def evaluate(model: Model, dataset: Dataset, seed: int = 0,
             batch_size: int = 256, n_samples: int = 0) -> EvalResult:
    """Deterministic forward pass over a dataset with a fixed sample set.

    ``n_samples`` overrides the model's Monte Carlo sample count (0 keeps
    it).  The sample set is drawn once from ``seed`` and shared across
    batches, so the result does not depend on ``batch_size``.
    """
    n_mc = n_samples if n_samples else model.cfg.n_samples
    samples = sample_group_set(seed, model.cfg.kind, model.cfg.sampler, n_mc,
                               stream=("eval-sample-set",))
    n = len(dataset)
    n_classes = model.cfg.n_classes
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    total_loss = 0.0
    hits = 0
    for start in range(0, n, batch_size):
        images = dataset.images[start : start + batch_size]
        labels = dataset.labels[start : start + batch_size]
        logits = model.forward(images, samples)
        total_loss += ad.cross_entropy(logits, labels).item() * len(labels)
        pred = logits.data.argmax(axis=1)
        hits += int((pred == labels).sum())
        np.add.at(confusion, (labels, pred), 1)
    return EvalResult(hits / n, total_loss / n, confusion, n)


def evaluate_checkpoint(path, dataset: Dataset, seed: int = 0,
                        batch_size: int = 256, n_samples: int = 0) -> EvalResult:
    cfg, state, _ = load_checkpoint(path)
    model = Model(cfg)
    try:
        model.load_state(state)
    except CheckpointError:
        raise
    return evaluate(model, dataset, seed=seed, batch_size=batch_size, n_samples=n_samples)
