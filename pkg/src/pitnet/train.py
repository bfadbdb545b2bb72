"""Training loop, evaluation passes, and the cross-validation driver.

One run trains one model on one fold: seeded init (or a transfer load),
AdaBound steps over augmented shuffled batches, an inference-mode
validation pass per epoch, and a checkpoint of the best-validation epoch
(ties keep the earlier epoch). Epoch seeds derive from (run seed, fold,
epoch), so fold schedules are independent streams and a rerun with the
same config reproduces the same log bit for bit.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import LoadReport, load_checkpoint, save_checkpoint
from .config import (RunConfig, augment_config, config_hash, derive_seed,
                     model_config, optimizer_config)
from .data import Dataset, batch_iter, stratified_kfold
from .errors import NumericError
from .layers import softmax_cross_entropy
from .metrics import MetricsReport, compute_report, emit_report
from .network import Model, build_model
from .optim import OptimizerState, adabound_step


@dataclass
class TrainResult:
    checkpoint_path: str
    log_path: str
    best_epoch: int
    best_val_accuracy: float
    history: list = field(default_factory=list)
    transfer_report: LoadReport = None


def softmax_scores(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def evaluate(model: Model, images: np.ndarray, labels: np.ndarray,
             indices=None, batch_size: int = 32):
    """Inference-mode pass; returns (mean loss, accuracy, scores)."""
    if indices is None:
        indices = np.arange(len(labels))
    indices = np.asarray(indices)
    losses, scores = [], []
    for batch, y in batch_iter(images, labels, indices, batch_size):
        logits = model.forward(batch, training=False)
        loss, _ = softmax_cross_entropy(logits, y)
        losses.append(loss * len(y))
        scores.append(softmax_scores(logits))
    scores = np.concatenate(scores)
    acc = float((scores.argmax(axis=1) == labels[indices]).mean())
    return float(np.sum(losses) / len(indices)), acc, scores


def _write_log(path: str, history: list) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
        for row in history:
            writer.writerow([row["epoch"], f"{row['train_loss']:.6f}",
                             f"{row['train_acc']:.6f}", f"{row['val_loss']:.6f}",
                             f"{row['val_acc']:.6f}"])


def train_fold(dataset: Dataset, fold, rc: RunConfig, fold_id: int,
               out_dir: str) -> TrainResult:
    os.makedirs(out_dir, exist_ok=True)
    model = build_model(rc.model, model_config(rc),
                        seed=derive_seed(rc.seed, fold_id, 0))
    transfer_report = None
    if rc.transfer_checkpoint:
        transfer_report = load_checkpoint(
            rc.transfer_checkpoint, model, mode="transfer",
            skip_prefixes=rc.skip_prefixes, freeze_prefixes=rc.freeze_prefixes)
    elif rc.freeze_prefixes:
        model.freeze(rc.freeze_prefixes)

    opt_cfg = optimizer_config(rc)
    opt_state = OptimizerState()
    aug = augment_config(rc)
    ckpt_path = os.path.join(out_dir, f"fold{fold_id}_best.ckpt")
    log_path = os.path.join(out_dir, f"fold{fold_id}_log.csv")
    meta_base = {"model_kind": rc.model, "config_hash": config_hash(rc),
                 "seed": rc.seed, "fold": fold_id,
                 "model_config": {"input_size": list(model.config.input_size),
                                  "stem_channels": list(model.config.stem_channels),
                                  "module_channels": list(model.config.module_channels),
                                  "blocks_per_module": model.config.blocks_per_module,
                                  "module3_dilation": model.config.module3_dilation,
                                  "classifier_pool": list(model.config.classifier_pool),
                                  "class_count": model.config.class_count}}

    history = []
    best_epoch, best_val = 0, -1.0
    if rc.epochs == 0:
        save_checkpoint(ckpt_path, model, dict(meta_base, epoch=0))
    for epoch in range(1, rc.epochs + 1):
        epoch_seed = derive_seed(rc.seed, fold_id, epoch)
        total_loss, n_correct, n_seen = 0.0, 0, 0
        for step, (batch, y) in enumerate(batch_iter(
                dataset.images, dataset.labels, fold.train, rc.batch_size,
                shuffle_seed=epoch_seed, augment=aug)):
            logits = model.forward(batch, training=True)
            loss, grad = softmax_cross_entropy(logits, y)
            if not np.isfinite(loss):
                raise NumericError(
                    f"loss became non-finite at epoch {epoch} step {step}")
            table = model.backward(grad)
            adabound_step(model.params(), table, opt_state, opt_cfg)
            total_loss += loss * len(y)
            n_correct += int((logits.argmax(axis=1) == y).sum())
            n_seen += len(y)
        val_loss, val_acc, _ = evaluate(model, dataset.images, dataset.labels,
                                        fold.val, rc.batch_size * 8)
        history.append({"epoch": epoch, "train_loss": total_loss / n_seen,
                        "train_acc": n_correct / n_seen,
                        "val_loss": val_loss, "val_acc": val_acc})
        if val_acc > best_val:
            best_val, best_epoch = val_acc, epoch
            save_checkpoint(ckpt_path, model,
                            dict(meta_base, epoch=epoch, val_accuracy=val_acc))
    _write_log(log_path, history)
    return TrainResult(ckpt_path, log_path, best_epoch, best_val, history,
                       transfer_report)


def load_model_from_checkpoint(path: str):
    """Rebuild the architecture recorded in the metadata and load strictly.

    Returns (model, metadata); the metadata carries the training seed and
    fold so a caller can reconstruct the exact data splits.
    """
    from .checkpoint import read_checkpoint
    from .network import ModelConfig
    metadata, _ = read_checkpoint(path)
    mc = metadata["model_config"]
    cfg = ModelConfig(input_size=tuple(mc["input_size"]),
                      stem_channels=tuple(mc["stem_channels"]),
                      module_channels=tuple(mc["module_channels"]),
                      blocks_per_module=mc["blocks_per_module"],
                      module3_dilation=mc["module3_dilation"],
                      classifier_pool=tuple(mc["classifier_pool"]),
                      class_count=mc["class_count"])
    model = build_model(metadata["model_kind"], cfg, seed=0)
    load_checkpoint(path, model, mode="strict")
    return model, metadata


def fold_report(model: Model, dataset: Dataset, indices, fold_id: int,
                extras: dict = None) -> MetricsReport:
    _, _, scores = evaluate(model, dataset.images, dataset.labels, indices)
    return compute_report(scores, dataset.labels[np.asarray(indices)],
                          fold=fold_id, extras=extras)


def run_train(rc: RunConfig) -> TrainResult:
    """Single holdout run: fold 0 of the stratified plan."""
    dataset = Dataset(rc.manifest, rc.image_size)
    plan = stratified_kfold(dataset.labels, rc.folds, rc.seed)
    return train_fold(dataset, plan.folds[0], rc, 0, rc.out_dir)


def run_xval(rc: RunConfig):
    """Train and test every fold, then aggregate one report."""
    dataset = Dataset(rc.manifest, rc.image_size)
    plan = stratified_kfold(dataset.labels, rc.folds, rc.seed)
    reports = []
    for fold_id, fold in enumerate(plan.folds):
        result = train_fold(dataset, fold, rc, fold_id, rc.out_dir)
        model, _ = load_model_from_checkpoint(result.checkpoint_path)
        extras = {"val_accuracy": result.best_val_accuracy,
                  "param_count": model.param_count(),
                  "best_epoch": result.best_epoch}
        reports.append(fold_report(model, dataset, fold.test, fold_id, extras))
    aggregate = emit_report(reports, rc.out_dir)
    return reports, aggregate
