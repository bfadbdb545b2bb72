"""Confusion matrices, one-vs-rest metrics, rank-based AUC, the binary
neoplastic grouping, and report emission.

Confusion counts are indexed (predicted, true); normalization divides each
column by its true-class total, so the diagonal holds per-class recall.
Macro averages weight classes equally. AUC is the Mann-Whitney statistic
computed from midranks, which handles tied scores exactly.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ShapeError

# Class-index groups for the binary clinical split: O and G are the
# neoplastic patterns, A and R the non-neoplastic ones.
NEOPLASTIC_INDICES = (1, 2)
BINARY_THRESHOLD = 0.5


def confusion_counts(predicted, true, n_classes: int = 4) -> np.ndarray:
    predicted = np.asarray(predicted)
    true = np.asarray(true)
    if predicted.shape != true.shape or predicted.ndim != 1:
        raise ShapeError("predicted and true must be equal-length vectors")
    for v in (predicted, true):
        if len(v) and (v.min() < 0 or v.max() >= n_classes):
            raise ShapeError(f"labels outside [0, {n_classes})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (predicted, true), 1)
    return counts


def normalize_confusion(counts: np.ndarray) -> np.ndarray:
    """Divide each true-class column by its total; empty columns stay 0."""
    counts = np.asarray(counts, dtype=np.float64)
    totals = counts.sum(axis=0, keepdims=True)
    return np.divide(counts, totals, out=np.zeros_like(counts),
                     where=totals > 0)


def classification_metrics(counts: np.ndarray) -> dict:
    """Accuracy plus per-class and macro one-vs-rest metrics.

    Undefined ratios (no predicted positives, no actual positives) are
    reported as 0.0 and listed under 'undefined'.
    """
    counts = np.asarray(counts)
    n = counts.sum()
    if n == 0:
        raise DataError("cannot compute metrics from an empty confusion matrix")
    n_classes = counts.shape[0]
    per_class = {}
    undefined = []
    for c in range(n_classes):
        tp = counts[c, c]
        fp = counts[c, :].sum() - tp
        fn = counts[:, c].sum() - tp
        tn = n - tp - fp - fn
        entry = {}
        for name, num, den in (("sensitivity", tp, tp + fn),
                               ("specificity", tn, tn + fp),
                               ("precision", tp, tp + fp)):
            if den == 0:
                entry[name] = 0.0
                undefined.append((c, name))
            else:
                entry[name] = num / den
        if entry["precision"] + entry["sensitivity"] == 0.0:
            entry["f1"] = 0.0
            undefined.append((c, "f1"))
        else:
            entry["f1"] = (2 * entry["precision"] * entry["sensitivity"]
                           / (entry["precision"] + entry["sensitivity"]))
        per_class[c] = entry
    macro = {m: float(np.mean([per_class[c][m] for c in range(n_classes)]))
             for m in ("sensitivity", "specificity", "precision", "f1")}
    accuracy = float(np.trace(counts) / n) if n else 0.0
    return {"accuracy": accuracy, "per_class": per_class, "macro": macro,
            "undefined": undefined}


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def rank_auc(scores, positive_mask) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) with ties counted half."""
    scores = np.asarray(scores, dtype=np.float64)
    positive_mask = np.asarray(positive_mask, dtype=bool)
    n_pos = int(positive_mask.sum())
    n_neg = len(scores) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ShapeError("AUC needs at least one positive and one negative")
    ranks = _midranks(scores)
    return float((ranks[positive_mask].sum() - n_pos * (n_pos + 1) / 2.0)
                 / (n_pos * n_neg))


def auc_macro_ovr(scores: np.ndarray, labels) -> dict:
    """One-vs-rest AUC per class from per-class scores (n, n_classes).

    Classes missing positives or negatives are excluded from the macro
    average and reported.
    """
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    if scores.ndim != 2 or scores.shape[0] != len(labels):
        raise ShapeError(f"scores {scores.shape} do not match labels {labels.shape}")
    per_class, excluded = {}, []
    for c in range(scores.shape[1]):
        mask = labels == c
        if mask.all() or not mask.any():
            excluded.append(c)
            continue
        per_class[c] = rank_auc(scores[:, c], mask)
    macro = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return {"per_class": per_class, "macro": macro, "excluded": excluded}


def binary_neoplastic_metrics(scores: np.ndarray, labels) -> dict:
    """Collapse to neoplastic {O, G} vs rest by summing class probabilities."""
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    group_score = scores[:, list(NEOPLASTIC_INDICES)].sum(axis=1)
    is_pos = np.isin(labels, NEOPLASTIC_INDICES)
    pred_pos = group_score >= BINARY_THRESHOLD
    tp = int((pred_pos & is_pos).sum())
    tn = int((~pred_pos & ~is_pos).sum())
    fp = int((pred_pos & ~is_pos).sum())
    fn = int((~pred_pos & is_pos).sum())
    out = {
        "sensitivity": tp / (tp + fn) if tp + fn else 0.0,
        "specificity": tn / (tn + fp) if tn + fp else 0.0,
    }
    if is_pos.any() and not is_pos.all():
        out["auc"] = rank_auc(group_score, is_pos)
    return out


@dataclass
class MetricsReport:
    fold: int
    sample_count: int
    accuracy: float
    macro: dict
    per_class: dict
    auc: dict
    binary: dict
    confusion: list            # raw counts, predicted x true
    confusion_normalized: list
    extras: dict = field(default_factory=dict)


def compute_report(scores: np.ndarray, labels, fold: int = 0,
                   extras: dict = None) -> MetricsReport:
    """Full evaluation of per-class scores against integer labels."""
    labels = np.asarray(labels)
    predicted = np.asarray(scores).argmax(axis=1)
    counts = confusion_counts(predicted, labels, np.asarray(scores).shape[1])
    cls = classification_metrics(counts)
    auc = auc_macro_ovr(scores, labels)
    macro = dict(cls["macro"])
    macro["auc"] = auc["macro"]
    return MetricsReport(
        fold=fold,
        sample_count=len(labels),
        accuracy=cls["accuracy"],
        macro=macro,
        per_class=cls["per_class"],
        auc=auc,
        binary=binary_neoplastic_metrics(scores, labels),
        confusion=counts.tolist(),
        confusion_normalized=normalize_confusion(counts).tolist(),
        extras=extras or {},
    )


def _mean_std(values) -> tuple:
    """Mean and population standard deviation."""
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


_TABLE_ROWS = (
    ("Validation Acc. (%)", lambda r: r.extras.get("val_accuracy"), 100.0),
    ("Test Acc. (%)", lambda r: r.accuracy, 100.0),
    ("Sensitivity (%)", lambda r: r.macro["sensitivity"], 100.0),
    ("Precision (%)", lambda r: r.macro["precision"], 100.0),
    ("Specificity (%)", lambda r: r.macro["specificity"], 100.0),
    ("F1-score (%)", lambda r: r.macro["f1"], 100.0),
    ("AUC", lambda r: r.macro["auc"], 1.0),
    ("Parameters (mil)", lambda r: r.extras.get("param_count"), 1e-6),
)


def format_table(reports) -> str:
    """Plain-text summary table, mean +/- population std across folds."""
    lines = [f"{'Metric':<22}{'Mean +/- Std':>20}"]
    for name, getter, scale in _TABLE_ROWS:
        values = [getter(r) for r in reports if getter(r) is not None]
        if not values:
            continue
        mean, std = _mean_std([v * scale for v in values])
        decimals = 2 if scale != 1e-6 else 3
        lines.append(f"{name:<22}{mean:>14.{decimals}f} +/- {std:.{decimals}f}")
    return "\n".join(lines)


def emit_report(reports, out_dir: str) -> dict:
    """Write report.json, report.txt, and per-fold confusion CSVs.

    Returns the aggregate dict that went into report.json.
    """
    os.makedirs(out_dir, exist_ok=True)
    aggregate = {"folds": [], "summary": {}}
    for r in reports:
        aggregate["folds"].append({
            "fold": r.fold, "sample_count": r.sample_count,
            "accuracy": r.accuracy, "macro": r.macro,
            "per_class": {str(k): v for k, v in r.per_class.items()},
            "auc": {"per_class": {str(k): v for k, v in r.auc["per_class"].items()},
                    "macro": r.auc["macro"], "excluded": r.auc["excluded"]},
            "binary": r.binary, "confusion": r.confusion,
            "confusion_normalized": r.confusion_normalized,
            "extras": r.extras,
        })
    summary = {}
    for key, getter in (("accuracy", lambda r: r.accuracy),
                        ("val_accuracy", lambda r: r.extras.get("val_accuracy")),
                        ("sensitivity", lambda r: r.macro["sensitivity"]),
                        ("precision", lambda r: r.macro["precision"]),
                        ("specificity", lambda r: r.macro["specificity"]),
                        ("f1", lambda r: r.macro["f1"]),
                        ("auc", lambda r: r.macro["auc"]),
                        ("binary_sensitivity", lambda r: r.binary["sensitivity"]),
                        ("binary_specificity", lambda r: r.binary["specificity"])):
        values = [getter(r) for r in reports if getter(r) is not None]
        if values:
            mean, std = _mean_std(values)
            summary[key] = {"mean": mean, "std": std}
    aggregate["summary"] = summary
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(aggregate, fh, indent=2, sort_keys=True)
    with open(os.path.join(out_dir, "report.txt"), "w") as fh:
        fh.write(format_table(reports) + "\n")
    for r in reports:
        path = os.path.join(out_dir, f"confusion_fold{r.fold}.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["predicted\\true"] + list(range(len(r.confusion))))
            for i, row in enumerate(r.confusion_normalized):
                writer.writerow([i] + [f"{v:.6f}" for v in row])
    return aggregate
