"""Accuracy matrix and derived continual-learning metrics.

R[t][i] is the test accuracy on task i after finishing training on task t.
Final average accuracy (FAA) is the mean of the last row. Forward transfer
compares on-stream accuracy against a from-scratch baseline (post_task mode)
or the pre-exposure row against a random-init baseline (zero_shot mode).
Forgetting is the per-column drop from the historical maximum to the final
row, averaged over columns.

Class-incremental evaluation takes the argmax over every class in the
stream; task-incremental restricts the argmax to the test task's own class
set. Both read only the main classification head.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .datasets import LabeledDataset, TaskStream
from .errors import ConfigError, ShapeError
from .models import Head, LayeredClassifier

EVAL_MODES = ("class_il", "task_il")


def predict_logits(model: LayeredClassifier, features: np.ndarray,
                   batch_size: int = 256) -> np.ndarray:
    """CL-head logits over a dataset, evaluated in chunks."""
    rows = []
    for lo in range(0, len(features), batch_size):
        rows.append(model.forward(features[lo: lo + batch_size], Head.CL).data)
    return np.concatenate(rows) if rows else np.zeros((0, model.arch.num_classes))


def accuracy(model: LayeredClassifier, ds: LabeledDataset,
             class_subset: Optional[list[int]] = None) -> float:
    """Fraction correct; a class subset restricts the argmax to those columns."""
    if len(ds) == 0:
        raise ShapeError("cannot evaluate an empty dataset")
    logits = predict_logits(model, ds.features)
    if class_subset is not None:
        cols = np.asarray(sorted(class_subset), dtype=np.int64)
        pred = cols[np.argmax(logits[:, cols], axis=1)]
    else:
        pred = np.argmax(logits, axis=1)
    return float(np.mean(pred == ds.labels))


def evaluate_matrix_row(model: LayeredClassifier, stream: TaskStream,
                        mode: str = "class_il") -> np.ndarray:
    """Accuracy on every task's test set under the given evaluation mode."""
    if mode not in EVAL_MODES:
        raise ConfigError(f"unknown eval mode {mode!r}, expected one of {EVAL_MODES}")
    row = np.zeros(len(stream), dtype=np.float64)
    for i, (_, test) in enumerate(stream.tasks):
        subset = stream.classes_for_task(i) if mode == "task_il" else None
        row[i] = accuracy(model, test, subset)
    return row


def faa(R: np.ndarray) -> float:
    """Final average accuracy: mean of the last populated row."""
    R = np.asarray(R, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] < 1:
        raise ShapeError("accuracy matrix must be 2-D and non-empty")
    last = R[-1]
    if not np.isfinite(last).all():
        raise ShapeError("last matrix row is not fully populated")
    return float(last.mean())


def fwt(R: np.ndarray, scratch_accs: Optional[np.ndarray] = None,
        zero_shot_baseline: Optional[np.ndarray] = None,
        mode: str = "post_task") -> float:
    """Forward transfer.

    post_task: mean over tasks of R[i][i] minus the accuracy of a model
    trained on task i alone from scratch under the same step budget.
    zero_shot: mean over tasks i >= 2 (1-based) of R[i-1][i] minus the
    accuracy b[i] of a random-init model, i.e. accuracy on a task just
    before training reaches it.
    """
    R = np.asarray(R, dtype=np.float64)
    T = R.shape[0]
    if mode == "post_task":
        if scratch_accs is None:
            raise ConfigError("post_task FWT needs scratch accuracies")
        scratch = np.asarray(scratch_accs, dtype=np.float64)
        if scratch.shape != (T,):
            raise ShapeError(f"need {T} scratch accuracies, got {scratch.shape}")
        diag = np.diagonal(R)
        return float(np.mean(diag - scratch))
    if mode == "zero_shot":
        if T < 2:
            raise ShapeError("zero-shot FWT needs at least 2 tasks")
        if zero_shot_baseline is None:
            raise ConfigError("zero_shot FWT needs random-init baseline accuracies")
        b = np.asarray(zero_shot_baseline, dtype=np.float64)
        if b.shape != (T,):
            raise ShapeError(f"need {T} baseline accuracies, got {b.shape}")
        pre = np.array([R[i - 1, i] for i in range(1, T)])
        if not np.isfinite(pre).all():
            raise ShapeError("zero-shot FWT needs the above-diagonal entries populated")
        return float(np.mean(pre - b[1:]))
    raise ConfigError(f"unknown FWT mode {mode!r}")


def forgetting(R: np.ndarray) -> float:
    """Mean over columns of (historical maximum including the final row)
    minus the final row; non-negative by construction."""
    R = np.asarray(R, dtype=np.float64)
    T = R.shape[0]
    if T < 2:
        raise ShapeError("forgetting needs at least 2 tasks")
    drops = []
    for i in range(T):
        col = R[i:, i]   # rows t >= i are populated for column i
        drops.append(np.max(col) - R[T - 1, i])
    return float(np.mean(drops))


@dataclass
class MetricsReport:
    faa: float
    forgetting: Optional[float]
    fwt: Optional[float]
    fwt_mode: Optional[str]
    per_task_accuracies: list[float]
    update_count: int
    eval_mode: str = "class_il"

    def to_dict(self) -> dict:
        return {
            "faa": self.faa,
            "forgetting": self.forgetting,
            "fwt": self.fwt,
            "fwt_mode": self.fwt_mode,
            "per_task_accuracies": list(self.per_task_accuracies),
            "update_count": self.update_count,
            "eval_mode": self.eval_mode,
        }
