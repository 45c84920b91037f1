"""Dual rehearsal memories: a per-task short-term buffer and a reservoir
long-term buffer, plus the wake/sleep partition of the long-term store.

The short-term buffer is refilled from scratch at the start of every task by
uniform sampling without replacement. The long-term buffer follows the
classic reservoir rule, so after n presentations every item has capacity/n
probability of residing in the buffer. Items carry the model logits captured
at insertion time so distillation losses replay against a frozen target.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .datasets import LabeledDataset, load_dataset, save_dataset
from .errors import EngineError, ShapeError


@dataclass
class MemoryItem:
    feature: np.ndarray                   # (*dims,) float32
    label: int
    task_id: int = -1
    logits: Optional[np.ndarray] = None   # (C,) float32, fixed at insertion

    def __post_init__(self):
        self.feature = np.asarray(self.feature, dtype=np.float32)
        self.label = int(self.label)
        self.task_id = int(self.task_id)
        if self.logits is not None:
            self.logits = np.asarray(self.logits, dtype=np.float32)


@dataclass
class ReplayBatch:
    features: np.ndarray                  # (B, *dims) float32
    labels: np.ndarray                    # (B,) int64
    logits: Optional[np.ndarray] = None   # (B, C) float32 when every item has them

    def __len__(self) -> int:
        return self.features.shape[0]


class ShortTermMemory:
    """Task-local buffer, discarded and refilled at every task boundary."""

    def __init__(self, capacity: int):
        if capacity < 0:
            raise ValueError("capacity must be non-negative")
        self.capacity = capacity
        self.items: list[MemoryItem] = []

    def __len__(self) -> int:
        return len(self.items)

    def reset(self) -> None:
        self.items = []

    def fill(self, ds: LabeledDataset, rng: np.random.Generator,
             task_id: int = -1) -> None:
        """Replace contents with min(capacity, N) samples drawn without replacement."""
        self.reset()
        take = min(self.capacity, len(ds))
        if take == 0:
            return
        idx = rng.choice(len(ds), size=take, replace=False)
        self.items = [MemoryItem(ds.features[i], ds.labels[i], task_id) for i in idx]


class LongTermMemory:
    """Reservoir buffer: uniform over everything ever presented."""

    def __init__(self, capacity: int):
        if capacity < 0:
            raise ValueError("capacity must be non-negative")
        self.capacity = capacity
        self.items: list[MemoryItem] = []
        self.seen_count = 0

    def __len__(self) -> int:
        return len(self.items)

    def insert(self, item: MemoryItem, rng: np.random.Generator) -> bool:
        """Classic reservoir update; returns True when the item was kept."""
        self.seen_count += 1
        if self.capacity == 0:
            return False
        if len(self.items) < self.capacity:
            self.items.append(item)
            return True
        j = int(rng.integers(0, self.seen_count))
        if j < self.capacity:
            self.items[j] = item
            return True
        return False


def fill_short_term(ds: LabeledDataset, capacity: int, rng: np.random.Generator,
                    task_id: int = -1) -> ShortTermMemory:
    if capacity < 1:
        raise ValueError("short-term capacity must be at least 1")
    if len(ds) == 0:
        raise EngineError("cannot memorize an empty task")
    mem = ShortTermMemory(capacity)
    mem.fill(ds, rng, task_id)
    return mem


def reservoir_insert(mem: LongTermMemory, item: MemoryItem,
                     rng: np.random.Generator) -> bool:
    return mem.insert(item, rng)


@dataclass
class LtmPartition:
    """Index split of the long-term buffer: a small wake share and the sleep
    remainder. Views hold slot indices into the live buffer, so reservoir
    replacements made during sleep show through to later replay draws: the
    sleep stage consolidates the memory as it is being updated. Slots
    appended after partition time belong to neither view."""

    mem: Optional[LongTermMemory] = None
    wake_idx: list[int] = field(default_factory=list)
    sleep_idx: list[int] = field(default_factory=list)

    def _gather(self, idx: list[int]) -> list[MemoryItem]:
        if self.mem is None:
            return []
        return [self.mem.items[i] for i in idx]

    @property
    def wake_items(self) -> list[MemoryItem]:
        return self._gather(self.wake_idx)

    @property
    def sleep_items(self) -> list[MemoryItem]:
        return self._gather(self.sleep_idx)


WAKE_SHARE = 0.1


def partition_ltm(mem: LongTermMemory, rng: np.random.Generator,
                  ratio: float = WAKE_SHARE) -> LtmPartition:
    """Split off round(ratio * n) slots (at least 1 when non-empty) for wake
    replay; the rest are reserved for sleep consolidation. An empty buffer
    yields two empty views and the wake loss later drops its replay term."""
    n = len(mem)
    if n == 0:
        return LtmPartition(mem)
    wake_n = min(n, max(1, int(round(ratio * n))))
    perm = rng.permutation(n)
    return LtmPartition(mem, [int(i) for i in perm[:wake_n]],
                        [int(i) for i in perm[wake_n:]])


def sample_batch(items: Sequence[MemoryItem], batch_size: int,
                 rng: np.random.Generator) -> ReplayBatch:
    """Uniform draw: with replacement when the view is shorter than the
    requested batch, without replacement otherwise."""
    if not items:
        raise EngineError("cannot sample from an empty memory")
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    idx = rng.choice(len(items), size=batch_size, replace=batch_size > len(items))
    chosen = [items[i] for i in idx]
    feats = np.stack([it.feature for it in chosen])
    labels = np.array([it.label for it in chosen], dtype=np.int64)
    logits = None
    if all(it.logits is not None for it in chosen):
        logits = np.stack([it.logits for it in chosen])
    return ReplayBatch(feats, labels, logits)


# -- persistence --------------------------------------------------------------


def save_buffer(mem: ShortTermMemory | LongTermMemory, num_classes: int,
                path: str | Path) -> None:
    """Write buffer contents as a dataset container plus an .aux.npz sidecar
    holding per-item logits and the reservoir counter."""
    path = Path(path)
    items = mem.items
    if items:
        feats = np.stack([it.feature for it in items])
        labels = np.array([it.label for it in items], dtype=np.int64)
    else:
        feats = np.zeros((0, 1), dtype=np.float32)
        labels = np.zeros((0,), dtype=np.int64)
    save_dataset(LabeledDataset(feats, labels, num_classes), path)
    has = np.array([it.logits is not None for it in items], dtype=bool)
    width = max((it.logits.shape[0] for it in items if it.logits is not None), default=0)
    logit_mat = np.zeros((len(items), width), dtype=np.float32)
    for i, it in enumerate(items):
        if it.logits is not None:
            logit_mat[i] = it.logits
    kind = "long" if isinstance(mem, LongTermMemory) else "short"
    seen = mem.seen_count if isinstance(mem, LongTermMemory) else 0
    task_ids = np.array([it.task_id for it in items], dtype=np.int64)
    np.savez(path.with_suffix(path.suffix + ".aux.npz"),
             kind=kind, capacity=mem.capacity, seen_count=seen,
             task_ids=task_ids, has_logits=has, logits=logit_mat)


def load_buffer(path: str | Path) -> ShortTermMemory | LongTermMemory:
    path = Path(path)
    ds = load_dataset(path)
    aux_path = path.with_suffix(path.suffix + ".aux.npz")
    if not aux_path.exists():
        raise ShapeError(f"missing buffer sidecar {aux_path}")
    aux = np.load(aux_path, allow_pickle=False)
    kind = str(aux["kind"])
    capacity = int(aux["capacity"])
    has = aux["has_logits"]
    logit_mat = aux["logits"]
    task_ids = aux["task_ids"]
    items = []
    for i in range(len(ds)):
        logits = logit_mat[i].copy() if bool(has[i]) else None
        items.append(MemoryItem(ds.features[i], ds.labels[i], int(task_ids[i]), logits))
    if kind == "long":
        mem: ShortTermMemory | LongTermMemory = LongTermMemory(capacity)
        mem.seen_count = int(aux["seen_count"])
    elif kind == "short":
        mem = ShortTermMemory(capacity)
    else:
        raise ShapeError(f"unknown buffer kind {kind!r} in {aux_path}")
    mem.items = items
    return mem
