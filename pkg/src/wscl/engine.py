"""Training loops: the wake/sleep schedule with freezing-mask search, and the
plain rehearsal, fine-tune, and joint strategies used as reference points.

One task proceeds wake -> sleep -> evaluation. Wake memorizes the task into
short-term memory, splits the long-term buffer 10/90, then trains one clone
per feasible freeze depth on the stream plus the small wake share of the
buffer; the clone with the lowest tail-window loss is kept. Sleep alternates
NREM consolidation batches (short-term memory plus the sleep share of the
buffer) with REM dreaming batches (cross-entropy on the disjoint dream head),
inserting short-term items into the reservoir during the first epoch only.

Update accounting distinguishes the accepted trajectory (winner's wake steps
plus all sleep steps) from the discarded candidates' steps, which are
reported separately as search cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import SgdConfig
from .datasets import DreamSource, LabeledDataset, TaskStream
from .errors import ConfigError, EngineError, WsclError
from .memory import (LongTermMemory, LtmPartition, MemoryItem, ReplayBatch,
                     ShortTermMemory, fill_short_term, partition_ltm, sample_batch)
from .methods import BatchContext, MethodSpec, method_loss
from .metrics import MetricsReport, accuracy, evaluate_matrix_row, faa, forgetting, fwt
from .models import (ArchConfig, FreezeMask, Head, LayeredClassifier,
                     build_model, extend_head, mask_candidates)
from .rng import stream as rng_stream

STRATEGIES = ("wscl", "baseline", "finetune", "joint")
TAIL_WINDOW = 0.1   # fraction of wake batches scored for candidate selection


@dataclass
class StageFlags:
    """Table-style ablation switches for the three WSCL stages."""

    wake_search: bool = True
    nrem: bool = True
    rem: bool = True

    def label(self) -> str:
        if self.nrem and self.rem:
            return "full"
        if self.nrem:
            return "wake_nrem"
        if self.rem:
            return "wake_rem"
        return "only_wake"


@dataclass
class WsclConfig:
    arch: ArchConfig
    method: MethodSpec = field(default_factory=MethodSpec)
    stages: StageFlags = field(default_factory=StageFlags)
    strategy: str = "wscl"
    wake_epochs: int = 1
    sleep_epochs: int = 10
    epochs_per_task: Optional[int] = None   # reference strategies; defaults to wake+sleep
    learning_rate: float = 0.03
    momentum: float = 0.0
    batch_size: int = 32
    alpha: float = 1.0                      # replay weight inside wake/NREM losses
    stm_capacity: int = 5000
    buffer_size: int = 200
    eval_mode: str = "class_il"
    fwt_mode: Optional[str] = "post_task"   # post_task | zero_shot | None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}, expected one of {STRATEGIES}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.momentum < 0:
            raise ConfigError("momentum must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.wake_epochs < 1:
            raise ConfigError("wake_epochs must be at least 1")
        if (self.stages.nrem or self.stages.rem) and self.sleep_epochs < 1:
            raise ConfigError("sleep_epochs must be at least 1 when a sleep stage is enabled")
        if self.sleep_epochs < 0:
            raise ConfigError("sleep_epochs must be non-negative")
        if self.epochs_per_task is not None and self.epochs_per_task < 1:
            raise ConfigError("epochs_per_task must be at least 1")
        if self.alpha < 0:
            raise ConfigError("alpha must be non-negative")
        if self.stm_capacity < 1:
            raise ConfigError("stm_capacity must be at least 1")
        if self.buffer_size < 0:
            raise ConfigError("buffer_size must be non-negative")
        if self.fwt_mode not in (None, "post_task", "zero_shot"):
            raise ConfigError(f"unknown fwt_mode {self.fwt_mode!r}")

    def sgd(self) -> SgdConfig:
        return SgdConfig(self.learning_rate, self.momentum)

    def reference_epochs(self) -> int:
        """Per-task epochs for the non-WSCL strategies; matched by default to
        the WSCL schedule length so comparisons share a budget."""
        return self.epochs_per_task or (self.wake_epochs + self.sleep_epochs)


@dataclass
class TaskOutcome:
    task_index: int
    accepted_depth: int
    candidate_depths: list[int]
    candidate_losses: list[float]
    wake_steps: int
    nrem_steps: int
    rem_steps: int
    update_count: int           # accepted trajectory: winner wake + sleep
    search_update_count: int    # discarded wake candidates
    theta_digest: dict[str, str]

    def to_dict(self) -> dict:
        return {
            "task_index": self.task_index,
            "accepted_depth": self.accepted_depth,
            "candidate_depths": list(self.candidate_depths),
            "candidate_losses": [float(v) for v in self.candidate_losses],
            "wake_steps": self.wake_steps,
            "nrem_steps": self.nrem_steps,
            "rem_steps": self.rem_steps,
            "update_count": self.update_count,
            "search_update_count": self.search_update_count,
            "theta_digest": dict(self.theta_digest),
        }


@dataclass
class RunRecord:
    strategy: str
    method: str
    stages: str
    seed: int
    accuracy_matrix: np.ndarray
    task_outcomes: list[TaskOutcome]
    metrics: MetricsReport
    update_count: int
    search_update_count: int
    accepted_depths: list[int]
    block_sizes: list[int]
    head_sizes: dict[str, int]
    scratch_accs: Optional[list[float]] = None
    zero_shot_baseline: Optional[list[float]] = None

    @property
    def method_label(self) -> str:
        if self.strategy == "wscl":
            return f"wscl-{self.method}"
        if self.strategy == "baseline":
            return self.method
        return self.strategy

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "method": self.method,
            "method_label": self.method_label,
            "stages": self.stages,
            "seed": self.seed,
            "accuracy_matrix": [[float(v) for v in row] for row in self.accuracy_matrix],
            "task_outcomes": [o.to_dict() for o in self.task_outcomes],
            "metrics": self.metrics.to_dict(),
            "update_count": self.update_count,
            "search_update_count": self.search_update_count,
            "accepted_depths": list(self.accepted_depths),
            "block_sizes": list(self.block_sizes),
            "head_sizes": dict(self.head_sizes),
            "scratch_accs": self.scratch_accs,
            "zero_shot_baseline": self.zero_shot_baseline,
        }


@dataclass
class WakeResult:
    model: LayeredClassifier
    mask: FreezeMask
    stm: ShortTermMemory
    partition: LtmPartition
    candidate_depths: list[int]
    candidate_losses: list[float]
    steps: int
    update_count: int
    search_update_count: int


def _epoch_batches(n: int, batch_size: int, order: np.ndarray):
    for lo in range(0, n, batch_size):
        yield order[lo: lo + batch_size]


def _stm_batch(stm: ShortTermMemory, idx: np.ndarray) -> ReplayBatch:
    chosen = [stm.items[i] for i in idx]
    feats = np.stack([it.feature for it in chosen])
    labels = np.array([it.label for it in chosen], dtype=np.int64)
    return ReplayBatch(feats, labels)


class _DreamBatcher:
    """Cyclic seeded batches over the dream corpus; reshuffles on wrap."""

    def __init__(self, source: DreamSource, batch_size: int, seed: int, task: int):
        self.features = source.dataset.features
        self.labels = source.head_labels()
        self.batch_size = batch_size
        self.seed = seed
        self.task = task
        self.pass_index = 0
        self.pos = 0
        self.order = rng_stream(seed, "rem.order", task, 0).permutation(len(self.labels))

    def next(self) -> tuple[np.ndarray, np.ndarray]:
        idx = []
        while len(idx) < self.batch_size:
            if self.pos >= len(self.order):
                self.pass_index += 1
                self.order = rng_stream(self.seed, "rem.order", self.task,
                                        self.pass_index).permutation(len(self.labels))
                self.pos = 0
            take = min(self.batch_size - len(idx), len(self.order) - self.pos)
            idx.extend(self.order[self.pos: self.pos + take])
            self.pos += take
        idx = np.array(idx)
        return self.features[idx], self.labels[idx]


# -- wake ---------------------------------------------------------------------


def wake_phase(model: LayeredClassifier, task_train: LabeledDataset,
               ltm: LongTermMemory, prev_mask: FreezeMask, cfg: WsclConfig,
               seed: int, task: int, seen_classes: list[int],
               current_classes: list[int]) -> WakeResult:
    """Memorize the task, split the buffer, and run the candidate search."""
    if len(task_train) == 0:
        raise EngineError("wake phase received an empty task")
    stm = fill_short_term(task_train, cfg.stm_capacity,
                          rng_stream(seed, "stm.fill", task), task_id=task)
    part = partition_ltm(ltm, rng_stream(seed, "ltm.partition", task))

    if cfg.stages.wake_search:
        candidates = mask_candidates(prev_mask.depth, model.num_blocks)
    else:
        candidates = [FreezeMask(prev_mask.depth, task)]

    # all candidates see the same pre-drawn batch orders and replay draws
    n = len(task_train)
    steps: list[tuple[np.ndarray, Optional[ReplayBatch]]] = []
    for e in range(cfg.wake_epochs):
        order = rng_stream(seed, "wake.order", task, e).permutation(n)
        for k, idx in enumerate(_epoch_batches(n, cfg.batch_size, order)):
            replay = None
            if part.wake_items:
                replay = sample_batch(part.wake_items, cfg.batch_size,
                                      rng_stream(seed, "wake.replay", task, e, k))
            steps.append((idx, replay))
    tail = max(1, math.ceil(TAIL_WINDOW * len(steps)))
    sgd = cfg.sgd()

    best = None
    best_loss = math.inf
    accepted_updates = 0
    total_updates = 0
    cand_losses = []
    for cand in candidates:
        clone = model.clone()
        clone.apply_mask(FreezeMask(cand.depth, task))
        updates = 0
        losses = []
        for idx, replay in steps:
            ctx = BatchContext(task_train.features[idx], task_train.labels[idx],
                               seen_classes, current_classes, replay, cfg.alpha)
            clone.zero_grads()
            loss = method_loss(clone, cfg.method, ctx)
            ad.backward(loss)
            updates += ad.sgd_step(clone.groups_for(Head.CL), sgd)
            losses.append(loss.item())
        tail_mean = float(np.mean(losses[-tail:]))
        cand_losses.append(tail_mean)
        total_updates += updates
        if tail_mean < best_loss:   # ties keep the shallower candidate, so a
            # deeper freeze is accepted only on a strict loss improvement
            best = (clone, cand.depth)
            best_loss = tail_mean
            accepted_updates = updates

    winner, depth = best
    return WakeResult(winner, FreezeMask(depth, task), stm, part,
                      [c.depth for c in candidates], cand_losses,
                      len(steps), accepted_updates,
                      total_updates - accepted_updates)


# -- sleep --------------------------------------------------------------------


def nrem_step(model: LayeredClassifier, stm_batch: ReplayBatch,
              ltm_sleep_batch: Optional[ReplayBatch], mask: FreezeMask,
              method: MethodSpec, alpha: float, sgd: SgdConfig,
              seen_classes: list[int], current_classes: list[int]) -> tuple[float, int]:
    """One consolidation step: method loss on the short-term batch plus
    alpha-weighted method loss on the sleep share of the buffer."""
    if len(stm_batch) == 0:
        raise EngineError("NREM step needs a non-empty short-term batch")
    if model.mask_depth != mask.depth:
        raise EngineError("model frozen state does not match the accepted mask")
    ctx = BatchContext(stm_batch.features, stm_batch.labels,
                       seen_classes, current_classes, ltm_sleep_batch, alpha)
    model.zero_grads()
    loss = method_loss(model, method, ctx)
    ad.backward(loss)
    updates = ad.sgd_step(model.groups_for(Head.CL), sgd)
    return loss.item(), updates


def rem_step(model: LayeredClassifier, dream_features: np.ndarray,
             dream_labels: np.ndarray, mask: FreezeMask,
             sgd: SgdConfig) -> tuple[float, int]:
    """One dreaming step: plain cross-entropy through the dream head; the
    CL head and the frozen prefix stay untouched."""
    if model.dream_head is None:
        raise EngineError("REM step needs the dream head attached")
    if model.mask_depth != mask.depth:
        raise EngineError("model frozen state does not match the accepted mask")
    model.zero_grads()
    logits = model.forward(dream_features, Head.DREAM)
    loss = ad.softmax_cross_entropy(logits, dream_labels)
    ad.backward(loss)
    updates = ad.sgd_step(model.groups_for(Head.DREAM), sgd)
    return loss.item(), updates


def sleep_phase(model: LayeredClassifier, stm: ShortTermMemory,
                ltm: LongTermMemory, partition: LtmPartition,
                dream_source: Optional[DreamSource], mask: FreezeMask,
                cfg: WsclConfig, seed: int, task: int,
                seen_classes: list[int], current_classes: list[int]
                ) -> tuple[int, int, int]:
    """Alternate NREM and REM batches for sleep_epochs epochs over the
    short-term memory; returns (nrem_steps, rem_steps, update_count)."""
    if not (cfg.stages.nrem or cfg.stages.rem):
        if cfg.sleep_epochs > 0:
            raise EngineError("sleep phase invoked with both stages disabled")
        return 0, 0, 0
    if len(stm) == 0:
        raise EngineError("sleep phase needs a non-empty short-term memory")
    if cfg.stages.rem and dream_source is None:
        raise EngineError("REM stage enabled without a dream source")

    sgd = cfg.sgd()
    batches_per_epoch = math.ceil(len(stm) / cfg.batch_size)
    dreams = (_DreamBatcher(dream_source, cfg.batch_size, seed, task)
              if cfg.stages.rem else None)
    reservoir_rng = rng_stream(seed, "reservoir", task)
    nrem_steps = rem_steps = updates = 0

    for e in range(cfg.sleep_epochs):
        order = rng_stream(seed, "sleep.stm.order", task, e).permutation(len(stm))
        for k, idx in enumerate(_epoch_batches(len(stm), cfg.batch_size, order)):
            if cfg.stages.nrem:
                stm_batch = _stm_batch(stm, idx)
                ltm_batch = None
                if partition.sleep_items:
                    ltm_batch = sample_batch(partition.sleep_items, cfg.batch_size,
                                             rng_stream(seed, "sleep.ltm", task, e, k))
                if e == 0:
                    # first epoch feeds the reservoir, tagging each item with
                    # the logits the network produces at storage time
                    stored = model.forward(stm_batch.features, Head.CL).data
                _, n_upd = nrem_step(model, stm_batch, ltm_batch, mask, cfg.method,
                                     cfg.alpha, sgd, seen_classes, current_classes)
                updates += n_upd
                nrem_steps += 1
                if e == 0:
                    for row, i in enumerate(idx):
                        item = stm.items[i]
                        ltm.insert(MemoryItem(item.feature, item.label, task,
                                              stored[row].copy()), reservoir_rng)
            if cfg.stages.rem:
                feats, labels = dreams.next()
                _, n_upd = rem_step(model, feats, labels, mask, sgd)
                updates += n_upd
                rem_steps += 1
    return nrem_steps, rem_steps, updates


# -- full run -----------------------------------------------------------------


def _wrap_task_errors(task: int):
    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and isinstance(exc, WsclError):
                raise EngineError(f"task {task}: {exc}") from exc
            return False

    return _Ctx()


def _train_plain_ce(model: LayeredClassifier, ds: LabeledDataset, steps: int,
                    cfg: WsclConfig, seed: int, label: str, task: int) -> None:
    """Budgeted plain cross-entropy training, used for scratch baselines."""
    sgd = cfg.sgd()
    done = 0
    epoch = 0
    n = len(ds)
    while done < steps:
        order = rng_stream(seed, label, task, epoch).permutation(n)
        for idx in _epoch_batches(n, cfg.batch_size, order):
            if done >= steps:
                return
            model.zero_grads()
            loss = ad.softmax_cross_entropy(model.forward(ds.features[idx], Head.CL),
                                            ds.labels[idx])
            ad.backward(loss)
            ad.sgd_step(model.groups_for(Head.CL), sgd)
            done += 1
        epoch += 1


def _scratch_accuracies(stream: TaskStream, budgets: list[int], cfg: WsclConfig,
                        seed: int) -> list[float]:
    accs = []
    for i, (train, test) in enumerate(stream.tasks):
        model = build_model(cfg.arch, rng_stream(seed, "scratch.init", i))
        _train_plain_ce(model, train, budgets[i], cfg, seed, "scratch.order", i)
        subset = stream.classes_for_task(i) if cfg.eval_mode == "task_il" else None
        accs.append(accuracy(model, test, subset))
    return accs


def _zero_shot_baseline(stream: TaskStream, cfg: WsclConfig, seed: int) -> list[float]:
    accs = []
    for i, (_, test) in enumerate(stream.tasks):
        model = build_model(cfg.arch, rng_stream(seed, "zeroshot.init", i))
        subset = stream.classes_for_task(i) if cfg.eval_mode == "task_il" else None
        accs.append(accuracy(model, test, subset))
    return accs


def _finish_record(cfg: WsclConfig, stream: TaskStream, seed: int, strategy: str,
                   matrix: np.ndarray, outcomes: list[TaskOutcome],
                   model: LayeredClassifier) -> RunRecord:
    T = len(stream)
    total_updates = sum(o.update_count for o in outcomes)
    search_updates = sum(o.search_update_count for o in outcomes)
    square = matrix.shape[0] == T

    scratch = zero_shot = None
    fwt_val = None
    if square and T >= 2 and cfg.fwt_mode == "post_task":
        budgets = [o.wake_steps + o.nrem_steps + o.rem_steps for o in outcomes]
        scratch = _scratch_accuracies(stream, budgets, cfg, seed)
        fwt_val = fwt(matrix, scratch_accs=scratch, mode="post_task")
    elif square and T >= 2 and cfg.fwt_mode == "zero_shot":
        zero_shot = _zero_shot_baseline(stream, cfg, seed)
        fwt_val = fwt(matrix, zero_shot_baseline=zero_shot, mode="zero_shot")
    forget = forgetting(matrix) if square and T >= 2 else None

    report = MetricsReport(
        faa=faa(matrix), forgetting=forget, fwt=fwt_val,
        fwt_mode=cfg.fwt_mode if fwt_val is not None else None,
        per_task_accuracies=[float(v) for v in matrix[-1]],
        update_count=total_updates, eval_mode=cfg.eval_mode)
    return RunRecord(
        strategy=strategy, method=cfg.method.kind, stages=cfg.stages.label(),
        seed=seed, accuracy_matrix=matrix, task_outcomes=outcomes, metrics=report,
        update_count=total_updates, search_update_count=search_updates,
        accepted_depths=[o.accepted_depth for o in outcomes],
        block_sizes=model.block_sizes(), head_sizes=model.head_sizes(),
        scratch_accs=scratch, zero_shot_baseline=zero_shot)


def _run_wscl(stream: TaskStream, dream_source: Optional[DreamSource],
              cfg: WsclConfig, seed: int) -> RunRecord:
    model = build_model(cfg.arch, rng_stream(seed, "init.model"))
    if cfg.stages.rem:
        if dream_source is None:
            raise ConfigError("REM stage enabled but no dream source supplied")
        extend_head(model, dream_source.num_dream_classes,
                    rng_stream(seed, "init.dream_head"))
    ltm = LongTermMemory(cfg.buffer_size)
    mask = FreezeMask(0, -1)
    T = len(stream)
    matrix = np.full((T, T), np.nan)
    outcomes: list[TaskOutcome] = []

    for t in range(T):
        with _wrap_task_errors(t):
            train, _ = stream.tasks[t]
            seen = stream.classes_through_task(t)
            current = stream.classes_for_task(t)
            wake = wake_phase(model, train, ltm, mask, cfg, seed, t, seen, current)
            model, mask = wake.model, wake.mask
            if cfg.stages.nrem or cfg.stages.rem:
                nrem_n, rem_n, sleep_updates = sleep_phase(
                    model, wake.stm, ltm, wake.partition, dream_source, mask,
                    cfg, seed, t, seen, current)
            else:
                nrem_n = rem_n = sleep_updates = 0
            matrix[t] = evaluate_matrix_row(model, stream, cfg.eval_mode)
            outcomes.append(TaskOutcome(
                task_index=t, accepted_depth=mask.depth,
                candidate_depths=wake.candidate_depths,
                candidate_losses=wake.candidate_losses,
                wake_steps=wake.steps, nrem_steps=nrem_n, rem_steps=rem_n,
                update_count=wake.update_count + sleep_updates,
                search_update_count=wake.search_update_count,
                theta_digest=model.block_digests()))
    return _finish_record(cfg, stream, seed, "wscl", matrix, outcomes, model)


def _run_rehearsal(stream: TaskStream, cfg: WsclConfig, seed: int,
                   strategy: str) -> RunRecord:
    """Plain sequential training with an optional reservoir buffer. The
    fine-tune strategy is the buffer-free special case."""
    model = build_model(cfg.arch, rng_stream(seed, "init.model"))
    buffer_size = 0 if strategy == "finetune" else cfg.buffer_size
    ltm = LongTermMemory(buffer_size)
    epochs = cfg.reference_epochs()
    sgd = cfg.sgd()
    T = len(stream)
    matrix = np.full((T, T), np.nan)
    outcomes: list[TaskOutcome] = []

    for t in range(T):
        with _wrap_task_errors(t):
            train, _ = stream.tasks[t]
            seen = stream.classes_through_task(t)
            current = stream.classes_for_task(t)
            n = len(train)
            if n == 0:
                raise EngineError("empty task")
            reservoir_rng = rng_stream(seed, "base.reservoir", t)
            steps = updates = 0
            for e in range(epochs):
                order = rng_stream(seed, "base.order", t, e).permutation(n)
                for k, idx in enumerate(_epoch_batches(n, cfg.batch_size, order)):
                    replay = None
                    if ltm.items:
                        replay = sample_batch(ltm.items, cfg.batch_size,
                                              rng_stream(seed, "base.replay", t, e, k))
                    if e == 0 and ltm.capacity > 0:
                        stored = model.forward(train.features[idx], Head.CL).data
                    ctx = BatchContext(train.features[idx], train.labels[idx],
                                       seen, current, replay, 1.0)
                    model.zero_grads()
                    loss = method_loss(model, cfg.method, ctx)
                    ad.backward(loss)
                    updates += ad.sgd_step(model.groups_for(Head.CL), sgd)
                    steps += 1
                    if e == 0 and ltm.capacity > 0:
                        for row, i in enumerate(idx):
                            ltm.insert(MemoryItem(train.features[i], train.labels[i],
                                                  t, stored[row].copy()), reservoir_rng)
            matrix[t] = evaluate_matrix_row(model, stream, cfg.eval_mode)
            outcomes.append(TaskOutcome(
                task_index=t, accepted_depth=0, candidate_depths=[0],
                candidate_losses=[], wake_steps=steps, nrem_steps=0, rem_steps=0,
                update_count=updates, search_update_count=0,
                theta_digest=model.block_digests()))
    return _finish_record(cfg, stream, seed, strategy, matrix, outcomes, model)


def _run_joint(stream: TaskStream, cfg: WsclConfig, seed: int) -> RunRecord:
    """Single-phase training on all tasks at once: the upper envelope."""
    model = build_model(cfg.arch, rng_stream(seed, "init.model"))
    feats = np.concatenate([train.features for train, _ in stream.tasks])
    labels = np.concatenate([train.labels for train, _ in stream.tasks])
    all_classes = stream.classes_through_task(len(stream) - 1)
    epochs = cfg.reference_epochs()
    sgd = cfg.sgd()
    n = len(labels)
    steps = updates = 0
    with _wrap_task_errors(0):
        for e in range(epochs):
            order = rng_stream(seed, "joint.order", 0, e).permutation(n)
            for idx in _epoch_batches(n, cfg.batch_size, order):
                ctx = BatchContext(feats[idx], labels[idx], all_classes, all_classes)
                model.zero_grads()
                loss = method_loss(model, cfg.method, ctx)
                ad.backward(loss)
                updates += ad.sgd_step(model.groups_for(Head.CL), sgd)
                steps += 1
    matrix = evaluate_matrix_row(model, stream, cfg.eval_mode)[None, :]
    outcome = TaskOutcome(
        task_index=0, accepted_depth=0, candidate_depths=[0], candidate_losses=[],
        wake_steps=steps, nrem_steps=0, rem_steps=0, update_count=updates,
        search_update_count=0, theta_digest=model.block_digests())
    return _finish_record(cfg, stream, seed, "joint", matrix, [outcome], model)


def run_stream(stream: TaskStream, dream_source: Optional[DreamSource],
               cfg: WsclConfig, seed: int) -> RunRecord:
    """Run one full training pass over the stream under the configured
    strategy and return the complete record."""
    if cfg.arch.num_classes != stream.num_classes:
        raise ConfigError(
            f"model head has {cfg.arch.num_classes} classes, stream has {stream.num_classes}")
    if dream_source is not None:
        overlap = dream_source.dataset.class_set & set(stream.classes_through_task(len(stream) - 1))
        if overlap:
            raise ConfigError(f"dream and stream classes overlap: {sorted(overlap)}")
    if cfg.strategy == "wscl":
        return _run_wscl(stream, dream_source, cfg, seed)
    if cfg.strategy in ("baseline", "finetune"):
        return _run_rehearsal(stream, cfg, seed, cfg.strategy)
    return _run_joint(stream, cfg, seed)
