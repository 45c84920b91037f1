"""Pluggable rehearsal losses: ER, DER++, and ER-ACE.

Every method composes a stream-batch term with an optional replay term; the
replay term is scaled by the caller-supplied replay weight, so setting that
weight to zero (or passing no replay batch) reduces every method to plain
cross-entropy on the stream batch.

    ER      CE(stream) + w * CE(replay)
    DER++   CE(stream) + w * (alpha_logits * MSE(replay logits, stored)
                              + beta_replay * CE(replay))
    ER-ACE  CE(stream, mask = batch classes | current-task classes)
            + w * CE(replay)           (replay side unmasked)

DER++ replays one batch and reuses its forward pass for both the logit-match
and the cross-entropy terms; stored logits are the ones captured when the
item entered the buffer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, EngineError
from .memory import ReplayBatch
from .models import Head, LayeredClassifier

METHOD_KINDS = ("er", "derpp", "er_ace")


@dataclass(frozen=True)
class MethodSpec:
    kind: str = "er"
    alpha_logits: float = 0.5   # DER++ logit-match weight
    beta_replay: float = 0.5    # DER++ replay-CE weight

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise ConfigError(f"unknown method kind {self.kind!r}, expected one of {METHOD_KINDS}")
        if self.alpha_logits < 0 or self.beta_replay < 0:
            raise ConfigError("method loss weights must be non-negative")


@dataclass
class BatchContext:
    """One composed-loss evaluation: a stream batch, the class bookkeeping
    ER-ACE needs, and an optional replay batch with its weight."""

    features: np.ndarray                 # (B, *dims) stream batch
    labels: np.ndarray                   # (B,) int64
    seen_classes: Sequence[int]          # classes encountered so far, current task included
    current_classes: Sequence[int]       # classes owned by the task in progress
    replay: Optional[ReplayBatch] = None
    replay_weight: float = 1.0


def _ace_mask(ctx: BatchContext, num_classes: int) -> np.ndarray:
    allowed = set(int(c) for c in np.unique(ctx.labels))
    allowed |= set(int(c) for c in ctx.current_classes)
    mask = np.zeros(num_classes, dtype=bool)
    mask[sorted(allowed)] = True
    return mask


def method_loss(model: LayeredClassifier, spec: MethodSpec, ctx: BatchContext) -> Tensor:
    """Composed scalar loss for one step; gradients flow to unfrozen groups."""
    if not len(ctx.seen_classes):
        raise EngineError("seen-class set is empty")
    num_classes = model.arch.num_classes

    stream_logits = model.forward(ctx.features, Head.CL)
    if spec.kind == "er_ace":
        mask = _ace_mask(ctx, num_classes)
        loss = ad.softmax_cross_entropy(stream_logits, ctx.labels, class_mask=mask)
    else:
        loss = ad.softmax_cross_entropy(stream_logits, ctx.labels)

    w = float(ctx.replay_weight)
    if ctx.replay is None or len(ctx.replay) == 0 or w == 0.0:
        return loss

    replay_logits = model.forward(ctx.replay.features, Head.CL)
    if spec.kind == "derpp":
        if ctx.replay.logits is None:
            raise EngineError("DER++ replay batch lacks stored logits")
        term = ad.scale(ad.mse_logits(replay_logits, ctx.replay.logits), spec.alpha_logits)
        if spec.beta_replay > 0.0:
            ce = ad.softmax_cross_entropy(replay_logits, ctx.replay.labels)
            term = ad.add(term, ad.scale(ce, spec.beta_replay))
    else:
        term = ad.softmax_cross_entropy(replay_logits, ctx.replay.labels)
    return ad.add(loss, ad.scale(term, w))
