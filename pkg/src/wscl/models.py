"""Block-layered classifiers with prefix freezing masks and a dual head.

A model is a chain of L trainable blocks (affine+relu for MLPs, conv+relu+
pool for CNNs) feeding one or two linear heads over the shared penultimate
representation. Freezing masks cover the trunk only and are prefix shaped:
depth d freezes blocks 1..d. Heads are never frozen by a mask, and the
optional dream head is fully isolated from the main classification head.
"""

from __future__ import annotations

import copy
import hashlib
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import ParamGroup, Tensor
from .errors import EngineError, NumericError, ShapeError

CL_HEAD_GROUP_OFFSET = 1     # head group ids sit above the trunk ids 1..L
DREAM_HEAD_GROUP_OFFSET = 2


class Head(Enum):
    """Selects which output head a forward pass reads."""
    CL = "cl"
    DREAM = "dream"


@dataclass(frozen=True)
class FreezeMask:
    """Prefix freezing mask: blocks 1..depth are frozen."""

    depth: int
    task_index: int


@dataclass
class ArchConfig:
    kind: str                      # "mlp" | "cnn"
    widths: list[int]              # per-block widths (mlp) or channels (cnn)
    input_shape: tuple[int, ...]   # (d,) for mlp, (c, h, w) for cnn
    num_classes: int

    def __post_init__(self):
        self.widths = [int(w) for w in self.widths]
        self.input_shape = tuple(int(d) for d in self.input_shape)
        if self.kind not in ("mlp", "cnn"):
            raise ValueError(f"unknown architecture kind {self.kind!r}")
        if len(self.widths) < 2:
            raise ValueError("at least 2 blocks required")
        if any(w <= 0 for w in self.widths):
            raise ValueError("block widths must be positive")
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.kind == "mlp":
            if len(self.input_shape) != 1:
                raise ValueError("mlp input_shape must be (d,)")
        else:
            if len(self.input_shape) != 3:
                raise ValueError("cnn input_shape must be (c, h, w)")
            side = min(self.input_shape[1], self.input_shape[2])
            if side // (2 ** len(self.widths)) < 1:
                raise ValueError(
                    f"input {self.input_shape} too small for {len(self.widths)} pooling blocks")

    @property
    def num_blocks(self) -> int:
        return len(self.widths)


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return ad.parameter(None, rng=rng, shape=shape, limit=limit)


class _MlpBlock:
    def __init__(self, rng, in_dim: int, out_dim: int, block_id: int):
        self.w = _glorot(rng, (in_dim, out_dim), in_dim, out_dim)
        self.b = ad.parameter(np.zeros(out_dim))
        self.group = ParamGroup(block_id, [self.w, self.b])

    def forward(self, x: Tensor) -> Tensor:
        return ad.relu(ad.add_bias(ad.matmul(x, self.w), self.b))


class _ConvBlock:
    def __init__(self, rng, in_ch: int, out_ch: int, block_id: int, ksize: int = 3):
        fan_in = in_ch * ksize * ksize
        fan_out = out_ch * ksize * ksize
        self.w = _glorot(rng, (out_ch, in_ch, ksize, ksize), fan_in, fan_out)
        self.b = ad.parameter(np.zeros(out_ch))
        self.group = ParamGroup(block_id, [self.w, self.b])

    def forward(self, x: Tensor) -> Tensor:
        return ad.avg_pool2d(ad.relu(ad.conv2d(x, self.w, self.b, padding=1)), 2)


class _LinearHead:
    def __init__(self, rng, in_dim: int, out_dim: int, group_id: int):
        self.w = _glorot(rng, (in_dim, out_dim), in_dim, out_dim)
        self.b = ad.parameter(np.zeros(out_dim))
        self.group = ParamGroup(group_id, [self.w, self.b])

    def forward(self, x: Tensor) -> Tensor:
        return ad.add_bias(ad.matmul(x, self.w), self.b)


class LayeredClassifier:
    """Trunk of L blocks plus a classification head and optional dream head."""

    def __init__(self, arch: ArchConfig, rng: np.random.Generator):
        self.arch = arch
        self.mask_depth = 0
        self.blocks = []
        L = arch.num_blocks
        if arch.kind == "mlp":
            dims = [arch.input_shape[0]] + arch.widths
            for k in range(L):
                self.blocks.append(_MlpBlock(rng, dims[k], dims[k + 1], k + 1))
            feat_dim = dims[-1]
        else:
            chans = [arch.input_shape[0]] + arch.widths
            for k in range(L):
                self.blocks.append(_ConvBlock(rng, chans[k], chans[k + 1], k + 1))
            h = arch.input_shape[1] // (2 ** L)
            w = arch.input_shape[2] // (2 ** L)
            feat_dim = arch.widths[-1] * h * w
        self.feature_dim = feat_dim
        self.cl_head = _LinearHead(rng, feat_dim, arch.num_classes, L + CL_HEAD_GROUP_OFFSET)
        self.dream_head: Optional[_LinearHead] = None

    # -- structure ---------------------------------------------------------

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    def trunk_groups(self) -> list[ParamGroup]:
        return [blk.group for blk in self.blocks]

    def block_sizes(self) -> list[int]:
        return [blk.group.num_params() for blk in self.blocks]

    def head_sizes(self) -> dict[str, int]:
        sizes = {"cl": self.cl_head.group.num_params()}
        if self.dream_head is not None:
            sizes["dream"] = self.dream_head.group.num_params()
        return sizes

    def groups_for(self, head: Head) -> list[ParamGroup]:
        """Parameter groups an optimizer step for this head may touch."""
        if head is Head.DREAM:
            if self.dream_head is None:
                raise EngineError("dream head not attached")
            return self.trunk_groups() + [self.dream_head.group]
        return self.trunk_groups() + [self.cl_head.group]

    def named_params(self):
        for k, blk in enumerate(self.blocks):
            yield f"block{k + 1}.w", blk.w
            yield f"block{k + 1}.b", blk.b
        yield "cl_head.w", self.cl_head.w
        yield "cl_head.b", self.cl_head.b
        if self.dream_head is not None:
            yield "dream_head.w", self.dream_head.w
            yield "dream_head.b", self.dream_head.b

    # -- masking -----------------------------------------------------------

    def apply_mask(self, mask: FreezeMask):
        if not 0 <= mask.depth <= self.num_blocks:
            raise ShapeError(f"mask depth {mask.depth} outside [0, {self.num_blocks}]")
        self.mask_depth = mask.depth
        for k, blk in enumerate(self.blocks, start=1):
            blk.group.set_frozen(k <= mask.depth)

    def unfrozen_scalars(self, head: Head = Head.CL) -> int:
        """Scalar parameters a step with this head updates under the current mask."""
        return sum(g.num_params() for g in self.groups_for(head) if not g.frozen)

    # -- forward -----------------------------------------------------------

    def forward(self, batch, head: Head = Head.CL) -> Tensor:
        """Run the trunk and the selected head, recording the tape."""
        if head is Head.DREAM and self.dream_head is None:
            raise EngineError("dream head not attached")
        x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch, dtype=np.float32))
        expect = self.arch.input_shape
        if x.data.ndim != len(expect) + 1 or x.data.shape[1:] != expect:
            raise ShapeError(f"batch shape {x.data.shape} does not match input spec {expect}")
        for k, blk in enumerate(self.blocks, start=1):
            x = blk.forward(x)
            if not np.isfinite(x.data).all():
                raise NumericError(f"non-finite activation after block {k}")
        if self.arch.kind == "cnn":
            x = ad.reshape(x, (x.data.shape[0], self.feature_dim))
        out_head = self.dream_head if head is Head.DREAM else self.cl_head
        logits = out_head.forward(x)
        if not np.isfinite(logits.data).all():
            raise NumericError(f"non-finite logits from {head.value} head")
        return logits

    # -- lifecycle ---------------------------------------------------------

    def clone(self) -> "LayeredClassifier":
        """Independent deep copy; optimizer state (momentum) is not carried."""
        other = copy.copy(self)
        other.blocks = []
        for blk in self.blocks:
            nb = copy.copy(blk)
            nb.w = Tensor(blk.w.data.copy(), blk.w.requires_grad)
            nb.b = Tensor(blk.b.data.copy(), blk.b.requires_grad)
            nb.group = ParamGroup(blk.group.id, [nb.w, nb.b], blk.group.frozen)
            other.blocks.append(nb)

        def clone_head(h):
            nh = copy.copy(h)
            nh.w = Tensor(h.w.data.copy(), h.w.requires_grad)
            nh.b = Tensor(h.b.data.copy(), h.b.requires_grad)
            nh.group = ParamGroup(h.group.id, [nh.w, nh.b], h.group.frozen)
            return nh

        other.cl_head = clone_head(self.cl_head)
        other.dream_head = clone_head(self.dream_head) if self.dream_head else None
        return other

    def zero_grads(self):
        for _, t in self.named_params():
            t.zero_grad()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_params()}

    def block_digests(self) -> dict[str, str]:
        """Short content hash per block, for bytewise immutability checks."""
        digests = {}
        for k, blk in enumerate(self.blocks, start=1):
            h = hashlib.sha256()
            h.update(blk.w.data.tobytes())
            h.update(blk.b.data.tobytes())
            digests[f"block{k}"] = h.hexdigest()[:16]
        return digests


def build_model(arch: ArchConfig, rng: np.random.Generator) -> LayeredClassifier:
    """Fresh model: L unfrozen blocks, CL head, no dream head, seeded init."""
    return LayeredClassifier(arch, rng)


def forward_classifier(model: LayeredClassifier, batch, head: Head = Head.CL) -> Tensor:
    return model.forward(batch, head)


def mask_candidates(prev_depth: int, num_blocks: int) -> list[FreezeMask]:
    """Feasible masks for the next task given the previous accepted depth.

    Previously frozen blocks stay frozen, and a block may only freeze when
    all shallower blocks are frozen, so candidates are the prefix depths
    {prev_depth, ..., L}; on the first task (prev_depth 0) depth 0 is
    included, giving L - prev_depth + 1 candidates either way.
    """
    if prev_depth < 0 or prev_depth > num_blocks:
        raise ValueError(f"prev_depth {prev_depth} outside [0, {num_blocks}]")
    return [FreezeMask(d, -1) for d in range(prev_depth, num_blocks + 1)]


def extend_head(model: LayeredClassifier, num_dream_classes: int,
                rng: np.random.Generator) -> LayeredClassifier:
    """Attach the dream-class head. The CL head and trunk are untouched."""
    if model.dream_head is not None:
        raise EngineError("dream head already attached")
    if num_dream_classes < 2:
        raise ValueError("need at least 2 dream classes")
    model.dream_head = _LinearHead(rng, model.feature_dim, num_dream_classes,
                                   model.num_blocks + DREAM_HEAD_GROUP_OFFSET)
    return model
