"""Dense float32 tensors with a reverse-mode tape and a masked SGD step.

The tape is the usual dynamic graph: every op returns a new Tensor holding
references to its parents and a closure that pushes the output gradient back
to them. ``backward`` on a scalar loss walks the graph once in reverse
topological order. Gradients accumulate until explicitly cleared, so callers
reset them before every optimizer step.

All values are float32; reductions (loss means) accumulate in float64 before
being cast back, which keeps batch means stable without doubling memory.
Leaf parameters are validated finite at creation; activations are checked by
the model forward pass and gradients by ``sgd_step``, so NaN/Inf can never
silently reach an update.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GradientError, NumericError, ShapeError


class Tensor:
    """A float32 array plus the bookkeeping needed for backprop."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_velocity")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float32)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward
        self._velocity: np.ndarray | None = None  # momentum buffer, lazily created

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, scalar: float) -> "Tensor":
        return scale(self, scalar)

    __rmul__ = __mul__

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def parameter(data, rng: np.random.Generator | None = None, shape=None, limit: float | None = None) -> Tensor:
    """Create a trainable leaf tensor.

    Either wraps ``data`` directly or, when ``rng`` is given, draws uniform
    values in ``±limit`` for ``shape``. Leaf values must be finite.
    """
    if rng is not None:
        data = rng.uniform(-limit, limit, size=shape)
    arr = np.asarray(data, dtype=np.float32)
    if not np.isfinite(arr).all():
        raise NumericError("non-finite value in parameter initialization")
    return Tensor(arr, requires_grad=True)


def _unbroadcast_rows(g: np.ndarray) -> np.ndarray:
    # bias gradients: collapse the batch axis added by row broadcasting
    return g.sum(axis=0)


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data, a.requires_grad or b.requires_grad, (a, b))

    def _back():
        g = out.grad
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    out._backward = _back
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data + b.data, a.requires_grad or b.requires_grad, (a, b))

    def _back():
        if a.requires_grad:
            a.accumulate(out.grad)
        if b.requires_grad:
            b.accumulate(out.grad)

    out._backward = _back
    return out


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-broadcast bias add: x[B, C] + b[C]."""
    if x.data.ndim != 2 or b.data.ndim != 1 or x.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"add_bias {x.data.shape} + {b.data.shape}")
    out = Tensor(x.data + b.data[None, :], x.requires_grad or b.requires_grad, (x, b))

    def _back():
        if x.requires_grad:
            x.accumulate(out.grad)
        if b.requires_grad:
            b.accumulate(_unbroadcast_rows(out.grad))

    out._backward = _back
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data * b.data, a.requires_grad or b.requires_grad, (a, b))

    def _back():
        if a.requires_grad:
            a.accumulate(out.grad * b.data)
        if b.requires_grad:
            b.accumulate(out.grad * a.data)

    out._backward = _back
    return out


def scale(a: Tensor, s: float) -> Tensor:
    s32 = np.float32(s)
    out = Tensor(a.data * s32, a.requires_grad, (a,))

    def _back():
        if a.requires_grad:
            a.accumulate(out.grad * s32)

    out._backward = _back
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0), x.requires_grad, (x,))

    def _back():
        if x.requires_grad:
            x.accumulate(out.grad * (x.data > 0))

    out._backward = _back
    return out


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape), x.requires_grad, (x,))

    def _back():
        if x.requires_grad:
            x.accumulate(out.grad.reshape(x.data.shape))

    out._backward = _back
    return out


def tsum(x: Tensor) -> Tensor:
    out = Tensor(np.float32(x.data.sum(dtype=np.float64)), x.requires_grad, (x,))

    def _back():
        if x.requires_grad:
            x.accumulate(np.full_like(x.data, out.grad))

    out._backward = _back
    return out


def conv2d(x: Tensor, w: Tensor, b: Tensor, padding: int = 1) -> Tensor:
    """2-D convolution, NCHW layout, stride 1.

    Kernels are small here (3x3 on tiny images), so the forward/backward pair
    just loops over kernel offsets and lets einsum do the channel contraction.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d needs 4-D operands, got {x.data.shape}, {w.data.shape}")
    B, C, H, W = x.data.shape
    CO, CI, KH, KW = w.data.shape
    if CI != C:
        raise ShapeError(f"conv2d channel mismatch: input {C}, kernel {CI}")
    p = padding
    OH, OW = H + 2 * p - KH + 1, W + 2 * p - KW + 1
    if OH < 1 or OW < 1:
        raise ShapeError(f"conv2d kernel {KH}x{KW} larger than padded input {H + 2 * p}x{W + 2 * p}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    val = np.zeros((B, CO, OH, OW), dtype=np.float32)
    for ki in range(KH):
        for kj in range(KW):
            patch = xp[:, :, ki:ki + OH, kj:kj + OW]
            val += np.einsum("bchw,oc->bohw", patch, w.data[:, :, ki, kj], optimize=True)
    val += b.data[None, :, None, None]
    out = Tensor(val, x.requires_grad or w.requires_grad or b.requires_grad, (x, w, b))

    def _back():
        g = out.grad
        if b.requires_grad:
            b.accumulate(g.sum(axis=(0, 2, 3)))
        gxp = np.zeros_like(xp) if x.requires_grad else None
        for ki in range(KH):
            for kj in range(KW):
                patch = xp[:, :, ki:ki + OH, kj:kj + OW]
                if w.requires_grad:
                    gw = np.einsum("bohw,bchw->oc", g, patch, optimize=True)
                    if w.grad is None:
                        w.grad = np.zeros_like(w.data)
                    w.grad[:, :, ki, kj] += gw
                if gxp is not None:
                    gxp[:, :, ki:ki + OH, kj:kj + OW] += np.einsum(
                        "bohw,oc->bchw", g, w.data[:, :, ki, kj], optimize=True)
        if gxp is not None:
            x.accumulate(gxp[:, :, p:p + H, p:p + W])

    out._backward = _back
    return out


def avg_pool2d(x: Tensor, k: int = 2) -> Tensor:
    """k*k average pooling with stride k; trailing rows/cols are dropped."""
    if x.data.ndim != 4:
        raise ShapeError(f"avg_pool2d needs 4-D input, got {x.data.shape}")
    B, C, H, W = x.data.shape
    OH, OW = H // k, W // k
    if OH < 1 or OW < 1:
        raise ShapeError(f"avg_pool2d window {k} larger than input {H}x{W}")
    crop = x.data[:, :, :OH * k, :OW * k]
    val = crop.reshape(B, C, OH, k, OW, k).mean(axis=(3, 5))
    out = Tensor(val, x.requires_grad, (x,))

    def _back():
        if x.requires_grad:
            g = np.zeros_like(x.data)
            spread = np.repeat(np.repeat(out.grad, k, axis=2), k, axis=3) / np.float32(k * k)
            g[:, :, :OH * k, :OW * k] = spread
            x.accumulate(g)

    out._backward = _back
    return out


def softmax_cross_entropy(logits: Tensor, labels, class_mask=None) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under row-wise softmax.

    With ``class_mask`` (boolean over classes) the softmax is restricted to
    unmasked classes; masked classes get zero probability and zero gradient.
    Every label's class must be unmasked.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"logits must be 2-D, got {logits.data.shape}")
    B, C = logits.data.shape
    y = np.asarray(labels,
                   dtype=np.int64)
    if y.shape != (B,):
        raise ShapeError(f"labels shape {y.shape} does not match batch {B}")
    if y.min(initial=0) < 0 or y.max(initial=-1) >= C:
        raise ShapeError(f"label out of range [0, {C})")
    if class_mask is not None:
        m = np.asarray(class_mask, dtype=bool)
        if m.shape != (C,):
            raise ShapeError(f"class_mask shape {m.shape} does not match classes {C}")
        if not m.any():
            raise ShapeError("class_mask removes every class")
        if not m[y].all():
            raise ShapeError("class_mask removes the class of a label")
        z = np.where(m[None, :], logits.data, -np.inf)
    else:
        z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    denom = e.sum(axis=1, keepdims=True)
    p = e / denom
    nll = -(z[np.arange(B), y] - zmax[:, 0] - np.log(denom[:, 0]))
    out = Tensor(np.float32(nll.sum(dtype=np.float64) / B), logits.requires_grad, (logits,))

    def _back():
        if logits.requires_grad:
            g = p.copy()
            g[np.arange(B), y] -= 1.0
            logits.accumulate(g * (out.grad / np.float32(B)))

    out._backward = _back
    return out


def mse_logits(logits: Tensor, stored) -> Tensor:
    """Mean squared difference; differentiable w.r.t. ``logits`` only."""
    ref = stored.data if isinstance(stored, Tensor) else np.asarray(stored, dtype=np.float32)
    if logits.data.shape != ref.shape:
        raise ShapeError(f"mse_logits {logits.data.shape} vs {ref.shape}")
    diff = logits.data - ref
    out = Tensor(np.float32(np.square(diff, dtype=np.float64).sum() / diff.size),
                 logits.requires_grad, (logits,))

    def _back():
        if logits.requires_grad:
            logits.accumulate(diff * (out.grad * np.float32(2.0 / diff.size)))

    out._backward = _back
    return out


# ---------------------------------------------------------------------------
# backward pass and optimizer
# ---------------------------------------------------------------------------

def backward(loss: Tensor):
    """Populate grads of every requires_grad tensor reachable from ``loss``.

    Repeated calls without clearing grads accumulate, by design.
    """
    if loss.data.size != 1:
        raise GradientError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    loss.accumulate(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward()


@dataclass
class ParamGroup:
    """An ordered bundle of tensors updated (or frozen) as a unit."""

    id: int
    tensors: list[Tensor] = field(default_factory=list)
    frozen: bool = False

    def num_params(self) -> int:
        return sum(t.size for t in self.tensors)

    def set_frozen(self, flag: bool):
        """Freeze/unfreeze; frozen tensors also stop requiring gradients."""
        self.frozen = flag
        for t in self.tensors:
            t.requires_grad = not flag

    def zero_grad(self):
        for t in self.tensors:
            t.zero_grad()


@dataclass
class SgdConfig:
    learning_rate: float = 0.03
    momentum: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.momentum < 0:
            raise ValueError("momentum must be non-negative")


def sgd_step(groups: list[ParamGroup], cfg: SgdConfig) -> int:
    """One SGD update over all unfrozen groups.

    Returns the number of scalar parameters touched, which is what the
    efficiency accounting sums over steps. Frozen groups are skipped
    entirely and stay bit-identical.
    """
    lr = np.float32(cfg.learning_rate)
    mom = np.float32(cfg.momentum)
    updated = 0
    for group in groups:
        if group.frozen:
            continue
        for t in group.tensors:
            if t.grad is None:
                raise GradientError(f"missing gradient on unfrozen tensor in group {group.id}")
            if not np.isfinite(t.grad).all():
                raise NumericError(f"non-finite gradient in group {group.id}")
            if cfg.momentum > 0:
                if t._velocity is None:
                    t._velocity = np.zeros_like(t.data)
                t._velocity = mom * t._velocity + t.grad
                t.data -= lr * t._velocity
            else:
                t.data -= lr * t.grad
            updated += t.size
    return updated
