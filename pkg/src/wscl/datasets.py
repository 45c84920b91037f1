"""Datasets, class-incremental task streams, and the dream-side corpus.

Features are float32 in [0, 1]; labels are int64 class indices. Streams are
built either synthetically (Gaussian clusters around prototypes drawn from a
shared low-rank direction bank) or by slicing a labeled dataset into seeded
disjoint class groups. The dream corpus occupies class ids above the stream's
range, so the two label sets are disjoint by construction, and it can be
degraded on purpose before use: additive noise plus a downscale/upscale round
trip that discards high-frequency detail.

On-disk container (little-endian):

    magic   8 bytes  b"WSCLDS01"
    u32     N                  number of samples
    u32     ndims              rank of a single feature (1 or 3)
    u32*nd  dims               feature shape
    u32     num_classes
    f32*N*prod(dims)           features, C order
    u16*N                      labels
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DatasetFormatError, ShapeError
from .rng import stream as rng_stream

MAGIC = b"WSCLDS01"


@dataclass
class LabeledDataset:
    features: np.ndarray   # (N, *dims) float32 in [0, 1]
    labels: np.ndarray     # (N,) int64
    num_classes: int
    name: str = ""

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.features.ndim < 2:
            raise ShapeError("features must be (N, *dims)")
        if self.labels.shape != (self.features.shape[0],):
            raise ShapeError(
                f"labels shape {self.labels.shape} does not match {self.features.shape[0]} samples")
        if self.num_classes < 1:
            raise ShapeError("num_classes must be positive")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ShapeError("labels outside [0, num_classes)")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def feature_shape(self) -> tuple[int, ...]:
        return self.features.shape[1:]

    @property
    def class_set(self) -> set[int]:
        return {int(c) for c in np.unique(self.labels)}

    def subset(self, idx: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(self.features[idx], self.labels[idx], self.num_classes, self.name)

    def classes_present(self) -> list[int]:
        return sorted(self.class_set)


@dataclass
class TaskStream:
    """Ordered class-incremental tasks, each a (train, test) split."""

    tasks: list[tuple[LabeledDataset, LabeledDataset]]
    class_partition: list[list[int]]          # output-space classes per task
    num_classes: int                          # total across the whole stream
    class_map: dict[int, int] | None = None   # original label -> output index

    def __post_init__(self):
        if len(self.tasks) != len(self.class_partition):
            raise ShapeError("one class group per task required")
        seen: set[int] = set()
        for group in self.class_partition:
            if seen & set(group):
                raise ShapeError("task class groups must be disjoint")
            seen |= set(group)

    def __len__(self) -> int:
        return len(self.tasks)

    def classes_for_task(self, t: int) -> list[int]:
        return list(self.class_partition[t])

    def classes_through_task(self, t: int) -> list[int]:
        out: list[int] = []
        for g in self.class_partition[: t + 1]:
            out.extend(g)
        return sorted(out)


@dataclass
class DreamSource:
    """Auxiliary corpus for dreaming. Its class ids start at label_offset
    (normally the stream's class count) so the label sets never collide; the
    dream head is trained on labels shifted back down to [0, num_dream_classes).
    The degradation knobs describe how the corpus is to be corrupted."""

    dataset: LabeledDataset
    num_dream_classes: int
    label_offset: int
    fraction: float = 1.0
    noise_pct: float = 0.0
    downscale_factor: int = 1

    def __post_init__(self):
        if self.num_dream_classes < 2:
            raise ShapeError("need at least 2 dream classes")
        if not 0.0 < self.fraction <= 1.0:
            raise ShapeError("fraction must lie in (0, 1]")
        if not 0.0 <= self.noise_pct <= 1.0:
            raise ShapeError("noise_pct must lie in [0, 1]")
        if self.downscale_factor < 1:
            raise ShapeError("downscale_factor must be >= 1")
        lo, hi = self.label_offset, self.label_offset + self.num_dream_classes
        labels = self.dataset.labels
        if len(labels) and (labels.min() < lo or labels.max() >= hi):
            raise ShapeError(f"dream labels outside [{lo}, {hi})")

    def head_labels(self) -> np.ndarray:
        """Labels shifted into the dream head's own index space."""
        return self.dataset.labels - self.label_offset


# -- binary container --------------------------------------------------------


def save_dataset(ds: LabeledDataset, path: str | Path) -> None:
    dims = ds.feature_shape
    if ds.num_classes > 0xFFFF:
        raise DatasetFormatError("more classes than the u16 label field can hold",
                                 DatasetFormatError.LABEL_RANGE)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", len(ds), len(dims)))
        f.write(struct.pack(f"<{len(dims)}I", *dims))
        f.write(struct.pack("<I", ds.num_classes))
        f.write(ds.features.astype("<f4").tobytes())
        f.write(ds.labels.astype("<u2").tobytes())


def load_dataset(path: str | Path) -> LabeledDataset:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) or raw[: len(MAGIC)] != MAGIC:
        raise DatasetFormatError(f"bad magic in {path}", DatasetFormatError.BAD_MAGIC)
    off = len(MAGIC)

    def take(fmt: str):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(raw):
            raise DatasetFormatError(f"truncated header in {path}",
                                     DatasetFormatError.TRUNCATED)
        vals = struct.unpack_from(fmt, raw, off)
        off += size
        return vals

    n, ndims = take("<II")
    dims = take(f"<{ndims}I")
    (num_classes,) = take("<I")
    feat_bytes = 4 * n * int(np.prod(dims, dtype=np.int64))
    label_bytes = 2 * n
    if len(raw) - off < feat_bytes + label_bytes:
        raise DatasetFormatError(f"truncated payload in {path}",
                                 DatasetFormatError.TRUNCATED)
    feats = np.frombuffer(raw, dtype="<f4", count=feat_bytes // 4, offset=off)
    off += feat_bytes
    labels = np.frombuffer(raw, dtype="<u2", count=n, offset=off).astype(np.int64)
    if len(labels) and labels.max() >= num_classes:
        raise DatasetFormatError(f"label outside [0, {num_classes}) in {path}",
                                 DatasetFormatError.LABEL_RANGE)
    return LabeledDataset(feats.reshape((n, *dims)).copy(), labels, num_classes,
                          name=Path(path).stem)


# -- stream construction ------------------------------------------------------


def _split_train_test(feats: np.ndarray, labels: np.ndarray, classes: list[int],
                      test_fraction: float, rng: np.random.Generator):
    """Per-class seeded split so both sides keep every class."""
    test_mask = np.zeros(len(labels), dtype=bool)
    for c in classes:
        rows = np.flatnonzero(labels == c)
        rows = rows[rng.permutation(len(rows))]
        n_test = max(1, int(round(test_fraction * len(rows)))) if len(rows) > 1 else 0
        test_mask[rows[:n_test]] = True
    return test_mask


def split_class_incremental(dataset: LabeledDataset, num_tasks: int, seed: int,
                            test_fraction: float = 0.2) -> TaskStream:
    """Slice one dataset into tasks of equal class count.

    Classes are grouped in a seeded shuffle order and remapped to contiguous
    output indices, so task t owns output classes [t*per, (t+1)*per). Each
    task's samples get their own seeded train/test split.
    """
    classes = dataset.classes_present()
    C = len(classes)
    if num_tasks < 1 or C % num_tasks != 0:
        raise ShapeError(f"{C} classes do not divide into {num_tasks} tasks")
    order = rng_stream(seed, "split.class_order").permutation(C)
    class_map = {int(classes[o]): i for i, o in enumerate(order)}
    remapped = np.array([class_map[int(c)] for c in dataset.labels], dtype=np.int64)

    per = C // num_tasks
    tasks, partition = [], []
    for t in range(num_tasks):
        group = list(range(t * per, (t + 1) * per))
        sel = np.isin(remapped, group)
        feats, labels = dataset.features[sel], remapped[sel]
        test_mask = _split_train_test(feats, labels, group, test_fraction,
                                      rng_stream(seed, "split.holdout", t))
        name = f"{dataset.name or 'stream'}-task{t}"
        train = LabeledDataset(feats[~test_mask], labels[~test_mask], C, f"{name}-train")
        test = LabeledDataset(feats[test_mask], labels[test_mask], C, f"{name}-test")
        tasks.append((train, test))
        partition.append(group)
    return TaskStream(tasks, partition, C, class_map)


@dataclass
class SynthSpec:
    """Knobs for the synthetic cluster stream and its paired dream corpus.

    All class directions, stream and dream alike, are sparse mixtures over one
    orthonormal direction bank, so dream classes occupy the same subspace as
    the stream and features learned on either side transfer to the other.
    With the default "antipodal" geometry every stream class is a signed
    prototype pair around the cube center (see _sample_class), which keeps
    single classes non linearly-separable. The "axis" geometry instead puts
    each stream class one-sided on its own bank direction, and "axis_pair"
    keeps the dedicated direction but retains the signed pair. Matching
    axis_pair dreams at a high dream_amplitude give a stream whose cluster
    structure the dream corpus teaches directly at a cleaner signal-to-noise
    ratio, so features formed while dreaming carry over to the tasks.
    The first_task_* knobs grow or simplify the base session only, the usual
    benchmark shape when later tasks are scarce novel classes.
    """

    input_dim: int = 32
    num_tasks: int = 5
    classes_per_task: int = 2
    samples_per_class: int = 320
    first_task_factor: int = 1   # oversample the base task by this factor
    dream_classes: int = 10
    dream_samples_per_class: int = 120
    bank_size: int = 5
    mixture_size: int = 2
    dream_mixture_size: int = 1
    amplitude: float = 0.5
    first_task_amplitude: float | None = None   # None: reuse amplitude
    dream_amplitude: float | None = None        # None: reuse amplitude
    dream_amplitude_min: float | None = None    # None: fixed dream radius
    stream_geometry: str = "antipodal"     # "antipodal" | "axis" | "axis_pair"
    dream_geometry: str = "auto"           # "auto" | "axis_pair"
    noise_sigma: float = 0.08
    max_overlap: float = 0.75   # pairwise |cos| cap between class directions
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.input_dim < self.bank_size:
            raise ValueError("direction bank cannot exceed the ambient dimension")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")
        if self.mixture_size < 1 or self.mixture_size > self.bank_size:
            raise ValueError("mixture_size must lie in [1, bank_size]")
        if self.stream_geometry not in ("antipodal", "axis", "axis_pair"):
            raise ValueError("stream_geometry must be 'antipodal', 'axis' "
                             "or 'axis_pair'")
        if (self.stream_geometry in ("axis", "axis_pair")
                and self.num_tasks * self.classes_per_task > self.bank_size):
            raise ValueError("axis geometries need one bank direction per class")
        if self.dream_geometry not in ("auto", "axis_pair"):
            raise ValueError("dream_geometry must be 'auto' or 'axis_pair'")
        if self.dream_geometry == "axis_pair" and self.dream_classes > self.bank_size:
            raise ValueError("axis_pair dreams need one bank direction per class")
        if self.dream_amplitude is not None and self.dream_amplitude <= 0.0:
            raise ValueError("dream_amplitude must be positive")
        if self.first_task_factor < 1:
            raise ValueError("first_task_factor must be at least 1")
        if self.first_task_amplitude is not None and self.first_task_amplitude <= 0.0:
            raise ValueError("first_task_amplitude must be positive")
        if self.dream_amplitude_min is not None:
            top = self.amplitude if self.dream_amplitude is None else self.dream_amplitude
            if not 0.0 < self.dream_amplitude_min <= top:
                raise ValueError("dream_amplitude_min must lie in (0, dream amplitude]")
        if self.dream_mixture_size < 1 or self.dream_mixture_size > self.bank_size:
            raise ValueError("dream_mixture_size must lie in [1, bank_size]")
        if self.num_tasks < 1 or self.classes_per_task < 1:
            raise ValueError("need at least one task and one class per task")
        if self.samples_per_class < 1 or self.dream_samples_per_class < 1:
            raise ValueError("need at least one sample per class")
        if self.dream_classes < 2:
            raise ValueError("need at least 2 dream classes")
        if self.dream_mixture_size == 1 and self.dream_classes > 2 * self.bank_size:
            # one-sided classes enumerate the signed bank axes, so at most
            # 2*bank_size distinct ones exist
            raise ValueError("dream_classes cannot exceed 2*bank_size when "
                             "dream_mixture_size is 1")
        if not 0.0 < self.max_overlap <= 1.0:
            raise ValueError("max_overlap must lie in (0, 1]")


def _direction_bank(spec: SynthSpec, seed: int) -> np.ndarray:
    rng = rng_stream(seed, "synth.bank")
    raw = rng.standard_normal((spec.input_dim, spec.bank_size))
    q, _ = np.linalg.qr(raw)
    return q.T   # (bank_size, input_dim), orthonormal rows


def _draw_direction(bank: np.ndarray, mixture_size: int, max_overlap: float,
                    rng: np.random.Generator, existing: list[np.ndarray],
                    tries: int = 64) -> np.ndarray:
    """Unit mixture direction kept dissimilar from existing class directions.

    Sparse mixtures over a small shared bank make features transferable
    between classes; the rejection loop stops near-duplicate prototypes from
    making two classes statistically inseparable. If every try collides, the
    least-overlapping draw is used.
    """
    best, best_overlap = None, np.inf
    for _ in range(tries):
        picks = rng.choice(bank.shape[0], size=mixture_size, replace=False)
        signs = rng.choice([-1.0, 1.0], size=mixture_size)
        direction = (signs[:, None] * bank[picks]).sum(axis=0)
        direction /= np.linalg.norm(direction)
        overlap = max((abs(float(direction @ d)) for d in existing), default=0.0)
        if overlap <= max_overlap:
            return direction
        if overlap < best_overlap:
            best, best_overlap = direction, overlap
    return best


def _class_directions(bank: np.ndarray, spec: SynthSpec,
                      seed: int) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Directions for stream classes then dream classes, drawn in a fixed
    order so the dissimilarity constraint spans both label sets.

    At the default dream_mixture_size of 1, dream classes enumerate the
    signed bank axes (+b0, -b0, +b1, ...): one-sided clusters on exactly the
    directions every stream mixture is built from, so dream training installs
    the signed direction detectors the stream tasks need. axis_pair dreams
    instead put one antipodal pair on each bank direction, which makes the
    dream problem itself non linearly-separable and forces paired-sign
    features all the way up the trunk. Larger dream mixtures fall back to
    the same rejection-sampled draw the stream uses.
    """
    existing: list[np.ndarray] = []
    stream_dirs = []
    for c in range(spec.num_tasks * spec.classes_per_task):
        if spec.stream_geometry in ("axis", "axis_pair"):
            d = bank[c].copy()   # one dedicated direction per class
        else:
            d = _draw_direction(bank, spec.mixture_size, spec.max_overlap,
                                rng_stream(seed, "synth.proto", c), existing)
        existing.append(d)
        stream_dirs.append(d)
    dream_dirs = []
    for c in range(spec.dream_classes):
        if spec.dream_geometry == "axis_pair":
            d = bank[c % bank.shape[0]].copy()
        elif spec.dream_mixture_size == 1:
            sign = 1.0 if c % 2 == 0 else -1.0
            d = sign * bank[(c // 2) % bank.shape[0]]
        else:
            d = _draw_direction(bank, spec.dream_mixture_size, spec.max_overlap,
                                rng_stream(seed, "synth.dream.proto", c), existing)
            existing.append(d)
        dream_dirs.append(d)
    return stream_dirs, dream_dirs


def _sample_class(direction: np.ndarray, amplitude: float, n: int, sigma: float,
                  rng: np.random.Generator, antipodal: bool = True,
                  amplitude_min: float | None = None) -> np.ndarray:
    """Draw n points from a class's prototype cluster(s).

    Antipodal classes occupy two Gaussian clusters mirrored through the cube
    center, 0.5 ± amplitude·direction. No single hyperplane separates two
    such classes, so a frozen feature extractor only keeps up when its
    features already respond to the class directions. One-sided classes
    (the dream default) are single clusters at 0.5 + amplitude·direction,
    which a network learns much faster. With amplitude_min set, each sample
    gets its own radius from [amplitude_min, amplitude]; features fit to such
    a class stay calibrated at every radius in the range instead of only at
    the nominal one.
    """
    if amplitude_min is None:
        radius = np.full(n, amplitude)
    else:
        radius = rng.uniform(amplitude_min, amplitude, size=n)
    if antipodal:
        signs = rng.choice([-1.0, 1.0], size=n)
        proto = (signs * radius)[:, None] * direction[None, :]
    else:
        proto = radius[:, None] * direction[None, :]
    x = 0.5 + proto + sigma * rng.standard_normal((n, direction.shape[0]))
    return np.clip(x, 0.0, 1.0).astype(np.float32)


def synth_stream(spec: SynthSpec, seed: int) -> tuple[TaskStream, DreamSource]:
    """Build the seeded synthetic stream plus its disjoint dream corpus."""
    bank = _direction_bank(spec, seed)
    stream_dirs, dream_dirs = _class_directions(bank, spec, seed)
    C = spec.num_tasks * spec.classes_per_task

    tasks, partition = [], []
    for t in range(spec.num_tasks):
        n_class = spec.samples_per_class * (spec.first_task_factor if t == 0 else 1)
        n_test = max(1, int(round(spec.test_fraction * n_class)))
        amp = spec.amplitude
        if t == 0 and spec.first_task_amplitude is not None:
            amp = spec.first_task_amplitude
        feats, labels = [], []
        group = list(range(t * spec.classes_per_task, (t + 1) * spec.classes_per_task))
        for c in group:
            x = _sample_class(stream_dirs[c], amp,
                              n_class, spec.noise_sigma,
                              rng_stream(seed, "synth.samples", c),
                              antipodal=spec.stream_geometry != "axis")
            feats.append(x)
            labels.append(np.full(len(x), c, dtype=np.int64))
        feats = np.concatenate(feats)
        labels = np.concatenate(labels)
        order = rng_stream(seed, "synth.shuffle", t).permutation(len(feats))
        feats, labels = feats[order], labels[order]
        test_idx = np.zeros(len(feats), dtype=bool)
        for c in group:   # per-class split keeps both sides class balanced
            rows = np.flatnonzero(labels == c)
            test_idx[rows[:n_test]] = True
        train = LabeledDataset(feats[~test_idx], labels[~test_idx], C, f"synth-task{t}-train")
        test = LabeledDataset(feats[test_idx], labels[test_idx], C, f"synth-task{t}-test")
        tasks.append((train, test))
        partition.append(group)

    dfeats, dlabels = [], []
    if spec.dream_geometry == "axis_pair":
        dream_antipodal = True
    else:
        dream_antipodal = spec.dream_mixture_size != 1
    damp = spec.amplitude if spec.dream_amplitude is None else spec.dream_amplitude
    for c in range(spec.dream_classes):
        x = _sample_class(dream_dirs[c], damp,
                          spec.dream_samples_per_class, spec.noise_sigma,
                          rng_stream(seed, "synth.dream.samples", c),
                          antipodal=dream_antipodal,
                          amplitude_min=spec.dream_amplitude_min)
        dfeats.append(x)
        dlabels.append(np.full(len(x), C + c, dtype=np.int64))
    dream_ds = LabeledDataset(np.concatenate(dfeats), np.concatenate(dlabels),
                              C + spec.dream_classes, "synth-dream")
    stream = TaskStream(tasks, partition, C)
    dream = DreamSource(dream_ds, spec.dream_classes, label_offset=C)
    for group in stream.class_partition:   # disjointness is structural, keep it checked
        if set(group) & dream.dataset.class_set:
            raise ShapeError("dream classes overlap task classes")
    return stream, dream


# -- dream-side degradation ---------------------------------------------------


def _rescale_1d(x: np.ndarray, factor: int) -> np.ndarray:
    n, d = x.shape
    keep = (d // factor) * factor
    coarse = x[:, :keep].reshape(n, keep // factor, factor).mean(axis=2)
    up = np.repeat(coarse, factor, axis=1)
    out = x.copy()
    out[:, :keep] = up
    return out


def _rescale_2d(x: np.ndarray, factor: int) -> np.ndarray:
    n, c, h, w = x.shape
    hk, wk = (h // factor) * factor, (w // factor) * factor
    block = x[:, :, :hk, :wk].reshape(n, c, hk // factor, factor, wk // factor, factor)
    coarse = block.mean(axis=(3, 5))
    up = np.repeat(np.repeat(coarse, factor, axis=2), factor, axis=3)
    out = x.copy()
    out[:, :, :hk, :wk] = up
    return out


def corrupt(source: DreamSource, rng: np.random.Generator) -> DreamSource:
    """Degrade the dream corpus per its own knobs: additive noise scaled to
    the data spread, then a block-average downscale undone by nearest-neighbor
    upscale."""
    ds = source.dataset
    factor = source.downscale_factor
    x = ds.features.astype(np.float64)
    side = min(ds.feature_shape[-2:]) if x.ndim == 4 else ds.feature_shape[0]
    if factor > side:
        raise ShapeError(f"downscale factor {factor} exceeds extent {side}")
    if source.noise_pct > 0.0:
        sigma = float(x.std())
        x = x + source.noise_pct * sigma * rng.standard_normal(x.shape)
        x = np.clip(x, 0.0, 1.0)
    if factor > 1:
        if x.ndim == 2:
            x = _rescale_1d(x, factor)
        elif x.ndim == 4:
            x = _rescale_2d(x, factor)
        else:
            raise ShapeError(f"cannot rescale features of rank {x.ndim - 1}")
    out = LabeledDataset(x.astype(np.float32), ds.labels.copy(), ds.num_classes, ds.name)
    return replace(source, dataset=out)


def subsample_fraction(source: DreamSource, fraction: float,
                       rng: np.random.Generator) -> DreamSource:
    """Keep ceil(fraction * N) items by seeded uniform draw without
    replacement, then repair class presence when the budget allows it."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    ds = source.dataset
    total = math.ceil(fraction * len(ds))
    if total == 0:
        raise ValueError("subsample would be empty")
    chosen = rng.choice(len(ds), size=total, replace=False)
    classes = ds.classes_present()
    if total >= len(classes):
        kept = set(int(c) for c in np.unique(ds.labels[chosen]))
        missing = [c for c in classes if c not in kept]
        if missing:
            chosen = list(chosen)
            counts = {c: sum(1 for i in chosen if ds.labels[i] == c) for c in kept}
            for c in missing:
                donor = max(counts, key=counts.get)
                victim = next(k for k, i in enumerate(chosen) if ds.labels[i] == donor)
                rows = np.flatnonzero(ds.labels == c)
                chosen[victim] = int(rows[rng.integers(len(rows))])
                counts[donor] -= 1
                counts[c] = counts.get(c, 0) + 1
            chosen = np.array(chosen)
    idx = np.sort(np.asarray(chosen))
    return replace(source, dataset=ds.subset(idx), fraction=fraction)
