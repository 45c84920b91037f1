"""Experiment configuration: a single JSON document with dotted-path
overrides, seed fan-out, and an optional one-parameter sweep.

Document layout (all training keys optional, defaults shown in README):

    {
      "name": "synth-small",
      "arch": {"kind": "mlp", "widths": [64, 64], "input_shape": [32],
               "num_classes": 10},
      "data": {"synth": {...synthetic stream knobs...},
               "dream": {"fraction": 1.0, "noise_pct": 0.0,
                          "downscale_factor": 1}},
      "training": {"strategy": "wscl", "method": {"kind": "er"},
                   "stages": "full", ...},
      "seeds": [0, 1, 2],
      "output_dir": "runs",
      "sweep": {"parameter": "data.dream.noise_pct", "values": [0, 0.1, 0.3]}
    }

Data may instead name binary dataset files: {"train_path": ..., "num_tasks":
..., "dream_path": ...}; a file-based dream corpus must label its classes
starting at the stream's class count so the label spaces stay disjoint.
Stages accept a label ("full", "only_wake", "wake_nrem", "wake_rem") or an
explicit flag object including "wake_search". Every artifact records the
sha256 hash of the canonical resolved document.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Optional

from .datasets import (DreamSource, SynthSpec, TaskStream, corrupt, load_dataset,
                       split_class_incremental, subsample_fraction, synth_stream)
from .engine import StageFlags, WsclConfig
from .errors import ConfigError
from .methods import MethodSpec
from .models import ArchConfig
from .rng import stream as rng_stream

STAGE_LABELS = {
    "full": {"nrem": True, "rem": True},
    "only_wake": {"nrem": False, "rem": False},
    "wake_nrem": {"nrem": True, "rem": False},
    "wake_rem": {"nrem": False, "rem": True},
}

_TRAINING_KEYS = {
    "strategy", "method", "stages", "wake_epochs", "sleep_epochs",
    "epochs_per_task", "learning_rate", "momentum", "batch_size", "alpha",
    "stm_capacity", "buffer_size", "eval_mode", "fwt_mode",
}


def canonical_json(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(doc: Any) -> str:
    return hashlib.sha256(canonical_json(doc).encode("utf-8")).hexdigest()


def set_dotted(doc: dict, path: str, value: Any) -> None:
    """Assign into a nested dict, creating intermediate objects."""
    keys = path.split(".")
    node = doc
    for key in keys[:-1]:
        nxt = node.get(key)
        if nxt is None:
            nxt = node[key] = {}
        elif not isinstance(nxt, dict):
            raise ConfigError(f"cannot descend into non-object at {key!r} in {path!r}")
        node = nxt
    node[keys[-1]] = value


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Apply `--set key.path=value` pairs; values parse as JSON, falling back
    to a bare string."""
    out = copy.deepcopy(doc)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        path, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        set_dotted(out, path.strip(), value)
    return out


def _parse_stages(raw: Any) -> StageFlags:
    if isinstance(raw, str):
        if raw not in STAGE_LABELS:
            raise ConfigError(
                f"unknown stage label {raw!r}, expected one of {sorted(STAGE_LABELS)}")
        return StageFlags(**STAGE_LABELS[raw])
    if isinstance(raw, dict):
        unknown = set(raw) - {"wake_search", "nrem", "rem"}
        if unknown:
            raise ConfigError(f"unknown stage flags {sorted(unknown)}")
        return StageFlags(**{k: bool(v) for k, v in raw.items()})
    raise ConfigError("stages must be a label string or a flag object")


def _parse_method(raw: Any) -> MethodSpec:
    if isinstance(raw, str):
        return MethodSpec(kind=raw)
    if isinstance(raw, dict):
        unknown = set(raw) - {"kind", "alpha_logits", "beta_replay"}
        if unknown:
            raise ConfigError(f"unknown method keys {sorted(unknown)}")
        return MethodSpec(**raw)
    raise ConfigError("method must be a kind string or an object")


def _parse_arch(raw: Any) -> ArchConfig:
    if not isinstance(raw, dict):
        raise ConfigError("arch must be an object")
    unknown = set(raw) - {"kind", "widths", "input_shape", "num_classes"}
    if unknown:
        raise ConfigError(f"unknown arch keys {sorted(unknown)}")
    try:
        return ArchConfig(kind=raw.get("kind", "mlp"), widths=raw["widths"],
                          input_shape=tuple(raw["input_shape"]),
                          num_classes=int(raw["num_classes"]))
    except KeyError as exc:
        raise ConfigError(f"arch is missing {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid arch: {exc}") from exc


@dataclass
class DataSpec:
    synth: Optional[SynthSpec] = None
    train_path: Optional[str] = None
    num_tasks: Optional[int] = None
    test_fraction: float = 0.2
    dream_path: Optional[str] = None
    dream_fraction: float = 1.0
    dream_noise_pct: float = 0.0
    dream_downscale: int = 1

    def __post_init__(self):
        if (self.synth is None) == (self.train_path is None):
            raise ConfigError("data needs exactly one of 'synth' or 'train_path'")
        if self.train_path is not None and self.num_tasks is None:
            raise ConfigError("file-based data needs 'num_tasks'")


def _parse_data(raw: Any) -> DataSpec:
    if not isinstance(raw, dict):
        raise ConfigError("data must be an object")
    unknown = set(raw) - {"synth", "train_path", "num_tasks", "test_fraction",
                          "dream_path", "dream"}
    if unknown:
        raise ConfigError(f"unknown data keys {sorted(unknown)}")
    synth = None
    if "synth" in raw:
        if not isinstance(raw["synth"], dict):
            raise ConfigError("data.synth must be an object")
        try:
            synth = SynthSpec(**raw["synth"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid synth spec: {exc}") from exc
    dream = raw.get("dream", {})
    if not isinstance(dream, dict):
        raise ConfigError("data.dream must be an object")
    unknown = set(dream) - {"fraction", "noise_pct", "downscale_factor"}
    if unknown:
        raise ConfigError(f"unknown data.dream keys {sorted(unknown)}")
    return DataSpec(
        synth=synth,
        train_path=raw.get("train_path"),
        num_tasks=raw.get("num_tasks"),
        test_fraction=float(raw.get("test_fraction", 0.2)),
        dream_path=raw.get("dream_path"),
        dream_fraction=float(dream.get("fraction", 1.0)),
        dream_noise_pct=float(dream.get("noise_pct", 0.0)),
        dream_downscale=int(dream.get("downscale_factor", 1)))


def _parse_training(raw: Any, arch: ArchConfig) -> WsclConfig:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("training must be an object")
    unknown = set(raw) - _TRAINING_KEYS
    if unknown:
        raise ConfigError(f"unknown training keys {sorted(unknown)}")
    kwargs = {k: raw[k] for k in raw if k not in ("method", "stages")}
    if "method" in raw:
        kwargs["method"] = _parse_method(raw["method"])
    if "stages" in raw:
        kwargs["stages"] = _parse_stages(raw["stages"])
    try:
        return WsclConfig(arch=arch, **kwargs)
    except TypeError as exc:
        raise ConfigError(f"invalid training section: {exc}") from exc


@dataclass
class ExperimentConfig:
    name: str
    doc: dict                      # resolved document (overrides applied)
    arch: ArchConfig
    data: DataSpec
    training: WsclConfig
    seeds: list[int]
    output_dir: str
    sweep_parameter: Optional[str]
    sweep_values: list[Any]
    hash: str = ""

    def __post_init__(self):
        if not self.hash:
            self.hash = config_hash(self.doc)

    def variants(self) -> Iterator[tuple[Any, "ExperimentConfig"]]:
        """One re-validated config per sweep value; (None, self) without a sweep."""
        if self.sweep_parameter is None:
            yield None, self
            return
        for value in self.sweep_values:
            doc = copy.deepcopy(self.doc)
            doc.pop("sweep", None)
            set_dotted(doc, self.sweep_parameter, value)
            variant = parse_experiment(doc)
            variant.hash = self.hash   # one experiment, one hash
            yield value, variant


def parse_experiment(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object")
    unknown = set(doc) - {"name", "arch", "data", "training", "seeds",
                          "output_dir", "sweep"}
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    for key in ("arch", "data"):
        if key not in doc:
            raise ConfigError(f"config is missing {key!r}")
    arch = _parse_arch(doc["arch"])
    data = _parse_data(doc["data"])
    training = _parse_training(doc.get("training"), arch)
    seeds = doc.get("seeds", [0])
    if (not isinstance(seeds, list) or not seeds
            or not all(isinstance(s, int) for s in seeds)):
        raise ConfigError("seeds must be a non-empty list of integers")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds must be distinct")

    sweep_param, sweep_values = None, []
    if "sweep" in doc:
        sweep = doc["sweep"]
        if (not isinstance(sweep, dict) or "parameter" not in sweep
                or "values" not in sweep):
            raise ConfigError("sweep needs 'parameter' and 'values'")
        sweep_param = str(sweep["parameter"])
        sweep_values = list(sweep["values"])
        if not sweep_values:
            raise ConfigError("sweep values must be non-empty")

    exp = ExperimentConfig(
        name=str(doc.get("name", "experiment")), doc=doc, arch=arch, data=data,
        training=training, seeds=list(seeds),
        output_dir=str(doc.get("output_dir", "runs")),
        sweep_parameter=sweep_param, sweep_values=sweep_values)
    if sweep_param is not None:
        for _ in exp.variants():   # every sweep value must produce a valid config
            pass
    return exp


def load_config(path: str | Path, overrides: Optional[list[str]] = None) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if overrides:
        doc = apply_overrides(doc, overrides)
    return parse_experiment(doc)


def build_stream(data: DataSpec, seed: int) -> tuple[TaskStream, Optional[DreamSource]]:
    """Materialize the task stream and (possibly degraded) dream source."""
    if data.synth is not None:
        stream, dream = synth_stream(data.synth, seed)
    else:
        ds = load_dataset(data.train_path)
        stream = split_class_incremental(ds, data.num_tasks, seed, data.test_fraction)
        dream = None
        if data.dream_path is not None:
            dream_ds = load_dataset(data.dream_path)
            C = stream.num_classes
            lo = min(dream_ds.class_set, default=C)
            if lo < C:
                raise ConfigError(
                    f"dream dataset labels must start at {C}, found class {lo}")
            dream = DreamSource(dream_ds, dream_ds.num_classes - C, label_offset=C)
    if dream is not None:
        dream = DreamSource(dream.dataset, dream.num_dream_classes, dream.label_offset,
                            fraction=data.dream_fraction,
                            noise_pct=data.dream_noise_pct,
                            downscale_factor=data.dream_downscale)
        if dream.noise_pct > 0.0 or dream.downscale_factor > 1:
            dream = corrupt(dream, rng_stream(seed, "dream.corrupt"))
        if dream.fraction < 1.0:
            dream = subsample_fraction(dream, dream.fraction,
                                       rng_stream(seed, "dream.subsample"))
    return stream, dream
