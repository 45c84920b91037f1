"""Wake-sleep consolidated continual learning at desk scale.

The package provides a small reverse-mode autodiff engine, block-layered
classifiers with prefix freezing masks, dual rehearsal memories, pluggable
replay losses (ER, DER++, ER-ACE), the wake/NREM/REM training loop with
freezing-mask search, continual-learning metrics, and a CLI for running
seeded experiments and emitting report tables and figures.
"""

from .autodiff import ParamGroup, SgdConfig, Tensor, backward, sgd_step
from .config import ExperimentConfig, build_stream, load_config, parse_experiment
from .datasets import (DreamSource, LabeledDataset, SynthSpec, TaskStream,
                       corrupt, load_dataset, save_dataset,
                       split_class_incremental, subsample_fraction, synth_stream)
from .engine import (RunRecord, StageFlags, TaskOutcome, WsclConfig, nrem_step,
                     rem_step, run_stream, sleep_phase, wake_phase)
from .errors import (ConfigError, DatasetFormatError, EngineError, GradientError,
                     NumericError, ShapeError, WsclError)
from .memory import (LongTermMemory, LtmPartition, MemoryItem, ReplayBatch,
                     ShortTermMemory, fill_short_term, load_buffer, partition_ltm,
                     reservoir_insert, sample_batch, save_buffer)
from .methods import BatchContext, MethodSpec, method_loss
from .metrics import MetricsReport, accuracy, evaluate_matrix_row, faa, forgetting, fwt
from .models import (ArchConfig, FreezeMask, Head, LayeredClassifier, build_model,
                     extend_head, forward_classifier, mask_candidates)
from .rng import stream
from .runner import emit_report, run_experiment

__version__ = "0.1.0"

__all__ = [
    "ArchConfig", "BatchContext", "ConfigError", "DatasetFormatError",
    "DreamSource", "EngineError", "ExperimentConfig", "FreezeMask",
    "GradientError", "Head", "LabeledDataset", "LayeredClassifier",
    "LongTermMemory", "LtmPartition", "MemoryItem", "MethodSpec",
    "MetricsReport", "NumericError", "ParamGroup", "ReplayBatch", "RunRecord",
    "SgdConfig", "ShapeError", "ShortTermMemory", "StageFlags", "SynthSpec",
    "TaskOutcome", "TaskStream", "Tensor", "WsclConfig", "WsclError",
    "accuracy", "backward", "build_model", "build_stream", "corrupt",
    "emit_report", "evaluate_matrix_row", "extend_head", "faa",
    "fill_short_term", "forgetting", "forward_classifier", "fwt",
    "load_buffer", "load_config", "load_dataset", "mask_candidates",
    "method_loss", "nrem_step", "parse_experiment", "partition_ltm",
    "rem_step", "reservoir_insert", "run_experiment", "run_stream",
    "sample_batch", "save_buffer", "save_dataset", "sgd_step", "sleep_phase",
    "split_class_incremental", "stream", "subsample_fraction", "synth_stream",
    "wake_phase",
]
