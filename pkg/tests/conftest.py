"""Shared fixtures: tiny streams and architectures sized for fast tests."""

import numpy as np
import pytest

from wscl.datasets import SynthSpec, synth_stream
from wscl.engine import WsclConfig
from wscl.models import ArchConfig


TINY_SPEC = dict(input_dim=8, num_tasks=2, classes_per_task=2,
                 samples_per_class=24, dream_classes=4,
                 dream_samples_per_class=12, bank_size=4, noise_sigma=0.05)


def tiny_arch(num_classes=4):
    return ArchConfig("mlp", [8, 8], (8,), num_classes)


def tiny_stream(seed=0, **over):
    spec = SynthSpec(**{**TINY_SPEC, **over})
    return synth_stream(spec, seed)


def tiny_config(**over):
    kw = dict(arch=tiny_arch(), wake_epochs=1, sleep_epochs=2,
              learning_rate=0.05, buffer_size=16, stm_capacity=32)
    kw.update(over)
    return WsclConfig(**kw)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
