"""Wake search, sleep consolidation, and the four run strategies."""

import json

import numpy as np
import pytest

from wscl.datasets import DreamSource, LabeledDataset, SynthSpec, synth_stream
from wscl.engine import (StageFlags, WsclConfig, nrem_step, rem_step,
                         run_stream, sleep_phase, wake_phase)
from wscl.errors import ConfigError, EngineError
from wscl.memory import (LongTermMemory, LtmPartition, MemoryItem, ReplayBatch,
                         fill_short_term, partition_ltm)
from wscl.methods import MethodSpec
from wscl.models import ArchConfig, FreezeMask, Head, build_model, extend_head
from wscl.rng import stream as rng_stream

from conftest import tiny_arch, tiny_config, tiny_stream

# small transfer-shaped stream: broad high-amplitude base task plus matching
# high-contrast dreams, which makes the wake search accept a prefix freeze
# within a task or two (verified for seed 0: depths [0, 1, 1])
FREEZE_SPEC = dict(input_dim=16, num_tasks=3, classes_per_task=2,
                   samples_per_class=40, first_task_factor=4, dream_classes=6,
                   dream_samples_per_class=60, bank_size=6, amplitude=0.35,
                   first_task_amplitude=0.6, dream_amplitude=1.5,
                   dream_amplitude_min=0.5, stream_geometry="axis_pair",
                   dream_geometry="axis_pair", noise_sigma=0.08)
FREEZE_ARCH = ArchConfig("mlp", [32, 32], (16,), 6)


def freeze_stream(seed=0):
    return synth_stream(SynthSpec(**FREEZE_SPEC), seed)


def freeze_config(**over):
    kw = dict(arch=FREEZE_ARCH, learning_rate=0.1, wake_epochs=2,
              sleep_epochs=2, buffer_size=50, stm_capacity=2000)
    kw.update(over)
    return WsclConfig(**kw)


def expected_updates(record):
    """Recompute the run's update count from sizes, depths, and step counts."""
    sizes = record.block_sizes
    head_cl = record.head_sizes["cl"]
    head_dream = record.head_sizes.get("dream", 0)
    total = 0
    for o in record.task_outcomes:
        d = o.accepted_depth
        trunk = sum(sizes[d:])
        total += (o.wake_steps + o.nrem_steps) * (trunk + head_cl)
        total += o.rem_steps * (trunk + head_dream)
    return total


# -- config -------------------------------------------------------------------


def test_config_validation():
    arch = tiny_arch()
    bad = [
        dict(strategy="cascade"),
        dict(learning_rate=0.0),
        dict(momentum=-0.1),
        dict(batch_size=0),
        dict(wake_epochs=0),
        dict(sleep_epochs=0),   # sleep stages enabled by default
        dict(stages=StageFlags(nrem=False, rem=False), sleep_epochs=-1),
        dict(epochs_per_task=0),
        dict(alpha=-1.0),
        dict(stm_capacity=0),
        dict(buffer_size=-1),
        dict(fwt_mode="backward"),
    ]
    for over in bad:
        with pytest.raises(ConfigError):
            WsclConfig(arch=arch, **over)
    ok = WsclConfig(arch=arch, stages=StageFlags(nrem=False, rem=False),
                    sleep_epochs=0)
    assert ok.reference_epochs() == 1
    assert WsclConfig(arch=arch).reference_epochs() == 11
    assert WsclConfig(arch=arch, epochs_per_task=4).reference_epochs() == 4


def test_stage_labels():
    assert StageFlags().label() == "full"
    assert StageFlags(rem=False).label() == "wake_nrem"
    assert StageFlags(nrem=False).label() == "wake_rem"
    assert StageFlags(nrem=False, rem=False).label() == "only_wake"


# -- wake phase ---------------------------------------------------------------


def wake_inputs(seed=0, **cfg_over):
    stream, _ = tiny_stream(seed)
    cfg = tiny_config(**cfg_over)
    model = build_model(cfg.arch, rng_stream(seed, "init.model"))
    train, _ = stream.tasks[0]
    return model, train, cfg, stream


def test_wake_candidate_lattice_and_steps():
    model, train, cfg, stream = wake_inputs()
    result = wake_phase(model, train, LongTermMemory(cfg.buffer_size),
                        FreezeMask(0, -1), cfg, 0, 0,
                        stream.classes_for_task(0), stream.classes_for_task(0))
    # depth 0 through num_blocks inclusive, starting at the previous depth
    assert result.candidate_depths == [0, 1, 2]
    assert len(result.candidate_losses) == 3
    # one epoch over 38 train rows in batches of 32
    assert result.steps == 2
    assert result.mask.depth == result.candidate_depths[
        int(np.argmin(result.candidate_losses))]
    assert len(result.stm) == min(cfg.stm_capacity, len(train))


def test_wake_candidates_start_at_previous_depth():
    model, train, cfg, stream = wake_inputs()
    model.apply_mask(FreezeMask(1, 0))
    result = wake_phase(model, train, LongTermMemory(cfg.buffer_size),
                        FreezeMask(1, 0), cfg, 0, 1,
                        stream.classes_through_task(0), stream.classes_for_task(0))
    assert result.candidate_depths == [1, 2]


def test_wake_update_accounting():
    model, train, cfg, stream = wake_inputs()
    result = wake_phase(model, train, LongTermMemory(cfg.buffer_size),
                        FreezeMask(0, -1), cfg, 0, 0,
                        stream.classes_for_task(0), stream.classes_for_task(0))
    sizes = model.block_sizes()
    head = model.head_sizes()["cl"]
    per_depth = {d: result.steps * (sum(sizes[d:]) + head) for d in (0, 1, 2)}
    assert result.update_count == per_depth[result.mask.depth]
    assert result.search_update_count == (
        sum(per_depth.values()) - per_depth[result.mask.depth])


def test_wake_search_off_keeps_previous_depth():
    model, train, cfg, stream = wake_inputs(stages=StageFlags(wake_search=False))
    model.apply_mask(FreezeMask(1, 0))
    result = wake_phase(model, train, LongTermMemory(cfg.buffer_size),
                        FreezeMask(1, 0), cfg, 0, 1,
                        stream.classes_through_task(0), stream.classes_for_task(0))
    assert result.candidate_depths == [1]
    assert result.mask.depth == 1
    assert result.search_update_count == 0


def test_wake_rejects_empty_task():
    model, train, cfg, stream = wake_inputs()
    empty = LabeledDataset(np.zeros((0, 8), dtype=np.float32),
                           np.zeros(0, dtype=np.int64), 4)
    with pytest.raises(EngineError):
        wake_phase(model, empty, LongTermMemory(4), FreezeMask(0, -1), cfg,
                   0, 0, [0, 1], [0, 1])


def test_wake_is_deterministic():
    a = wake_phase(*wake_inputs()[:2], LongTermMemory(16), FreezeMask(0, -1),
                   tiny_config(), 7, 0, [0, 1], [0, 1])
    b = wake_phase(*wake_inputs()[:2], LongTermMemory(16), FreezeMask(0, -1),
                   tiny_config(), 7, 0, [0, 1], [0, 1])
    assert a.candidate_losses == b.candidate_losses
    assert a.mask.depth == b.mask.depth


# -- sleep phase --------------------------------------------------------------


def sleep_inputs(stages=None, seed=0):
    stream, dream = tiny_stream(seed)
    cfg = tiny_config(**({} if stages is None else {"stages": stages}))
    model = build_model(cfg.arch, rng_stream(seed, "init.model"))
    if cfg.stages.rem:
        extend_head(model, dream.num_dream_classes, rng_stream(seed, "init.dream_head"))
    train, _ = stream.tasks[0]
    stm = fill_short_term(train, cfg.stm_capacity, rng_stream(seed, "stm.fill", 0), 0)
    ltm = LongTermMemory(cfg.buffer_size)
    part = partition_ltm(ltm, rng_stream(seed, "ltm.partition", 0))
    return model, stm, ltm, part, dream, cfg, stream


def test_sleep_step_counts_and_updates():
    model, stm, ltm, part, dream, cfg, stream = sleep_inputs()
    nrem_n, rem_n, updates = sleep_phase(
        model, stm, ltm, part, dream, FreezeMask(0, 0), cfg, 0, 0,
        stream.classes_for_task(0), stream.classes_for_task(0))
    # 32 memorized rows, batch 32 -> 1 batch per epoch, 2 epochs, both stages
    assert (nrem_n, rem_n) == (2, 2)
    sizes = model.block_sizes()
    heads = model.head_sizes()
    assert updates == (nrem_n * (sum(sizes) + heads["cl"])
                       + rem_n * (sum(sizes) + heads["dream"]))


def test_sleep_feeds_reservoir_once_with_preupdate_logits():
    model, stm, ltm, part, dream, cfg, stream = sleep_inputs()
    frozen_copy = model.clone()
    sleep_phase(model, stm, ltm, part, dream, FreezeMask(0, 0), cfg, 0, 0,
                stream.classes_for_task(0), stream.classes_for_task(0))
    # every memorized item presented exactly once, during the first epoch
    assert ltm.seen_count == len(stm)
    assert len(ltm) == min(cfg.buffer_size, len(stm))
    feats = np.stack([it.feature for it in ltm.items])
    stored = np.stack([it.logits for it in ltm.items])
    # single batch per epoch, so every stored logit predates the first update
    ref = frozen_copy.forward(feats, Head.CL).data
    assert np.allclose(stored, ref, atol=1e-6)


def test_wake_rem_never_touches_long_term_memory():
    model, stm, ltm, part, dream, cfg, stream = sleep_inputs(
        stages=StageFlags(nrem=False))
    nrem_n, rem_n, _ = sleep_phase(
        model, stm, ltm, part, dream, FreezeMask(0, 0), cfg, 0, 0,
        stream.classes_for_task(0), stream.classes_for_task(0))
    assert nrem_n == 0 and rem_n == 2
    assert len(ltm) == 0 and ltm.seen_count == 0


def test_nrem_only_skips_dreaming():
    model, stm, ltm, part, dream, cfg, stream = sleep_inputs(
        stages=StageFlags(rem=False))
    nrem_n, rem_n, _ = sleep_phase(
        model, stm, ltm, part, None, FreezeMask(0, 0), cfg, 0, 0,
        stream.classes_for_task(0), stream.classes_for_task(0))
    assert nrem_n == 2 and rem_n == 0


def test_sleep_error_paths():
    model, stm, ltm, part, dream, cfg, stream = sleep_inputs()
    classes = stream.classes_for_task(0)
    with pytest.raises(EngineError):   # REM enabled but no dream corpus
        sleep_phase(model, stm, ltm, part, None, FreezeMask(0, 0), cfg,
                    0, 0, classes, classes)
    with pytest.raises(EngineError):   # nothing memorized
        sleep_phase(model, type(stm)(4), ltm, part, dream, FreezeMask(0, 0),
                    cfg, 0, 0, classes, classes)
    off = tiny_config(stages=StageFlags(nrem=False, rem=False), sleep_epochs=0)
    assert sleep_phase(model, stm, ltm, part, dream, FreezeMask(0, 0), off,
                       0, 0, classes, classes) == (0, 0, 0)


def test_step_mask_mismatch():
    model, stm, ltm, part, dream, cfg, stream = sleep_inputs()
    batch = ReplayBatch(stm.items[0].feature[None], np.array([stm.items[0].label]))
    with pytest.raises(EngineError):
        nrem_step(model, batch, None, FreezeMask(1, 0), cfg.method, cfg.alpha,
                  cfg.sgd(), [0, 1], [0, 1])
    with pytest.raises(EngineError):
        rem_step(model, batch.features, np.array([0]), FreezeMask(2, 0), cfg.sgd())
    with pytest.raises(EngineError):   # empty short-term batch
        nrem_step(model, ReplayBatch(np.zeros((0, 8), dtype=np.float32),
                                     np.zeros(0, dtype=np.int64)),
                  None, FreezeMask(0, 0), cfg.method, cfg.alpha, cfg.sgd(),
                  [0, 1], [0, 1])


def test_rem_step_requires_dream_head(rng):
    model = build_model(tiny_arch(), rng)
    with pytest.raises(EngineError):
        rem_step(model, np.zeros((2, 8), dtype=np.float32),
                 np.zeros(2, dtype=np.int64), FreezeMask(0, 0),
                 tiny_config().sgd())


# -- full runs ----------------------------------------------------------------


def test_run_stream_validation():
    stream, dream = tiny_stream()
    with pytest.raises(ConfigError):   # head width mismatch
        run_stream(stream, dream, tiny_config(arch=tiny_arch(num_classes=6)), 0)
    bad = LabeledDataset(np.zeros((4, 8), dtype=np.float32),
                         np.array([3, 4, 5, 6]), 7)
    overlapping = DreamSource(bad, 4, label_offset=3)
    with pytest.raises(ConfigError):
        run_stream(stream, overlapping, tiny_config(), 0)
    with pytest.raises(ConfigError):   # REM needs a dream corpus
        run_stream(stream, None, tiny_config(), 0)


def test_wscl_record_structure():
    stream, dream = tiny_stream()
    rec = run_stream(stream, dream, tiny_config(), 0)
    assert rec.strategy == "wscl" and rec.stages == "full"
    assert rec.method_label == "wscl-er"
    assert rec.accuracy_matrix.shape == (2, 2)
    assert np.isfinite(rec.accuracy_matrix).all()
    assert len(rec.accepted_depths) == 2
    assert rec.accepted_depths == sorted(rec.accepted_depths)
    assert rec.update_count == sum(o.update_count for o in rec.task_outcomes)
    assert rec.metrics.faa == pytest.approx(rec.accuracy_matrix[-1].mean())
    assert rec.metrics.update_count == rec.update_count
    assert rec.head_sizes.keys() == {"cl", "dream"}
    for o in rec.task_outcomes:
        assert len(o.candidate_depths) == 2 - o.candidate_depths[0] + 1


def test_update_count_recompute():
    stream, dream = freeze_stream(0)
    rec = run_stream(stream, dream, freeze_config(), 0)
    assert rec.accepted_depths == [0, 1, 1]   # pinned; guards the math below
    assert rec.update_count == expected_updates(rec)


def test_freezing_saves_updates_against_no_freeze_control():
    stream, dream = freeze_stream(0)
    frozen = run_stream(stream, dream, freeze_config(), 0)
    control = run_stream(stream, dream,
                         freeze_config(stages=StageFlags(wake_search=False)), 0)
    assert max(frozen.accepted_depths) >= 1
    assert control.accepted_depths == [0, 0, 0]
    assert frozen.update_count < control.update_count
    # identical schedule lengths, only the frozen prefix differs
    for a, b in zip(frozen.task_outcomes, control.task_outcomes):
        assert (a.wake_steps, a.nrem_steps, a.rem_steps) == \
            (b.wake_steps, b.nrem_steps, b.rem_steps)


def test_frozen_prefix_digests_chain_across_tasks():
    stream, dream = freeze_stream(0)
    rec = run_stream(stream, dream, freeze_config(), 0)
    outs = rec.task_outcomes
    assert max(rec.accepted_depths) >= 1   # non-vacuous
    for t in range(1, len(outs)):
        for b in range(1, outs[t].accepted_depth + 1):
            key = f"block{b}"
            assert outs[t].theta_digest[key] == outs[t - 1].theta_digest[key]


def test_run_determinism_and_seed_sensitivity():
    stream, dream = tiny_stream()
    a = run_stream(stream, dream, tiny_config(), 5)
    b = run_stream(stream, dream, tiny_config(), 5)
    c = run_stream(stream, dream, tiny_config(), 6)
    dump = lambda r: json.dumps(r.to_dict(), sort_keys=True)
    assert dump(a) == dump(b)
    assert dump(a) != dump(c)


def test_finetune_equals_baseline_with_zero_buffer():
    stream, _ = tiny_stream()
    ft = run_stream(stream, None, tiny_config(strategy="finetune"), 2)
    base0 = run_stream(stream, None,
                       tiny_config(strategy="baseline", buffer_size=0), 2)
    assert np.array_equal(ft.accuracy_matrix, base0.accuracy_matrix)
    assert ft.update_count == base0.update_count
    assert ft.method_label == "finetune"
    assert base0.method_label == "er"


def test_baseline_epochs_and_budget():
    stream, _ = tiny_stream()
    rec = run_stream(stream, None,
                     tiny_config(strategy="baseline", epochs_per_task=1), 0)
    # each task: 38 train rows, batch 32 -> 2 steps per epoch
    assert [o.wake_steps for o in rec.task_outcomes] == [2, 2]
    full = run_stream(stream, None, tiny_config(strategy="baseline"), 0)
    # default budget matches the wake+sleep epoch count (1 + 2 = 3)
    assert [o.wake_steps for o in full.task_outcomes] == [6, 6]


def test_joint_record():
    stream, _ = tiny_stream()
    rec = run_stream(stream, None, tiny_config(strategy="joint"), 0)
    assert rec.accuracy_matrix.shape == (1, 2)
    assert rec.metrics.forgetting is None
    assert rec.metrics.fwt is None
    assert rec.method_label == "joint"


def test_fwt_modes_on_records():
    stream, dream = tiny_stream()
    post = run_stream(stream, dream, tiny_config(), 1)
    assert post.scratch_accs is not None and len(post.scratch_accs) == 2
    diag = np.diagonal(post.accuracy_matrix)
    assert post.metrics.fwt == pytest.approx(
        float(np.mean(diag - np.asarray(post.scratch_accs))))
    assert post.metrics.fwt_mode == "post_task"

    zs = run_stream(stream, dream, tiny_config(fwt_mode="zero_shot"), 1)
    assert zs.zero_shot_baseline is not None
    assert zs.metrics.fwt == pytest.approx(
        zs.accuracy_matrix[0, 1] - zs.zero_shot_baseline[1])

    off = run_stream(stream, dream, tiny_config(fwt_mode=None), 1)
    assert off.metrics.fwt is None and off.scratch_accs is None
    # the training trajectory itself is unaffected by the FWT mode
    assert np.array_equal(off.accuracy_matrix, post.accuracy_matrix)


def test_stage_ablations_run_and_label():
    stream, dream = tiny_stream()
    for stages, label, needs_dream in (
            (StageFlags(rem=False), "wake_nrem", False),
            (StageFlags(nrem=False), "wake_rem", True),
            (StageFlags(nrem=False, rem=False), "only_wake", False)):
        cfg = tiny_config(stages=stages,
                          sleep_epochs=0 if label == "only_wake" else 2)
        rec = run_stream(stream, dream if needs_dream else None, cfg, 0)
        assert rec.stages == label
        expected_heads = {"cl", "dream"} if needs_dream else {"cl"}
        assert rec.head_sizes.keys() == expected_heads
        if label == "only_wake":
            assert all(o.nrem_steps == 0 and o.rem_steps == 0
                       for o in rec.task_outcomes)


def test_er_ace_and_derpp_strategies_run():
    stream, dream = tiny_stream()
    for kind in ("derpp", "er_ace"):
        rec = run_stream(stream, dream, tiny_config(method=MethodSpec(kind)), 0)
        assert rec.method_label == f"wscl-{kind}"
        base = run_stream(stream, None,
                          tiny_config(strategy="baseline",
                                      method=MethodSpec(kind)), 0)
        assert base.method_label == kind
