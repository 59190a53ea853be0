"""Checkpoint format: bit-exact round trips, corruption handling."""

import numpy as np
import pytest

from dualfuse import checkpoint as ckpt_mod
from dualfuse import params
from dualfuse.checkpoint import CheckpointError, load_checkpoint, \
    save_checkpoint
from dualfuse.config import RunConfig
from dualfuse.model import build_model, fuse_pair_arrays
from dualfuse.optim import AdamState
from dualfuse.toydata import make_toy_pairs


def small_config():
    return RunConfig(channels=4, crop=16, batch=1, seed=3)


def test_round_trip_preserves_fuse_output_bitwise(tmp_path):
    cfg = small_config()
    model = build_model(cfg)
    adam = AdamState(step_count=17)
    adam.ensure(params.trainable_parameters(model))
    for key in adam.m:
        adam.m[key][...] = 0.01
    pair = make_toy_pairs(1, 24)[0]
    before = fuse_pair_arrays(pair, model, cfg)

    path = str(tmp_path / "m.tmam")
    save_checkpoint(path, cfg, model, adam, stage1_steps=40, stage2_steps=9)
    loaded = load_checkpoint(path)

    assert loaded.config == cfg
    assert loaded.stage1_steps == 40
    assert loaded.stage2_steps == 9
    assert loaded.fusion_trained
    assert loaded.adam.step_count == 17
    after = fuse_pair_arrays(pair, loaded.model, loaded.config)
    assert before.tobytes() == after.tobytes()
    key = next(iter(loaded.adam.m))
    assert np.all(loaded.adam.m[key] == 0.01)


def test_round_trip_parameter_bytes(tmp_path):
    cfg = small_config()
    model = build_model(cfg)
    path = str(tmp_path / "p.tmam")
    save_checkpoint(path, cfg, model, AdamState(), 1, 0)
    loaded = load_checkpoint(path)
    orig = dict(params.named_parameters(model))
    for name, tensor in params.named_parameters(loaded.model):
        assert orig[name].data.tobytes() == tensor.data.tobytes(), name


def test_stage1_only_checkpoint_flags_untrained_fusion(tmp_path):
    cfg = small_config()
    path = str(tmp_path / "s1.tmam")
    save_checkpoint(path, cfg, build_model(cfg), AdamState(), 10, 0)
    assert not load_checkpoint(path).fusion_trained


def test_magic_header(tmp_path):
    path = str(tmp_path / "bad.tmam")
    with open(path, "wb") as fh:
        fh.write(b"NOPE" + bytes(100))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)
    with open(path, "rb") as fh:
        assert fh.read(4) != ckpt_mod.MAGIC


def test_truncated_file(tmp_path):
    cfg = small_config()
    path = str(tmp_path / "t.tmam")
    save_checkpoint(path, cfg, build_model(cfg), AdamState(), 1, 0)
    with open(path, "rb") as fh:
        blob = fh.read()
    with open(path, "wb") as fh:
        fh.write(blob[:len(blob) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_unsupported_version(tmp_path):
    path = str(tmp_path / "v.tmam")
    with open(path, "wb") as fh:
        fh.write(ckpt_mod.MAGIC + (99).to_bytes(4, "little"))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)
