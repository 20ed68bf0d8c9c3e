import re

import numpy as np
import pytest

from sepstereo import checkpoint as ck
from sepstereo.config import RunConfig
from sepstereo.learning import Trainer
from sepstereo.model import SepStereoModel
from sepstereo.synth import solo_subset, synth_dataset

CFG = RunConfig.parse("train.batch=1\nseed=5\n")


@pytest.fixture(scope="module")
def data():
    return synth_dataset(6, seed=1, duration=0.7)


def _trainer(data, cfg=CFG):
    model = SepStereoModel(cfg.model_config(), seed=cfg["seed"])
    return Trainer(model, cfg.train_config(), cfg.loss_weights(), stereo_data=data, sep_data=solo_subset(data))


def test_save_load_save_is_byte_identical(tmp_path, data):
    tr = _trainer(data)
    tr.train(2)
    blob = ck.to_bytes(ck.from_trainer(tr, CFG))
    ck.save(tmp_path / "a.ckpt", ck.from_bytes(blob))
    assert (tmp_path / "a.ckpt").read_bytes() == blob
    again = ck.load(tmp_path / "a.ckpt")
    assert again.state == {"step": 2, "adam_t": 2, "rng_state": tr.rng.state}
    for k, v in tr.model.params.items():
        np.testing.assert_array_equal(again.tensors[k], v.data)


def test_header_is_readable_text(data):
    blob = ck.to_bytes(ck.from_trainer(_trainer(data), CFG))
    header = blob[: blob.index(b"[blob]")].decode("ascii")
    assert header.startswith(ck.MAGIC)
    assert "visual.conv0.weight 8,3,3,3 0\n" in header
    assert "seed=5" in header


def test_truncated_or_padded_blob_rejected(data):
    blob = ck.to_bytes(ck.from_trainer(_trainer(data), CFG))
    with pytest.raises(ck.CheckpointError, match="blob"):
        ck.from_bytes(blob[:-4])
    with pytest.raises(ck.CheckpointError):
        ck.from_bytes(blob + b"\0")
    with pytest.raises(ck.CheckpointError):
        ck.from_bytes(b"hello" + blob)


def test_manifest_overlap_rejected(data):
    blob = ck.to_bytes(ck.from_trainer(_trainer(data), CFG))
    bad = re.sub(rb"visual.conv0.bias 8 \d+", b"visual.conv0.bias 8 0", blob, count=1)
    with pytest.raises(ck.CheckpointError, match="offset"):
        ck.from_bytes(bad)
    with pytest.raises(ck.CheckpointError):
        ck.from_bytes(blob.replace(b"visual.conv0.bias 8 ", b"visual.conv0.bias 8,x ", 1))


def test_architecture_mismatch_is_error_other_keys_warn():
    base = RunConfig.defaults()
    with pytest.raises(ck.IncompatibleCheckpoint):
        ck.check_compatible(base, RunConfig.parse("model.base_channels=4"))
    warnings = ck.check_compatible(base, RunConfig.parse("train.lr=0.1"))
    assert len(warnings) == 1 and "train.lr" in warnings[0]


def test_restore_model_rejects_wrong_shapes(data):
    snap = ck.from_trainer(_trainer(data), CFG)
    snap.tensors["unet.mask.bias"] = np.zeros(3, np.float32)
    with pytest.raises(ck.IncompatibleCheckpoint):
        ck.restore_model(snap)
    del snap.tensors["unet.mask.bias"]
    with pytest.raises(ck.IncompatibleCheckpoint):
        ck.restore_model(snap)


def test_split_run_equals_straight_run(data):
    straight = _trainer(data)
    straight.train(10)
    first = _trainer(data)
    first.train(5)
    resumed = ck.restore_trainer(ck.from_bytes(ck.to_bytes(ck.from_trainer(first, CFG))),
                                 stereo_data=data, sep_data=solo_subset(data))
    resumed.train(5)
    assert [r.line() for r in first.records + resumed.records] == [r.line() for r in straight.records]
    for k, v in straight.model.params.items():
        np.testing.assert_array_equal(resumed.model.params[k].data, v.data)
