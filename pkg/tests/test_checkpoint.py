import numpy as np
import pytest

from scenebank.backbone import BackboneConfig
from scenebank.checkpoint import (
    load_checkpoint,
    meta_for,
    model_config_from_meta,
    save_checkpoint,
)
from scenebank.model import ModelConfig, init_model_parameters

CFG = ModelConfig(
    num_classes=3,
    backbone=BackboneConfig(input_size=24, stem_channels=4, block_channels=(4, 6)),
)


def test_roundtrip_bit_identical(tmp_path):
    params = init_model_parameters(CFG, "res_irb_sf_ssa", seed=1)
    meta = meta_for(CFG, "res_irb_sf_ssa")
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params, meta)
    loaded, loaded_meta = load_checkpoint(path)
    assert loaded_meta == meta
    assert list(loaded.keys()) == list(params.keys())
    for name in params:
        np.testing.assert_array_equal(loaded[name].data, params[name].data)
        assert loaded[name].requires_grad


def test_header_is_human_readable(tmp_path):
    params = init_model_parameters(CFG, "res", seed=0)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params, meta_for(CFG, "res"))
    head = path.read_bytes().split(b"\ndata\n")[0].decode("ascii")
    lines = head.split("\n")
    assert lines[0] == "scenebank checkpoint v1"
    assert lines[1].startswith("meta {")
    assert any(line.startswith("tensor backbone.stem.kernel 4,3,3,3") for line in lines)


def test_payload_is_little_endian_f64(tmp_path):
    params = {"w": __import__("scenebank.autodiff", fromlist=["Tensor"]).Tensor(
        np.array([1.0, -2.5]), requires_grad=True)}
    path = tmp_path / "w.ckpt"
    save_checkpoint(path, params, {"variant": "res", "num_classes": 2,
                                   "input_size": 16, "stem_channels": 4,
                                   "block_channels": [4, 6], "dropout_rate": 0.0,
                                   "lms_window": 3, "peak_window": 3,
                                   "context_window": 5,
                                   "attention_activation": "sigmoid",
                                   "alignment_mode": "entropy"})
    payload = path.read_bytes().split(b"\ndata\n", 1)[1]
    np.testing.assert_array_equal(np.frombuffer(payload, dtype="<f8"), [1.0, -2.5])


def test_model_config_meta_roundtrip():
    meta = meta_for(CFG, "res_lms")
    cfg, variant = model_config_from_meta(meta)
    assert variant == "res_lms"
    assert cfg == CFG


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"something else\ndata\n" + b"\x00" * 8)
    with pytest.raises(ValueError, match="not a scenebank checkpoint"):
        load_checkpoint(path)


def test_truncated_payload_rejected(tmp_path):
    params = init_model_parameters(CFG, "res", seed=0)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params, meta_for(CFG, "res"))
    blob = path.read_bytes()
    path.write_bytes(blob[:-16])
    with pytest.raises(ValueError, match="truncated|trailing"):
        load_checkpoint(path)
