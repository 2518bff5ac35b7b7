"""Parameter checkpoints: human-readable manifest header + raw float64 data.

Layout (all header lines ASCII, newline-terminated):

    scenebank checkpoint v1
    meta {...one JSON object: variant, model configuration...}
    tensor <name> <dim0>,<dim1>,...
    ...one line per tensor, in data order...
    data
    <raw little-endian float64 payload, tensors concatenated in header order>

The header is readable with `head`; the payload is a flat dump, so total file
size is 2 + #tensors lines plus 8 bytes per value.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .backbone import BackboneConfig
from .model import ModelConfig, check_variant

__all__ = ["save_checkpoint", "load_checkpoint", "meta_for", "model_config_from_meta"]

MAGIC = "scenebank checkpoint v1"


def meta_for(model_cfg: ModelConfig, variant: str) -> dict:
    return {
        "variant": check_variant(variant),
        "num_classes": model_cfg.num_classes,
        "input_size": model_cfg.backbone.input_size,
        "stem_channels": model_cfg.backbone.stem_channels,
        "block_channels": list(model_cfg.backbone.block_channels),
        "dropout_rate": model_cfg.backbone.dropout_rate,
        "lms_window": model_cfg.lms_window,
        "peak_window": model_cfg.peak_window,
        "context_window": model_cfg.context_window,
        "attention_activation": model_cfg.attention_activation,
        "alignment_mode": model_cfg.alignment_mode,
    }


def model_config_from_meta(meta: dict) -> tuple[ModelConfig, str]:
    backbone = BackboneConfig(
        input_size=meta["input_size"],
        stem_channels=meta["stem_channels"],
        block_channels=tuple(meta["block_channels"]),
        dropout_rate=meta["dropout_rate"],
    )
    cfg = ModelConfig(
        num_classes=meta["num_classes"],
        backbone=backbone,
        lms_window=meta["lms_window"],
        peak_window=meta["peak_window"],
        context_window=meta["context_window"],
        attention_activation=meta["attention_activation"],
        alignment_mode=meta["alignment_mode"],
    )
    return cfg, check_variant(meta["variant"])


def save_checkpoint(path, params: dict[str, Tensor], meta: dict) -> None:
    path = Path(path)
    names = list(params.keys())
    header_lines = [MAGIC, "meta " + json.dumps(meta, sort_keys=True)]
    for name in names:
        shape = ",".join(str(d) for d in params[name].shape)
        if " " in name:
            raise ValueError(f"save_checkpoint: tensor name may not contain spaces: {name!r}")
        header_lines.append(f"tensor {name} {shape}")
    header_lines.append("data")
    with path.open("wb") as fh:
        fh.write(("\n".join(header_lines) + "\n").encode("ascii"))
        for name in names:
            fh.write(np.ascontiguousarray(params[name].data, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, Tensor], dict]:
    path = Path(path)
    with path.open("rb") as fh:
        blob = fh.read()
    marker = b"\ndata\n"
    cut = blob.find(marker)
    if cut < 0:
        raise ValueError(f"load_checkpoint: {path} has no data marker")
    header = blob[:cut].decode("ascii").split("\n")
    payload = blob[cut + len(marker):]
    if not header or header[0] != MAGIC:
        raise ValueError(f"load_checkpoint: {path} is not a scenebank checkpoint")
    if len(header) < 2 or not header[1].startswith("meta "):
        raise ValueError(f"load_checkpoint: {path} is missing the meta line")
    meta = json.loads(header[1][len("meta "):])
    params: dict[str, Tensor] = {}
    offset = 0
    for line in header[2:]:
        kind, name, shape_text = line.split(" ")
        if kind != "tensor":
            raise ValueError(f"load_checkpoint: unexpected header line {line!r}")
        shape = tuple(int(d) for d in shape_text.split(",")) if shape_text else ()
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(payload):
            raise ValueError(f"load_checkpoint: truncated payload at tensor {name!r}")
        values = np.frombuffer(payload[offset:offset + nbytes], dtype="<f8")
        offset += nbytes
        params[name] = Tensor(values.reshape(shape).astype(np.float64),
                              requires_grad=True)
    if offset != len(payload):
        raise ValueError("load_checkpoint: trailing bytes after the last tensor")
    return params, meta
