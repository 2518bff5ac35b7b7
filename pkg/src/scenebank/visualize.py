"""Descriptor heatmap export.

For one sample, runs the model in eval mode, takes the predicted class
channel of every instance-representation map the variant produces, and writes
each as a grayscale PNG at the input resolution (nearest-neighbour upscale,
min-max normalized per map). Raw scales go to a JSON sidecar so the PNGs stay
comparable.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .autodiff import Tensor
from .data import SceneSample
from .model import ModelConfig, build_variant

__all__ = ["export_heatmaps"]


def _normalize(channel: np.ndarray) -> np.ndarray:
    lo = float(channel.min())
    hi = float(channel.max())
    if hi - lo < 1e-12:
        return np.full_like(channel, 0.5)
    return (channel - lo) / (hi - lo)


def _upscale_nearest(channel: np.ndarray, size: int) -> np.ndarray:
    h, w = channel.shape
    if size % h != 0 or size % w != 0:
        raise ValueError(f"cannot upscale {h}x{w} map to {size}x{size} exactly")
    return np.repeat(np.repeat(channel, size // h, axis=0), size // w, axis=1)


def export_heatmaps(params, model_cfg: ModelConfig, variant: str,
                    sample: SceneSample, out_dir) -> dict:
    """Write per-descriptor heatmap PNGs plus a sidecar of raw scales.

    Returns the sidecar record, with the raw (pre-normalization) channel maps
    added under 'raw_maps' for programmatic use.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    forward = build_variant(variant, params, model_cfg)
    outputs = forward(Tensor(sample.image), mode="eval")
    predicted = int(outputs.probs.data.argmax())
    size = model_cfg.backbone.input_size

    sidecar: dict = {
        "sample_id": sample.id,
        "true_label": sample.label,
        "predicted_class": predicted,
        "variant": variant,
        "maps": {},
    }
    raw_maps: dict[str, np.ndarray] = {}
    for name, tensor in outputs.named_maps().items():
        channel = tensor.data[predicted]
        raw_maps[name] = channel.copy()
        normalized = _normalize(channel)
        upscaled = _upscale_nearest(normalized, size)
        pixels = np.round(upscaled * 255.0).astype(np.uint8)
        file_path = out_dir / f"{name}.png"
        Image.fromarray(pixels, mode="L").save(file_path)
        sidecar["maps"][name] = {
            "file": file_path.name,
            "min": float(channel.min()),
            "max": float(channel.max()),
        }
    with (out_dir / "sidecar.json").open("w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    result = dict(sidecar)
    result["raw_maps"] = raw_maps
    result["out_dir"] = str(out_dir)
    return result
