"""Small residual convolutional feature extractor.

A stem convolution followed by residual blocks, each halving the spatial
resolution, so the default two-block configuration maps an S x S image to an
S/8 x S/8 feature map. Capacity is deliberately desk-scale: the classification
head is the interesting part, the backbone just has to produce features a CPU
can train in minutes. No batch normalization, which keeps forward passes
deterministic and finite-difference gradient checks exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, add, conv2d, dropout, relu

__all__ = ["BackboneConfig", "init_parameters", "backbone_forward", "residual_block"]


@dataclass(frozen=True)
class BackboneConfig:
    input_size: int = 64
    stem_channels: int = 16
    block_channels: tuple[int, ...] = (32, 64)
    dropout_rate: float = 0.2

    def __post_init__(self):
        if not self.block_channels:
            raise ValueError("BackboneConfig: need at least one residual block")
        if self.input_size % self.total_stride != 0:
            raise ValueError(
                f"BackboneConfig: input_size {self.input_size} must be divisible "
                f"by the total stride {self.total_stride}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(
                f"BackboneConfig: dropout_rate must be in [0, 1), got {self.dropout_rate}"
            )

    @property
    def total_stride(self) -> int:
        # stem stride 2, then stride 2 per block
        return 2 ** (1 + len(self.block_channels))

    @property
    def feature_channels(self) -> int:
        return self.block_channels[-1]

    @property
    def feature_size(self) -> int:
        return self.input_size // self.total_stride


def _kaiming(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def init_parameters(config: BackboneConfig, seed: int, prefix: str = "backbone.") -> dict[str, Tensor]:
    """Kaiming fan-in normal kernels, zero biases; deterministic given seed."""
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}

    def conv_param(name: str, c_out: int, c_in: int, k: int) -> None:
        params[f"{prefix}{name}.kernel"] = Tensor(
            _kaiming(rng, (c_out, c_in, k, k)), requires_grad=True
        )
        params[f"{prefix}{name}.bias"] = Tensor(np.zeros(c_out), requires_grad=True)

    conv_param("stem", config.stem_channels, 3, 3)
    c_in = config.stem_channels
    for i, c_out in enumerate(config.block_channels, start=1):
        conv_param(f"block{i}.conv1", c_out, c_in, 3)
        conv_param(f"block{i}.conv2", c_out, c_out, 3)
        # blocks always downsample (stride 2), so the skip needs a projection
        conv_param(f"block{i}.proj", c_out, c_in, 1)
        c_in = c_out
    return params


def residual_block(x, conv1_kernel, conv1_bias, conv2_kernel, conv2_bias,
                   proj_kernel=None, proj_bias=None, stride: int = 1) -> Tensor:
    """conv3x3(stride) -> relu -> conv3x3, plus a skip connection.

    The skip is the identity when no projection parameters are given (valid
    only for stride 1 and unchanged channel count), otherwise a 1x1
    projection convolution with the same stride.
    """
    h = relu(conv2d(x, conv1_kernel, conv1_bias, stride=stride, padding=1))
    h = conv2d(h, conv2_kernel, conv2_bias, stride=1, padding=1)
    if proj_kernel is None:
        skip = x
    else:
        skip = conv2d(x, proj_kernel, proj_bias, stride=stride, padding=0)
    return add(h, skip)


def backbone_forward(image, params: dict[str, Tensor], config: BackboneConfig,
                     mode: str = "eval", rng=None, prefix: str = "backbone.") -> Tensor:
    """Image [3,S,S] (or [B,3,S,S]) -> feature map [C,S/8,S/8] (or batched).

    In train mode the final feature map passes through inverted dropout at
    config.dropout_rate, drawn from `rng` (a seed or numpy Generator); eval
    mode applies no stochastic nodes.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"backbone_forward: mode must be 'train' or 'eval', got {mode!r}")
    x = image if isinstance(image, Tensor) else Tensor(image)
    spatial = x.shape[-2:]
    channels = x.shape[-3]
    if x.ndim not in (3, 4) or channels != 3 or spatial != (config.input_size, config.input_size):
        raise ValueError(
            f"backbone_forward: expected [3,{config.input_size},{config.input_size}] "
            f"(optionally batched), got {x.shape}"
        )
    h = relu(conv2d(x, params[f"{prefix}stem.kernel"], params[f"{prefix}stem.bias"],
                    stride=2, padding=1))
    for i in range(1, len(config.block_channels) + 1):
        h = residual_block(
            h,
            params[f"{prefix}block{i}.conv1.kernel"], params[f"{prefix}block{i}.conv1.bias"],
            params[f"{prefix}block{i}.conv2.kernel"], params[f"{prefix}block{i}.conv2.bias"],
            params[f"{prefix}block{i}.proj.kernel"], params[f"{prefix}block{i}.proj.bias"],
            stride=2,
        )
    if mode == "train" and config.dropout_rate > 0.0:
        if rng is None:
            raise ValueError("backbone_forward: train mode needs an rng (seed or Generator)")
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        h = dropout(h, config.dropout_rate, rng)
    return h
