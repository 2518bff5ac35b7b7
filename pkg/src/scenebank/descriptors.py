"""Instance representation transition and the three local semantic descriptors.

The transition turns a backbone feature map into an instance representation
with one channel per scene category. Three shape-preserving descriptors then
re-highlight its key local regions:

* spatial attention: a one-layer gate, sigmoid(1x1 conv + bias), multiplied
  back onto every channel;
* local max selection: keep values equal to the max of their sliding window,
  zero the rest;
* context-aware peak response: keep strict local maxima, scaled by a sigmoid
  of the surrounding window mean.

All windows are clipped at the borders. The base representation and the three
descriptor outputs form an ordered four-element representation bank. Retention
and peak masks are treated as constants during backprop (straight-through), so
the whole bank stays differentiable almost everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .autodiff import Tensor, conv2d, mul, sigmoid

__all__ = [
    "DescriptorParams",
    "RepresentationBank",
    "instance_transition",
    "spatial_attention",
    "local_max_select",
    "cacpr",
    "build_bank",
    "local_max_mask",
    "strict_peak_mask",
]


def _check_window(w: int, name: str) -> None:
    if not isinstance(w, int) or w < 1 or w % 2 == 0:
        raise ValueError(f"{name} must be an odd positive integer, got {w!r}")


def _window_max(a: np.ndarray, w: int, exclude_center: bool = False) -> np.ndarray:
    """Max over the w x w window around each position, clipped at the borders.

    Positions outside the array contribute -inf, so a border window is simply
    the max over its in-bounds part. Works on trailing [H, W] axes.
    """
    r = w // 2
    h, width = a.shape[-2:]
    out = np.full(a.shape, -np.inf)
    for du in range(-r, r + 1):
        for dv in range(-r, r + 1):
            if exclude_center and du == 0 and dv == 0:
                continue
            i0, i1 = max(0, -du), h - max(0, du)
            j0, j1 = max(0, -dv), width - max(0, dv)
            if i0 >= i1 or j0 >= j1:
                continue
            np.maximum(
                out[..., i0:i1, j0:j1],
                a[..., i0 + du:i1 + du, j0 + dv:j1 + dv],
                out=out[..., i0:i1, j0:j1],
            )
    return out


def _window_sum(a: np.ndarray, w: int) -> np.ndarray:
    """Sum over the clipped w x w window around each position."""
    r = w // 2
    h, width = a.shape[-2:]
    out = np.zeros_like(a)
    for du in range(-r, r + 1):
        for dv in range(-r, r + 1):
            i0, i1 = max(0, -du), h - max(0, du)
            j0, j1 = max(0, -dv), width - max(0, dv)
            if i0 >= i1 or j0 >= j1:
                continue
            out[..., i0:i1, j0:j1] += a[..., i0 + du:i1 + du, j0 + dv:j1 + dv]
    return out


@lru_cache(maxsize=64)
def _window_counts(h: int, width: int, w: int) -> np.ndarray:
    counts = _window_sum(np.ones((h, width)), w)
    counts.flags.writeable = False
    return counts


def local_max_mask(data: np.ndarray, w: int) -> np.ndarray:
    """Boolean mask of positions equal to their clipped-window maximum."""
    return data == _window_max(data, w)


def strict_peak_mask(data: np.ndarray, w: int) -> np.ndarray:
    """Boolean mask of positions strictly greater than every window neighbour."""
    return data > _window_max(data, w, exclude_center=True)


def _sigmoid(a: np.ndarray) -> np.ndarray:
    return np.where(a >= 0, 1.0 / (1.0 + np.exp(-np.abs(a))),
                    np.exp(-np.abs(a)) / (1.0 + np.exp(-np.abs(a))))


@dataclass
class DescriptorParams:
    """Learnable head parameters plus descriptor window sizes.

    transition_kernel [N,C,1,1] and transition_bias [N] map backbone features
    to the N-channel instance representation. attention_kernel [1,N,1,1] and
    attention_bias [1] are absent for model variants that never build the
    attention descriptor.
    """

    transition_kernel: Tensor
    transition_bias: Tensor
    attention_kernel: Tensor | None = None
    attention_bias: Tensor | None = None
    lms_window: int = 3
    peak_window: int = 3
    context_window: int = 5
    attention_activation: str = "sigmoid"

    def __post_init__(self):
        for w, name in [(self.lms_window, "lms_window"),
                        (self.peak_window, "peak_window"),
                        (self.context_window, "context_window")]:
            _check_window(w, name)
            if w < 3:
                raise ValueError(f"{name} must be >= 3, got {w}")
        if self.attention_activation not in ("sigmoid", "linear"):
            raise ValueError(
                f"attention_activation must be 'sigmoid' or 'linear', "
                f"got {self.attention_activation!r}"
            )


def instance_transition(features, kernel, bias) -> Tensor:
    """1x1 convolution C -> N: one output channel per scene category."""
    kernel_t = kernel if isinstance(kernel, Tensor) else Tensor(kernel)
    if kernel_t.ndim != 4 or kernel_t.shape[2:] != (1, 1):
        raise ValueError(
            f"instance_transition: kernel must be [N,C,1,1], got {kernel_t.shape}"
        )
    return conv2d(features, kernel_t, bias, stride=1, padding=0)


def spatial_attention(x1, kernel, bias, activation: str = "sigmoid") -> Tensor:
    """Gate every channel of x1 by a single spatial attention map.

    The map is a 1x1 convolution of x1 down to one channel plus a scalar
    bias, squashed through a sigmoid by default ('linear' keeps the raw
    affine map). Output shape equals x1's.
    """
    kernel_t = kernel if isinstance(kernel, Tensor) else Tensor(kernel)
    if kernel_t.ndim != 4 or kernel_t.shape[0] != 1 or kernel_t.shape[2:] != (1, 1):
        raise ValueError(
            f"spatial_attention: kernel must be [1,N,1,1], got {kernel_t.shape}"
        )
    if activation not in ("sigmoid", "linear"):
        raise ValueError(f"spatial_attention: unknown activation {activation!r}")
    attn = conv2d(x1, kernel_t, bias, stride=1, padding=0)
    if activation == "sigmoid":
        attn = sigmoid(attn)
    return mul(x1, attn)


def local_max_select(x, w: int = 3) -> Tensor:
    """Keep values equal to the max of their clipped w x w window, zero the rest.

    Ties all pass: a constant region is retained wholesale. Gradient flows
    only through retained positions (the mask is a constant to backprop).
    """
    _check_window(w, "local_max_select window")
    x_t = x if isinstance(x, Tensor) else Tensor(x)
    if x_t.ndim not in (3, 4):
        raise ValueError(f"local_max_select: input must be rank 3 or 4, got {x_t.shape}")
    h, width = x_t.shape[-2:]
    if w > min(h, width):
        raise ValueError(
            f"local_max_select: window {w} exceeds spatial size {h}x{width}"
        )
    mask = local_max_mask(x_t.data, w)

    def backward(g):
        x_t._accumulate(g * mask, fresh=True)

    return Tensor._result(x_t.data * mask, (x_t,), backward)


def cacpr(x, peak_w: int = 3, context_w: int = 5) -> Tensor:
    """Context-aware peak response: strict local maxima scaled by context.

    A position survives only if it is the strict maximum of its clipped
    peak_w window (ties die). Survivors are multiplied by
    sigmoid(mean of the clipped context_w window), so peaks in strong
    neighbourhoods respond harder. Gradient flows through the surviving
    values and through the context mean; the peak mask is a constant.
    """
    _check_window(peak_w, "cacpr peak window")
    _check_window(context_w, "cacpr context window")
    x_t = x if isinstance(x, Tensor) else Tensor(x)
    if x_t.ndim not in (3, 4):
        raise ValueError(f"cacpr: input must be rank 3 or 4, got {x_t.shape}")
    h, width = x_t.shape[-2:]
    peaks = strict_peak_mask(x_t.data, peak_w)
    counts = _window_counts(h, width, context_w)
    ctx_mean = _window_sum(x_t.data, context_w) / counts
    kappa = _sigmoid(ctx_mean)
    out_data = x_t.data * peaks * kappa

    def backward(g):
        grad = g * peaks * kappa
        # route the context term through the window-mean adjoint: the window
        # is symmetric, so the adjoint of (window sum / count) is the window
        # sum of (upstream / count)
        d_ctx = g * x_t.data * peaks * kappa * (1.0 - kappa)
        grad = grad + _window_sum(d_ctx / counts, context_w)
        x_t._accumulate(grad, fresh=True)

    return Tensor._result(out_data, (x_t,), backward)


@dataclass(frozen=True)
class RepresentationBank:
    """Ordered bank: base representation plus the three descriptor outputs."""

    base: Tensor
    attended: Tensor
    local_max: Tensor
    peak_response: Tensor

    def __post_init__(self):
        shapes = [t.shape for t in self.elements]
        if any(s != shapes[0] for s in shapes[1:]):
            raise ValueError(f"RepresentationBank: element shapes disagree: {shapes}")

    @property
    def elements(self) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        return (self.base, self.attended, self.local_max, self.peak_response)

    def element(self, index: int) -> Tensor:
        """1-based access in bank order (1 = base .. 4 = peak response)."""
        if not 1 <= index <= 4:
            raise IndexError(f"bank elements are numbered 1..4, got {index}")
        return self.elements[index - 1]

    def __iter__(self):
        return iter(self.elements)

    def __len__(self) -> int:
        return 4


def build_bank(x1, x2, x3, x4) -> RepresentationBank:
    """Assemble the ordered four-element bank; shapes must agree exactly."""
    return RepresentationBank(x1, x2, x3, x4)
