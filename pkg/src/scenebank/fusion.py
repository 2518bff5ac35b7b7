"""Semantic fusion of the representation bank and the training objective.

Fusion sums the four bank elements into a final instance representation and
compresses it to a bag-level probability distribution: softmax over per-channel
spatial sums. The objective combines

* a classification term: cross-entropy of the bag distribution against the
  scene label, and
* a scene-scheme alignment term: the bank elements' absolute deviations from
  the base representation are compressed to a second distribution, which is
  pushed away from 0.5 per channel by an entropy-style functional.

Log arguments are clamped at 1e-12 so distribution vertices stay finite. A
'norm' alignment mode is available that instead directly shrinks the mean
deviation, for callers who want the differences themselves minimized.
"""

from __future__ import annotations

from dataclasses import dataclass

from .autodiff import (
    Tensor,
    absolute,
    add,
    clip,
    log,
    mean,
    mul,
    pick,
    softmax,
    spatial_sum,
    sub,
    vsum,
)
from .descriptors import RepresentationBank

__all__ = [
    "LOG_EPS",
    "LossBreakdown",
    "aggregate_bank",
    "bag_distribution",
    "classification_loss",
    "difference_map",
    "alignment_distribution",
    "alignment_loss",
    "alignment_objective",
    "total_loss",
]

LOG_EPS = 1e-12


def aggregate_bank(bank: RepresentationBank) -> Tensor:
    """Elementwise sum of the four bank elements."""
    x1, x2, x3, x4 = bank.elements
    return add(add(x1, x2), add(x3, x4))


def bag_distribution(x) -> Tensor:
    """Instance representation [N,H,W] (or batched) -> probability vector.

    Each channel is summed over its spatial extent and the channel sums are
    softmax-normalized.
    """
    x_t = x if isinstance(x, Tensor) else Tensor(x)
    if x_t.ndim not in (3, 4):
        raise ValueError(f"bag_distribution: input must be rank 3 or 4, got {x_t.shape}")
    if x_t.shape[-3] < 2:
        raise ValueError(
            f"bag_distribution: need at least 2 category channels, got {x_t.shape[-3]}"
        )
    return softmax(spatial_sum(x_t))


def classification_loss(y_pred, label) -> Tensor:
    """Cross-entropy -log(y_pred[label]); the mean over rows when batched."""
    p = y_pred if isinstance(y_pred, Tensor) else Tensor(y_pred)
    n = p.shape[-1]
    if p.ndim == 1:
        idx = int(label)
        if not 0 <= idx < n:
            raise ValueError(f"classification_loss: label {idx} outside [0, {n})")
        picked = pick(p, idx)
        return mul(log(clip(picked, LOG_EPS, 2.0)), -1.0)
    if p.ndim == 2:
        picked = pick(p, label)
        return mul(mean(log(clip(picked, LOG_EPS, 2.0))), -1.0)
    raise ValueError(f"classification_loss: predictions must be rank 1 or 2, got {p.shape}")


def difference_map(bank: RepresentationBank) -> Tensor:
    """Sum of absolute deviations of each descriptor output from the base.

    The norm is taken per entry (a scalar 2-norm is an absolute value), so the
    output keeps the [N,H,W] shape and stays nonnegative.
    """
    base = bank.element(1)
    out = None
    for k in (2, 3, 4):
        dev = absolute(sub(bank.element(k), base))
        out = dev if out is None else add(out, dev)
    return out


def alignment_distribution(x_diff) -> Tensor:
    """Compress a difference map to a probability distribution over categories."""
    return bag_distribution(x_diff)


def alignment_loss(y_d) -> Tensor:
    """Mean per-channel binary entropy of the distribution, negated.

    -(1/N) * sum_i [y_i ln y_i + (1-y_i) ln(1-y_i)]: zero when the
    distribution sits at a vertex, at most ln 2 per channel. Batched input
    returns the mean over rows.
    """
    y = y_d if isinstance(y_d, Tensor) else Tensor(y_d)
    if y.ndim not in (1, 2):
        raise ValueError(f"alignment_loss: input must be rank 1 or 2, got {y.shape}")
    n = y.shape[-1]
    ln_y = log(clip(y, LOG_EPS, 1.0 - LOG_EPS))
    one_minus = sub(1.0, y)
    ln_rest = log(clip(one_minus, LOG_EPS, 1.0 - LOG_EPS))
    term = add(mul(y, ln_y), mul(one_minus, ln_rest))
    row = vsum(term, axis=-1)
    if y.ndim == 2:
        return mul(mean(row), -1.0 / n)
    return mul(row, -1.0 / n)


def alignment_objective(x_diff, mode: str = "entropy") -> Tensor:
    """Scalar alignment term from a difference map.

    'entropy' (default) scores the compressed distribution via
    alignment_loss; 'norm' directly takes the mean of the difference map,
    so minimizing it shrinks the deviations themselves.
    """
    if mode == "entropy":
        return alignment_loss(alignment_distribution(x_diff))
    if mode == "norm":
        return mean(x_diff)
    raise ValueError(f"alignment_objective: unknown mode {mode!r}")


@dataclass(frozen=True)
class LossBreakdown:
    l_cls: float
    l_sealig: float
    alpha: float
    total: float

    @classmethod
    def from_terms(cls, l_cls: float, l_sealig: float, alpha: float) -> "LossBreakdown":
        return cls(l_cls=l_cls, l_sealig=l_sealig, alpha=alpha,
                   total=l_cls + alpha * l_sealig)


def total_loss(l_cls, l_sealig, alpha: float = 5e-4):
    """Combine the two loss terms: l_cls + alpha * l_sealig.

    Accepts floats or scalar tensors and returns the same kind.
    """
    if alpha < 0:
        raise ValueError(f"total_loss: alpha must be nonnegative, got {alpha}")
    if isinstance(l_cls, Tensor) or isinstance(l_sealig, Tensor):
        return add(l_cls, mul(l_sealig, alpha))
    return l_cls + alpha * l_sealig
