"""Model assembly: backbone plus descriptor head, wired per ablation variant.

The seven variants mirror the component-removal study the harness runs:

* res:            classify the base instance representation alone
* res_attention:  base + attention descriptor, summed
* res_lms:        base + local max selection, summed
* res_cacpr:      base + peak response, summed
* res_irb:        all four bank elements classified separately, the four
                  distributions averaged (no fusion)
* res_irb_sf:     bank summed first (semantic fusion), then classified
* res_irb_sf_ssa: same forward as res_irb_sf; the training objective adds
                  the scene-scheme alignment term

Variants only construct the descriptors they use, so 'res' carries no
attention parameters and spends no descriptor compute.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, add, mul
from .backbone import BackboneConfig, backbone_forward, init_parameters
from .descriptors import (
    RepresentationBank,
    build_bank,
    cacpr,
    instance_transition,
    local_max_select,
    spatial_attention,
)
from .fusion import aggregate_bank, bag_distribution

__all__ = [
    "VARIANTS",
    "ModelConfig",
    "ForwardOutputs",
    "check_variant",
    "variant_uses",
    "init_model_parameters",
    "build_variant",
]

VARIANTS = (
    "res",
    "res_attention",
    "res_lms",
    "res_cacpr",
    "res_irb",
    "res_irb_sf",
    "res_irb_sf_ssa",
)

_BANK_VARIANTS = {"res_irb", "res_irb_sf", "res_irb_sf_ssa"}


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int = 4
    backbone: BackboneConfig = BackboneConfig()
    lms_window: int = 3
    peak_window: int = 3
    context_window: int = 5
    attention_activation: str = "sigmoid"
    alignment_mode: str = "entropy"

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"ModelConfig: need at least 2 classes, got {self.num_classes}")
        for w, name in [(self.lms_window, "lms_window"), (self.peak_window, "peak_window"),
                        (self.context_window, "context_window")]:
            if w < 3 or w % 2 == 0:
                raise ValueError(f"ModelConfig: {name} must be odd and >= 3, got {w}")
        if self.attention_activation not in ("sigmoid", "linear"):
            raise ValueError(
                f"ModelConfig: attention_activation must be 'sigmoid' or 'linear', "
                f"got {self.attention_activation!r}"
            )
        if self.alignment_mode not in ("entropy", "norm"):
            raise ValueError(
                f"ModelConfig: alignment_mode must be 'entropy' or 'norm', "
                f"got {self.alignment_mode!r}"
            )


def check_variant(variant: str) -> str:
    if variant not in VARIANTS:
        raise ValueError(
            f"unknown variant {variant!r}; expected one of {', '.join(VARIANTS)}"
        )
    return variant


def variant_uses(variant: str) -> dict[str, bool]:
    """Which descriptors a variant constructs."""
    check_variant(variant)
    bank = variant in _BANK_VARIANTS
    return {
        "attention": bank or variant == "res_attention",
        "local_max": bank or variant == "res_lms",
        "peak_response": bank or variant == "res_cacpr",
        "bank": bank,
    }


def init_model_parameters(config: ModelConfig, variant: str, seed: int) -> dict[str, Tensor]:
    """Backbone plus head parameters; deterministic given seed.

    Head parameters draw from their own seed streams, so the shared backbone
    initialization is identical across variants for a given seed.
    """
    check_variant(variant)
    params = init_parameters(config.backbone, seed=seed)
    c = config.backbone.feature_channels
    n = config.num_classes
    head_rng = np.random.default_rng([seed, 1])
    # Small transition init: the bag logits sum the instance map over all
    # spatial positions, so Kaiming-scale weights would saturate the softmax
    # from the first step. 1e-3 keeps initial logits O(1) (initial loss
    # near ln N) while breaking symmetry.
    params["head.transition.kernel"] = Tensor(
        head_rng.normal(0.0, 1e-3, size=(n, c, 1, 1)), requires_grad=True
    )
    params["head.transition.bias"] = Tensor(np.zeros(n), requires_grad=True)
    if variant_uses(variant)["attention"]:
        attn_rng = np.random.default_rng([seed, 2])
        params["head.attention.kernel"] = Tensor(
            attn_rng.normal(0.0, np.sqrt(2.0 / n), size=(1, n, 1, 1)), requires_grad=True
        )
        params["head.attention.bias"] = Tensor(np.zeros(1), requires_grad=True)
    return params


@dataclass
class ForwardOutputs:
    probs: Tensor
    base: Tensor
    attended: Tensor | None = None
    local_max: Tensor | None = None
    peak_response: Tensor | None = None
    bank: RepresentationBank | None = None
    aggregate: Tensor | None = None

    def named_maps(self) -> dict[str, Tensor]:
        """The instance-representation maps this forward pass produced."""
        maps: dict[str, Tensor] = {"base": self.base}
        if self.attended is not None:
            maps["attention"] = self.attended
        if self.local_max is not None:
            maps["local_max"] = self.local_max
        if self.peak_response is not None:
            maps["peak_response"] = self.peak_response
        if self.aggregate is not None:
            maps["final"] = self.aggregate
        return maps


def build_variant(variant: str, params: dict[str, Tensor], config: ModelConfig):
    """Return forward(images, mode, rng) -> ForwardOutputs for the variant."""
    check_variant(variant)
    uses = variant_uses(variant)
    if uses["attention"] and "head.attention.kernel" not in params:
        raise ValueError(f"variant {variant!r} needs attention parameters")

    def forward(images, mode: str = "eval", rng=None) -> ForwardOutputs:
        features = backbone_forward(images, params, config.backbone, mode=mode, rng=rng)
        base = instance_transition(
            features, params["head.transition.kernel"], params["head.transition.bias"]
        )
        attended = local_max = peak = None
        if uses["attention"]:
            attended = spatial_attention(
                base, params["head.attention.kernel"], params["head.attention.bias"],
                activation=config.attention_activation,
            )
        if uses["local_max"]:
            local_max = local_max_select(base, config.lms_window)
        if uses["peak_response"]:
            peak = cacpr(base, config.peak_window, config.context_window)

        bank = aggregate = None
        if variant == "res":
            aggregate = base
            probs = bag_distribution(aggregate)
        elif variant == "res_attention":
            aggregate = add(base, attended)
            probs = bag_distribution(aggregate)
        elif variant == "res_lms":
            aggregate = add(base, local_max)
            probs = bag_distribution(aggregate)
        elif variant == "res_cacpr":
            aggregate = add(base, peak)
            probs = bag_distribution(aggregate)
        elif variant == "res_irb":
            bank = build_bank(base, attended, local_max, peak)
            summed = None
            for element in bank:
                p = bag_distribution(element)
                summed = p if summed is None else add(summed, p)
            probs = mul(summed, 0.25)
        else:  # res_irb_sf, res_irb_sf_ssa
            bank = build_bank(base, attended, local_max, peak)
            aggregate = aggregate_bank(bank)
            probs = bag_distribution(aggregate)
        return ForwardOutputs(
            probs=probs, base=base, attended=attended, local_max=local_max,
            peak_response=peak, bank=bank, aggregate=aggregate,
        )

    return forward
