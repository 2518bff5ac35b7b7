import numpy as np
import pytest

from scenebank.autodiff import Tensor
from scenebank.backbone import BackboneConfig
from scenebank.descriptors import build_bank
from scenebank.fusion import aggregate_bank, bag_distribution
from scenebank.model import (
    VARIANTS,
    ModelConfig,
    build_variant,
    check_variant,
    init_model_parameters,
    variant_uses,
)

SMALL_CFG = ModelConfig(
    num_classes=3,
    backbone=BackboneConfig(input_size=24, stem_channels=4, block_channels=(4, 6),
                            dropout_rate=0.2),
)


def small_image(seed=0):
    return Tensor(np.random.default_rng(seed).random((3, 24, 24)))


def test_exactly_seven_variants_in_fixed_order():
    assert VARIANTS == (
        "res", "res_attention", "res_lms", "res_cacpr",
        "res_irb", "res_irb_sf", "res_irb_sf_ssa",
    )


def test_unknown_variant_rejected():
    with pytest.raises(ValueError, match="unknown variant"):
        check_variant("res_plus_everything")
    with pytest.raises(ValueError):
        build_variant("res_x", {}, SMALL_CFG)


def test_res_variant_has_no_descriptor_parameters():
    params = init_model_parameters(SMALL_CFG, "res", seed=0)
    assert "head.attention.kernel" not in params
    assert "head.attention.bias" not in params
    forward = build_variant("res", params, SMALL_CFG)
    out = forward(small_image())
    assert out.attended is None
    assert out.local_max is None
    assert out.peak_response is None
    assert out.bank is None


@pytest.mark.parametrize("variant", ["res_attention", "res_irb", "res_irb_sf", "res_irb_sf_ssa"])
def test_attention_variants_carry_attention_parameters(variant):
    params = init_model_parameters(SMALL_CFG, variant, seed=0)
    assert "head.attention.kernel" in params
    assert params["head.attention.kernel"].shape == (1, 3, 1, 1)


def test_single_descriptor_variants_construct_only_their_descriptor():
    for variant, attr in [("res_attention", "attended"), ("res_lms", "local_max"),
                          ("res_cacpr", "peak_response")]:
        uses = variant_uses(variant)
        assert sum(uses[k] for k in ("attention", "local_max", "peak_response")) == 1
        params = init_model_parameters(SMALL_CFG, variant, seed=1)
        out = build_variant(variant, params, SMALL_CFG)(small_image())
        assert getattr(out, attr) is not None
        assert out.bank is None


def test_backbone_init_shared_across_variants_for_same_seed():
    a = init_model_parameters(SMALL_CFG, "res", seed=5)
    b = init_model_parameters(SMALL_CFG, "res_irb_sf_ssa", seed=5)
    for name in a:
        np.testing.assert_array_equal(a[name].data, b[name].data)


def test_sf_and_ssa_share_identical_forward():
    params = init_model_parameters(SMALL_CFG, "res_irb_sf_ssa", seed=2)
    img = small_image(3)
    out_sf = build_variant("res_irb_sf", params, SMALL_CFG)(img)
    out_ssa = build_variant("res_irb_sf_ssa", params, SMALL_CFG)(img)
    np.testing.assert_array_equal(out_sf.probs.data, out_ssa.probs.data)
    np.testing.assert_array_equal(out_sf.aggregate.data, out_ssa.aggregate.data)


def test_bank_of_base_copies_quadruples_logits_same_argmax():
    rng = np.random.default_rng(4)
    base = Tensor(rng.normal(size=(3, 6, 6)))
    bank = build_bank(base, base, base, base)
    fused = aggregate_bank(bank)
    np.testing.assert_allclose(fused.data, 4.0 * base.data, atol=1e-12)
    probs_base = bag_distribution(base).data
    probs_fused = bag_distribution(fused).data
    assert probs_base.argmax() == probs_fused.argmax()
    # channel sums scale by exactly 4
    np.testing.assert_allclose(
        fused.data.sum(axis=(-2, -1)), 4.0 * base.data.sum(axis=(-2, -1)), atol=1e-10
    )


def test_res_irb_averages_four_distributions():
    params = init_model_parameters(SMALL_CFG, "res_irb", seed=6)
    img = small_image(7)
    out = build_variant("res_irb", params, SMALL_CFG)(img)
    per_element = [bag_distribution(e).data for e in out.bank]
    np.testing.assert_allclose(out.probs.data, np.mean(per_element, axis=0), atol=1e-12)
    assert out.probs.data.sum() == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("variant", VARIANTS)
def test_probs_are_distributions_for_every_variant(variant):
    params = init_model_parameters(SMALL_CFG, variant, seed=8)
    out = build_variant(variant, params, SMALL_CFG)(small_image(9))
    probs = out.probs.data
    assert probs.shape == (3,)
    assert abs(probs.sum() - 1.0) <= 1e-9
    assert ((probs > 0) & (probs < 1)).all()


def test_gradients_flow_to_every_parameter_in_full_variant():
    from scenebank.fusion import alignment_objective, classification_loss, difference_map, total_loss

    params = init_model_parameters(SMALL_CFG, "res_irb_sf_ssa", seed=10)
    forward = build_variant("res_irb_sf_ssa", params, SMALL_CFG)
    out = forward(small_image(11))
    loss = total_loss(
        classification_loss(out.probs, 1),
        alignment_objective(difference_map(out.bank), "entropy"),
        5e-4,
    )
    loss.backward()
    for name, t in params.items():
        assert t.grad is not None, name
        assert np.abs(t.grad).max() > 0, f"{name} gradient identically zero"


def test_missing_attention_params_rejected():
    params = init_model_parameters(SMALL_CFG, "res", seed=0)
    with pytest.raises(ValueError, match="attention"):
        build_variant("res_attention", params, SMALL_CFG)


def test_model_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(num_classes=1)
    with pytest.raises(ValueError):
        ModelConfig(lms_window=4)
    with pytest.raises(ValueError):
        ModelConfig(attention_activation="relu")
    with pytest.raises(ValueError):
        ModelConfig(alignment_mode="cosine")
