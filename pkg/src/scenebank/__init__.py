"""Multiple-instance scene classification with a bank of local semantic descriptors.

A self-contained float64 toolkit: reverse-mode autodiff core, a small residual
backbone, the descriptor bank head (spatial attention, local max selection,
context-aware peak response), semantic fusion with a scene-scheme alignment
objective, synthetic/folder datasets, and a CLI harness for training,
ablation, and heatmap export.
"""

from .autodiff import AdamState, Tensor, adam_step
from .backbone import BackboneConfig, backbone_forward, init_parameters
from .data import (
    DatasetSplit,
    SceneSample,
    SyntheticSpec,
    generate_synthetic,
    load_image_folder,
    run_protocol,
    stratified_split,
)
from .descriptors import (
    DescriptorParams,
    RepresentationBank,
    build_bank,
    cacpr,
    instance_transition,
    local_max_select,
    spatial_attention,
)
from .fusion import (
    LossBreakdown,
    aggregate_bank,
    alignment_distribution,
    alignment_loss,
    bag_distribution,
    classification_loss,
    difference_map,
    total_loss,
)
from .model import VARIANTS, ModelConfig, build_variant, init_model_parameters
from .train import RunReport, TrainConfig, ablate, evaluate, learning_rate, train_single

__version__ = "0.1.0"
