"""Training loop, evaluation, repeated-run protocol, and the ablation matrix.

One training run is fully sequential and deterministic: the config seed fixes
the dataset, the split, parameter init, per-epoch shuffling, and dropout
masks. BLAS is pinned to a single thread inside each run so results are
bit-identical no matter how many worker processes the ablation spreads runs
across; parallelism comes from running independent (variant, run) pairs in
separate processes.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from threadpoolctl import threadpool_limits

from .autodiff import AdamState, Tensor, adam_step
from .backbone import BackboneConfig
from .data import (
    ProtocolResult,
    SceneSample,
    SyntheticSpec,
    format_mean_std,
    generate_synthetic,
    load_image_folder,
    stratified_split,
)
from .fusion import (
    LossBreakdown,
    alignment_objective,
    classification_loss,
    difference_map,
    total_loss,
)
from .model import (
    VARIANTS,
    ForwardOutputs,
    ModelConfig,
    build_variant,
    check_variant,
    init_model_parameters,
)

__all__ = [
    "TrainConfig",
    "RunReport",
    "AblationResult",
    "TrainingDivergedError",
    "learning_rate",
    "load_dataset",
    "model_config_for",
    "train_single",
    "evaluate",
    "run_training",
    "ablate",
]


class TrainingDivergedError(RuntimeError):
    """Raised when a training batch produces a non-finite loss."""

    def __init__(self, message: str, batch_id: str, sample_ids: list[str]):
        super().__init__(message)
        self.batch_id = batch_id
        self.sample_ids = sample_ids


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    lr_init: float = 5e-5
    lr_decay_factor: float = 10.0
    lr_decay_every: int = 20
    lr_floor: float = 5e-7
    weight_decay: float = 5e-4
    dropout: float = 0.2
    alpha: float = 5e-4
    epochs: int = 30
    seed: int = 0
    variant: str = "res_irb_sf_ssa"
    data: str = "synthetic"
    train_ratio: float = 0.8
    runs: int = 1
    num_classes: int = 4
    image_size: int = 64
    samples_per_class: int = 250
    noise_std: float = 0.05
    alignment_mode: str = "entropy"
    attention_activation: str = "sigmoid"
    workers: int = 0  # 0 = pick automatically for ablate

    def __post_init__(self):
        check_variant(self.variant)
        if self.batch_size < 1:
            raise ValueError("TrainConfig: batch_size must be >= 1")
        if not (self.lr_init > self.lr_floor > 0):
            raise ValueError(
                f"TrainConfig: need lr_init > lr_floor > 0, got "
                f"{self.lr_init} / {self.lr_floor}"
            )
        if self.lr_decay_factor <= 1 or self.lr_decay_every < 1:
            raise ValueError("TrainConfig: decay factor must exceed 1, period >= 1")
        if self.epochs < 1:
            raise ValueError("TrainConfig: epochs must be >= 1")
        if not 0.0 < self.train_ratio < 1.0:
            raise ValueError("TrainConfig: train_ratio must be in (0, 1)")
        if self.alpha < 0:
            raise ValueError("TrainConfig: alpha must be nonnegative")
        if self.runs < 1:
            raise ValueError("TrainConfig: runs must be >= 1")
        if self.workers < 0:
            raise ValueError("TrainConfig: workers must be >= 0")


def learning_rate(epoch: int, config: TrainConfig) -> float:
    """Step schedule: lr_init divided by the decay factor every decay period,
    clamped below at lr_floor."""
    if epoch < 0:
        raise ValueError("learning_rate: epoch must be nonnegative")
    return max(
        config.lr_floor,
        config.lr_init / config.lr_decay_factor ** (epoch // config.lr_decay_every),
    )


def load_dataset(config: TrainConfig) -> list[SceneSample]:
    """Synthetic dataset or class-per-subdirectory image tree, per config.data."""
    if config.data == "synthetic":
        spec = SyntheticSpec(
            num_classes=config.num_classes,
            image_size=config.image_size,
            samples_per_class=config.samples_per_class,
            noise_std=config.noise_std,
        )
        return generate_synthetic(spec, seed=config.seed)
    return load_image_folder(config.data, image_size=config.image_size)


def model_config_for(config: TrainConfig, num_classes: int) -> ModelConfig:
    return ModelConfig(
        num_classes=num_classes,
        backbone=BackboneConfig(input_size=config.image_size,
                                dropout_rate=config.dropout),
        attention_activation=config.attention_activation,
        alignment_mode=config.alignment_mode,
    )


@dataclass
class RunReport:
    variant: str
    split_seed: int
    init_seed: int
    epochs: int
    train_size: int
    test_size: int
    epoch_losses: list[LossBreakdown] = field(default_factory=list)
    final_accuracy: float = 0.0
    confusion: np.ndarray | None = None
    wall_seconds: float = 0.0


def _stack(samples) -> tuple[np.ndarray, np.ndarray]:
    images = np.stack([s.image for s in samples])
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return images, labels


def evaluate(forward_fn, samples, num_classes: int, batch_size: int = 64):
    """Argmax accuracy and the N x N confusion matrix (rows = true class)."""
    if not samples:
        raise ValueError("evaluate: empty test set")
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        images, labels = _stack(chunk)
        outputs: ForwardOutputs = forward_fn(Tensor(images), mode="eval")
        predictions = outputs.probs.data.argmax(axis=-1)
        np.add.at(confusion, (labels, predictions), 1)
    accuracy = float(np.trace(confusion)) / float(confusion.sum())
    return accuracy, confusion


def _loss_terms(outputs: ForwardOutputs, labels, config: TrainConfig,
                model_cfg: ModelConfig):
    l_cls = classification_loss(outputs.probs, labels)
    if config.variant == "res_irb_sf_ssa":
        l_sealig = alignment_objective(
            difference_map(outputs.bank), model_cfg.alignment_mode
        )
        total = total_loss(l_cls, l_sealig, config.alpha)
        return total, float(l_cls.data), float(l_sealig.data)
    return l_cls, float(l_cls.data), 0.0


def train_single(config: TrainConfig, samples, split_seed: int, init_seed: int,
                 initial_params: dict[str, Tensor] | None = None):
    """One full training run; returns (params, RunReport)."""
    started = time.perf_counter()
    with threadpool_limits(limits=1):
        split = stratified_split(samples, config.train_ratio, split_seed)
        num_classes = max(s.label for s in samples) + 1
        model_cfg = model_config_for(config, num_classes)
        params = initial_params if initial_params is not None else init_model_parameters(
            model_cfg, config.variant, init_seed
        )
        forward = build_variant(config.variant, params, model_cfg)
        state = AdamState()
        shuffle_rng = np.random.default_rng([init_seed, split_seed, 11])
        report = RunReport(
            variant=config.variant, split_seed=split_seed, init_seed=init_seed,
            epochs=config.epochs, train_size=len(split.train),
            test_size=len(split.test),
        )
        train_samples = list(split.train)
        for epoch in range(config.epochs):
            lr = learning_rate(epoch, config)
            order = shuffle_rng.permutation(len(train_samples))
            cls_terms: list[float] = []
            align_terms: list[float] = []
            for batch_no, start in enumerate(range(0, len(order), config.batch_size)):
                batch = [train_samples[i] for i in order[start:start + config.batch_size]]
                images, labels = _stack(batch)
                drop_rng = np.random.default_rng([init_seed, 7, epoch, batch_no])
                outputs = forward(Tensor(images), mode="train", rng=drop_rng)
                total, cls_val, align_val = _loss_terms(outputs, labels, config, model_cfg)
                if not np.isfinite(float(total.data)):
                    batch_id = f"epoch{epoch}/batch{batch_no}"
                    raise TrainingDivergedError(
                        f"non-finite loss {float(total.data)!r} at {batch_id} "
                        f"(l_cls={cls_val!r}, l_sealig={align_val!r}); "
                        f"samples: {[s.id for s in batch]}",
                        batch_id=batch_id,
                        sample_ids=[s.id for s in batch],
                    )
                for t in params.values():
                    t.zero_grad()
                total.backward()
                grads = {}
                for name, t in params.items():
                    if t.grad is None:
                        raise RuntimeError(f"parameter {name} received no gradient")
                    grads[name] = t.grad
                adam_step(
                    {name: t.data for name, t in params.items()}, grads, state,
                    lr=lr, weight_decay=config.weight_decay,
                )
                cls_terms.append(cls_val)
                align_terms.append(align_val)
            report.epoch_losses.append(
                LossBreakdown.from_terms(
                    float(np.mean(cls_terms)), float(np.mean(align_terms)), config.alpha
                )
            )
        for t in params.values():
            t.zero_grad()
        accuracy, confusion = evaluate(forward, list(split.test), num_classes,
                                       batch_size=max(config.batch_size, 64))
        report.final_accuracy = accuracy
        report.confusion = confusion
    report.wall_seconds = time.perf_counter() - started
    return params, report


def run_training(config: TrainConfig, samples=None, run_index: int = 0):
    """Train one run with the protocol's seed derivation for `run_index`."""
    if samples is None:
        samples = load_dataset(config)
    split_seed = config.seed + run_index
    init_seed = config.seed + 1000 + run_index
    return train_single(config, samples, split_seed, init_seed)


# Per-process dataset cache for ablation workers; regenerating is deterministic
# but wasteful when one process handles several runs.
_DATASET_CACHE: dict[tuple, list[SceneSample]] = {}


def _cached_dataset(config: TrainConfig) -> list[SceneSample]:
    key = (config.data, config.seed, config.num_classes, config.image_size,
           config.samples_per_class, config.noise_std)
    if key not in _DATASET_CACHE:
        _DATASET_CACHE.clear()
        _DATASET_CACHE[key] = load_dataset(config)
    return _DATASET_CACHE[key]


def _ablation_task(args):
    config, variant, run_index = args
    run_config = replace(config, variant=variant)
    samples = _cached_dataset(run_config)
    split_seed = config.seed + run_index
    init_seed = config.seed + 1000 + run_index
    _, report = train_single(run_config, samples, split_seed, init_seed)
    return {
        "variant": variant,
        "run": run_index,
        "split_seed": split_seed,
        "init_seed": init_seed,
        "accuracy": report.final_accuracy,
        "first_epoch_loss": report.epoch_losses[0].total,
        "last_epoch_loss": report.epoch_losses[-1].total,
    }


@dataclass
class AblationResult:
    rows: list[tuple[str, ProtocolResult]]
    records: list[dict]
    wall_seconds: float

    def to_table(self) -> str:
        width = max(len(v) for v in VARIANTS)
        lines = [f"{'variant'.ljust(width)}  accuracy (mean±std %)"]
        for variant, result in self.rows:
            lines.append(f"{variant.ljust(width)}  {result.formatted}")
        return "\n".join(lines)


def ablate(config: TrainConfig, workers: int | None = None) -> AblationResult:
    """Run every variant under the repeated-run protocol with paired seeds.

    All variants share the same dataset and, per run index, the same split
    and init seeds, so rows are directly comparable. Independent runs execute
    in a process pool; results are ordered deterministically.
    """
    started = time.perf_counter()
    if workers is None:
        workers = config.workers
    if workers == 0:
        workers = min(4, os.cpu_count() or 1)
    tasks = [(config, variant, run) for variant in VARIANTS
             for run in range(config.runs)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_ablation_task, tasks, chunksize=1))
    else:
        results = [_ablation_task(task) for task in tasks]
    by_key = {(r["variant"], r["run"]): r for r in results}
    records = [by_key[(variant, run)] for variant in VARIANTS
               for run in range(config.runs)]
    rows = []
    for variant in VARIANTS:
        accs = [by_key[(variant, run)]["accuracy"] for run in range(config.runs)]
        arr = np.asarray(accs)
        rows.append((variant, ProtocolResult(
            accuracies=tuple(accs), mean=float(arr.mean()), std=float(arr.std()),
            formatted=format_mean_std(arr),
            split_seeds=tuple(config.seed + r for r in range(config.runs)),
            init_seeds=tuple(config.seed + 1000 + r for r in range(config.runs)),
        )))
    return AblationResult(rows=rows, records=records,
                          wall_seconds=time.perf_counter() - started)
