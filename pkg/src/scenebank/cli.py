"""Command-line harness: train, eval, ablate, visualize, gen-data.

Configuration comes from an optional key = value file (one setting per line,
# comments allowed; keys are TrainConfig field names) with flag overrides on
top. Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, meta_for, model_config_from_meta, save_checkpoint
from .data import (
    MOTIFS,
    SceneSample,
    SyntheticSpec,
    bilinear_resize,
    generate_synthetic,
    run_protocol,
    stratified_split,
    write_manifest,
)
from .model import VARIANTS, build_variant
from .train import (
    TrainConfig,
    ablate,
    evaluate,
    load_dataset,
    model_config_for,
    run_training,
    train_single,
)
from .visualize import export_heatmaps

__all__ = ["main", "build_parser", "parse_config_file", "build_config"]

_CONFIG_TYPES = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
_PARSERS = {"int": int, "float": float, "str": str}


class CliParser(argparse.ArgumentParser):
    """argparse, but usage errors exit with code 1 instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def parse_config_file(path) -> dict:
    """Read `key = value` lines into typed TrainConfig settings."""
    settings: dict = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_TYPES:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        type_name = _CONFIG_TYPES[key]
        caster = _PARSERS.get(type_name if isinstance(type_name, str) else type_name.__name__)
        if caster is None:
            raise ValueError(f"{path}:{lineno}: unsupported key {key!r}")
        try:
            settings[key] = caster(value)
        except ValueError:
            raise ValueError(
                f"{path}:{lineno}: cannot parse {value!r} as {key} ({caster.__name__})"
            ) from None
    return settings


_FLAG_TO_FIELD = {
    "seed": "seed",
    "variant": "variant",
    "data": "data",
    "ratio": "train_ratio",
    "runs": "runs",
    "epochs": "epochs",
    "alpha": "alpha",
    "alignment_mode": "alignment_mode",
    "attention_activation": "attention_activation",
    "batch_size": "batch_size",
    "workers": "workers",
    "image_size": "image_size",
    "num_classes": "num_classes",
    "samples_per_class": "samples_per_class",
    "noise_std": "noise_std",
}


def build_config(args: argparse.Namespace) -> TrainConfig:
    settings: dict = {}
    if getattr(args, "config", None):
        settings.update(parse_config_file(args.config))
    for flag, field_name in _FLAG_TO_FIELD.items():
        value = getattr(args, flag, None)
        if value is not None:
            settings[field_name] = value
    return TrainConfig(**settings)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--variant", choices=VARIANTS)
    parser.add_argument("--data", help="'synthetic' or a class-per-subdirectory image tree")
    parser.add_argument("--ratio", type=float, help="train split ratio in (0,1)")
    parser.add_argument("--runs", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--alignment-mode", dest="alignment_mode",
                        choices=("entropy", "norm"))
    parser.add_argument("--attention-activation", dest="attention_activation",
                        choices=("sigmoid", "linear"))
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--image-size", dest="image_size", type=int)
    parser.add_argument("--num-classes", dest="num_classes", type=int)
    parser.add_argument("--samples-per-class", dest="samples_per_class", type=int)
    parser.add_argument("--noise-std", dest="noise_std", type=float)


def _print_confusion(confusion: np.ndarray) -> None:
    print("confusion matrix (rows = true class):")
    for row in confusion.tolist():
        print("  " + " ".join(f"{v:5d}" for v in row))


def _epoch_records(report) -> list[dict]:
    records = []
    for epoch, breakdown in enumerate(report.epoch_losses):
        records.append({
            "kind": "epoch", "variant": report.variant, "epoch": epoch,
            "l_cls": breakdown.l_cls, "l_sealig": breakdown.l_sealig,
            "total": breakdown.total,
        })
    return records


def _write_jsonl(path: Path, records) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def cmd_train(args) -> int:
    config = build_config(args)
    samples = load_dataset(config)
    out_dir = Path(args.out) if args.out else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    records: list[dict] = []
    if config.runs == 1:
        params, report = run_training(config, samples)
        records.extend(_epoch_records(report))
        records.append({"kind": "final", "variant": report.variant,
                        "accuracy": report.final_accuracy,
                        "split_seed": report.split_seed,
                        "init_seed": report.init_seed})
        for record in records:
            print(json.dumps(record, sort_keys=True))
        print(f"final accuracy: {report.final_accuracy * 100:.2f}%")
        _print_confusion(report.confusion)
        print(f"wall seconds: {report.wall_seconds:.1f}")
        last = (params, report)
    else:
        stash: dict = {}

        def one_run(run_index, split_seed, init_seed):
            params_r, report_r = train_single(config, samples, split_seed, init_seed)
            stash["last"] = (params_r, report_r)
            records.extend(_epoch_records(report_r))
            records.append({"kind": "run", "variant": config.variant,
                            "run": run_index, "split_seed": split_seed,
                            "init_seed": init_seed,
                            "accuracy": report_r.final_accuracy})
            return report_r.final_accuracy

        protocol = run_protocol(one_run, base_seed=config.seed, runs=config.runs)
        records.append({"kind": "summary", "variant": config.variant,
                        "mean": protocol.mean, "std": protocol.std,
                        "formatted": protocol.formatted})
        for record in records:
            if record["kind"] != "epoch":
                print(json.dumps(record, sort_keys=True))
        print(f"accuracy over {config.runs} runs: {protocol.formatted} "
              "(population std)")
        last = stash["last"]

    if out_dir:
        _write_jsonl(out_dir / "metrics.jsonl", records)
        params, report = last
        num_classes = max(s.label for s in samples) + 1
        meta = meta_for(model_config_for(config, num_classes), config.variant)
        save_checkpoint(out_dir / "checkpoint.ckpt", params, meta)
        print(f"wrote {out_dir / 'metrics.jsonl'} and {out_dir / 'checkpoint.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    params, meta = load_checkpoint(args.checkpoint)
    model_cfg, variant = model_config_from_meta(meta)
    config = build_config(args)
    config = dataclasses.replace(
        config, variant=variant, image_size=model_cfg.backbone.input_size,
        num_classes=model_cfg.num_classes,
    )
    samples = load_dataset(config)
    split = stratified_split(samples, config.train_ratio, config.seed)
    forward = build_variant(variant, params, model_cfg)
    accuracy, confusion = evaluate(forward, list(split.test), model_cfg.num_classes)
    print(json.dumps({"kind": "eval", "variant": variant, "accuracy": accuracy,
                      "test_size": len(split.test)}, sort_keys=True))
    print(f"accuracy: {accuracy * 100:.2f}% on {len(split.test)} test samples")
    _print_confusion(confusion)
    return 0


def cmd_ablate(args) -> int:
    config = build_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = ablate(config)
    summary_records = [
        {"kind": "summary", "variant": variant, "mean": proto.mean,
         "std": proto.std, "formatted": proto.formatted}
        for variant, proto in result.rows
    ]
    run_records = [{"kind": "run", **record} for record in result.records]
    _write_jsonl(out_dir / "metrics.jsonl", run_records + summary_records)
    table = result.to_table()
    (out_dir / "summary.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    print(f"wall seconds: {result.wall_seconds:.1f}")
    print(f"wrote {out_dir / 'metrics.jsonl'} and {out_dir / 'summary.txt'}")
    return 0


def _load_single_image(path, image_size: int) -> SceneSample:
    from PIL import Image

    with Image.open(path) as img:
        rgb = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    chw = np.clip(bilinear_resize(rgb.transpose(2, 0, 1), image_size, image_size), 0.0, 1.0)
    return SceneSample(image=chw, label=-1, id=Path(path).name, source=str(path))


def cmd_visualize(args) -> int:
    params, meta = load_checkpoint(args.checkpoint)
    model_cfg, variant = model_config_from_meta(meta)
    if args.image:
        sample = _load_single_image(args.image, model_cfg.backbone.input_size)
    else:
        config = build_config(args)
        config = dataclasses.replace(
            config, image_size=model_cfg.backbone.input_size,
            num_classes=model_cfg.num_classes,
        )
        samples = load_dataset(config)
        if not 0 <= args.sample_index < len(samples):
            raise ValueError(
                f"--sample-index {args.sample_index} outside dataset of {len(samples)}"
            )
        sample = samples[args.sample_index]
    result = export_heatmaps(params, model_cfg, variant, sample, args.out)
    written = ", ".join(sorted(info["file"] for info in result["maps"].values()))
    print(f"sample {sample.id}: predicted class {result['predicted_class']}")
    print(f"wrote {written} and sidecar.json in {result['out_dir']}")
    return 0


def cmd_gen_data(args) -> int:
    from PIL import Image

    spec = SyntheticSpec(
        num_classes=args.num_classes, image_size=args.image_size,
        samples_per_class=args.samples_per_class, noise_std=args.noise_std,
    )
    samples = generate_synthetic(spec, seed=args.seed)
    out_dir = Path(args.out)
    written = []
    for sample in samples:
        class_dir = out_dir / f"{sample.label}_{MOTIFS[sample.label]}"
        class_dir.mkdir(parents=True, exist_ok=True)
        pixels = np.round(sample.image.transpose(1, 2, 0) * 255.0).astype(np.uint8)
        file_path = class_dir / f"{sample.id}.png"
        Image.fromarray(pixels, mode="RGB").save(file_path)
        written.append(dataclasses.replace(
            sample, source=file_path.relative_to(out_dir).as_posix()
        ))
    write_manifest(written, out_dir / "manifest.jsonl")
    print(f"wrote {len(samples)} images across {spec.num_classes} classes to {out_dir}")
    return 0


def build_parser() -> CliParser:
    parser = CliParser(prog="scenebank",
                       description="Train and inspect representation-bank scene classifiers")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    p_train = sub.add_parser("train", help="train one model (or R protocol runs)")
    _add_config_flags(p_train)
    p_train.add_argument("--out", help="directory for metrics.jsonl and checkpoint.ckpt")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    _add_config_flags(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.set_defaults(func=cmd_eval)

    p_ablate = sub.add_parser("ablate", help="run the full variant ablation matrix")
    _add_config_flags(p_ablate)
    p_ablate.add_argument("--out", default="scenebank-ablation",
                          help="directory for metrics.jsonl and summary.txt")
    p_ablate.set_defaults(func=cmd_ablate)

    p_vis = sub.add_parser("visualize", help="export descriptor heatmaps for one sample")
    _add_config_flags(p_vis)
    p_vis.add_argument("--checkpoint", required=True)
    p_vis.add_argument("--image", help="visualize this image file instead of a dataset sample")
    p_vis.add_argument("--sample-index", dest="sample_index", type=int, default=0)
    p_vis.add_argument("--out", default="heatmaps")
    p_vis.set_defaults(func=cmd_visualize)

    p_gen = sub.add_parser("gen-data", help="render the synthetic dataset to a PNG tree")
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--num-classes", dest="num_classes", type=int, default=4)
    p_gen.add_argument("--samples-per-class", dest="samples_per_class", type=int,
                       default=250)
    p_gen.add_argument("--image-size", dest="image_size", type=int, default=64)
    p_gen.add_argument("--noise-std", dest="noise_std", type=float, default=0.05)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except Exception as exc:
        print(f"scenebank: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
