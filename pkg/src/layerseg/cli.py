"""Command-line surface: synth / train / infer / eval."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from layerseg import config as cfgmod
from layerseg.data import (
    ImageSample,
    crop_regions,
    load_dataset,
    load_image,
    save_mask,
)
from layerseg.errors import TrainingError, ValidationError

log = logging.getLogger("layerseg")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="layerseg",
        description="Self-supervised layered scene-text segmentation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    p_synth.add_argument("--n", type=int, required=True)
    p_synth.add_argument("--seed", type=int, required=True)
    p_synth.add_argument("--out", type=Path, required=True)

    p_train = sub.add_parser("train", help="train a model")
    p_train.add_argument("--data", type=Path, required=True, help="manifest path")
    p_train.add_argument("--config", type=Path, help="flat key=value config file")
    p_train.add_argument("--out", type=Path, required=True)
    p_train.add_argument("--preset", choices=sorted(cfgmod.PRESETS), default="desk")
    p_train.add_argument(
        "--ablate",
        action="append",
        choices=["rqn", "sqn", "rep"],
        default=[],
        help="disable a component (repeatable)",
    )
    p_train.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="config override (repeatable)",
    )
    p_train.add_argument("--resume", type=Path, help="checkpoint to resume from")

    p_infer = sub.add_parser("infer", help="segment one image")
    p_infer.add_argument("--ckpt", type=Path, required=True)
    p_infer.add_argument("--image", type=Path, required=True)
    p_infer.add_argument(
        "--polygons", type=Path, required=True, help="JSON list of [x,y] polygons"
    )
    p_infer.add_argument("--out", type=Path, required=True)
    p_infer.add_argument("--threshold", type=float, default=0.5)
    p_infer.add_argument("--postprocess", default="identity")

    p_eval = sub.add_parser("eval", help="score predicted masks against a manifest")
    p_eval.add_argument("--pred", type=Path, required=True, help="directory of masks")
    p_eval.add_argument("--gt", type=Path, required=True, help="manifest with masks")
    p_eval.add_argument("--report", type=Path, required=True)
    p_eval.add_argument(
        "--per-image",
        action="store_true",
        help="macro-average scores instead of pooling pixel counts",
    )
    return parser


def _resolve_train_config(args) -> cfgmod.FullConfig:
    config = cfgmod.PRESETS[args.preset]()
    if args.config:
        config = cfgmod.apply_overrides(config, cfgmod.load_config_file(args.config))
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ValidationError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if overrides:
        config = cfgmod.apply_overrides(config, overrides)
    ablate_map = {
        "rqn": ("rqm.enable_rqn", "false"),
        "sqn": ("rqm.enable_sqn", "false"),
        "rep": ("train.enable_rep", "false"),
    }
    ablations = {ablate_map[a][0]: ablate_map[a][1] for a in args.ablate}
    if ablations:
        config = cfgmod.apply_overrides(config, ablations)
    return config


def cmd_synth(args) -> int:
    from layerseg.synth import synth_generate

    manifest = synth_generate(args.n, args.seed, args.out)
    print(f"wrote {args.n} images; manifest: {manifest}")
    return 0


def cmd_train(args) -> int:
    from layerseg.trainer import Trainer

    config = _resolve_train_config(args)
    samples = load_dataset(args.data)
    crop_size = (config.model.crop_h, config.model.crop_w)
    crops = []
    for sample in samples:
        crops.extend(crop_regions(sample, crop_size=crop_size))
    print(f"training on {len(crops)} crops from {len(samples)} images")
    trainer = Trainer(config, crops, args.out)
    cfgmod.save_config_file(Path(args.out) / "config.txt", config)
    if args.resume:
        trainer.load_checkpoint(args.resume)
        print(f"resumed from {args.resume} at step {trainer.step}")
    final = trainer.train()
    print(f"final checkpoint: {final}")
    return 0


def cmd_infer(args) -> int:
    from layerseg.inference import infer
    from layerseg.trainer import load_model_from_checkpoint

    model, config = load_model_from_checkpoint(args.ckpt)
    print(
        "loaded checkpoint "
        f"(rqn={config.model.enable_rqn}, sqn={config.model.enable_sqn}, "
        f"rep={config.train.enable_rep})"
    )
    image = load_image(args.image)
    polygons_raw = json.loads(Path(args.polygons).read_text())
    polygons = [np.asarray(p, dtype=np.float64) for p in polygons_raw]
    for p in polygons:
        if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] < 3:
            raise ValidationError("each polygon needs >=3 [x, y] points")
    sample = ImageSample(image=image, polygons=polygons, sample_id=args.image.stem)
    results, full_mask = infer(
        model,
        sample,
        crop_size=(config.model.crop_h, config.model.crop_w),
        threshold=args.threshold,
        postprocess=args.postprocess,
        provenance=str(args.ckpt),
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_mask(out_dir / f"{args.image.stem}.png", full_mask)
    for i, res in enumerate(results):
        save_mask(out_dir / f"{args.image.stem}_region{i}.png", res.binary_mask)
    print(f"wrote stitched mask and {len(results)} region mask(s) to {out_dir}")
    return 0


def cmd_eval(args) -> int:
    from layerseg.data import load_mask
    from layerseg.metrics import f1, fg_iou, pooled_scores
    from layerseg.plots import plot_eval_report

    samples = load_dataset(args.gt)
    rows = []
    pairs = []
    for sample in samples:
        if sample.gt_mask is None:
            raise ValidationError(f"manifest record {sample.sample_id} has no mask")
        stem = Path(sample.sample_id).stem
        pred_path = args.pred / f"{stem}.png"
        if not pred_path.is_file():
            raise ValidationError(f"missing prediction: {pred_path}")
        pred = load_mask(pred_path)
        rows.append((stem, fg_iou(pred, sample.gt_mask), f1(pred, sample.gt_mask)))
        pairs.append((pred, sample.gt_mask))
    pooled_iou, pooled_f1 = pooled_scores(pairs)
    macro_iou = float(np.mean([r[1] for r in rows]))
    macro_f1 = float(np.mean([r[2] for r in rows]))

    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["image\tfgIoU\tF1"]
    lines += [f"{name}\t{iou:.4f}\t{score:.4f}" for name, iou, score in rows]
    lines.append(f"POOLED\t{pooled_iou:.4f}\t{pooled_f1:.4f}")
    lines.append(f"MACRO\t{macro_iou:.4f}\t{macro_f1:.4f}")
    report_path.write_text("\n".join(lines) + "\n")
    plot_eval_report(
        [r[0] for r in rows],
        [r[1] for r in rows],
        [r[2] for r in rows],
        pooled_iou,
        pooled_f1,
        report_path.with_suffix(".png"),
    )
    if args.per_image:
        print(f"macro fgIoU={macro_iou:.4f} F1={macro_f1:.4f}")
    else:
        print(f"pooled fgIoU={pooled_iou:.4f} F1={pooled_f1:.4f}")
    print(f"report: {report_path}")
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, FloatingPointError, RuntimeError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
