"""Command-line entry point: ``polypsynth <subcommand> ...``."""
import argparse
import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path

from . import pipeline
from .checkpoint import Checkpoint
from .data import DatasetManifest, load_dataset, load_image, load_mask, save_binary, save_image, split_dataset
from .edges import DEFAULT_SIGMA, extract_edges
from .exceptions import ConfigError, IngestionError, PolypSynthError
from .inpaint import EdgeConnectInpainter, InpaintEvalReport, evaluate_checkpoint
from .masks import MaskGanConfig, ProgressiveMaskGAN, filter_masks, write_masks
from .metrics import ReaderResponse, score_survey, survey_mean
from .segmentation import SegConfig, UNetSegmenter, evaluate_seg


def _config(args):
    if args.config is None:
        return pipeline.parse_config({}, seed=args.seed)
    return pipeline.load_config(args.config, seed=args.seed)


def _seed(cfg, phase):
    return pipeline.derive_seed(cfg.seed, phase)


def _manifest(path, layout="labeled"):
    """A manifest file, or a dataset directory scanned on the fly."""
    p = Path(path)
    if p.is_file():
        return DatasetManifest.read(p)
    return load_dataset(p, layout)


def _require_out(args):
    if args.out is None:
        raise ConfigError("--out", "this command needs an output path")
    return Path(args.out)


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- subcommands --------------------------------------------------------------------


def cmd_gen_masks(args):
    cfg = _config(args)
    out = _require_out(args)
    if args.train:
        gan_cfg = MaskGanConfig(**{**asdict(cfg.mask_gan), "seed": _seed(cfg, "mask_gan")})
        masks = [m.data for m in _manifest(args.train).load_masks(gan_cfg.target_resolution)]
        gan = ProgressiveMaskGAN.from_config(gan_cfg).fit(masks)
        gan.to_checkpoint().save(args.ckpt)
    else:
        gan = ProgressiveMaskGAN.from_checkpoint(Checkpoint.load(args.ckpt, "mask_gan"))
    kept = filter_masks(gan.sample(args.count, _seed(cfg, "mask_sample")), args.min_fill, args.max_fill)
    write_masks(out, [m.data for m in kept])
    print(f"wrote {len(kept)} of {args.count} sampled masks to {out}")


def _mask_pool(directory, resolution):
    return [load_mask(r.image_path, resolution).data for r in load_dataset(directory, "unlabeled")]


def cmd_pretrain(args):
    cfg = _config(args)
    out = _require_out(args)
    ip_cfg = pipeline.InpaintConfig(**{**cfg.inpaint.to_dict(), "seed": _seed(cfg, "pretrain")})
    unlabeled = _manifest(args.unlabeled, "unlabeled")
    model = EdgeConnectInpainter.from_config(ip_cfg)
    model.fit(unlabeled, mask_pool=_mask_pool(args.masks, ip_cfg.resolution))
    model.to_checkpoint().save(out)
    print(f"saved pretrain checkpoint to {out} (iteration {model.iteration_})")


def cmd_finetune(args):
    cfg = _config(args)
    out = _require_out(args)
    ckpt = Checkpoint.load(args.ckpt, "inpaint")
    overrides = {"seed": _seed(cfg, "finetune")}
    if args.iterations is not None:
        overrides["iterations"] = args.iterations
    model = EdgeConnectInpainter.from_checkpoint(ckpt, **overrides)
    model.finetune(_manifest(args.data).require_masks())
    model.to_checkpoint().save(out)
    print(f"saved finetune checkpoint to {out} (iteration {model.iteration_})")


def cmd_extract_edges(args):
    out = _require_out(args)
    records = load_dataset(args.input, "unlabeled")
    for r in records:
        edges = extract_edges(load_image(r.image_path), args.sigma)
        save_binary(out / f"{r.stem}.png", edges.data)
    print(f"wrote {len(records)} edge maps to {out}")


def cmd_inpaint(args):
    out = _require_out(args)
    model = EdgeConnectInpainter.from_checkpoint(Checkpoint.load(args.ckpt, "inpaint"))
    res = model.resolution
    image = load_image(args.image, res).data
    edges = load_mask(args.edges, res).data
    mask = load_mask(args.mask, res).data
    save_image(out, model.inpaint([image], [edges], [mask])[0])
    print(f"wrote {out}")


def cmd_generate_batch(args):
    cfg = _config(args)
    out = _require_out(args)
    ckpt = Checkpoint.load(args.ckpt, "inpaint")
    manifest = pipeline.generate_batch(ckpt, _manifest(args.clean, "unlabeled"), _manifest(args.polyps), args.n,
                                       _seed(cfg, "generate"), out, args.sigma)
    manifest.write(out / "manifest.tsv")
    print(f"wrote {len(manifest)} synthetic records to {out}")


def cmd_split(args):
    out = _require_out(args)
    cfg = _config(args)
    manifest = split_dataset(load_dataset(args.data, "labeled"), args.val_count, _seed(cfg, "split"))
    manifest.write(out)
    print(f"wrote {len(manifest.train())} train / {len(manifest.val())} val records to {out}")


def cmd_train_seg(args):
    cfg = _config(args)
    out = _require_out(args)
    seg_cfg = SegConfig(**{**asdict(cfg.segmentation), "seed": _seed(cfg, "train_seg")})
    data = _manifest(args.data)
    if args.split:
        data = data.subset(args.split)
    X = [x.data for x in data.load_images(seg_cfg.resolution)]
    y = [m.data for m in data.load_masks(seg_cfg.resolution)]
    UNetSegmenter.from_config(seg_cfg).fit(X, y).to_checkpoint().save(out)
    print(f"saved segmentation checkpoint to {out}")


def cmd_eval_seg(args):
    out = _require_out(args)
    val = _manifest(args.val)
    if args.split:
        val = val.subset(args.split)
    metrics = evaluate_seg(Checkpoint.load(args.ckpt, "segmentation"), val, args.threshold)
    report = pipeline.seg_report(metrics, len(val))
    _write_json(out, report)
    print(json.dumps(report, sort_keys=True))


def cmd_eval_inpaint(args):
    out = _require_out(args)
    val = _manifest(args.val)
    if args.split:
        val = val.subset(args.split)
    row = evaluate_checkpoint(Checkpoint.load(args.ckpt, "inpaint"), val)
    report = InpaintEvalReport.read(out) if out.exists() else InpaintEvalReport()
    report.append(row).write(out)
    print(json.dumps(asdict(row), sort_keys=True))


def read_responses(path):
    """Survey CSV with columns image_id, confidence, truth and an optional reader column."""
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"responses file not found: {path}")
    by_reader = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"image_id", "confidence", "truth"} - set(reader.fieldnames or ())
        if missing:
            raise IngestionError(f"{path}: missing columns {sorted(missing)}")
        for line, row in enumerate(reader, 2):
            try:
                confidence = int(row["confidence"])
            except ValueError:
                raise IngestionError(f"{path}:{line}: confidence {row['confidence']!r} is not an integer") from None
            response = ReaderResponse(row["image_id"], confidence, row["truth"].strip().lower())
            by_reader.setdefault(row.get("reader") or "reader", []).append(response)
    return by_reader


def cmd_score_survey(args):
    out = _require_out(args)
    by_reader = read_responses(args.responses)
    scores = {name: score_survey(rs, args.threshold) for name, rs in by_reader.items()}
    report = {"readers": {name: s.to_dict() for name, s in scores.items()},
              "mean": survey_mean(list(scores.values())), "threshold": args.threshold}
    _write_json(out, report)
    print(json.dumps(report["mean"], sort_keys=True))


def cmd_run(args):
    if args.config is None:
        raise ConfigError("--config", "run needs a config file")
    cfg = pipeline.load_config(args.config, seed=args.seed)
    run_dir = pipeline.run_pipeline(cfg, args.out or "runs")
    print(f"run finished: {run_dir}")


# -- parser ---------------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config with per-module sections")
    common.add_argument("--seed", type=int, help="global seed (overrides the config)")
    common.add_argument("--out", help="output file or directory")

    parser = argparse.ArgumentParser(prog="polypsynth", description="Synthetic polyp generation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=fn)
        return p

    p = add("gen-masks", cmd_gen_masks, "sample and filter synthetic polyp masks")
    p.add_argument("--ckpt", required=True, help="mask GAN checkpoint (written when --train is given)")
    p.add_argument("--train", help="labeled dataset dir or manifest to train the mask GAN on first")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--min-fill", type=float, default=0.05)
    p.add_argument("--max-fill", type=float, default=0.70)

    p = add("pretrain", cmd_pretrain, "train the inpainter on unlabeled images with pooled masks")
    p.add_argument("--unlabeled", required=True, help="image directory or manifest")
    p.add_argument("--masks", required=True, help="directory of mask PNGs")

    p = add("finetune", cmd_finetune, "fine-tune an inpainting checkpoint on annotated polyps")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="labeled dataset dir or manifest")
    p.add_argument("--iterations", type=int)

    p = add("extract-edges", cmd_extract_edges, "Canny edge maps for a directory of images")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--sigma", type=float, default=DEFAULT_SIGMA)

    p = add("inpaint", cmd_inpaint, "inpaint one image given merged edges and a mask")
    for flag in ("--ckpt", "--image", "--edges", "--mask"):
        p.add_argument(flag, required=True)

    p = add("generate-batch", cmd_generate_batch, "transplant polyps onto clean images in bulk")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--clean", required=True, help="clean image directory or manifest")
    p.add_argument("--polyps", required=True, help="labeled polyp dataset dir or manifest")
    p.add_argument("--n", type=int, default=800)
    p.add_argument("--sigma", type=float, default=DEFAULT_SIGMA)

    p = add("split", cmd_split, "write a train/val manifest for a labeled dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--val-count", type=int, default=200)

    p = add("train-seg", cmd_train_seg, "train a U-Net segmenter")
    p.add_argument("--data", required=True, help="labeled dataset dir or manifest")
    p.add_argument("--split", choices=("train", "val"), help="use only records of this split")

    p = add("eval-seg", cmd_eval_seg, "evaluate a segmentation checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--split", choices=("train", "val"))
    p.add_argument("--threshold", type=float)

    p = add("eval-inpaint", cmd_eval_inpaint, "SSIM/PSNR/FID of an inpainting checkpoint; appends a report row")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--split", choices=("train", "val"))

    p = add("score-survey", cmd_score_survey, "score reader-study responses")
    p.add_argument("--responses", required=True, help="CSV: image_id, confidence, truth[, reader]")
    p.add_argument("--threshold", type=int, default=6)

    add("run", cmd_run, "run the full pipeline from a config")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except PolypSynthError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
