"""End-to-end orchestration: config parsing, seed fan-out, batch generation and the full run."""
import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import yaml

from .checkpoint import Checkpoint, config_hash
from .data import (
    DatasetManifest,
    Record,
    load_dataset,
    load_image,
    load_mask,
    save_binary,
    save_image,
    split_dataset,
)
from .edges import DEFAULT_SIGMA, extract_edges, extract_polyp_edges, merge_edges
from .exceptions import ConfigError, DependencyError, InsufficientDataError, InvalidArgumentError
from .inpaint import EdgeConnectInpainter, InpaintConfig, InpaintEvalReport, evaluate_checkpoint
from .inpaint.engine import LossWeights
from .masks import MaskGanConfig, ProgressiveMaskGAN, filter_masks, write_masks
from .metrics import iou_suite
from .segmentation import SegConfig, UNetSegmenter, build_mixed_dataset

PHASES = ("gen_masks", "pretrain", "finetune", "generate", "train_seg", "eval_seg", "eval_inpaint")


def derive_seed(seed, phase):
    """Per-phase seed: first 4 bytes of sha256("<seed>:<phase>") as a big-endian integer."""
    digest = hashlib.sha256(f"{seed}:{phase}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


# -- configuration -------------------------------------------------------------------


@dataclass(frozen=True)
class DataSection:
    labeled: str = None
    unlabeled: str = None
    clean: str = None
    val_count: int = 200


@dataclass(frozen=True)
class MaskSection:
    count: int = 1000
    min_fill: float = 0.05
    max_fill: float = 0.70


@dataclass(frozen=True)
class GenerateSection:
    n: int = 800
    sigma: float = DEFAULT_SIGMA


@dataclass(frozen=True)
class InputsSection:
    """Artifacts from earlier runs that stand in for disabled phases."""
    masks: str = None
    pretrain_checkpoint: str = None
    inpaint_checkpoint: str = None
    synthetic_manifest: str = None
    seg_checkpoint: str = None


_SECTIONS = {
    "data": DataSection,
    "masks": MaskSection,
    "mask_gan": MaskGanConfig,
    "inpaint": InpaintConfig,
    "generate": GenerateSection,
    "segmentation": SegConfig,
    "inputs": InputsSection,
}
_TOP_LEVEL = {"seed", "phases", "n_synth", *_SECTIONS}


@dataclass(frozen=True)
class PipelineConfig:
    seed: int
    phases: tuple
    n_synth: int
    data: DataSection
    masks: MaskSection
    mask_gan: MaskGanConfig
    inpaint: InpaintConfig
    generate: GenerateSection
    segmentation: SegConfig
    inputs: InputsSection

    def to_dict(self):
        out = {"seed": self.seed, "phases": list(self.phases), "n_synth": self.n_synth}
        for name in _SECTIONS:
            section = getattr(self, name)
            out[name] = section.to_dict() if hasattr(section, "to_dict") else asdict(section)
        return out

    @property
    def hash(self):
        return config_hash(self.to_dict())


def _section(name, cls, raw, base):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(name, "must be a mapping")
    allowed = {f.name for f in fields(cls)}
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"{name}.{key}", f"unknown key (allowed: {', '.join(sorted(allowed))})")
    if name == "inpaint" and isinstance(raw.get("loss_weights"), dict):
        lw_allowed = {f.name for f in fields(LossWeights)}
        for key in raw["loss_weights"]:
            if key not in lw_allowed:
                raise ConfigError(f"inpaint.loss_weights.{key}", "unknown key")
    values = dict(raw)
    if name in ("data", "inputs"):
        for key, v in values.items():
            if key != "val_count" and v is not None:
                p = Path(v)
                p = p if p.is_absolute() else (base / p)
                if not p.exists():
                    raise ConfigError(f"{name}.{key}", f"path does not exist: {p}")
                values[key] = str(p.resolve())
    try:
        return cls(**values)
    except (InvalidArgumentError, TypeError) as exc:
        raise ConfigError(name, str(exc)) from None


def parse_config(raw, base_dir=".", seed=None):
    """Validate a config mapping; every unknown key is an error.

    Relative paths resolve against ``base_dir``. ``seed`` overrides the file.
    """
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    for key in raw:
        if key not in _TOP_LEVEL:
            raise ConfigError(key, f"unknown key (allowed: {', '.join(sorted(_TOP_LEVEL))})")
    base = Path(base_dir)
    seed = raw.get("seed", 0) if seed is None else seed
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed", f"must be a non-negative integer, got {seed!r}")
    phases = raw.get("phases", list(PHASES[:-1]))
    if not isinstance(phases, list):
        raise ConfigError("phases", "must be a list")
    for p in phases:
        if p not in PHASES:
            raise ConfigError("phases", f"unknown phase {p!r} (known: {', '.join(PHASES)})")
    n_synth = raw.get("n_synth", 800)
    if not isinstance(n_synth, int) or n_synth < 0:
        raise ConfigError("n_synth", f"must be a non-negative integer, got {n_synth!r}")
    sections = {name: _section(name, cls, raw.get(name), base) for name, cls in _SECTIONS.items()}
    ordered = tuple(p for p in PHASES if p in phases)
    return PipelineConfig(seed=seed, phases=ordered, n_synth=n_synth, **sections)


def load_config(path, seed=None):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(str(path), "config file not found")
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"not valid YAML: {exc}") from None
    return parse_config(raw, path.parent, seed)


# -- Step 3 + Step 4 in bulk ------------------------------------------------------------


def generate_batch(ckpt, clean: DatasetManifest, polyp_source: DatasetManifest, n, seed, out_dir,
                   sigma=DEFAULT_SIGMA):
    """Transplant ``n`` polyps onto clean images; returns the synthetic manifest.

    Clean images and (polyp, mask) pairs are drawn with replacement. Each
    output keeps its source polyp mask as ground truth and records the pairing
    in the manifest ``source`` column.
    """
    if n < 0:
        raise InvalidArgumentError(f"n must be >= 0, got {n}")
    if len(clean) == 0 or len(polyp_source) == 0:
        raise InsufficientDataError("generate_batch needs at least one clean image and one polyp source")
    polyp_source.require_masks()
    model = ckpt if isinstance(ckpt, EdgeConnectInpainter) else EdgeConnectInpainter.from_checkpoint(ckpt)
    res = model.resolution
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    width = max(4, len(str(n)))
    records = []
    for i in range(n):
        c = clean[int(rng.integers(len(clean)))]
        p = polyp_source[int(rng.integers(len(polyp_source)))]
        clean_img = load_image(c.image_path, res).data
        polyp_img = load_image(p.image_path, res).data
        mask = load_mask(p.mask_path, res).data
        merged = merge_edges(
            extract_edges(clean_img, sigma).data,
            extract_polyp_edges(polyp_img, mask, sigma).data,
            mask,
        ).data
        out = model.inpaint([clean_img], [merged], [mask])[0]
        name = f"syn_{i:0{width}d}.png"
        img_path = out_dir / "images" / name
        mask_path = out_dir / "masks" / name
        save_image(img_path, out)
        save_binary(mask_path, mask)
        records.append(Record(str(img_path), str(mask_path), "synthetic", None,
                              source=f"clean={c.stem};polyp={p.stem}"))
    return DatasetManifest(tuple(records), seed)


# -- full run ------------------------------------------------------------------------


def _write_json(path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def seg_report(metrics, n):
    return {**metrics.to_dict(), "count": int(n)}


def run_pipeline(config, out_root, log=print):
    """Run the enabled phases in order; returns the run directory.

    Artifacts go to ``<out_root>/run-s<seed>-<hash12>``; an existing run
    directory is never reused.
    """
    cfg = config if isinstance(config, PipelineConfig) else load_config(config)
    run_dir = Path(out_root) / f"run-s{cfg.seed}-{cfg.hash[:12]}"
    if run_dir.exists():
        raise InvalidArgumentError(f"run directory already exists: {run_dir}")
    run_dir.mkdir(parents=True)
    (run_dir / "config.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    enabled = set(cfg.phases)

    def need(value, what, phase):
        if value is None:
            raise DependencyError(f"phase {phase!r} needs {what}; enable the producing phase or set it under inputs")
        return value

    manifest = None
    if cfg.data.labeled:
        manifest = split_dataset(load_dataset(cfg.data.labeled, "labeled"), cfg.data.val_count,
                                 derive_seed(cfg.seed, "split"))
        manifest.write(run_dir / "manifest.tsv")

    def labeled(phase):
        return need(manifest, "data.labeled", phase)

    mask_pool = None
    if cfg.inputs.masks:
        mask_pool = [load_mask(r.image_path).data for r in load_dataset(cfg.inputs.masks, "unlabeled")]
    if "gen_masks" in enabled:
        log("gen-masks")
        gan_cfg = MaskGanConfig(**{**asdict(cfg.mask_gan), "seed": derive_seed(cfg.seed, "mask_gan")})
        train_masks = [m.data for m in labeled("gen_masks").train().load_masks(gan_cfg.target_resolution)]
        gan = ProgressiveMaskGAN.from_config(gan_cfg).fit(train_masks)
        gan.to_checkpoint().save(run_dir / "checkpoints" / "mask_gan.pt")
        kept = filter_masks(gan.sample(cfg.masks.count, derive_seed(cfg.seed, "mask_sample")),
                            cfg.masks.min_fill, cfg.masks.max_fill)
        mask_pool = [m.data for m in kept]
        write_masks(run_dir / "masks", mask_pool)
        log(f"  kept {len(mask_pool)} of {cfg.masks.count} masks")

    pre_ckpt = Checkpoint.load(cfg.inputs.pretrain_checkpoint, "inpaint") if cfg.inputs.pretrain_checkpoint else None
    if "pretrain" in enabled:
        log("pretrain")
        unlabeled = load_dataset(need(cfg.data.unlabeled, "data.unlabeled", "pretrain"), "unlabeled")
        pool = need(mask_pool, "a mask pool", "pretrain")
        ip_cfg = InpaintConfig(**{**cfg.inpaint.to_dict(), "seed": derive_seed(cfg.seed, "pretrain")})
        model = EdgeConnectInpainter.from_config(ip_cfg).fit(unlabeled, mask_pool=pool)
        pre_ckpt = model.to_checkpoint()
        pre_ckpt.save(run_dir / "checkpoints" / "inpaint_pretrain.pt")

    ip_ckpt = Checkpoint.load(cfg.inputs.inpaint_checkpoint, "inpaint") if cfg.inputs.inpaint_checkpoint else None
    if "finetune" in enabled:
        log("finetune")
        base = need(pre_ckpt, "a pretrain checkpoint", "finetune")
        model = EdgeConnectInpainter.from_checkpoint(base, seed=derive_seed(cfg.seed, "finetune"))
        ip_ckpt = model.finetune(labeled("finetune").train()).to_checkpoint()
        ip_ckpt.save(run_dir / "checkpoints" / "inpaint_finetune.pt")

    synthetic = DatasetManifest.read(cfg.inputs.synthetic_manifest) if cfg.inputs.synthetic_manifest else None
    if "generate" in enabled:
        log("generate")
        clean = load_dataset(need(cfg.data.clean, "data.clean", "generate"), "unlabeled")
        synthetic = generate_batch(need(ip_ckpt, "a fine-tuned inpainting checkpoint", "generate"), clean,
                                   labeled("generate").train(), cfg.generate.n, derive_seed(cfg.seed, "generate"),
                                   run_dir / "synthetic", cfg.generate.sigma)
        synthetic.write(run_dir / "synthetic" / "manifest.tsv")

    seg_ckpt = Checkpoint.load(cfg.inputs.seg_checkpoint, "segmentation") if cfg.inputs.seg_checkpoint else None
    if "train_seg" in enabled:
        log("train-seg")
        real = labeled("train_seg").train()
        synth = need(synthetic, "a synthetic manifest", "train_seg") if cfg.n_synth else DatasetManifest()
        mixed = build_mixed_dataset(real, synth, cfg.n_synth, derive_seed(cfg.seed, "mix"))
        mixed.write(run_dir / "seg_train.tsv")
        seg_cfg = SegConfig(**{**asdict(cfg.segmentation), "seed": derive_seed(cfg.seed, "train_seg")})
        X = [x.data for x in mixed.load_images(seg_cfg.resolution)]
        y = [m.data for m in mixed.load_masks(seg_cfg.resolution)]
        seg_ckpt = UNetSegmenter.from_config(seg_cfg).fit(X, y).to_checkpoint()
        seg_ckpt.save(run_dir / "checkpoints" / "unet.pt")

    if "eval_seg" in enabled:
        log("eval-seg")
        val = labeled("eval_seg").val()
        model = UNetSegmenter.from_checkpoint(need(seg_ckpt, "a segmentation checkpoint", "eval_seg"))
        X = [x.data for x in val.load_images(model.resolution)]
        y = [m.data for m in val.load_masks(model.resolution)]
        metrics = iou_suite(list(model.predict(X)), y)
        _write_json(run_dir / "reports" / "seg_metrics.json", seg_report(metrics, len(val)))
        log("  " + ", ".join(f"{k}={v:.4f}" for k, v in metrics.to_dict().items()))

    if "eval_inpaint" in enabled:
        log("eval-inpaint")
        ckpt = need(ip_ckpt or pre_ckpt, "an inpainting checkpoint", "eval_inpaint")
        row = evaluate_checkpoint(ckpt, labeled("eval_inpaint").val())
        InpaintEvalReport().append(row).write(run_dir / "reports" / "inpaint_eval.json")
    return run_dir
