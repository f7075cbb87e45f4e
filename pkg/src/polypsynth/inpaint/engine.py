"""Two-stage edge-conditioned inpainting: edge completion, then RGB synthesis."""
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .._torch import check_finite, fields_to_tensor, images_to_tensor, seeded, tensor_to_images
from ..checkpoint import Checkpoint, snapshot
from ..data import (
    DEFAULT_RESOLUTION,
    LUMA_WEIGHTS,
    BinaryMask,
    DatasetManifest,
    load_image,
    load_mask,
    pair_random_mask,
    quantize,
)
from ..edges import DEFAULT_SIGMA, extract_edges
from ..exceptions import (
    InsufficientDataError,
    InvalidArgumentError,
    MissingAnnotationError,
    ShapeError,
)
from ..features import FrozenFeatureExtractor
from ..metrics import extract_features, fid, psnr, ssim
from ..validation import check_binary, check_image
from . import losses
from .networks import EdgeGenerator, InpaintGenerator, PatchDiscriminator

PHASES = ("pretrain", "finetune")
# parameters that fix tensor shapes; a checkpoint only loads into a matching model
ARCHITECTURE = ("resolution", "width", "n_downsample", "n_res_blocks")
PROBE_SIZE = 16


@dataclass(frozen=True)
class LossWeights:
    adversarial: float = 0.1
    l1: float = 1.0
    perceptual: float = 0.1
    style: float = 250.0
    feature_matching: float = 10.0

    def __post_init__(self):
        values = asdict(self)
        if any(v < 0 for v in values.values()):
            raise InvalidArgumentError(f"loss weights must be non-negative: {values}")
        if not any(v > 0 for v in values.values()):
            raise InvalidArgumentError("at least one loss weight must be positive")

    @classmethod
    def coerce(cls, value):
        if value is None:
            return cls()
        if isinstance(value, cls):
            return value
        return cls(**dict(value))


@dataclass(frozen=True)
class InpaintConfig:
    resolution: int = DEFAULT_RESOLUTION
    iterations: int = 2000
    batch_size: int = 8
    learning_rate: float = 1e-4
    loss_weights: LossWeights = field(default_factory=LossWeights)
    eval_every: int = 500
    seed: int = 0
    sigma: float = DEFAULT_SIGMA
    width: int = 32
    n_downsample: int = 2
    n_res_blocks: int = 4
    d2g_lr: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "loss_weights", LossWeights.coerce(self.loss_weights))
        for name in ("resolution", "batch_size", "eval_every", "width"):
            if getattr(self, name) <= 0:
                raise InvalidArgumentError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("iterations", "n_downsample", "n_res_blocks"):
            if getattr(self, name) < 0:
                raise InvalidArgumentError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not self.learning_rate > 0 or not self.sigma > 0 or not self.d2g_lr > 0:
            raise InvalidArgumentError("learning_rate, sigma and d2g_lr must be positive")
        if self.resolution % (2 ** self.n_downsample):
            raise InvalidArgumentError(
                f"resolution {self.resolution} is not divisible by 2**n_downsample"
            )

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["loss_weights"] = asdict(self.loss_weights)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class _Samples:
    """Training items with their full-image edge maps.

    Arrays are held in memory with edges computed once; manifests are read
    lazily so large unlabeled pools need not fit in memory.
    """

    def __init__(self, source, resolution, sigma, masks=None):
        self.resolution = resolution
        self.sigma = sigma
        if isinstance(source, DatasetManifest):
            self.records = list(source)
            self.images = None
            self.masks = None
            if masks == "manifest":
                for r in self.records:
                    if r.mask_path is None:
                        raise MissingAnnotationError(r.stem)
        else:
            self.records = None
            self.images = [check_image(x) for x in source]
            for x in self.images:
                if x.shape[:2] != (resolution, resolution):
                    raise ShapeError(f"image size {x.shape[:2]} does not match resolution {resolution}")
            self._edges = [extract_edges(x, sigma).data for x in self.images]
            self.masks = None if masks is None else [check_binary(m) for m in masks]
            if self.masks is not None and len(self.masks) != len(self.images):
                raise ShapeError(f"{len(self.masks)} masks for {len(self.images)} images")

    def __len__(self):
        return len(self.records) if self.records is not None else len(self.images)

    def item(self, i):
        """(image, full-image edges, own mask or None)."""
        if self.records is not None:
            r = self.records[i]
            img = load_image(r.image_path, self.resolution).data
            mask = load_mask(r.mask_path, self.resolution).data if r.mask_path else None
            return img, extract_edges(img, self.sigma).data, mask
        mask = self.masks[i] if self.masks is not None else None
        return self.images[i], self._edges[i], mask


def composite(generated, original, mask):
    """Quantize ``generated`` to 8 bits and paste it into ``original`` where ``mask`` is 1."""
    return np.where(np.asarray(mask)[..., None] == 1, quantize(generated), original)


class EdgeConnectInpainter(BaseEstimator):
    """Edge-conditioned two-stage inpainter.

    Stage A completes the Canny edge map inside the hole from the holed
    grayscale image, holed edges and mask. Stage B paints RGB content from
    the holed image, the completed edges and the mask. ``fit`` pretrains on
    images with holes drawn from a mask pool; ``finetune`` continues training
    with each image's own mask.

    Parameters
    ----------
    resolution : int
        Square working size; every input must already match it.
    iterations : int
        Optimisation steps per call to ``fit`` / ``finetune``.
    loss_weights : LossWeights or dict, optional
        Stage B uses all five terms; stage A uses the adversarial and
        feature-matching terms only.
    eval_every : int
        Record the hole L1 on a fixed probe batch every this many steps
        (``history_``).
    """

    def __init__(self, resolution=DEFAULT_RESOLUTION, iterations=2000, batch_size=8, learning_rate=1e-4,
                 loss_weights=None, eval_every=500, seed=0, sigma=DEFAULT_SIGMA, width=32,
                 n_downsample=2, n_res_blocks=4, d2g_lr=0.1):
        self.resolution = resolution
        self.iterations = iterations
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.loss_weights = loss_weights
        self.eval_every = eval_every
        self.seed = seed
        self.sigma = sigma
        self.width = width
        self.n_downsample = n_downsample
        self.n_res_blocks = n_res_blocks
        self.d2g_lr = d2g_lr

    @classmethod
    def from_config(cls, config: InpaintConfig):
        return cls(**config.to_dict())

    @property
    def config(self):
        return InpaintConfig(**self.get_params())

    # -- construction / persistence -------------------------------------------------

    def _build(self):
        cfg = self.config
        arch = dict(width=cfg.width, n_downsample=cfg.n_downsample, n_res_blocks=cfg.n_res_blocks)
        with seeded(cfg.seed):
            self.edge_generator_ = EdgeGenerator(**arch)
            self.inpaint_generator_ = InpaintGenerator(**arch)
            self.edge_discriminator_ = PatchDiscriminator(2, cfg.width)
            self.inpaint_discriminator_ = PatchDiscriminator(3, cfg.width)
        self.extractor_ = FrozenFeatureExtractor()
        self.iteration_ = 0
        self.phase_ = "pretrain"
        self.history_ = []
        return self

    def initialize(self):
        """Untrained networks; the resulting checkpoint is at iteration 0."""
        return self._build()

    def _modules(self):
        return {
            "edge_generator": self.edge_generator_,
            "inpaint_generator": self.inpaint_generator_,
            "edge_discriminator": self.edge_discriminator_,
            "inpaint_discriminator": self.inpaint_discriminator_,
        }

    def to_checkpoint(self):
        check_is_fitted(self, "inpaint_generator_")
        return Checkpoint(
            kind="inpaint",
            state={k: snapshot(m) for k, m in self._modules().items()},
            config=self.config.to_dict(),
            iteration=self.iteration_,
            meta={"phase": self.phase_},
        )

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, **overrides):
        """Rebuild a model from ``ckpt``; ``overrides`` may change training settings only."""
        if ckpt.kind != "inpaint":
            raise InvalidArgumentError(f"expected an inpaint checkpoint, got {ckpt.kind!r}")
        clashes = [k for k in ARCHITECTURE if k in overrides and overrides[k] != ckpt.config[k]]
        if clashes:
            raise InvalidArgumentError(f"cannot change architecture parameters {clashes} of a checkpoint")
        model = cls(**{**ckpt.config, **overrides})._build()
        for name, module in model._modules().items():
            module.load_state_dict(ckpt.state[name])
        model.iteration_ = ckpt.iteration
        model.phase_ = ckpt.phase
        return model

    # -- training ---------------------------------------------------------------------------

    def fit(self, X, y=None, *, mask_pool):
        """Pretrain from scratch on ``X`` with holes drawn from ``mask_pool``."""
        if len(X) == 0:
            raise InsufficientDataError("pretraining needs at least one image")
        if mask_pool is None or len(mask_pool) == 0:
            raise InsufficientDataError("pretraining needs a non-empty mask pool")
        self._build()
        pool = [m if isinstance(m, BinaryMask) else BinaryMask(m) for m in mask_pool]
        samples = _Samples(X, self.resolution, self.sigma)
        self._train(samples, pool, "pretrain")
        return self

    def finetune(self, X, masks=None):
        """Continue training where every image is holed by its own annotated mask.

        ``X`` is an image collection with ``masks`` alongside, or a labeled
        :class:`DatasetManifest`.
        """
        check_is_fitted(self, "inpaint_generator_")
        if len(X) == 0:
            raise InsufficientDataError("fine-tuning needs at least one image")
        if isinstance(X, DatasetManifest):
            samples = _Samples(X, self.resolution, self.sigma, masks="manifest")
        else:
            if masks is None:
                raise MissingAnnotationError("<array input>", "fine-tuning requires a mask for every image")
            samples = _Samples(X, self.resolution, self.sigma, masks=masks)
        self._train(samples, None, "finetune")
        return self

    def _probe(self, samples, pool, rng_seed):
        n = min(PROBE_SIZE, len(samples))
        rng = np.random.default_rng(rng_seed)
        imgs, edges, masks = [], [], []
        for i in range(n):
            img, edge, own = samples.item(i)
            mask = own if pool is None else pair_random_mask(img, pool, rng).mask.data
            imgs.append(img)
            edges.append(edge)
            masks.append(mask)
        return (images_to_tensor(imgs), fields_to_tensor(edges), fields_to_tensor(masks))

    def _batch(self, samples, pool, rng):
        idx = rng.integers(len(samples), size=self.batch_size)
        imgs, edges, masks = [], [], []
        for i in idx:
            img, edge, own = samples.item(int(i))
            if pool is not None:
                own = pair_random_mask(img, pool, rng).mask.data
            imgs.append(img)
            edges.append(edge)
            masks.append(own)
        return images_to_tensor(imgs), fields_to_tensor(edges), fields_to_tensor(masks)

    def _train(self, samples, pool, phase):
        cfg = self.config
        w = cfg.loss_weights
        if phase == "pretrain" and self.phase_ == "finetune":
            raise InvalidArgumentError("cannot return to pretraining after fine-tuning")
        self.phase_ = phase
        if cfg.iterations == 0:
            return
        use_gan = w.adversarial > 0 or w.feature_matching > 0
        EG, IG = self.edge_generator_, self.inpaint_generator_
        ED, ID = self.edge_discriminator_, self.inpaint_discriminator_
        betas = (0.5, 0.999)
        opt_eg = torch.optim.Adam(EG.parameters(), lr=cfg.learning_rate, betas=betas)
        opt_ig = torch.optim.Adam(IG.parameters(), lr=cfg.learning_rate, betas=betas)
        opt_ed = torch.optim.Adam(ED.parameters(), lr=cfg.learning_rate * cfg.d2g_lr, betas=betas)
        opt_id = torch.optim.Adam(ID.parameters(), lr=cfg.learning_rate * cfg.d2g_lr, betas=betas)
        luma = torch.tensor(LUMA_WEIGHTS, dtype=torch.float32).view(1, 3, 1, 1)
        rng = np.random.default_rng([cfg.seed, self.iteration_])
        probe = self._probe(samples, pool, [cfg.seed, self.iteration_, 1])
        for m in (EG, IG, ED, ID):
            m.train()

        with seeded(cfg.seed + self.iteration_):
            for _ in range(cfg.iterations):
                imgs, edges, masks = self._batch(samples, pool, rng)
                gray = (imgs * luma).sum(1, keepdim=True)
                keep = 1 - masks
                values = {}

                # stage A: edge completion
                pred_e = EG(torch.cat([gray * keep, edges * keep, masks], 1))
                loss_a = torch.zeros(())
                if use_gan:
                    real_pair = torch.cat([edges, gray], 1)
                    d_real, _ = ED(real_pair)
                    d_fake, _ = ED(torch.cat([pred_e.detach(), gray], 1))
                    loss_ed = losses.discriminator_loss(d_real, d_fake)
                    opt_ed.zero_grad(set_to_none=True)
                    loss_ed.backward()
                    opt_ed.step()
                    g_fake, fake_feats = ED(torch.cat([pred_e, gray], 1))
                    with torch.no_grad():
                        _, real_feats = ED(real_pair)
                    loss_a = (w.adversarial * losses.generator_adversarial_loss(g_fake)
                              + w.feature_matching * losses.feature_matching_loss(fake_feats, real_feats))
                    opt_eg.zero_grad(set_to_none=True)
                    loss_a.backward()
                    opt_eg.step()
                    values.update(edge_d=loss_ed, edge_g=loss_a)

                # stage B: RGB inpainting on the completed edges
                comp_e = edges * keep + pred_e.detach() * masks
                out = IG(torch.cat([imgs * keep, comp_e, masks], 1))
                terms = {}
                if use_gan:
                    d_real, _ = ID(imgs)
                    d_fake, _ = ID(out.detach())
                    loss_id = losses.discriminator_loss(d_real, d_fake)
                    opt_id.zero_grad(set_to_none=True)
                    loss_id.backward()
                    opt_id.step()
                    values["inpaint_d"] = loss_id
                    g_fake, fake_feats = ID(out)
                    with torch.no_grad():
                        _, real_feats = ID(imgs)
                    terms["adversarial"] = losses.generator_adversarial_loss(g_fake)
                    terms["feature_matching"] = losses.feature_matching_loss(fake_feats, real_feats)
                if w.l1 > 0:
                    terms["l1"] = losses.hole_l1_loss(out, imgs, masks)
                if w.perceptual > 0 or w.style > 0:
                    with torch.no_grad():
                        target_feats = self.extractor_(imgs)
                    if w.perceptual > 0:
                        terms["perceptual"] = losses.perceptual_loss(self.extractor_(out), target_feats)
                    if w.style > 0:
                        merged = out * masks + imgs * keep
                        terms["style"] = losses.style_loss(self.extractor_(merged), target_feats)
                loss_b = sum(getattr(w, k) * v for k, v in terms.items())
                opt_ig.zero_grad(set_to_none=True)
                loss_b.backward()
                opt_ig.step()

                self.iteration_ += 1
                values.update(inpaint_g=loss_b, **terms)
                values = check_finite(values, self.iteration_, stage=phase)
                entry = {"iteration": self.iteration_, "phase": phase, **values}
                if self.iteration_ % cfg.eval_every == 0:
                    entry["hole_l1"] = self._probe_l1(*probe)
                    for m in (EG, IG, ED, ID):
                        m.train()
                self.history_.append(entry)

    def _probe_l1(self, imgs, edges, masks):
        with torch.no_grad():
            out = self._forward(imgs, edges, masks)
            return float(losses.masked_l1(out, imgs, masks))

    # -- inference ----------------------------------------------------------------------------

    def _forward(self, imgs, edges, masks, edge_condition=None):
        """Raw stage-B output; stage A runs unless ``edge_condition`` is supplied."""
        self.edge_generator_.eval()
        self.inpaint_generator_.eval()
        keep = 1 - masks
        if edge_condition is None:
            luma = torch.tensor(LUMA_WEIGHTS, dtype=imgs.dtype).view(1, 3, 1, 1)
            gray = (imgs * luma).sum(1, keepdim=True)
            pred_e = self.edge_generator_(torch.cat([gray * keep, edges * keep, masks], 1))
            edge_condition = edges * keep + pred_e * masks
        return self.inpaint_generator_(torch.cat([imgs * keep, edge_condition, masks], 1))

    def _check_inputs(self, images, masks, edges=None):
        images = [check_image(x) for x in images]
        masks = [check_binary(m) for m in masks]
        if len(images) != len(masks):
            raise ShapeError(f"{len(images)} images but {len(masks)} masks")
        expected = (self.resolution, self.resolution)
        for x, m in zip(images, masks):
            if x.shape[:2] != expected or m.shape != expected:
                raise ShapeError(
                    f"inputs must be {expected} to match the model resolution, "
                    f"got image {x.shape[:2]} and mask {m.shape}"
                )
        if edges is not None:
            edges = [check_binary(e, "edges") for e in edges]
            if len(edges) != len(images) or any(e.shape != expected for e in edges):
                raise ShapeError(f"edge maps must be {expected} and one per image")
        return images, masks, edges

    def _run_batched(self, images, masks, edges, inject):
        outputs = []
        with torch.no_grad():
            for s in range(0, len(images), self.batch_size):
                sl = slice(s, s + self.batch_size)
                imgs = images_to_tensor(images[sl])
                m = fields_to_tensor(masks[sl])
                e = fields_to_tensor(edges[sl])
                out = self._forward(imgs, e, m, edge_condition=e if inject else None)
                outputs.extend(tensor_to_images(out))
        return [composite(o, x, m) for o, x, m in zip(outputs, images, masks)]

    def inpaint(self, images, edges, masks):
        """Paint the holes using ``edges`` directly as the stage-B condition.

        Outside the mask the result equals the input image exactly.
        """
        check_is_fitted(self, "inpaint_generator_")
        images, masks, edges = self._check_inputs(images, masks, edges)
        return self._run_batched(images, masks, edges, inject=True)

    def reconstruct(self, images, masks):
        """Full two-stage fill: edges of the visible region are completed by stage A first."""
        check_is_fitted(self, "inpaint_generator_")
        images, masks, _ = self._check_inputs(images, masks)
        edges = [extract_edges(x, self.sigma).data for x in images]
        return self._run_batched(images, masks, edges, inject=False)

    predict = reconstruct

    def evaluate(self, images, masks, extractor=None):
        """Mean SSIM, mean PSNR and FID of reconstructions against the originals."""
        if len(images) == 0:
            raise InvalidArgumentError("evaluation needs at least one image")
        filled = self.reconstruct(images, masks)
        originals = [check_image(x) for x in images]
        return {
            "ssim": float(np.mean([ssim(a, b) for a, b in zip(originals, filled)])),
            "psnr": float(np.mean([psnr(a, b) for a, b in zip(originals, filled)])),
            "fid": fid(extract_features(originals, extractor), extract_features(filled, extractor)),
        }


BACKENDS = {"edgeconnect": EdgeConnectInpainter}


def get_backend(name):
    try:
        return BACKENDS[name]
    except KeyError:
        raise InvalidArgumentError(f"unknown inpainting backend {name!r}; available: {sorted(BACKENDS)}") from None


# -- checkpoint-level operations ---------------------------------------------------------


def pretrain(unlabeled, mask_pool, config: InpaintConfig) -> Checkpoint:
    if len(unlabeled) == 0:
        raise InsufficientDataError("unlabeled manifest is empty")
    return EdgeConnectInpainter.from_config(config).fit(unlabeled, mask_pool=mask_pool).to_checkpoint()


def finetune(ckpt: Checkpoint, polyp_data, config: InpaintConfig) -> Checkpoint:
    if isinstance(polyp_data, DatasetManifest):
        polyp_data.require_masks()
    params = config.to_dict()
    model = EdgeConnectInpainter.from_checkpoint(ckpt, **params)
    return model.finetune(polyp_data).to_checkpoint()


def inpaint_polyp(ckpt, clean_image, merged_edges, mask):
    """Generate a polyp inside ``mask`` on ``clean_image``, guided by ``merged_edges``."""
    model = ckpt if isinstance(ckpt, EdgeConnectInpainter) else EdgeConnectInpainter.from_checkpoint(ckpt)
    return model.inpaint([clean_image], [merged_edges], [mask])[0]


@dataclass(frozen=True)
class InpaintEvalRow:
    iteration: int
    ssim: float
    psnr: float
    fid: float


@dataclass
class InpaintEvalReport:
    rows: list = field(default_factory=list)

    def append(self, row: InpaintEvalRow):
        if self.rows and row.iteration <= self.rows[-1].iteration:
            raise InvalidArgumentError(
                f"report rows must have increasing iterations; {row.iteration} follows {self.rows[-1].iteration}"
            )
        self.rows.append(row)
        return self

    def to_json(self):
        return json.dumps([asdict(r) for r in self.rows], indent=2) + "\n"

    def write(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_json())

    @classmethod
    def read(cls, path):
        report = cls()
        for row in json.loads(Path(path).read_text()):
            report.append(InpaintEvalRow(**row))
        return report


def evaluate_checkpoint(ckpt: Checkpoint, val: DatasetManifest, extractor=None) -> InpaintEvalRow:
    if len(val) == 0:
        raise InvalidArgumentError("validation manifest is empty")
    val.require_masks()
    res = ckpt.config["resolution"]
    images = [x.data for x in val.load_images(res)]
    masks = [m.data for m in val.load_masks(res)]
    scores = EdgeConnectInpainter.from_checkpoint(ckpt).evaluate(images, masks, extractor)
    return InpaintEvalRow(iteration=ckpt.iteration, **scores)
