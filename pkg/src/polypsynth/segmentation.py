"""U-Net polyp segmentation on real/synthetic mixtures."""
from dataclasses import asdict, dataclass, replace

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted
from torch import nn

from ._torch import check_finite, fields_to_tensor, images_to_tensor, seeded
from .checkpoint import Checkpoint, snapshot
from .data import DEFAULT_RESOLUTION, DatasetManifest
from .exceptions import InsufficientDataError, InvalidArgumentError, MissingAnnotationError, ShapeError
from .metrics import SegMetrics, iou_suite
from .validation import check_binary, check_image


@dataclass(frozen=True)
class SegConfig:
    resolution: int = DEFAULT_RESOLUTION
    epochs: int = 50
    batch_size: int = 8
    learning_rate: float = 1e-3
    threshold: float = 0.5
    seed: int = 0
    base_channels: int = 16
    depth: int = 3

    def __post_init__(self):
        for name in ("resolution", "batch_size", "base_channels", "depth"):
            if getattr(self, name) <= 0:
                raise InvalidArgumentError(f"{name} must be positive, got {getattr(self, name)}")
        if self.epochs < 0:
            raise InvalidArgumentError(f"epochs must be >= 0, got {self.epochs}")
        if not self.learning_rate > 0:
            raise InvalidArgumentError("learning_rate must be positive")
        if not 0 < self.threshold < 1:
            raise InvalidArgumentError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.resolution % (2 ** self.depth):
            raise InvalidArgumentError(f"resolution {self.resolution} is not divisible by 2**depth")


def _double_conv(c_in, c_out):
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, padding=1), nn.BatchNorm2d(c_out), nn.ReLU(inplace=True),
        nn.Conv2d(c_out, c_out, 3, padding=1), nn.BatchNorm2d(c_out), nn.ReLU(inplace=True),
    )


class UNet(nn.Module):
    def __init__(self, base_channels=16, depth=3, in_channels=3):
        super().__init__()
        chans = [base_channels * 2 ** i for i in range(depth + 1)]
        self.down = nn.ModuleList([_double_conv(in_channels, chans[0])])
        self.down.extend(_double_conv(chans[i], chans[i + 1]) for i in range(depth))
        self.up = nn.ModuleList(nn.ConvTranspose2d(chans[i + 1], chans[i], 2, stride=2) for i in reversed(range(depth)))
        self.dec = nn.ModuleList(_double_conv(chans[i] * 2, chans[i]) for i in reversed(range(depth)))
        self.head = nn.Conv2d(chans[0], 1, 1)

    def forward(self, x):
        skips = []
        for i, block in enumerate(self.down):
            x = block(x if i == 0 else F.max_pool2d(x, 2))
            skips.append(x)
        skips.pop()
        for up, dec in zip(self.up, self.dec):
            x = dec(torch.cat([up(x), skips.pop()], 1))
        return self.head(x)


def bce_dice_loss(logits, target, eps=1.0):
    bce = F.binary_cross_entropy_with_logits(logits, target)
    prob = torch.sigmoid(logits)
    inter = (prob * target).sum(dim=(1, 2, 3))
    denom = prob.sum(dim=(1, 2, 3)) + target.sum(dim=(1, 2, 3))
    dice = 1 - ((2 * inter + eps) / (denom + eps)).mean()
    return bce + dice, bce, dice


class UNetSegmenter(BaseEstimator):
    """Binary U-Net segmenter trained with BCE + Dice.

    ``X`` is a sequence of ``(H, W, 3)`` images and ``y`` the matching
    ``(H, W)`` binary masks, all at ``resolution``.
    """

    def __init__(self, resolution=DEFAULT_RESOLUTION, epochs=50, batch_size=8, learning_rate=1e-3,
                 threshold=0.5, seed=0, base_channels=16, depth=3):
        self.resolution = resolution
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.threshold = threshold
        self.seed = seed
        self.base_channels = base_channels
        self.depth = depth

    @classmethod
    def from_config(cls, config: SegConfig):
        return cls(**asdict(config))

    @property
    def config(self):
        return SegConfig(**self.get_params())

    def _build(self):
        cfg = self.config
        with seeded(cfg.seed):
            self.model_ = UNet(cfg.base_channels, cfg.depth)
        self.epoch_ = 0
        self.history_ = []
        return self

    def _check(self, X, y=None):
        X = [check_image(x) for x in X]
        expected = (self.resolution, self.resolution)
        if any(x.shape[:2] != expected for x in X):
            raise ShapeError(f"images must be {expected}")
        if y is None:
            return X, None
        y = [check_binary(m) for m in y]
        if len(y) != len(X):
            raise ShapeError(f"{len(X)} images but {len(y)} masks")
        if any(m.shape != expected for m in y):
            raise ShapeError(f"masks must be {expected}")
        return X, y

    def fit(self, X, y):
        if y is None:
            raise MissingAnnotationError("<array input>", "segmentation training needs a mask per image")
        X, y = self._check(X, y)
        if len(X) == 0:
            raise InsufficientDataError("segmentation training needs at least one pair")
        cfg = self.config
        self._build()
        images = images_to_tensor(X)
        targets = fields_to_tensor(y)
        opt = torch.optim.Adam(self.model_.parameters(), lr=cfg.learning_rate)
        rng = np.random.default_rng(cfg.seed)
        with seeded(cfg.seed):
            for epoch in range(cfg.epochs):
                self.model_.train()
                order = rng.permutation(len(images))
                totals = []
                for s in range(0, len(order), cfg.batch_size):
                    idx = torch.from_numpy(order[s:s + cfg.batch_size])
                    if len(idx) == 1 and len(order) > 1:
                        # BatchNorm cannot normalise a single sample
                        idx = torch.from_numpy(order[s - 1:s + 1])
                    loss, bce, dice = bce_dice_loss(self.model_(images[idx]), targets[idx])
                    opt.zero_grad(set_to_none=True)
                    loss.backward()
                    opt.step()
                    totals.append(check_finite({"loss": loss, "bce": bce, "dice": dice}, self.epoch_ + 1))
                self.epoch_ += 1
                self.history_.append({
                    "epoch": self.epoch_,
                    **{k: float(np.mean([t[k] for t in totals])) for k in totals[0]},
                })
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X, _ = self._check(X)
        self.model_.eval()
        out = []
        with torch.no_grad():
            for s in range(0, len(X), self.batch_size):
                logits = self.model_(images_to_tensor(X[s:s + self.batch_size]))
                out.extend(torch.sigmoid(logits)[:, 0].double().numpy())
        return out

    def predict(self, X, threshold=None):
        t = self.threshold if threshold is None else threshold
        return [(p >= t).astype(np.uint8) for p in self.predict_proba(X)]

    def evaluate(self, X, y, threshold=None) -> SegMetrics:
        X, y = self._check(X, y)
        if len(X) == 0:
            raise InvalidArgumentError("evaluation needs at least one pair")
        return iou_suite(self.predict(X, threshold), y)

    def score(self, X, y):
        return self.evaluate(X, y).dataset_iou

    def to_checkpoint(self):
        check_is_fitted(self, "model_")
        return Checkpoint("segmentation", {"unet": snapshot(self.model_)}, asdict(self.config),
                          iteration=self.epoch_, meta={"epoch": self.epoch_})

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint):
        if ckpt.kind != "segmentation":
            raise InvalidArgumentError(f"expected a segmentation checkpoint, got {ckpt.kind!r}")
        model = cls(**ckpt.config)._build()
        model.model_.load_state_dict(ckpt.state["unet"])
        model.epoch_ = ckpt.iteration
        return model


def build_mixed_dataset(real_train: DatasetManifest, synthetic: DatasetManifest, n_synth, seed) -> DatasetManifest:
    """Real training records followed by ``n_synth`` seed-shuffled synthetic ones, all tagged train."""
    if n_synth < 0:
        raise InvalidArgumentError(f"n_synth must be >= 0, got {n_synth}")
    if n_synth > len(synthetic):
        raise InsufficientDataError(f"requested {n_synth} synthetic records, only {len(synthetic)} available")
    for r in real_train:
        if r.origin != "real" or r.split not in ("train", None):
            raise InvalidArgumentError(f"{r.image_path} is not a real training record")
    order = np.random.default_rng(seed).permutation(len(synthetic))[:n_synth]
    chosen = [replace(synthetic[int(i)], split="train") for i in order]
    real = [replace(r, split="train") for r in real_train]
    return DatasetManifest(tuple(real + chosen), real_train.seed)


def _load_pairs(manifest, resolution):
    manifest.require_masks()
    return [x.data for x in manifest.load_images(resolution)], [m.data for m in manifest.load_masks(resolution)]


def train_unet(data: DatasetManifest, config: SegConfig) -> Checkpoint:
    X, y = _load_pairs(data, config.resolution)
    return UNetSegmenter.from_config(config).fit(X, y).to_checkpoint()


def evaluate_seg(ckpt: Checkpoint, val: DatasetManifest, threshold=None) -> SegMetrics:
    if len(val) == 0:
        raise InvalidArgumentError("validation manifest is empty")
    model = UNetSegmenter.from_checkpoint(ckpt)
    X, y = _load_pairs(val, model.resolution)
    return model.evaluate(X, y, threshold)
