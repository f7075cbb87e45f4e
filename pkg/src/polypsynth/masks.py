"""Progressive-growing GAN for synthetic polyp masks, plus fill-ratio filtering."""
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted
from torch import nn

from ._torch import check_finite, generator, seeded
from .checkpoint import Checkpoint, snapshot
from .data import BinaryMask, resize_nearest, save_binary
from .exceptions import InsufficientDataError, InvalidArgumentError
from .validation import check_binary, is_power_of_two

MIN_FILL = 0.05
MAX_FILL = 0.70


@dataclass(frozen=True)
class MaskGanConfig:
    start_resolution: int = 8
    target_resolution: int = 64
    iterations_per_stage: int = 1000
    batch_size: int = 16
    learning_rate: float = 1e-3
    seed: int = 0
    latent_dim: int = 64
    channels: int = 32
    r1_gamma: float = 1.0

    def __post_init__(self):
        for name in ("start_resolution", "target_resolution"):
            if not is_power_of_two(getattr(self, name)):
                raise InvalidArgumentError(f"{name} must be a power of 2, got {getattr(self, name)}")
        if self.start_resolution < 4:
            raise InvalidArgumentError("start_resolution must be at least 4")
        if self.start_resolution > self.target_resolution:
            raise InvalidArgumentError("start_resolution must not exceed target_resolution")
        for name in ("iterations_per_stage", "batch_size", "latent_dim", "channels"):
            if getattr(self, name) <= 0:
                raise InvalidArgumentError(f"{name} must be positive")
        if not self.learning_rate > 0:
            raise InvalidArgumentError("learning_rate must be positive")
        if self.r1_gamma < 0:
            raise InvalidArgumentError("r1_gamma must be >= 0")

    @property
    def resolutions(self):
        res, out = self.start_resolution, []
        while res <= self.target_resolution:
            out.append(res)
            res *= 2
        return out


def _conv(c_in, c_out, k=3):
    return nn.Conv2d(c_in, c_out, k, padding=k // 2)


class MaskGenerator(nn.Module):
    """Latent vector -> mask probabilities, grown one resolution block at a time."""

    def __init__(self, latent_dim, channels, start_resolution, n_stages):
        super().__init__()
        self.channels = channels
        self.start_resolution = start_resolution
        self.stem = nn.Linear(latent_dim, channels * start_resolution ** 2)
        self.stem_conv = _conv(channels, channels)
        self.blocks = nn.ModuleList([
            nn.Sequential(_conv(channels, channels), nn.LeakyReLU(0.2), _conv(channels, channels), nn.LeakyReLU(0.2))
            for _ in range(n_stages - 1)
        ])
        self.to_mask = nn.ModuleList([_conv(channels, 1, 1) for _ in range(n_stages)])

    def forward(self, z, stage=None, alpha=1.0):
        stage = len(self.to_mask) - 1 if stage is None else stage
        s = self.start_resolution
        h = F.leaky_relu(self.stem(z).view(-1, self.channels, s, s), 0.2)
        h = F.leaky_relu(self.stem_conv(h), 0.2)
        prev = h
        for k in range(stage):
            prev = h
            h = self.blocks[k](F.interpolate(h, scale_factor=2, mode="nearest"))
        out = torch.sigmoid(self.to_mask[stage](h))
        if stage > 0 and alpha < 1.0:
            low = torch.sigmoid(self.to_mask[stage - 1](prev))
            out = alpha * out + (1 - alpha) * F.interpolate(low, scale_factor=2, mode="nearest")
        return out


class MaskDiscriminator(nn.Module):
    def __init__(self, channels, start_resolution, n_stages):
        super().__init__()
        self.from_mask = nn.ModuleList([_conv(1, channels, 1) for _ in range(n_stages)])
        self.blocks = nn.ModuleList([
            nn.Sequential(_conv(channels, channels), nn.LeakyReLU(0.2), _conv(channels, channels),
                          nn.LeakyReLU(0.2), nn.AvgPool2d(2))
            for _ in range(n_stages - 1)
        ])
        self.head_conv = _conv(channels + 1, channels)
        self.head = nn.Linear(channels * start_resolution ** 2, 1)

    def forward(self, x, stage=None, alpha=1.0):
        stage = len(self.from_mask) - 1 if stage is None else stage
        h = F.leaky_relu(self.from_mask[stage](x), 0.2)
        if stage > 0:
            h = self.blocks[stage - 1](h)
            if alpha < 1.0:
                skip = F.leaky_relu(self.from_mask[stage - 1](F.avg_pool2d(x, 2)), 0.2)
                h = alpha * h + (1 - alpha) * skip
            for k in range(stage - 2, -1, -1):
                h = self.blocks[k](h)
        # minibatch standard deviation as an extra feature map
        std = (h.var(dim=0, unbiased=False) + 1e-8).sqrt().mean().expand(h.shape[0], 1, *h.shape[2:])
        h = F.leaky_relu(self.head_conv(torch.cat([h, std], dim=1)), 0.2)
        return self.head(h.flatten(1)).squeeze(1)


def _as_field_array(masks, size):
    fields = [check_binary(m) for m in masks]
    fields = [f if f.shape == (size, size) else resize_nearest(f, size) for f in fields]
    return np.stack(fields).astype(np.float32)


class ProgressiveMaskGAN(BaseEstimator):
    """Unconditional mask generator trained resolution by resolution.

    Each stage doubles the working resolution; the new block is blended in
    linearly over the first half of the stage. Losses are the non-saturating
    GAN loss with an R1 penalty on real samples.
    """

    def __init__(self, start_resolution=8, target_resolution=64, iterations_per_stage=1000,
                 batch_size=16, learning_rate=1e-3, seed=0, latent_dim=64, channels=32, r1_gamma=1.0):
        self.start_resolution = start_resolution
        self.target_resolution = target_resolution
        self.iterations_per_stage = iterations_per_stage
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed
        self.latent_dim = latent_dim
        self.channels = channels
        self.r1_gamma = r1_gamma

    @classmethod
    def from_config(cls, config: MaskGanConfig):
        return cls(**asdict(config))

    @property
    def config(self):
        return MaskGanConfig(**self.get_params())

    def _build(self):
        cfg = self.config
        n = len(cfg.resolutions)
        with seeded(cfg.seed):
            self.generator_ = MaskGenerator(cfg.latent_dim, cfg.channels, cfg.start_resolution, n)
            self.discriminator_ = MaskDiscriminator(cfg.channels, cfg.start_resolution, n)
        self.stage_ = cfg.start_resolution
        self.iteration_ = 0
        self.history_ = []

    def initialize(self):
        """Build untrained networks (already at the target resolution)."""
        self._build()
        self.stage_ = self.config.target_resolution
        return self

    def fit(self, X, y=None):
        """Train on a collection of binary masks (list or ``(N, H, W)`` array)."""
        if len(X) < 2:
            raise InsufficientDataError(f"mask GAN needs at least 2 training masks, got {len(X)}")
        cfg = self.config
        self._build()
        real_full = torch.from_numpy(_as_field_array(X, cfg.target_resolution))[:, None]
        rng = np.random.default_rng(cfg.seed)
        z_gen = generator(cfg.seed + 1)
        G, D = self.generator_, self.discriminator_
        opt_g = torch.optim.Adam(G.parameters(), lr=cfg.learning_rate, betas=(0.0, 0.99))
        opt_d = torch.optim.Adam(D.parameters(), lr=cfg.learning_rate, betas=(0.0, 0.99))
        fade = max(cfg.iterations_per_stage // 2, 1)

        for k, res in enumerate(cfg.resolutions):
            real_stage = F.interpolate(real_full, size=(res, res), mode="area")
            real_low = None
            if k > 0:
                real_low = F.interpolate(F.avg_pool2d(real_stage, 2), scale_factor=2, mode="nearest")
            self.stage_ = res
            for it in range(cfg.iterations_per_stage):
                alpha = 1.0 if k == 0 else min(1.0, (it + 1) / fade)
                idx = torch.from_numpy(rng.integers(len(real_stage), size=cfg.batch_size))
                real = real_stage[idx]
                if real_low is not None and alpha < 1.0:
                    real = alpha * real + (1 - alpha) * real_low[idx]
                z = torch.randn(cfg.batch_size, cfg.latent_dim, generator=z_gen)

                fake = G(z, k, alpha)
                real.requires_grad_(True)
                d_real = D(real, k, alpha)
                d_fake = D(fake.detach(), k, alpha)
                loss_d = F.softplus(d_fake).mean() + F.softplus(-d_real).mean()
                r1 = torch.zeros(())
                if cfg.r1_gamma > 0:
                    (grad,) = torch.autograd.grad(d_real.sum(), real, create_graph=True)
                    r1 = grad.pow(2).flatten(1).sum(1).mean()
                    loss_d = loss_d + 0.5 * cfg.r1_gamma * r1
                opt_d.zero_grad(set_to_none=True)
                loss_d.backward()
                opt_d.step()

                loss_g = F.softplus(-D(fake, k, alpha)).mean()
                opt_g.zero_grad(set_to_none=True)
                loss_g.backward()
                opt_g.step()

                self.iteration_ += 1
                values = check_finite({"d": loss_d, "g": loss_g, "r1": r1}, self.iteration_, stage=res)
                self.history_.append({"stage": res, "iteration": self.iteration_, "alpha": alpha, **values})
        return self

    def sample_proba(self, n, seed=0):
        """``(n, S, S)`` continuous mask fields at the current stage."""
        check_is_fitted(self, "generator_")
        if not isinstance(n, (int, np.integer)) or n <= 0:
            raise InvalidArgumentError(f"n must be a positive integer, got {n!r}")
        stage = self.config.resolutions.index(self.stage_)
        z = torch.randn(n, self.latent_dim, generator=generator(seed))
        with torch.no_grad():
            out = self.generator_.eval()(z, stage)
        return out[:, 0].double().numpy()

    def sample(self, n, seed=0):
        """Draw ``n`` binary masks, thresholded at 0.5."""
        return [BinaryMask((p >= 0.5).astype(np.uint8)) for p in self.sample_proba(n, seed)]

    def to_checkpoint(self):
        check_is_fitted(self, "generator_")
        return Checkpoint(
            kind="mask_gan",
            state={"generator": snapshot(self.generator_), "discriminator": snapshot(self.discriminator_)},
            config=asdict(self.config),
            iteration=self.iteration_,
            meta={"stage": self.stage_},
        )

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint):
        if ckpt.kind != "mask_gan":
            raise InvalidArgumentError(f"expected a mask_gan checkpoint, got {ckpt.kind!r}")
        model = cls(**ckpt.config)
        model._build()
        model.generator_.load_state_dict(ckpt.state["generator"])
        model.discriminator_.load_state_dict(ckpt.state["discriminator"])
        model.stage_ = ckpt.stage
        model.iteration_ = ckpt.iteration
        return model


def train_mask_generator(masks, config: MaskGanConfig) -> Checkpoint:
    return ProgressiveMaskGAN.from_config(config).fit(masks).to_checkpoint()


def sample_masks(ckpt: Checkpoint, n, seed):
    return ProgressiveMaskGAN.from_checkpoint(ckpt).sample(n, seed)


def filter_masks(masks, min_fill=MIN_FILL, max_fill=MAX_FILL):
    """Keep masks whose fill ratio lies in ``[min_fill, max_fill]``, in order."""
    if not (0 <= min_fill < max_fill <= 1):
        raise InvalidArgumentError(
            f"need 0 <= min_fill < max_fill <= 1, got min_fill={min_fill}, max_fill={max_fill}"
        )
    kept = []
    for m in masks:
        m = m if isinstance(m, BinaryMask) else BinaryMask(m)
        if min_fill <= m.fill_ratio <= max_fill:
            kept.append(m)
    return kept


def write_masks(directory, masks, prefix="mask"):
    """Save masks as numbered 1-bit PNGs; returns the written paths."""
    directory = Path(directory)
    width = max(4, len(str(len(masks))))
    paths = []
    for i, m in enumerate(masks):
        p = directory / f"{prefix}_{i:0{width}d}.png"
        save_binary(p, m)
        paths.append(p)
    return paths
