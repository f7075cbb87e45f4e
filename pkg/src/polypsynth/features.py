"""Frozen random convolutional features for FID and perceptual/style losses.

A pretrained classifier would be the usual choice; a seeded random network
keeps the package self-contained and deterministic. Anything exposing the
same ``forward``/``embed`` contract can be swapped in.
"""
from functools import lru_cache

import numpy as np
import torch
from torch import nn


class FrozenFeatureExtractor(nn.Module):
    """Small conv stack with fixed seeded weights; never trained.

    ``forward`` returns the list of intermediate activations (for perceptual
    and style losses); ``embed`` pools them into one vector per image.
    """

    def __init__(self, channels=(16, 32, 64), seed=0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        layers = []
        c_in = 3
        for c_out in channels:
            conv = nn.Conv2d(c_in, c_out, 3, padding=1)
            with torch.no_grad():
                bound = (6.0 / (c_in * 9)) ** 0.5
                conv.weight.copy_(torch.empty_like(conv.weight).uniform_(-bound, bound, generator=gen))
                conv.bias.zero_()
            layers.append(conv)
            c_in = c_out
        self.convs = nn.ModuleList(layers)
        self.pool = nn.AvgPool2d(2)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def train(self, mode=True):
        # stays in eval mode regardless of the parent module
        return super().train(False)

    def forward(self, x):
        feats = []
        h = x * 2.0 - 1.0
        for i, conv in enumerate(self.convs):
            h = torch.relu(conv(h))
            feats.append(h)
            if i < len(self.convs) - 1:
                h = self.pool(h)
        return feats

    @torch.no_grad()
    def embed(self, x):
        feats = self.forward(x)
        return torch.cat([torch.cat([f.mean(dim=(2, 3)), f.std(dim=(2, 3))], dim=1) for f in feats], dim=1)


@lru_cache(maxsize=None)
def _default_network():
    return FrozenFeatureExtractor().double()


def default_extractor():
    """Callable mapping ``(N, H, W, 3)`` float arrays to ``(N, d)`` embeddings."""
    net = _default_network()

    def extract(batch):
        x = torch.from_numpy(np.ascontiguousarray(batch, dtype=np.float64)).permute(0, 3, 1, 2)
        return net.embed(x).numpy()

    return extract
