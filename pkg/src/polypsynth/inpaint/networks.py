import torch
from torch import nn
from torch.nn.utils.parametrizations import spectral_norm


class ResidualBlock(nn.Module):
    def __init__(self, channels, dilation=1, norm=True):
        super().__init__()
        layers = [
            nn.Conv2d(channels, channels, 3, padding=dilation, dilation=dilation, padding_mode="reflect"),
            nn.InstanceNorm2d(channels) if norm else nn.Identity(),
            nn.ReLU(),
            nn.Conv2d(channels, channels, 3, padding=1, padding_mode="reflect"),
            nn.InstanceNorm2d(channels) if norm else nn.Identity(),
        ]
        self.body = nn.Sequential(*layers)

    def forward(self, x):
        return x + self.body(x)


class EncoderDecoder(nn.Module):
    """Conv encoder, dilated residual middle, transposed-conv decoder.

    Encoder activations are added back at the matching decoder scale. With
    ``n_downsample=0`` and ``n_res_blocks=0`` this collapses to two
    convolutions, which is what the gradient checks use.
    """

    def __init__(self, in_channels, out_channels, width=32, n_downsample=2, n_res_blocks=4,
                 norm=False, output="sigmoid"):
        super().__init__()
        if output not in ("sigmoid", "tanh01", "none"):
            raise ValueError(f"unknown output activation {output!r}")
        self.output = output

        def block(conv, c):
            return nn.Sequential(conv, nn.InstanceNorm2d(c) if norm else nn.Identity(), nn.ReLU())

        self.head = block(nn.Conv2d(in_channels, width, 3, padding=1, padding_mode="reflect"), width)
        chans = [width * 2 ** i for i in range(n_downsample + 1)]
        self.downs = nn.ModuleList(
            block(nn.Conv2d(chans[i], chans[i + 1], 4, stride=2, padding=1), chans[i + 1])
            for i in range(n_downsample)
        )
        self.middle = nn.Sequential(*[
            ResidualBlock(chans[-1], dilation=2 if i % 2 == 0 else 1, norm=norm) for i in range(n_res_blocks)
        ])
        self.ups = nn.ModuleList(
            block(nn.ConvTranspose2d(chans[i + 1], chans[i], 4, stride=2, padding=1), chans[i])
            for i in reversed(range(n_downsample))
        )
        self.tail = nn.Conv2d(width, out_channels, 3, padding=1, padding_mode="reflect")

    def forward(self, x):
        h = self.head(x)
        skips = []
        for down in self.downs:
            skips.append(h)
            h = down(h)
        h = self.middle(h)
        for up in self.ups:
            h = up(h) + skips.pop()
        y = self.tail(h)
        if self.output == "sigmoid":
            return torch.sigmoid(y)
        if self.output == "tanh01":
            return (torch.tanh(y) + 1) / 2
        return y


class EdgeGenerator(EncoderDecoder):
    """(holed grayscale, holed edges, mask) -> edge probabilities."""

    def __init__(self, **kwargs):
        super().__init__(3, 1, output="sigmoid", **kwargs)


class InpaintGenerator(EncoderDecoder):
    """(holed RGB, edge condition, mask) -> RGB in [0, 1]."""

    def __init__(self, **kwargs):
        super().__init__(5, 3, output="tanh01", **kwargs)


class PatchDiscriminator(nn.Module):
    """Spectrally normalised PatchGAN; returns patch logits and intermediate features."""

    def __init__(self, in_channels, width=32, n_layers=3):
        super().__init__()
        blocks = []
        c_in, c_out = in_channels, width
        for i in range(n_layers):
            blocks.append(nn.Sequential(
                spectral_norm(nn.Conv2d(c_in, c_out, 4, stride=2, padding=1)),
                nn.LeakyReLU(0.2),
            ))
            c_in, c_out = c_out, c_out * 2
        blocks.append(nn.Sequential(spectral_norm(nn.Conv2d(c_in, 1, 3, padding=1))))
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x):
        feats = []
        for block in self.blocks:
            x = block(x)
            feats.append(x)
        return x, feats[:-1]
