"""Encoder-decoder generator with skip connections, and the label-conditioned patch discriminator."""
from __future__ import annotations

import torch
import torch.nn as nn

GENERATOR_ENCODER = (64, 128, 256, 512, 512, 512, 512)
GENERATOR_DECODER = (512, 512, 512, 256, 128, 64)
DISCRIMINATOR_FILTERS = (64, 128, 256)


def _norm(channels):
    # Batch statistics only: with batch size 1 this normalises each sample on its own,
    # and generation behaves exactly like training.
    return nn.BatchNorm2d(channels, track_running_stats=False)


def init_weights(module: nn.Module, std: float = 0.02) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.normal_(m.weight, 0.0, std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class GeneratorNet(nn.Module):
    """Maps an image in [-1, 1] to an explanation in [-1, 1].

    Encoder: stride-2 4x4 convolutions, batch norm on all but the first and
    last layer, LeakyReLU(0.2) except ReLU at the bottleneck. Decoder:
    stride-2 4x4 transposed convolutions with batch norm, dropout on the
    first ``dropout_layers`` layers and ReLU; each output is concatenated
    with the mirrored encoder activation. A final transposed convolution
    with Tanh produces the image. Dropout is the generator's noise source.
    """

    def __init__(
        self,
        in_channels: int = 1,
        encoder_filters=GENERATOR_ENCODER,
        decoder_filters=GENERATOR_DECODER,
        dropout_layers: int = 3,
        dropout: float = 0.5,
    ):
        super().__init__()
        if len(decoder_filters) != len(encoder_filters) - 1:
            raise ValueError("decoder needs one layer fewer than the encoder (plus the output layer)")
        self.in_channels = in_channels
        self.encoder_filters = tuple(encoder_filters)
        self.decoder_filters = tuple(decoder_filters)
        self.dropout_layers = dropout_layers

        n = len(encoder_filters)
        self.down = nn.ModuleList()
        cin = in_channels
        for i, f in enumerate(encoder_filters):
            use_norm = 0 < i < n - 1
            layers = [nn.Conv2d(cin, f, 4, 2, 1, bias=not use_norm)]
            if use_norm:
                layers.append(_norm(f))
            layers.append(nn.ReLU() if i == n - 1 else nn.LeakyReLU(0.2))
            self.down.append(nn.Sequential(*layers))
            cin = f

        skips = encoder_filters[-2::-1]
        self.up = nn.ModuleList()
        for i, (f, skip) in enumerate(zip(decoder_filters, skips)):
            layers = [nn.ConvTranspose2d(cin, f, 4, 2, 1, bias=False), _norm(f)]
            if i < dropout_layers:
                layers.append(nn.Dropout(dropout))
            layers.append(nn.ReLU())
            self.up.append(nn.Sequential(*layers))
            cin = f + skip
        self.out = nn.Sequential(nn.ConvTranspose2d(cin, in_channels, 4, 2, 1), nn.Tanh())
        init_weights(self)

    @property
    def min_resolution(self) -> int:
        return 2 ** len(self.encoder_filters)

    def forward(self, x):
        skips = []
        for layer in self.down:
            x = layer(x)
            skips.append(x)
        for layer, skip in zip(self.up, reversed(skips[:-1])):
            x = torch.cat([layer(x), skip], dim=1)
        return self.out(x)

    def arch(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "encoder_filters": list(self.encoder_filters),
            "decoder_filters": list(self.decoder_filters),
            "dropout_layers": self.dropout_layers,
        }


class DiscriminatorNet(nn.Module):
    """Patch discriminator conditioned on a binary class label.

    The label is embedded into a ``label_map x label_map`` plane, upsampled
    (nearest neighbour) to the image size and stacked onto the image as an
    extra channel. Output: per-patch probabilities in (0, 1).
    """

    def __init__(
        self,
        in_channels: int = 1,
        image_size: int = 128,
        filters=DISCRIMINATOR_FILTERS,
        label_map: int = 8,
        n_classes: int = 2,
    ):
        super().__init__()
        if image_size % label_map:
            raise ValueError("image_size must be a multiple of label_map")
        self.in_channels = in_channels
        self.image_size = image_size
        self.filters = tuple(filters)
        self.label_map = label_map
        self.embed = nn.Embedding(n_classes, label_map * label_map)
        self.upsample = nn.Upsample(scale_factor=image_size // label_map, mode="nearest")
        layers = []
        cin = in_channels + 1
        for i, f in enumerate(filters):
            layers.append(nn.Conv2d(cin, f, 4, 2, 1, bias=i == 0))
            if i > 0:
                layers.append(_norm(f))
            layers.append(nn.LeakyReLU(0.2))
            cin = f
        layers += [nn.Conv2d(cin, 1, 4, 2, 1), nn.Sigmoid()]
        self.net = nn.Sequential(*layers)
        init_weights(self)

    def label_plane(self, labels: torch.Tensor) -> torch.Tensor:
        labels = torch.as_tensor(labels, dtype=torch.long).reshape(-1)
        plane = self.embed(labels).view(-1, 1, self.label_map, self.label_map)
        return self.upsample(plane)

    def forward(self, x, labels):
        plane = self.label_plane(labels).to(x.dtype)
        if plane.shape[0] != x.shape[0]:
            raise ValueError("one label per image required")
        return self.net(torch.cat([x, plane], dim=1))

    def arch(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "image_size": self.image_size,
            "filters": list(self.filters),
            "label_map": self.label_map,
        }
