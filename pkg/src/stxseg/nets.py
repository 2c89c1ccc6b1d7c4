"""Network definitions: translation generators, patch discriminators, segmentor.

All forwards are pure given fixed parameters: normalization is instance-style
with per-call statistics and no running buffers. Initialization is a
deterministic function of (arch, seed): fan-in-scaled normal weights, zero
biases, unit norm gains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .common import N_CLASSES, substream_seed


class ArchError(ValueError):
    """Architecture configuration is internally inconsistent."""


@dataclass(frozen=True)
class ArchConfig:
    image_size: int
    base_channels: int = 32
    n_residual_blocks: int | None = None  # None -> 4 below 128 px, 6 at 128 px and up
    n_discriminator_layers: int = 3
    n_classes: int = N_CLASSES
    segmentor_depth: int = 3

    @property
    def residual_blocks(self) -> int:
        if self.n_residual_blocks is not None:
            return self.n_residual_blocks
        return 6 if self.image_size >= 128 else 4


def validate_arch(arch: ArchConfig) -> None:
    if arch.n_classes != N_CLASSES:
        raise ArchError(f"n_classes must be {N_CLASSES}, got {arch.n_classes}")
    if arch.base_channels < 1 or arch.residual_blocks < 0:
        raise ArchError("base_channels must be >= 1 and n_residual_blocks >= 0")
    if arch.n_discriminator_layers < 1 or arch.segmentor_depth < 1:
        raise ArchError("n_discriminator_layers and segmentor_depth must be >= 1")
    depth = max(2, arch.n_discriminator_layers, arch.segmentor_depth)
    if arch.image_size % (1 << depth) != 0:
        raise ArchError(f"image_size {arch.image_size} not divisible by 2^{depth}")
    # instance statistics need more than one spatial element at the deepest layer
    if arch.image_size >> max(arch.n_discriminator_layers, arch.segmentor_depth) < 2:
        raise ArchError(
            f"image_size {arch.image_size} leaves <2 px at depth "
            f"{max(arch.n_discriminator_layers, arch.segmentor_depth)}; reduce the depth"
        )


def _norm(channels: int) -> nn.Module:
    return nn.InstanceNorm2d(channels, affine=True, track_running_stats=False)


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1, padding_mode="reflect"),
            _norm(channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1, padding_mode="reflect"),
            _norm(channels),
        )

    def forward(self, x):
        return x + self.block(x)


class Generator(nn.Module):
    """conv-downsample x2 -> residual blocks -> transpose-conv upsample x2 -> tanh."""

    def __init__(self, arch: ArchConfig):
        super().__init__()
        self.image_size = arch.image_size
        c = arch.base_channels
        layers: list[nn.Module] = [
            nn.Conv2d(1, c, 7, padding=3, padding_mode="reflect"),
            _norm(c),
            nn.ReLU(inplace=True),
            nn.Conv2d(c, 2 * c, 3, stride=2, padding=1),
            _norm(2 * c),
            nn.ReLU(inplace=True),
            nn.Conv2d(2 * c, 4 * c, 3, stride=2, padding=1),
            _norm(4 * c),
            nn.ReLU(inplace=True),
        ]
        layers += [ResidualBlock(4 * c) for _ in range(arch.residual_blocks)]
        layers += [
            nn.ConvTranspose2d(4 * c, 2 * c, 3, stride=2, padding=1, output_padding=1),
            _norm(2 * c),
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(2 * c, c, 3, stride=2, padding=1, output_padding=1),
            _norm(c),
            nn.ReLU(inplace=True),
            nn.Conv2d(c, 1, 7, padding=3, padding_mode="reflect"),
            nn.Tanh(),
        ]
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        return self.model(x)


class PatchDiscriminator(nn.Module):
    """Stride-2 conv stack emitting one unbounded realness score per patch."""

    def __init__(self, arch: ArchConfig):
        super().__init__()
        self.image_size = arch.image_size
        self.n_layers = arch.n_discriminator_layers
        c = arch.base_channels
        layers: list[nn.Module] = [nn.Conv2d(1, c, 4, stride=2, padding=1), nn.LeakyReLU(0.2, inplace=True)]
        ch = c
        for _ in range(arch.n_discriminator_layers - 1):
            layers += [nn.Conv2d(ch, 2 * ch, 4, stride=2, padding=1), _norm(2 * ch), nn.LeakyReLU(0.2, inplace=True)]
            ch *= 2
        layers += [nn.Conv2d(ch, 1, 3, stride=1, padding=1)]
        self.model = nn.Sequential(*layers)

    def score_map_size(self) -> int:
        return self.image_size >> self.n_layers

    def forward(self, x):
        return self.model(x)


def _double_conv(c_in: int, c_out: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, padding=1),
        _norm(c_out),
        nn.ReLU(inplace=True),
        nn.Conv2d(c_out, c_out, 3, padding=1),
        _norm(c_out),
        nn.ReLU(inplace=True),
    )


class UNetSegmentor(nn.Module):
    """Encoder-decoder with skip connections emitting 4-class logits."""

    def __init__(self, arch: ArchConfig):
        super().__init__()
        self.image_size = arch.image_size
        c, depth = arch.base_channels, arch.segmentor_depth
        enc_channels = [c << i for i in range(depth)]
        self.encoders = nn.ModuleList()
        prev = 1
        for ch in enc_channels:
            self.encoders.append(_double_conv(prev, ch))
            prev = ch
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = _double_conv(prev, c << depth)
        self.upsamplers = nn.ModuleList()
        self.decoders = nn.ModuleList()
        prev = c << depth
        for ch in reversed(enc_channels):
            self.upsamplers.append(nn.ConvTranspose2d(prev, ch, 2, stride=2))
            self.decoders.append(_double_conv(2 * ch, ch))
            prev = ch
        self.head = nn.Conv2d(prev, arch.n_classes, 1)

    def forward(self, x):
        skips = []
        for enc in self.encoders:
            x = enc(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        for up, dec, skip in zip(self.upsamplers, self.decoders, reversed(skips)):
            x = dec(torch.cat([up(x), skip], dim=1))
        return self.head(x)


@dataclass
class ModelBundle:
    """The five parameter sets plus architecture and training-state metadata."""

    g1: Generator  # source -> target
    g2: Generator  # target -> source
    d1: PatchDiscriminator  # real target vs g1 output
    d2: PatchDiscriminator  # real source vs g2 output
    s: UNetSegmentor
    arch: ArchConfig
    step: int = 0
    rng_seed: int = 0

    def named_modules_by_role(self) -> dict[str, nn.Module]:
        return {"g1": self.g1, "g2": self.g2, "d1": self.d1, "d2": self.d2, "s": self.s}


def build_modules(arch: ArchConfig) -> dict[str, nn.Module]:
    validate_arch(arch)
    return {
        "g1": Generator(arch),
        "g2": Generator(arch),
        "d1": PatchDiscriminator(arch),
        "d2": PatchDiscriminator(arch),
        "s": UNetSegmentor(arch),
    }


def _fan_in(weight: torch.Tensor, transposed: bool) -> int:
    # Conv2d weight: (out, in, kh, kw); ConvTranspose2d weight: (in, out, kh, kw)
    receptive = int(weight.shape[2] * weight.shape[3]) if weight.dim() == 4 else 1
    in_channels = int(weight.shape[0] if transposed else weight.shape[1])
    return in_channels * receptive


def init_parameters(module: nn.Module, seed: int) -> None:
    """Fan-in-scaled normal weights, zero biases; deterministic in `seed`."""
    gen = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            std = 1.0 / math.sqrt(_fan_in(m.weight, isinstance(m, nn.ConvTranspose2d)))
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen, dtype=m.weight.dtype) * std)
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, nn.InstanceNorm2d) and m.affine:
            with torch.no_grad():
                m.weight.fill_(1.0)
                m.bias.zero_()


def init_bundle(arch: ArchConfig, seed: int) -> ModelBundle:
    """Deterministically initialized five-network bundle; step = 0."""
    modules = build_modules(arch)
    for index, (name, module) in enumerate(modules.items()):
        init_parameters(module, substream_seed(seed, index))
    return ModelBundle(arch=arch, step=0, rng_seed=seed, **modules)


# --- validated forward wrappers ------------------------------------------------

def _check_image_batch(images: torch.Tensor, expected_size: int) -> None:
    if images.dim() != 4 or images.shape[1] != 1:
        raise ValueError(f"expected images of shape (B, 1, S, S), got {tuple(images.shape)}")
    if images.shape[2] != expected_size or images.shape[3] != expected_size:
        raise ValueError(f"expected spatial size {expected_size}, got {tuple(images.shape[2:])}")
    if images.shape[0] < 1:
        raise ValueError("batch must contain at least one image")
    if not torch.isfinite(images).all():
        raise ValueError("image batch contains non-finite values")
    if images.abs().max() > 1.0 + 1e-4:
        raise ValueError("image batch values must lie in [-1, 1]")


def generator_forward(generator: Generator, images: torch.Tensor) -> torch.Tensor:
    _check_image_batch(images, generator.image_size)
    return generator(images)


def discriminator_forward(discriminator: PatchDiscriminator, images: torch.Tensor) -> torch.Tensor:
    _check_image_batch(images, discriminator.image_size)
    return discriminator(images)


def segmentor_forward(segmentor: UNetSegmentor, images: torch.Tensor) -> torch.Tensor:
    _check_image_batch(images, segmentor.image_size)
    return segmentor(images)
