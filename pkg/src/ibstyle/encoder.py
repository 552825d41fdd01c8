"""The fixed encoding network: a VGG-19-style convolutional stack truncated
after the relu5_1 activation, with taps at relu2_1, relu3_1, relu4_1 and
relu5_1. Weights are immutable; they live outside autograd entirely.

A width-divided, randomly initialized variant ("tiny") makes the whole test
suite runnable without a pretrained weight archive.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .archive import load_archive, save_archive
from .core import LEVEL_TAGS, FeatureMap, FeaturePyramid, ImageTensor
from .errors import FormatError

ARCH_VERSION = "vgg19-relu5_1/1"

# (conv name, in channels, out channels) at full width, input to relu5_1.
_CONV_SPECS = (
    ("conv1_1", 3, 64),
    ("conv1_2", 64, 64),
    ("conv2_1", 64, 128),
    ("conv2_2", 128, 128),
    ("conv3_1", 128, 256),
    ("conv3_2", 256, 256),
    ("conv3_3", 256, 256),
    ("conv3_4", 256, 256),
    ("conv4_1", 256, 512),
    ("conv4_2", 512, 512),
    ("conv4_3", 512, 512),
    ("conv4_4", 512, 512),
    ("conv5_1", 512, 512),
)
# 2x2 max pool after these convs (between VGG blocks).
_POOL_AFTER = frozenset({"conv1_2", "conv2_2", "conv3_4", "conv4_4"})
# Tap name per conv whose ReLU output is exported.
_TAP_AFTER = {
    "conv2_1": "relu2_1",
    "conv3_1": "relu3_1",
    "conv4_1": "relu4_1",
    "conv5_1": "relu5_1",
}

# ImageNet statistics used by the standard pretrained weights.
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

PROVENANCE_PRETRAINED = "pretrained"
PROVENANCE_TINY = "tiny-random"
PROVENANCE_RANDOM = "random-init"

TINY_WIDTH_DIVISOR = 8
TINY_SEED = 1234


def conv_specs(width_divisor: int) -> list[tuple[str, int, int]]:
    """Architecture manifest at the given width divisor."""
    specs = []
    for name, cin, cout in _CONV_SPECS:
        cin = 3 if cin == 3 else cin // width_divisor
        specs.append((name, cin, cout // width_divisor))
    return specs


def tap_channels(width_divisor: int = 1) -> tuple[int, ...]:
    """Channel count of each tapped level, shallow to deep."""
    base = (128, 256, 512, 512)
    return tuple(c // width_divisor for c in base)


@dataclass
class EncoderWeights:
    """Frozen convolution weights plus the archive's self-describing metadata."""

    tensors: dict[str, torch.Tensor]
    norm_mean: tuple[float, float, float]
    norm_std: tuple[float, float, float]
    provenance: str
    width_divisor: int = 1
    arch_version: str = ARCH_VERSION
    seed: int | None = field(default=None)

    def __post_init__(self) -> None:
        _validate_tensors(self.tensors, self.width_divisor)
        for t in self.tensors.values():
            t.requires_grad_(False)

    @property
    def tap_channels(self) -> tuple[int, ...]:
        return tap_channels(self.width_divisor)

    def checksum(self) -> str:
        """SHA-256 over tensor names and raw bytes; frozen-weight witness."""
        h = hashlib.sha256()
        for name in sorted(self.tensors):
            h.update(name.encode())
            h.update(self.tensors[name].detach().cpu().numpy().tobytes())
        return h.hexdigest()

    def to(self, dtype: torch.dtype) -> "EncoderWeights":
        return EncoderWeights(
            tensors={k: v.to(dtype) for k, v in self.tensors.items()},
            norm_mean=self.norm_mean,
            norm_std=self.norm_std,
            provenance=self.provenance,
            width_divisor=self.width_divisor,
            arch_version=self.arch_version,
            seed=self.seed,
        )


def _validate_tensors(tensors: dict[str, torch.Tensor], width_divisor: int) -> None:
    expected: dict[str, tuple[int, ...]] = {}
    for name, cin, cout in conv_specs(width_divisor):
        expected[f"{name}.weight"] = (cout, cin, 3, 3)
        expected[f"{name}.bias"] = (cout,)
    for name, shape in expected.items():
        if name not in tensors:
            raise FormatError(f"encoder archive is missing tensor '{name}'")
        got = tuple(tensors[name].shape)
        if got != shape:
            raise FormatError(
                f"encoder tensor '{name}' has shape {got}, expected {shape}"
            )
    extra = set(tensors) - set(expected)
    if extra:
        raise FormatError(f"encoder archive has unexpected tensors: {sorted(extra)}")


def build_encoder(
    provenance: str = PROVENANCE_TINY,
    width_divisor: int = TINY_WIDTH_DIVISOR,
    seed: int = TINY_SEED,
) -> EncoderWeights:
    """Randomly initialized encoder (Kaiming normal, fixed seed)."""
    gen = torch.Generator().manual_seed(seed)
    tensors: dict[str, torch.Tensor] = {}
    for name, cin, cout in conv_specs(width_divisor):
        fan_in = cin * 9
        std = (2.0 / fan_in) ** 0.5
        w = torch.empty(cout, cin, 3, 3)
        w.normal_(0.0, std, generator=gen)
        tensors[f"{name}.weight"] = w
        tensors[f"{name}.bias"] = torch.zeros(cout)
    return EncoderWeights(
        tensors=tensors,
        norm_mean=(0.5, 0.5, 0.5),
        norm_std=(0.5, 0.5, 0.5),
        provenance=provenance,
        width_divisor=width_divisor,
        seed=seed,
    )


def build_tiny_encoder(seed: int = TINY_SEED) -> EncoderWeights:
    """The desk-scale encoder: channel widths divided by 8, a fixed seed."""
    return build_encoder(PROVENANCE_TINY, TINY_WIDTH_DIVISOR, seed)


def encoder_from_torchvision(state_dict: dict) -> EncoderWeights:
    """Convert a torchvision ``vgg19().features`` state dict to EncoderWeights.

    Accepts either raw ``features.N.*`` keys or the full-model ``features``
    prefix, and keeps the ImageNet normalization constants in the metadata.
    """
    idx_to_name = {
        0: "conv1_1", 2: "conv1_2", 5: "conv2_1", 7: "conv2_2",
        10: "conv3_1", 12: "conv3_2", 14: "conv3_3", 16: "conv3_4",
        19: "conv4_1", 21: "conv4_2", 23: "conv4_3", 25: "conv4_4",
        28: "conv5_1",
    }
    tensors: dict[str, torch.Tensor] = {}
    for key, value in state_dict.items():
        parts = key.split(".")
        if parts[0] == "features":
            parts = parts[1:]
        if len(parts) != 2 or not parts[0].isdigit():
            continue
        idx, kind = int(parts[0]), parts[1]
        if idx in idx_to_name and kind in ("weight", "bias"):
            tensors[f"{idx_to_name[idx]}.{kind}"] = value.detach().clone().float()
    return EncoderWeights(
        tensors=tensors,
        norm_mean=IMAGENET_MEAN,
        norm_std=IMAGENET_STD,
        provenance=PROVENANCE_PRETRAINED,
        width_divisor=1,
    )


def save_encoder(weights: EncoderWeights, path) -> None:
    metadata = {
        "kind": "encoder",
        "arch_version": weights.arch_version,
        "provenance": weights.provenance,
        "width_divisor": weights.width_divisor,
        "norm_mean": list(weights.norm_mean),
        "norm_std": list(weights.norm_std),
    }
    if weights.seed is not None:
        metadata["seed"] = weights.seed
    save_archive(path, weights.tensors, metadata)


def load_encoder(path) -> EncoderWeights:
    """Load and validate an encoder weight archive."""
    tensors, metadata = load_archive(path)
    if metadata.get("kind") != "encoder":
        raise FormatError(f"{path} is not an encoder archive")
    if metadata.get("arch_version") != ARCH_VERSION:
        raise FormatError(
            f"encoder archive declares architecture "
            f"{metadata.get('arch_version')!r}, expected {ARCH_VERSION!r}"
        )
    return EncoderWeights(
        tensors=tensors,
        norm_mean=tuple(metadata["norm_mean"]),
        norm_std=tuple(metadata["norm_std"]),
        provenance=metadata["provenance"],
        width_divisor=metadata["width_divisor"],
        seed=metadata.get("seed"),
    )


def encode(image: ImageTensor, weights: EncoderWeights) -> FeaturePyramid:
    """Run the frozen stack and return the four tapped feature maps."""
    h, w = image.shape[-2:]
    if h % 16 != 0 or w % 16 != 0:
        raise ValueError(
            f"encoder input must have H and W divisible by 16, got {h}x{w}; "
            f"pad the image to the next multiple of 16"
        )
    mean = image.new_tensor(weights.norm_mean).view(1, 3, 1, 1)
    std = image.new_tensor(weights.norm_std).view(1, 3, 1, 1)
    x = (image - mean) / std
    taps: list[FeatureMap] = []
    for name, _cin, _cout in conv_specs(weights.width_divisor):
        x = F.pad(x, (1, 1, 1, 1), mode="reflect")
        x = F.conv2d(x, weights.tensors[f"{name}.weight"].to(x.dtype),
                     weights.tensors[f"{name}.bias"].to(x.dtype))
        x = F.relu(x)
        if name in _TAP_AFTER:
            taps.append(FeatureMap(x, _TAP_AFTER[name]))
        if name in _POOL_AFTER:
            x = F.max_pool2d(x, kernel_size=2, stride=2)
    assert [t.level_tag for t in taps] == list(LEVEL_TAGS)
    return FeaturePyramid(taps)
