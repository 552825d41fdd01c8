"""Shared tensor semantics: image and feature containers plus the channel
statistics, resizing, and concatenation primitives used by every stage of the
pipeline.

Images are ``torch.Tensor`` of shape (B, 3, H, W) with values in [0, 1].
Feature maps carry a level tag naming the encoder tap they came from.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image

from .errors import IngestionError

# Encoder tap names, shallow to deep. Index i in a pyramid corresponds to
# LEVEL_TAGS[i]; public APIs that take a `level` argument use 1-based levels.
LEVEL_TAGS = ("relu2_1", "relu3_1", "relu4_1", "relu5_1")
NUM_LEVELS = len(LEVEL_TAGS)

ImageTensor = torch.Tensor


@dataclass
class FeatureMap:
    """One tapped feature tensor of shape (B, C, H, W)."""

    data: torch.Tensor
    level_tag: str | None = None

    @property
    def shape(self) -> torch.Size:
        return self.data.shape

    @property
    def channels(self) -> int:
        return self.data.shape[1]


@dataclass
class FeaturePyramid:
    """Ordered list of tapped feature maps, shallow to deep."""

    levels: list[FeatureMap]

    def __post_init__(self) -> None:
        if len(self.levels) != NUM_LEVELS:
            raise ValueError(
                f"pyramid must have {NUM_LEVELS} levels, got {len(self.levels)}"
            )
        for prev, cur in zip(self.levels, self.levels[1:]):
            ph, pw = prev.data.shape[-2:]
            ch, cw = cur.data.shape[-2:]
            if (ch, cw) != (ph // 2, pw // 2):
                raise ValueError(
                    f"pyramid spatial sizes must halve level to level, got "
                    f"{(ph, pw)} -> {(ch, cw)}"
                )

    @property
    def maps(self) -> list[FeatureMap]:
        return self.levels


@dataclass
class ChannelStats:
    """Per-channel, per-batch-item mean and population std, shape (B, C)."""

    mean: torch.Tensor
    std: torch.Tensor


def per_channel_stats(data: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Mean and population std over spatial positions; both (B, C)."""
    flat = data.flatten(2)
    mean = flat.mean(dim=2)
    # Population variance; a 1x1 or constant map legitimately yields std 0.
    # sqrt only ever sees positive values so constant channels do not poison
    # gradients with 0 * inf.
    var = flat.var(dim=2, unbiased=False)
    positive = var > 0
    safe = torch.where(positive, var, torch.ones_like(var))
    std = torch.where(positive, safe.sqrt(), torch.zeros_like(var))
    return mean, std


def channel_stats(fmap: FeatureMap) -> ChannelStats:
    """Per-channel statistics of a feature map (population std)."""
    mean, std = per_channel_stats(fmap.data)
    return ChannelStats(mean=mean, std=std)


def _lerp_axis(data: torch.Tensor, dim: int, out_size: int) -> torch.Tensor:
    """Interpolate one spatial axis, align-corners-off, in lerp form.

    The lerp form v0 + lam*(v1 - v0) reproduces constant inputs exactly,
    which torch's fused bilinear kernel does not guarantee.
    """
    in_size = data.shape[dim]
    if in_size == out_size:
        return data
    scale = in_size / out_size
    src = (torch.arange(out_size, dtype=torch.float64) + 0.5) * scale - 0.5
    src = src.clamp(min=0.0)
    idx0 = src.floor().long().clamp(max=in_size - 1)
    idx1 = (idx0 + 1).clamp(max=in_size - 1)
    lam = (src - idx0.double()).to(data.dtype).to(data.device)
    shape = [1] * data.ndim
    shape[dim] = out_size
    lam = lam.view(shape)
    v0 = data.index_select(dim, idx0.to(data.device))
    v1 = data.index_select(dim, idx1.to(data.device))
    return v0 + lam * (v1 - v0)


def bilinear_resize(data: torch.Tensor, target_h: int, target_w: int) -> torch.Tensor:
    """Bilinear resize of a (B, C, H, W) tensor, align-corners-off."""
    if target_h < 1 or target_w < 1:
        raise ValueError(f"target size must be positive, got {target_h}x{target_w}")
    out = _lerp_axis(data, 2, target_h)
    return _lerp_axis(out, 3, target_w)


def resize_to(fmap: FeatureMap, target_h: int, target_w: int) -> FeatureMap:
    """Resize a feature map to the requested spatial size."""
    return FeatureMap(bilinear_resize(fmap.data, target_h, target_w), fmap.level_tag)


def concat_channels(maps: list[FeatureMap]) -> FeatureMap:
    """Concatenate feature maps along the channel dimension."""
    if not maps:
        raise ValueError("need at least one feature map")
    ref = maps[0].data.shape
    for m in maps[1:]:
        s = m.data.shape
        if s[0] != ref[0] or s[-2:] != ref[-2:]:
            raise ValueError(
                f"batch/spatial dims must match for concat: {tuple(ref)} vs {tuple(s)}"
            )
    if len(maps) == 1:
        return maps[0]
    return FeatureMap(torch.cat([m.data for m in maps], dim=1), None)


def load_image(path, dtype: torch.dtype = torch.float32) -> ImageTensor:
    """Load a PNG/JPEG as a (1, 3, H, W) tensor with values in [0, 1]."""
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        raise IngestionError(f"cannot decode image {path}: {exc}") from exc
    return torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0).to(dtype)


def save_image(image: ImageTensor, path) -> None:
    """Save a (1, 3, H, W) or (3, H, W) tensor in [0, 1] as an 8-bit image."""
    t = image.detach()
    if t.ndim == 4:
        if t.shape[0] != 1:
            raise ValueError("save_image expects a single image, got a batch")
        t = t[0]
    arr = (t.clamp(0.0, 1.0) * 255.0).round().to(torch.uint8)
    Image.fromarray(arr.permute(1, 2, 0).cpu().numpy(), mode="RGB").save(path)
