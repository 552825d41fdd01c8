"""Trainable decoder: a mirrored conv stack from the deepest transferred map
up to RGB. Shallower transferred maps are fused in deep-to-shallow by channel
concatenation at matching resolution followed by a 3x3 fusion conv. Upsampling
is nearest-neighbor followed by conv (anti-checkerboard).
"""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .core import NUM_LEVELS, FeatureMap, ImageTensor
from .errors import NumericError


def _conv3(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(nn.ReflectionPad2d(1), nn.Conv2d(cin, cout, 3))


class DecoderParams(nn.Module):
    """Decoder weights for a given set of tap channel widths."""

    def __init__(self, tap_channels: tuple[int, ...]):
        super().__init__()
        if len(tap_channels) != NUM_LEVELS:
            raise ValueError(f"need {NUM_LEVELS} tap widths, got {len(tap_channels)}")
        c1, c2, c3, c4 = tap_channels
        self.tap_channels = tuple(tap_channels)
        self.head = _conv3(c4, c4)
        # fuse[i] consumes one shallower transferred map (deep to shallow);
        # reduce[i] then narrows to the mirrored width before upsampling.
        self.fuse = nn.ModuleList([
            _conv3(c4 + c3, c3),
            _conv3(c2 + c2, c2),
            _conv3(c1 + c1, c1),
        ])
        self.reduce = nn.ModuleList([
            _conv3(c3, c2),
            _conv3(c2, c1),
            _conv3(c1, c1 // 2),
        ])
        self.to_rgb = _conv3(c1 // 2, 3)

    @property
    def out_channels(self) -> int:
        return 3


def _up2(x: torch.Tensor) -> torch.Tensor:
    return F.interpolate(x, scale_factor=2, mode="nearest")


def decode(transferred: list[FeatureMap], params: DecoderParams) -> ImageTensor:
    """Map the four transferred levels to an RGB image (unclamped values)."""
    if len(transferred) != NUM_LEVELS:
        raise ValueError(f"decoder needs {NUM_LEVELS} maps, got {len(transferred)}")
    maps = [m.data for m in transferred]
    for shallow, deep in zip(maps, maps[1:]):
        sh, sw = shallow.shape[-2:]
        dh, dw = deep.shape[-2:]
        if (dh, dw) != (sh // 2, sw // 2) or shallow.shape[0] != deep.shape[0]:
            raise ValueError(
                f"transferred maps have inconsistent shapes: "
                f"{tuple(shallow.shape)} -> {tuple(deep.shape)}"
            )
    for m, c in zip(maps, params.tap_channels):
        if m.shape[1] != c:
            raise ValueError(
                f"transferred map has {m.shape[1]} channels, decoder expects {c}"
            )
    h = F.relu(params.head(maps[3]))
    h = _up2(h)
    for fuse, reduce, skip in zip(params.fuse, params.reduce, (maps[2], maps[1], maps[0])):
        h = F.relu(fuse(torch.cat([h, skip], dim=1)))
        h = F.relu(reduce(h))
        h = _up2(h)
    return params.to_rgb(h)


def clamp_to_image(x: torch.Tensor) -> ImageTensor:
    """Clip raw decoder output to [0, 1] for export.

    Losses are computed on the unclamped values; this is export-only.
    """
    if not torch.isfinite(x).all():
        raise NumericError("decoder output contains non-finite values")
    return x.clamp(0.0, 1.0)
