"""Attention-based statistics transfer between content and style features.

Per level, queries come from the instance-normalized stack of all content
levels up to that depth (resized to the level's size), keys likewise from the
style side, and values are the style features themselves. Attention produces
a per-position mean and std in value space, which re-statistic the normalized
content features. A parameter-free variant (identity projections) serves as
the content-loss target; the learnable variant is the production path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .core import NUM_LEVELS, FeatureMap, bilinear_resize

LEARNABLE = "learnable"
PARAMETER_FREE = "parameter_free"

# Variance floor inside normalizations; keeps gradients finite on channels
# that a ReLU has silenced.
_NORM_EPS = 1e-5


def instance_norm(data: torch.Tensor, eps: float = _NORM_EPS) -> torch.Tensor:
    """Per-channel, per-batch-item normalization over spatial positions."""
    flat = data.flatten(2)
    mean = flat.mean(dim=2).unsqueeze(-1).unsqueeze(-1)
    var = flat.var(dim=2, unbiased=False).unsqueeze(-1).unsqueeze(-1)
    return (data - mean) / torch.sqrt(var + eps)


@dataclass
class InterpolationWeights:
    """Convex combination weights over N reference styles."""

    weights: list[float]

    def __post_init__(self) -> None:
        if len(self.weights) < 1:
            raise ValueError("need at least one interpolation weight")
        if any(w < 0 for w in self.weights):
            raise ValueError(f"interpolation weights must be >= 0, got {self.weights}")
        total = sum(self.weights)
        if abs(total - 1.0) > 1e-6:
            raise ValueError(
                f"interpolation weights must sum to 1 (got {total:.8f})"
            )


class TransferParams(nn.Module):
    """Query/key projections per level, or none for the parameter-free variant.

    `kv_pool_limit` caps the attended style positions per spatial axis by
    max-pooling keys and values; exact attention below the cap. This is a
    fidelity/latency trade-off for large inputs at the shallow levels.
    """

    def __init__(
        self,
        tap_channels: tuple[int, ...] | None = None,
        variant: str = LEARNABLE,
        kv_pool_limit: int = 64,
    ):
        super().__init__()
        if variant not in (LEARNABLE, PARAMETER_FREE):
            raise ValueError(f"unknown transfer variant {variant!r}")
        if variant == LEARNABLE and tap_channels is None:
            raise ValueError("learnable variant needs the tap channel widths")
        self.variant = variant
        self.kv_pool_limit = kv_pool_limit
        if variant == LEARNABLE:
            key_channels = [sum(tap_channels[: i + 1]) for i in range(len(tap_channels))]
            self.q_projs = nn.ModuleList(
                nn.Conv2d(kc, c, 1) for kc, c in zip(key_channels, tap_channels)
            )
            self.k_projs = nn.ModuleList(
                nn.Conv2d(kc, c, 1) for kc, c in zip(key_channels, tap_channels)
            )


def _key_stack(maps: list[FeatureMap], level: int, target_hw: tuple[int, int]) -> torch.Tensor:
    """Instance-normalized concat of levels 1..level, resized to target size."""
    parts = []
    for m in maps[:level]:
        resized = bilinear_resize(m.data, *target_hw)
        parts.append(instance_norm(resized))
    return torch.cat(parts, dim=1)


def _pool_limit(data: torch.Tensor, limit: int) -> torch.Tensor:
    h, w = data.shape[-2:]
    if limit <= 0 or (h <= limit and w <= limit):
        return data
    stride = (math.ceil(h / limit), math.ceil(w / limit))
    return F.max_pool2d(data, kernel_size=stride, stride=stride, ceil_mode=True)


def adaattn_level(
    Rc: FeatureMap,
    Rs: FeatureMap,
    pyr_c: list[FeatureMap],
    pyr_s: list[FeatureMap],
    level: int,
    params: TransferParams,
    return_attention: bool = False,
):
    """Transfer per-position style statistics onto one content level."""
    if not 1 <= level <= NUM_LEVELS:
        raise ValueError(f"level must be in 1..{NUM_LEVELS}, got {level}")
    if len(pyr_c) < level or len(pyr_s) < level:
        raise ValueError(f"pyramids must provide at least {level} levels")
    if Rc.data.shape[1] != Rs.data.shape[1]:
        raise ValueError(
            f"content/style channel mismatch at level {level}: "
            f"{Rc.data.shape[1]} vs {Rs.data.shape[1]}"
        )
    b, c, hc, wc = Rc.data.shape
    key_c = _key_stack(pyr_c, level, (hc, wc))
    key_s = _key_stack(pyr_s, level, Rs.data.shape[-2:])

    values = Rs.data
    if params.kv_pool_limit:
        key_s = _pool_limit(key_s, params.kv_pool_limit)
        values = _pool_limit(values, params.kv_pool_limit)

    if params.variant == LEARNABLE:
        q = params.q_projs[level - 1](key_c)
        k = params.k_projs[level - 1](key_s)
    else:
        q, k = key_c, key_s

    d = q.shape[1]
    q = q.flatten(2).transpose(1, 2)  # (B, Nc, d)
    k = k.flatten(2)  # (B, d, Ns)
    v = values.flatten(2).transpose(1, 2)  # (B, Ns, C)

    attn = torch.softmax(torch.bmm(q, k) / math.sqrt(d), dim=-1)
    mean = torch.bmm(attn, v)  # (B, Nc, C)
    sq_mean = torch.bmm(attn, v * v)
    var = (sq_mean - mean * mean).clamp(min=0.0)
    # Masked sqrt: exact 0 where the attended values are constant, and no
    # infinite sqrt gradient leaking through the unused `where` branch.
    positive = var > 0
    std = torch.where(
        positive,
        torch.where(positive, var, torch.ones_like(var)).sqrt(),
        torch.zeros_like(var),
    )

    mean = mean.transpose(1, 2).reshape(b, c, hc, wc)
    std = std.transpose(1, 2).reshape(b, c, hc, wc)
    out = FeatureMap(std * instance_norm(Rc.data) + mean, Rc.level_tag)
    if return_attention:
        return out, attn
    return out


def multi_level_transfer(cp_c, cp_s, params: TransferParams) -> list[FeatureMap]:
    """Apply the attention transfer at every level of a pyramid pair.

    Accepts anything exposing `.maps` (compressed or raw pyramids).
    """
    maps_c, maps_s = cp_c.maps, cp_s.maps
    return [
        adaattn_level(maps_c[i], maps_s[i], maps_c, maps_s, i + 1, params)
        for i in range(NUM_LEVELS)
    ]


def interpolate_styles(
    cp_c, styles: list, w: InterpolationWeights, params: TransferParams
) -> list[FeatureMap]:
    """Convex combination of per-style transferred feature maps.

    Zero-weight styles are skipped, so a one-hot weight vector reproduces the
    corresponding single-style transfer exactly.
    """
    if len(styles) != len(w.weights):
        raise ValueError(
            f"got {len(styles)} styles but {len(w.weights)} weights"
        )
    combined: list[torch.Tensor | None] = [None] * NUM_LEVELS
    tags = [m.level_tag for m in cp_c.maps]
    for weight, cp_s in zip(w.weights, styles):
        if weight == 0.0:
            continue
        transferred = multi_level_transfer(cp_c, cp_s, params)
        for i, t in enumerate(transferred):
            term = weight * t.data if weight != 1.0 else t.data
            combined[i] = term if combined[i] is None else combined[i] + term
    return [FeatureMap(data, tag) for data, tag in zip(combined, tags)]
