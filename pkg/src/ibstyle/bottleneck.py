"""Gated noise-injection bottlenecks for content and style branches.

Each level owns a small predictor that maps the full (resized, concatenated)
feature pyramid to a per-element gate alpha in [0, 1]. Features are compressed
as R = alpha*F + (1-alpha)*eps with eps matched to the per-channel feature
statistics, and the information passed through is scored by a closed-form
Gaussian KL between the gated conditional and its marginal approximation:

    MI = -1/2 * [1 - (alpha*f)^2 - (1-alpha)^2] - log(1-alpha),
    f  = (F - mu_c) / sigma_c   (per-channel normalization)

which equals KL( N(alpha*f, (1-alpha)^2) || N(0, 1) ) per element, in nats.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import torch
from torch import nn

from .core import (
    LEVEL_TAGS,
    NUM_LEVELS,
    FeatureMap,
    FeaturePyramid,
    per_channel_stats,
    bilinear_resize,
)

# MI is evaluated at min(alpha, 1 - ALPHA_EPS): the KL diverges as alpha -> 1
# and the clamp bounds -log(1-alpha) while leaving the pull-down gradient alive.
ALPHA_EPS = 1e-4

CONTENT = "content"
STYLE = "style"


@dataclass
class Controller:
    """Per-element gate map in [0, 1], same shape as its feature map."""

    data: torch.Tensor
    level_tag: str | None = None


@dataclass
class NoiseSpec:
    """How noise is drawn: sampled per element, or replaced by its mean.

    Expectation mode ignores the seed; it is the deterministic-inference
    variant. Sample mode seeds an explicit generator (no global RNG).
    """

    mode: str = "sample"
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.mode not in ("sample", "expectation"):
            raise ValueError(f"noise mode must be sample|expectation, got {self.mode!r}")


@dataclass
class CompressedLevel:
    features: FeatureMap  # R, the noise-injected map
    alpha: Controller
    mi_map: torch.Tensor
    mi_mean_nats: torch.Tensor  # 0-dim


@dataclass
class CompressedPyramid:
    levels: list[CompressedLevel]

    @property
    def maps(self) -> list[FeatureMap]:
        return [lvl.features for lvl in self.levels]

    def mi_means(self) -> list[torch.Tensor]:
        return [lvl.mi_mean_nats for lvl in self.levels]


class BottleneckParams(nn.Module):
    """Per-level controller predictors for one branch (content or style).

    Each predictor sees all pyramid levels resized to its own level's spatial
    size and concatenated along channels; it is a conv3x3 -> ReLU -> conv3x3
    stack (reflection padded) followed by a sigmoid at call time.
    """

    def __init__(self, kind: str, tap_channels: tuple[int, ...], hidden_width: int = 256):
        super().__init__()
        if kind not in (CONTENT, STYLE):
            raise ValueError(f"kind must be {CONTENT!r} or {STYLE!r}, got {kind!r}")
        self.kind = kind
        self.tap_channels = tuple(tap_channels)
        self.hidden_width = hidden_width
        in_ch = sum(tap_channels)
        self.predictors = nn.ModuleList(
            nn.Sequential(
                nn.ReflectionPad2d(1),
                nn.Conv2d(in_ch, hidden_width, 3),
                nn.ReLU(),
                nn.ReflectionPad2d(1),
                nn.Conv2d(hidden_width, out_ch, 3),
            )
            for out_ch in tap_channels
        )


def predict_controller(
    pyramid: FeaturePyramid, level: int, params: BottleneckParams
) -> Controller:
    """Predict the gate map for one level (1-based, shallow to deep)."""
    if not 1 <= level <= NUM_LEVELS:
        raise ValueError(f"level must be in 1..{NUM_LEVELS}, got {level}")
    maps = pyramid.maps
    if len(maps) != NUM_LEVELS:
        raise ValueError(f"pyramid must have {NUM_LEVELS} levels, got {len(maps)}")
    target_h, target_w = maps[level - 1].data.shape[-2:]
    stack = torch.cat(
        [bilinear_resize(m.data, target_h, target_w) for m in maps], dim=1
    )
    logits = params.predictors[level - 1](stack)
    return Controller(torch.sigmoid(logits), maps[level - 1].level_tag)


def inject_noise(
    fmap: FeatureMap,
    alpha: Controller,
    spec: NoiseSpec,
    generator: torch.Generator | None = None,
) -> FeatureMap:
    """R = alpha*F + (1-alpha)*eps with statistics-matched Gaussian noise.

    The noise is a constant w.r.t. differentiation: gradients flow through
    alpha and F only, never through eps's dependence on the feature stats.
    """
    if fmap.data.shape != alpha.data.shape:
        raise ValueError(
            f"feature/controller shape mismatch: {tuple(fmap.shape)} vs "
            f"{tuple(alpha.data.shape)}"
        )
    mean, std = per_channel_stats(fmap.data.detach())
    mean = mean.unsqueeze(-1).unsqueeze(-1)
    if spec.mode == "expectation":
        eps = mean.expand_as(fmap.data)
    else:
        if generator is None:
            generator = torch.Generator(device=fmap.data.device)
            generator.manual_seed(spec.seed if spec.seed is not None else 0)
        std = std.unsqueeze(-1).unsqueeze(-1)
        noise = torch.randn(
            fmap.data.shape, generator=generator,
            dtype=fmap.data.dtype, device=fmap.data.device,
        )
        eps = mean + std * noise
    a = alpha.data
    return FeatureMap(a * fmap.data + (1.0 - a) * eps, fmap.level_tag)


def mutual_information(
    fmap: FeatureMap, alpha: Controller
) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-element information kept by the gate, in nats, plus its mean.

    Channels with zero spatial variance carry no information beyond their
    mean (which the noise preserves), so their normalized deviation is 0.
    """
    if fmap.data.shape != alpha.data.shape:
        raise ValueError(
            f"feature/controller shape mismatch: {tuple(fmap.shape)} vs "
            f"{tuple(alpha.data.shape)}"
        )
    mean, std = per_channel_stats(fmap.data)
    mean = mean.unsqueeze(-1).unsqueeze(-1)
    std = std.unsqueeze(-1).unsqueeze(-1)
    nonzero = std > 0
    safe_std = torch.where(nonzero, std, torch.ones_like(std))
    f = torch.where(nonzero, (fmap.data - mean) / safe_std, torch.zeros_like(fmap.data))
    a = alpha.data.clamp(min=0.0, max=1.0 - ALPHA_EPS)
    mi_map = -0.5 * (1.0 - (a * f) ** 2 - (1.0 - a) ** 2) - torch.log1p(-a)
    return mi_map, mi_map.mean()


def compress(
    pyramid: FeaturePyramid,
    params: BottleneckParams,
    spec: NoiseSpec,
    generator: torch.Generator | None = None,
) -> CompressedPyramid:
    """Gate, noise-inject, and score every pyramid level.

    Callers compressing several pyramids in one pass share one generator so
    the draws stay decorrelated; otherwise one is seeded from the spec.
    """
    if generator is None and spec.mode == "sample":
        generator = torch.Generator(device=pyramid.maps[0].data.device)
        generator.manual_seed(spec.seed if spec.seed is not None else 0)
    levels = []
    for i, fmap in enumerate(pyramid.maps, start=1):
        alpha = predict_controller(pyramid, i, params)
        compressed = inject_noise(fmap, alpha, spec, generator)
        mi_map, mi_mean = mutual_information(fmap, alpha)
        levels.append(CompressedLevel(compressed, alpha, mi_map, mi_mean))
    return CompressedPyramid(levels)


def passthrough_pyramid(pyramid: FeaturePyramid) -> CompressedPyramid:
    """A pyramid with no bottleneck inserted: R = F, zero information cost.

    Used by the branch-ablation configurations that drop CIBs or SIBs.
    """
    levels = []
    for fmap in pyramid.maps:
        ones = Controller(torch.ones_like(fmap.data), fmap.level_tag)
        zero_map = torch.zeros_like(fmap.data)
        levels.append(CompressedLevel(fmap, ones, zero_map, zero_map.mean()))
    return CompressedPyramid(levels)


def info_map_bits(cp: CompressedPyramid, level: int) -> torch.Tensor:
    """Per-element information map converted from nats to bits."""
    if not 1 <= level <= NUM_LEVELS:
        raise ValueError(f"level must be in 1..{NUM_LEVELS}, got {level}")
    return cp.levels[level - 1].mi_map / math.log(2.0)


def export_info_outputs(cp: CompressedPyramid, out_dir, branch: str) -> list[str]:
    """Write per-level bits heatmaps (PNG) and a per-layer mean MI CSV.

    Returns the created file paths. Heatmaps average the per-element bits
    over batch and channels; the color scale is annotated on the figure.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    created = []
    for i, tag in enumerate(LEVEL_TAGS, start=1):
        bits = info_map_bits(cp, i).detach().mean(dim=(0, 1)).cpu().numpy()
        fig, ax = plt.subplots(figsize=(4, 4))
        im = ax.imshow(bits, cmap="viridis")
        ax.set_title(f"{branch} {tag} (bits)")
        ax.axis("off")
        fig.colorbar(im, ax=ax, fraction=0.046)
        path = out / f"{branch}_{tag}_bits.png"
        fig.savefig(path, dpi=100, bbox_inches="tight")
        plt.close(fig)
        created.append(str(path))
    csv_path = out / f"info_{branch}.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "mi_mean_nats", "mi_mean_bits"])
        for tag, lvl in zip(LEVEL_TAGS, cp.levels):
            nats = float(lvl.mi_mean_nats)
            writer.writerow([tag, f"{nats:.9f}", f"{nats / math.log(2.0):.9f}"])
    created.append(str(csv_path))
    return created
