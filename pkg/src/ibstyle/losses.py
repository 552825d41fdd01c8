"""Training losses: information cost, feature-space content fidelity,
mean/variance style distance, and cycle reconstruction, plus their weighted
total. Norms follow the un-normalized Euclidean convention sqrt(sum of
squares) over the whole tensor, so the default weights keep their meaning.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import torch

from .bottleneck import CompressedPyramid
from .core import FeaturePyramid, ImageTensor
from .encoder import EncoderWeights, encode
from .errors import NumericError
from .transfer import PARAMETER_FREE, TransferParams, multi_level_transfer

# Variance floor for the differentiable channel-std used inside the style
# loss; exact population statistics would have an unbounded sqrt gradient on
# ReLU-silenced (constant) channels.
_STD_EPS = 1e-8


@dataclass
class LossWeights:
    info: float = 5.0
    content: float = 3.0
    style: float = 10.0
    rec: float = 10.0

    def __post_init__(self) -> None:
        for name in ("info", "content", "style", "rec"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be >= 0")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.info, self.content, self.style, self.rec)


DEFAULT_WEIGHTS = LossWeights()


@dataclass
class LossReport:
    """One step's loss terms; total is the weighted sum of the parts."""

    info: float
    content: float
    style: float
    rec: float
    total: float
    per_layer_mi_nats_content: list[float] = field(default_factory=list)
    per_layer_mi_nats_style: list[float] = field(default_factory=list)
    step: int | None = None

    def to_json_line(self) -> str:
        payload = {
            "step": self.step,
            "info": self.info,
            "content": self.content,
            "style": self.style,
            "rec": self.rec,
            "total": self.total,
            "mi_nats_content": self.per_layer_mi_nats_content,
            "mi_nats_style": self.per_layer_mi_nats_style,
            "mi_bits_content": [v / math.log(2) for v in self.per_layer_mi_nats_content],
            "mi_bits_style": [v / math.log(2) for v in self.per_layer_mi_nats_style],
        }
        return json.dumps(payload)


def _l2(x: torch.Tensor) -> torch.Tensor:
    return torch.linalg.vector_norm(x.flatten())


def _soft_channel_stats(data: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    flat = data.flatten(2)
    mean = flat.mean(dim=2)
    std = torch.sqrt(flat.var(dim=2, unbiased=False) + _STD_EPS)
    return mean, std


def info_loss(cp_c: CompressedPyramid, cp_s: CompressedPyramid) -> torch.Tensor:
    """Mean per-layer information kept, summed over the two branches."""
    content = torch.stack(cp_c.mi_means()).mean()
    style = torch.stack(cp_s.mi_means()).mean()
    return content + style


def content_loss(
    I_cs: ImageTensor,
    F_c: FeaturePyramid,
    F_s: FeaturePyramid,
    weights: EncoderWeights,
    t_prime: TransferParams,
) -> torch.Tensor:
    """Distance of the output's features to the parameter-free transfer of
    the raw (uncompressed) pyramids."""
    pyr_cs = encode(I_cs, weights)
    return content_loss_from_features(pyr_cs, F_c, F_s, t_prime)


def content_loss_from_features(
    pyr_cs: FeaturePyramid,
    F_c: FeaturePyramid,
    F_s: FeaturePyramid,
    t_prime: TransferParams,
) -> torch.Tensor:
    if t_prime.variant != PARAMETER_FREE:
        raise ValueError("content loss target must use the parameter-free transfer")
    targets = multi_level_transfer(F_c, F_s, t_prime)
    total = pyr_cs.maps[0].data.new_zeros(())
    for out, target in zip(pyr_cs.maps, targets):
        total = total + _l2(out.data - target.data)
    return total


def style_loss(
    I_cs: ImageTensor, I_s: ImageTensor, weights: EncoderWeights
) -> torch.Tensor:
    """Channel mean/std distance between output and style features."""
    pyr_cs = encode(I_cs, weights)
    pyr_s = encode(I_s, weights)
    return style_loss_from_features(pyr_cs, pyr_s)


def style_loss_from_features(
    pyr_cs: FeaturePyramid, pyr_s: FeaturePyramid
) -> torch.Tensor:
    total = pyr_cs.maps[0].data.new_zeros(())
    for out, ref in zip(pyr_cs.maps, pyr_s.maps):
        mean_out, std_out = _soft_channel_stats(out.data)
        mean_ref, std_ref = _soft_channel_stats(ref.data)
        total = total + _l2(mean_out - mean_ref) + _l2(std_out - std_ref)
    return total


def rec_loss(
    I_c_hat: ImageTensor,
    I_c: ImageTensor,
    I_s_hat: ImageTensor,
    I_s: ImageTensor,
    content_weight: float = 1.0,
    style_weight: float = 1.0,
) -> torch.Tensor:
    """Cycle reconstruction distance for both domains.

    The per-pair weights implement the single-domain ablations by zeroing
    one of the two norm terms.
    """
    if I_c_hat.shape != I_c.shape:
        raise ValueError(
            f"content reconstruction shape mismatch: {tuple(I_c_hat.shape)} vs "
            f"{tuple(I_c.shape)}"
        )
    if I_s_hat.shape != I_s.shape:
        raise ValueError(
            f"style reconstruction shape mismatch: {tuple(I_s_hat.shape)} vs "
            f"{tuple(I_s.shape)}"
        )
    return content_weight * _l2(I_c_hat - I_c) + style_weight * _l2(I_s_hat - I_s)


def total_loss(
    info,
    content,
    style,
    rec,
    lambdas: LossWeights = DEFAULT_WEIGHTS,
    per_layer_mi_content: list[float] | None = None,
    per_layer_mi_style: list[float] | None = None,
    step: int | None = None,
):
    """Weighted sum of the four terms.

    Returns (total, report): `total` keeps the autograd graph when the parts
    are tensors; the report holds detached floats for logging.
    """
    def as_float(value) -> float:
        return float(value.detach()) if torch.is_tensor(value) else float(value)

    parts = {"info": info, "content": content, "style": style, "rec": rec}
    for name, value in parts.items():
        if not math.isfinite(as_float(value)):
            raise NumericError(
                f"non-finite {name} loss ({as_float(value)}); "
                f"all terms: { {k: as_float(v) for k, v in parts.items()} }"
            )
    total = (
        lambdas.info * info
        + lambdas.content * content
        + lambdas.style * style
        + lambdas.rec * rec
    )
    report = LossReport(
        info=as_float(info),
        content=as_float(content),
        style=as_float(style),
        rec=as_float(rec),
        total=as_float(total),
        per_layer_mi_nats_content=list(per_layer_mi_content or []),
        per_layer_mi_nats_style=list(per_layer_mi_style or []),
        step=step,
    )
    return total, report
