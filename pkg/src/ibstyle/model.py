"""The full encoder-bottleneck-transfer-decoder bundle.

Bundles the frozen encoder with the trainable pieces and exposes the
stylization forward passes shared by training, evaluation, and the CLI.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from . import bottleneck as bn
from .bottleneck import BottleneckParams, CompressedPyramid, NoiseSpec
from .core import FeaturePyramid, ImageTensor
from .decoder import DecoderParams, decode
from .encoder import EncoderWeights, encode
from .transfer import (
    LEARNABLE,
    PARAMETER_FREE,
    InterpolationWeights,
    TransferParams,
    interpolate_styles,
    multi_level_transfer,
)


@dataclass
class ModelConfig:
    """Architecture switches; the encoder supplies the channel widths."""

    use_cib: bool = True
    use_sib: bool = True
    kv_pool_limit: int = 64
    hidden_width: int | None = None  # None: 256 scaled by the encoder divisor


class StyleModel:
    """Frozen encoder plus the trainable bottlenecks, transfer, and decoder."""

    def __init__(
        self,
        encoder: EncoderWeights,
        cib: BottleneckParams | None,
        sib: BottleneckParams | None,
        transfer: TransferParams,
        decoder: DecoderParams,
    ):
        self.encoder = encoder
        self.cib = cib
        self.sib = sib
        self.transfer = transfer
        self.decoder = decoder
        self.t_prime = TransferParams(
            variant=PARAMETER_FREE, kv_pool_limit=transfer.kv_pool_limit
        )

    def trainables(self) -> nn.ModuleDict:
        modules = {}
        if self.cib is not None:
            modules["cib"] = self.cib
        if self.sib is not None:
            modules["sib"] = self.sib
        modules["transfer"] = self.transfer
        modules["decoder"] = self.decoder
        return nn.ModuleDict(modules)

    def encode_image(self, image: ImageTensor) -> FeaturePyramid:
        return encode(image, self.encoder)

    def compress_content(
        self,
        pyramid: FeaturePyramid,
        spec: NoiseSpec,
        generator: torch.Generator | None = None,
    ) -> CompressedPyramid:
        if self.cib is None:
            return bn.passthrough_pyramid(pyramid)
        return bn.compress(pyramid, self.cib, spec, generator)

    def compress_style(
        self,
        pyramid: FeaturePyramid,
        spec: NoiseSpec,
        generator: torch.Generator | None = None,
    ) -> CompressedPyramid:
        if self.sib is None:
            return bn.passthrough_pyramid(pyramid)
        return bn.compress(pyramid, self.sib, spec, generator)

    def render(self, cp_c: CompressedPyramid, cp_s: CompressedPyramid) -> ImageTensor:
        return decode(multi_level_transfer(cp_c, cp_s, self.transfer), self.decoder)

    @staticmethod
    def _generator_for(spec: NoiseSpec) -> torch.Generator | None:
        if spec.mode != "sample":
            return None
        gen = torch.Generator()
        gen.manual_seed(spec.seed if spec.seed is not None else 0)
        return gen

    def stylize(
        self, I_c: ImageTensor, I_s: ImageTensor, spec: NoiseSpec | None = None
    ) -> ImageTensor:
        """Unclamped stylized image; expectation-mode noise by default."""
        spec = spec or NoiseSpec("expectation")
        gen = self._generator_for(spec)
        cp_c = self.compress_content(self.encode_image(I_c), spec, gen)
        cp_s = self.compress_style(self.encode_image(I_s), spec, gen)
        return self.render(cp_c, cp_s)

    def stylize_interpolated(
        self,
        I_c: ImageTensor,
        style_images: list[ImageTensor],
        weights: InterpolationWeights,
        spec: NoiseSpec | None = None,
    ) -> ImageTensor:
        spec = spec or NoiseSpec("expectation")
        gen = self._generator_for(spec)
        cp_c = self.compress_content(self.encode_image(I_c), spec, gen)
        styles = [
            self.compress_style(self.encode_image(img), spec, gen)
            for img in style_images
        ]
        transferred = interpolate_styles(cp_c, styles, weights, self.transfer)
        return decode(transferred, self.decoder)

    def to_dtype(self, dtype: torch.dtype) -> "StyleModel":
        """In-place dtype move of trainables; returns a model with a cast encoder."""
        for module in self.trainables().values():
            module.to(dtype)
        return StyleModel(
            self.encoder.to(dtype), self.cib, self.sib, self.transfer, self.decoder
        )


def build_model(
    encoder: EncoderWeights, config: ModelConfig | None = None, seed: int = 0
) -> StyleModel:
    """Construct a model with deterministically initialized trainables."""
    config = config or ModelConfig()
    taps = encoder.tap_channels
    hidden = config.hidden_width
    if hidden is None:
        hidden = max(256 // encoder.width_divisor, 8)
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        cib = BottleneckParams(bn.CONTENT, taps, hidden) if config.use_cib else None
        sib = BottleneckParams(bn.STYLE, taps, hidden) if config.use_sib else None
        transfer = TransferParams(taps, LEARNABLE, config.kv_pool_limit)
        decoder = DecoderParams(taps)
    return StyleModel(encoder, cib, sib, transfer, decoder)
