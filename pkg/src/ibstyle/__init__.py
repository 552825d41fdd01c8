"""Artistic style transfer with information-bottleneck feature disentanglement.

A fixed multi-tap encoder feeds per-level gated noise-injection bottlenecks
(one bank for content, one for style), an attention-based statistics transfer,
and a trainable decoder; training couples an information-compression loss
with a cross-domain cycle reconstruction.
"""

from .bottleneck import (
    ALPHA_EPS,
    BottleneckParams,
    CompressedPyramid,
    Controller,
    NoiseSpec,
    compress,
    info_map_bits,
    inject_noise,
    mutual_information,
    predict_controller,
)
from .core import (
    LEVEL_TAGS,
    ChannelStats,
    FeatureMap,
    FeaturePyramid,
    ImageTensor,
    channel_stats,
    concat_channels,
    load_image,
    resize_to,
    save_image,
)
from .decoder import DecoderParams, clamp_to_image, decode
from .encoder import (
    EncoderWeights,
    build_tiny_encoder,
    encode,
    load_encoder,
    save_encoder,
)
from .errors import ConfigMismatchError, FormatError, IngestionError, NumericError
from .losses import (
    LossReport,
    LossWeights,
    content_loss,
    info_loss,
    rec_loss,
    style_loss,
    total_loss,
)
from .model import ModelConfig, StyleModel, build_model
from .training import (
    TrainConfig,
    TrainState,
    forward_cross_domain,
    forward_in_domain,
    load_checkpoint,
    save_checkpoint,
    train,
    train_step,
)
from .transfer import (
    InterpolationWeights,
    TransferParams,
    adaattn_level,
    interpolate_styles,
    multi_level_transfer,
)

__version__ = "0.1.0"
