"""fume/net/__init__.py

The dual-stream network, its ablation variants and the checkpoint format.
"""

from .variants import ABLATION_ORDER, STREAMS, ModelVariantConfig, Variant
from .blocks import DECODER_WIDTH, ChannelAttentionFusion, ClassificationHead, Encoder, FeatureFusionDecoder
from .model import ForwardOutput, FumeNet, build
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "ABLATION_ORDER",
    "STREAMS",
    "ModelVariantConfig",
    "Variant",
    "DECODER_WIDTH",
    "ChannelAttentionFusion",
    "ClassificationHead",
    "Encoder",
    "FeatureFusionDecoder",
    "ForwardOutput",
    "FumeNet",
    "build",
    "load_checkpoint",
    "save_checkpoint",
]
