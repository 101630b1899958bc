"""
ufcl-core models - the trainable encoder and its optimizer.
"""

from models.encoder import (
    EncoderParams,
    EncoderSpec,
    FeatureTensor,
    Pooling,
    encode_all,
    encoder_backward,
    encoder_forward,
    init_encoder,
)
from models.optim import AdamState, adam_step

__all__ = [
    "AdamState",
    "EncoderParams",
    "EncoderSpec",
    "FeatureTensor",
    "Pooling",
    "adam_step",
    "encode_all",
    "encoder_backward",
    "encoder_forward",
    "init_encoder",
]
