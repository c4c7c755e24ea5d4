from .conditioning import COND_LEN, Condition, Vocabulary, default_vocabulary
from .features import FeaturePassSpec, FeatureStore, TapRouter
from .unet import DenoiserNetwork, UNetSpec
from .autoencoder import AutoEncoder, Decoder, Encoder, PbrDecoderSet
from .perceptual import PerceptualMetric

__all__ = [
    "COND_LEN",
    "Condition",
    "Vocabulary",
    "default_vocabulary",
    "FeaturePassSpec",
    "FeatureStore",
    "TapRouter",
    "DenoiserNetwork",
    "UNetSpec",
    "AutoEncoder",
    "Encoder",
    "Decoder",
    "PbrDecoderSet",
    "PerceptualMetric",
]
