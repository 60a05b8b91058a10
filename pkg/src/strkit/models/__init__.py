from .recognizer import ModelConfig, StageOutputs, TextRecognizer, load_checkpoint, save_checkpoint
from .backbones import build_feature_extractor, feature_dim, he_init_convs
from .heads import AttentionDecoder, CtcHead, ProjectionHead, RotationHead, decode_ctc_greedy
from .sequence import ContextEncoder
from .tps import LocalizationNetwork, TpsConfig, TpsTransform, TpsWarper

__all__ = [
    "AttentionDecoder",
    "ContextEncoder",
    "CtcHead",
    "LocalizationNetwork",
    "ModelConfig",
    "ProjectionHead",
    "RotationHead",
    "StageOutputs",
    "TextRecognizer",
    "TpsConfig",
    "TpsTransform",
    "TpsWarper",
    "build_feature_extractor",
    "decode_ctc_greedy",
    "feature_dim",
    "he_init_convs",
    "load_checkpoint",
    "save_checkpoint",
]
