"""The four-stage recognition pipeline and its checkpoint format.

A recognizer is transformation -> feature extraction -> sequence
modeling -> prediction. The two reference configurations are

    crnn  none + vgg7     + bilstm + ctc
    trba  tps  + resnet29 + bilstm + attention

plus "mini" variants swapping in the 3-layer backbone for CPU-scale
runs. Checkpoints carry a format version and a digest of the producing
configuration; loading with a different configuration is refused.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict

import cv2
import numpy as np
import torch
import torch.nn as nn

from ..charset import CharsetSpec, default_charset
from .backbones import SEQUENCE_STEPS, build_feature_extractor, feature_dim
from .heads import MAX_WORD_LENGTH, AttentionDecoder, CtcHead, ctc_sequence_confidence, decode_ctc_greedy
from .sequence import ContextEncoder
from .tps import TpsConfig, TpsTransform

CHECKPOINT_VERSION = 1

INPUT_H = 32
INPUT_W = 100


@dataclass(frozen=True)
class ModelConfig:
    transform: str = "none"  # none | tps
    features: str = "vgg7"  # vgg7 | resnet29 | mini
    sequence: str = "bilstm"  # none | bilstm
    predictor: str = "ctc"  # ctc | attention
    hidden: int = 256
    fiducials: int = 20
    charset: CharsetSpec = field(default_factory=default_charset)

    def __post_init__(self):
        if self.transform not in ("none", "tps"):
            raise ValueError(f"unknown transform {self.transform!r}")
        if self.sequence not in ("none", "bilstm"):
            raise ValueError(f"unknown sequence stage {self.sequence!r}")
        if self.predictor not in ("ctc", "attention"):
            raise ValueError(f"unknown predictor {self.predictor!r}")

    def digest(self) -> str:
        payload = {
            "transform": self.transform,
            "features": self.features,
            "sequence": self.sequence,
            "predictor": self.predictor,
            "hidden": self.hidden,
            "fiducials": self.fiducials,
            "charset": self.charset.recognizable_chars,
            "specials": list(self.charset.special_tokens),
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()

    @staticmethod
    def crnn() -> "ModelConfig":
        return ModelConfig(transform="none", features="vgg7", sequence="bilstm", predictor="ctc")

    @staticmethod
    def trba() -> "ModelConfig":
        return ModelConfig(
            transform="tps", features="resnet29", sequence="bilstm", predictor="attention"
        )

    @staticmethod
    def mini_crnn() -> "ModelConfig":
        return ModelConfig(
            transform="none", features="mini", sequence="bilstm", predictor="ctc", hidden=64
        )

    @staticmethod
    def mini_trba() -> "ModelConfig":
        return ModelConfig(
            transform="tps", features="mini", sequence="bilstm", predictor="attention", hidden=64
        )

    @staticmethod
    def preset(name: str) -> "ModelConfig":
        presets = {
            "crnn": ModelConfig.crnn,
            "trba": ModelConfig.trba,
            "mini-crnn": ModelConfig.mini_crnn,
            "mini-trba": ModelConfig.mini_trba,
        }
        try:
            return presets[name]()
        except KeyError:
            raise ValueError(f"unknown model preset {name!r}") from None


@dataclass
class StageOutputs:
    rectified: torch.Tensor
    features: torch.Tensor
    context: torch.Tensor
    logits: torch.Tensor | None


def to_model_input(images: list[np.ndarray] | np.ndarray) -> torch.Tensor:
    """uint8 rasters (any size, grayscale or color) to a (B, 1, 32, 100)
    float tensor scaled to [-1, 1]."""
    tensors = []
    for img in images:
        if img.ndim == 3:
            img = cv2.cvtColor(img, cv2.COLOR_BGR2GRAY)
        if img.shape != (INPUT_H, INPUT_W):
            img = cv2.resize(img, (INPUT_W, INPUT_H), interpolation=cv2.INTER_LINEAR)
        tensors.append(torch.from_numpy(np.ascontiguousarray(img)))
    batch = torch.stack(tensors).unsqueeze(1).float()
    return batch / 127.5 - 1.0


class TextRecognizer(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.charset = config.charset
        if config.transform == "tps":
            self.transform = TpsTransform(TpsConfig(fiducial_count=config.fiducials))
        else:
            self.transform = None
        self.features = build_feature_extractor(config.features)
        feat_dim = feature_dim(config.features)
        if config.sequence == "bilstm":
            self.context = ContextEncoder(feat_dim, config.hidden)
            context_dim = config.hidden
        else:
            self.context = None
            context_dim = feat_dim
        if config.predictor == "ctc":
            self.head = CtcHead(context_dim, config.charset)
        else:
            self.head = AttentionDecoder(context_dim, config.hidden, config.charset)

    @property
    def sequence_steps(self) -> int:
        return SEQUENCE_STEPS

    def encode(self, images: torch.Tensor) -> StageOutputs:
        """Run transformation, feature extraction, and sequence modeling."""
        rectified = self.transform(images) if self.transform is not None else images
        features = self.features(rectified)
        context = self.context(features) if self.context is not None else features
        return StageOutputs(rectified=rectified, features=features, context=context, logits=None)

    def forward(self, images: torch.Tensor, target_ids: torch.Tensor | None = None):
        """CTC: per-step logits. Attention: teacher-forced logits for
        ``target_ids`` (required in training mode)."""
        stages = self.encode(images)
        if isinstance(self.head, CtcHead):
            stages.logits = self.head(stages.context)
        else:
            if target_ids is None:
                raise ValueError("attention training requires target_ids")
            stages.logits = self.head.teacher_forced_logits(stages.context, target_ids)
        return stages

    @torch.no_grad()
    def recognize(self, images: torch.Tensor) -> tuple[list[str], list[float]]:
        """Greedy transcription with per-sample sequence confidence."""
        was_training = self.training
        self.eval()
        try:
            stages = self.encode(images)
            if isinstance(self.head, CtcHead):
                logits = self.head(stages.context)
                texts, confs = [], []
                for b in range(logits.shape[0]):
                    text = decode_ctc_greedy(logits[b], self.charset)
                    conf = ctc_sequence_confidence(logits[b], text, self.charset) if text else 0.0
                    texts.append(text)
                    confs.append(conf)
                return texts, confs
            texts, conf = self.head.greedy_decode(stages.context, MAX_WORD_LENGTH)
            return texts, [float(c) for c in conf]
        finally:
            if was_training:
                self.train()


def save_checkpoint(
    path,
    model: TextRecognizer,
    iteration: int,
    val_accuracy: float,
    extra: dict | None = None,
) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config_digest": model.config.digest(),
        "config": {
            k: v
            for k, v in asdict(model.config).items()
            if k != "charset"
        },
        "charset": model.config.charset.recognizable_chars,
        "iteration": iteration,
        "val_accuracy": val_accuracy,
        "state_dict": model.state_dict(),
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path, config: ModelConfig) -> tuple[TextRecognizer, dict]:
    """Rebuild a recognizer from ``path``; refuses configuration drift."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    digest = payload["config_digest"]
    if digest != config.digest():
        raise ValueError(
            f"checkpoint digest {digest[:12]} does not match the requested "
            f"configuration ({config.digest()[:12]})"
        )
    model = TextRecognizer(config)
    model.load_state_dict(payload["state_dict"])
    meta = {k: payload[k] for k in ("iteration", "val_accuracy", "extra")}
    return model, meta
