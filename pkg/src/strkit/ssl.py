"""Semi- and self-supervised mechanisms: pseudo-labeling, the EMA
teacher for consistency training, rotation pretext batches, and the
momentum-queue contrastive step."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .augment import AugmentPolicy, ContrastivePolicy, contrastive_views, sample_view
from .corpus import PseudoLabeledSample, UnlabeledSample
from .losses import LossValue, consistency_mse, ctc_nll_batch, info_nce
from .models.heads import AttentionVocab, CtcHead, encode_attention_targets
from .models.recognizer import TextRecognizer, to_model_input

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# EMA teacher


@torch.no_grad()
def ema_update(teacher_params, student_params, momentum: float) -> None:
    """theta' <- m * theta' + (1 - m) * theta, elementwise and exact."""
    teacher_params = list(teacher_params)
    student_params = list(student_params)
    if len(teacher_params) != len(student_params):
        raise ValueError("teacher/student parameter lists differ in length")
    for t, s in zip(teacher_params, student_params):
        if t.shape != s.shape:
            raise ValueError(f"parameter shape mismatch: {tuple(t.shape)} vs {tuple(s.shape)}")
        t.mul_(momentum).add_(s, alpha=1.0 - momentum)


class EmaTeacher:
    """A gradient-free copy of the student, updated by EMA.

    Momentum defaults to 0.999, the customary value for both the
    consistency teacher and the momentum encoder.
    """

    def __init__(self, student: nn.Module, momentum: float = 0.999):
        if not 0.0 <= momentum <= 1.0:
            raise ValueError("momentum must be in [0, 1]")
        self.momentum = momentum
        self.module = copy.deepcopy(student)
        for p in self.module.parameters():
            p.requires_grad_(False)
        self.module.eval()

    def update(self, student: nn.Module) -> None:
        ema_update(self.module.parameters(), student.parameters(), self.momentum)
        # Buffers (e.g. batch-norm statistics) track the student directly.
        with torch.no_grad():
            for tb, sb in zip(self.module.buffers(), student.buffers()):
                tb.copy_(sb)


# --------------------------------------------------------------------------
# Negative key queue


class NegativeQueue:
    """FIFO dictionary of unit-norm negative keys, capacity K."""

    def __init__(self, capacity: int, dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.dim = dim
        self._store = torch.zeros(capacity, dim)
        self._cursor = 0
        self._filled = 0

    def __len__(self) -> int:
        return self._filled

    def enqueue(self, keys: torch.Tensor) -> None:
        keys = keys.detach()
        n = keys.shape[0]
        if n > self.capacity:
            raise ValueError(f"batch of {n} keys exceeds queue capacity {self.capacity}")
        end = self._cursor + n
        if end <= self.capacity:
            self._store[self._cursor : end] = keys
        else:
            first = self.capacity - self._cursor
            self._store[self._cursor :] = keys[:first]
            self._store[: end - self.capacity] = keys[first:]
        self._cursor = end % self.capacity
        self._filled = min(self.capacity, self._filled + n)

    def keys(self) -> torch.Tensor:
        """Stored keys, oldest first."""
        if self._filled < self.capacity:
            return self._store[: self._filled].clone()
        return torch.cat([self._store[self._cursor :], self._store[: self._cursor]]).clone()


# --------------------------------------------------------------------------
# Pseudo-labeling


@dataclass
class PseudoLabelStats:
    total: int = 0
    kept: int = 0
    dropped_empty: int = 0
    dropped_low_confidence: int = 0
    confidence_histogram: list[int] = field(default_factory=lambda: [0] * 10)

    def record(self, confidence: float) -> None:
        bucket = min(9, int(confidence * 10))
        self.confidence_histogram[bucket] += 1


def generate_pseudo_labels(
    model: TextRecognizer,
    samples: list[UnlabeledSample],
    images: list[np.ndarray],
    min_confidence: float = 0.0,
    batch_size: int = 64,
) -> tuple[list[PseudoLabeledSample], PseudoLabelStats]:
    """Greedy-decode every unlabeled image and keep nonempty predictions
    at or above ``min_confidence``. Deterministic for a fixed model."""
    if len(samples) != len(images):
        raise ValueError("samples and images differ in length")
    stats = PseudoLabelStats(total=len(samples))
    out: list[PseudoLabeledSample] = []
    model.eval()
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        batch = to_model_input(images[start : start + batch_size])
        texts, confs = model.recognize(batch)
        for sample, text, conf in zip(chunk, texts, confs):
            conf = min(1.0, max(0.0, float(conf)))
            if not text:
                stats.dropped_empty += 1
                continue
            stats.record(conf)
            if conf < min_confidence:
                stats.dropped_low_confidence += 1
                continue
            out.append(PseudoLabeledSample(base=sample, pseudo_label=text, confidence=conf))
            stats.kept += 1
    return out, stats


# --------------------------------------------------------------------------
# Mean-teacher consistency


def _step_distributions(model: TextRecognizer, images: torch.Tensor, steps: int):
    """Per-step class distributions for the consistency comparison.

    CTC heads expose softmax over their frame logits. Attention heads
    greedily roll out ``steps`` symbols; the caller feeds the chosen
    symbols to the other model via ``_forced_distributions``.
    """
    stages = model.encode(images)
    if isinstance(model.head, CtcHead):
        return F.softmax(model.head(stages.context), dim=-1), None
    logits, symbols = model.head.rollout_logits(stages.context, steps)
    return F.softmax(logits, dim=-1), symbols


def _forced_distributions(model: TextRecognizer, images: torch.Tensor, symbols: torch.Tensor):
    stages = model.encode(images)
    logits = model.head.forced_logits(stages.context, symbols)
    return F.softmax(logits, dim=-1)


def mean_teacher_step(
    student: TextRecognizer,
    teacher: EmaTeacher,
    labeled_images: list[np.ndarray],
    labels: list[str],
    unlabeled_images: list[np.ndarray],
    policy: AugmentPolicy,
    alpha: float = 1.0,
    rng: np.random.Generator | None = None,
    rollout_steps: int = 10,
) -> tuple[LossValue, dict]:
    """Recognition loss on the labeled batch plus alpha times the
    consistency MSE between student and teacher outputs.

    Both views are drawn on the raw concatenated labeled+unlabeled
    batch; the student sees the first view (its labeled slice also
    feeds the recognition loss, so recognition and consistency share
    one forward pass for CTC heads), the teacher sees the second.
    """
    rng = rng or np.random.default_rng()
    pool = list(labeled_images) + list(unlabeled_images)
    n_labeled = len(labeled_images)
    view_a = to_model_input([sample_view(img, policy, rng) for img in pool])
    view_b = to_model_input([sample_view(img, policy, rng) for img in pool])

    skipped = 0
    if isinstance(student.head, CtcHead):
        stages = student.encode(view_a)
        logits = student.head(stages.context)
        recog, skipped = ctc_nll_batch(logits[:n_labeled], labels, student.charset)
        student_dist = F.softmax(logits, dim=-1)
        with torch.no_grad():
            teacher_dist, _ = _step_distributions(teacher.module, view_b, 0)
    else:
        stages = student.encode(view_a)
        inputs, targets = encode_attention_targets(labels, student.head.vocab)
        step_logits = student.head.teacher_forced_logits(stages.context[:n_labeled], inputs)
        recog_value = F.cross_entropy(
            step_logits.reshape(-1, step_logits.shape[-1]),
            targets.reshape(-1),
            ignore_index=AttentionVocab.PAD,
        )
        recog = LossValue(value=recog_value, count=int((targets != AttentionVocab.PAD).sum()))
        rollout, symbols = student.head.rollout_logits(stages.context, rollout_steps)
        student_dist = F.softmax(rollout, dim=-1)
        with torch.no_grad():
            teacher_dist = _forced_distributions(teacher.module, view_b, symbols)

    if alpha > 0:
        consistency = consistency_mse(student_dist, teacher_dist)
        total = recog.value + alpha * consistency.value
        mse_val = float(consistency.value.detach())
    else:
        total = recog.value
        mse_val = 0.0
    detail = {
        "recognition": float(recog.value.detach()),
        "consistency": mse_val,
        "skipped": skipped,
    }
    return LossValue(value=total, count=recog.count), detail


# --------------------------------------------------------------------------
# Rotation pretext


def make_rotation_batch(images: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Each input at 0, 90, 180, and 270 degrees, grouped by rotation.

    90/270 rotations transpose the raster, so those are resized back to
    the model input shape; 0 and 180 keep their pixels untouched.
    """
    if images.dim() != 4:
        raise ValueError(f"expected (B, C, H, W) images, got {tuple(images.shape)}")
    B = images.shape[0]
    out_size = (images.shape[2], images.shape[3])
    groups = [images]
    for quarter_turns in (1, 2, 3):
        rotated = torch.rot90(images, quarter_turns, dims=(2, 3))
        if rotated.shape[2:] != images.shape[2:]:
            rotated = F.interpolate(
                rotated, size=out_size, mode="bilinear", align_corners=False
            )
        groups.append(rotated)
    labels = torch.arange(4).repeat_interleave(B)
    return torch.cat(groups, dim=0), labels


# --------------------------------------------------------------------------
# Momentum-contrast step


@dataclass
class MocoState:
    """Queue plus counters shared across contrastive steps."""

    queue: NegativeQueue
    warmup_steps: int = 0


def moco_step(
    query_encoder: nn.Module,
    momentum_encoder: EmaTeacher,
    state: MocoState,
    images: list[np.ndarray],
    policy: ContrastivePolicy,
    tau: float = 0.07,
    rng: np.random.Generator | None = None,
) -> LossValue:
    """One contrastive step: update the momentum encoder, encode two
    views, score against the queue, then rotate the batch keys in."""
    if len(images) > state.queue.capacity:
        raise ValueError(
            f"batch size {len(images)} exceeds queue capacity {state.queue.capacity}"
        )
    rng = rng or np.random.default_rng()
    momentum_encoder.update(query_encoder)

    pairs = [contrastive_views(img, policy, rng) for img in images]
    view_q = to_model_input([a for a, _ in pairs])
    view_k = to_model_input([b for _, b in pairs])

    queries = query_encoder(view_q)
    with torch.no_grad():
        keys = momentum_encoder.module(view_k)

    negatives = state.queue.keys()
    if negatives.shape[0] == 0:
        state.warmup_steps += 1
    loss = info_nce(queries, keys, negatives, tau)
    state.queue.enqueue(keys)
    return loss
