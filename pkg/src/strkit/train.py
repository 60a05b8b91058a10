"""Optimization loop, schedules, and the experiment recipes.

Recipes cover supervised training (baseline), the two semi-supervised
methods (mean_teacher, pseudo_label), the two pretext pretrainings
(rotnet_pretrain, moco_pretrain), their best combination (pr =
rotation pretext + pseudo-labeling), and fine-tuning from an existing
checkpoint. Every recipe validates on a fixed cadence and keeps the
checkpoint with the best validation accuracy.
"""

from __future__ import annotations

import csv
import logging
import math
import queue as queue_mod
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path

import cv2
import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .augment import PRESETS, AugmentPolicy, ContrastivePolicy, contrastive_views, sample_view
from .corpus import UnlabeledSample
from .evaluation import word_accuracy
from .losses import LossValue, ctc_nll_batch, rotation_nll
from .models.backbones import build_feature_extractor, feature_dim
from .models.heads import AttentionVocab, CtcHead, ProjectionHead, RotationHead, encode_attention_targets
from .models.recognizer import ModelConfig, TextRecognizer, load_checkpoint, save_checkpoint, to_model_input
from .packing import PackedDataset
from .sampler import BalancedSampler
from .ssl import EmaTeacher, MocoState, NegativeQueue, generate_pseudo_labels, make_rotation_batch, mean_teacher_step, moco_step

log = logging.getLogger(__name__)

RECIPE_NAMES = (
    "baseline",
    "mean_teacher",
    "pseudo_label",
    "rotnet_pretrain",
    "moco_pretrain",
    "pr",
    "fine_tune",
)


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"  # adam | sgd
    max_lr: float = 0.0005
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    clip_norm: float = 5.0
    total_iters: int = 200_000
    batch_size: int = 128
    val_every: int = 2000
    warmup_frac: float = 0.1
    start_div: float = 25.0
    final_div: float = 1e4

    def __post_init__(self):
        if self.max_lr <= 0:
            raise ValueError("max_lr must be > 0")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be > 0")
        if self.kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")


@dataclass(frozen=True)
class TrainRecipe:
    name: str = "baseline"
    aug_preset: str = "none"
    aug_policy: AugmentPolicy | None = None
    init: str = "fresh"  # fresh | checkpoint | pretext-weights
    init_path: str | None = None
    alpha: float = 1.0
    ema_momentum: float = 0.999
    queue_size: int = 4096
    tau: float = 0.07
    min_confidence: float = 0.0
    fine_tune_iters: int = 40_000
    pretext_iters: int | None = None
    # The labeler inside pseudo_label/pr may train under its own
    # augmentation and budget: a better labeler yields better pseudo
    # labels without changing the final model's configuration.
    labeler_aug_preset: str | None = None
    labeler_iters: int | None = None

    def __post_init__(self):
        if self.name not in RECIPE_NAMES:
            raise ValueError(f"unknown recipe {self.name!r}")
        if self.init not in ("fresh", "checkpoint", "pretext-weights"):
            raise ValueError(f"unknown init mode {self.init!r}")
        if self.init in ("checkpoint", "pretext-weights") and not self.init_path:
            raise ValueError(f"init mode {self.init!r} requires init_path")
        if self.name == "fine_tune" and not self.init_path:
            raise ValueError("fine_tune requires a source checkpoint")

    def policy(self) -> AugmentPolicy:
        if self.aug_policy is not None:
            return self.aug_policy
        if self.aug_preset not in PRESETS:
            raise ValueError(f"unknown augmentation preset {self.aug_preset!r}")
        return PRESETS[self.aug_preset]


@dataclass(frozen=True)
class CheckpointRecord:
    iteration: int
    val_accuracy: float
    config_digest: str
    path: str

    def __post_init__(self):
        if not 0.0 <= self.val_accuracy <= 100.0:
            raise ValueError(f"validation accuracy {self.val_accuracy} outside [0, 100]")


def select_best_checkpoint(records: list[CheckpointRecord]) -> CheckpointRecord:
    """Highest validation accuracy; ties go to the earliest iteration."""
    if not records:
        raise ValueError("no checkpoint records")
    return max(records, key=lambda r: (r.val_accuracy, -r.iteration))


# --------------------------------------------------------------------------
# Schedule and clipping


def lr_one_cycle(iteration: int, config: OptimizerConfig) -> float:
    """One-cycle schedule: linear ramp from max_lr/25 to max_lr over the
    first 10% of iterations, then cosine decay to max_lr/1e4."""
    total = config.total_iters
    if not 0 <= iteration < total:
        raise ValueError(f"iteration {iteration} outside [0, {total})")
    warmup = max(1, round(config.warmup_frac * total))
    start = config.max_lr / config.start_div
    floor = config.max_lr / config.final_div
    if iteration <= warmup:
        return start + (config.max_lr - start) * iteration / warmup
    span = (total - 1) - warmup
    if span <= 0:
        return config.max_lr
    progress = (iteration - warmup) / span
    return floor + (config.max_lr - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))


def clip_gradients(grads, clip_norm: float, context: str = "") -> tuple[list, float]:
    """Scale gradients so the global L2 norm is at most ``clip_norm``.

    Gradients at or under the limit are returned untouched (bit-exact).
    Non-finite values raise immediately with ``context`` in the message.
    """
    if clip_norm <= 0:
        raise ValueError("clip_norm must be > 0")
    grads = [g for g in grads if g is not None]
    for g in grads:
        if not bool(torch.isfinite(g).all()):
            raise RuntimeError(f"non-finite gradient encountered {context}".strip())
    total = math.sqrt(sum(float((g.double() ** 2).sum()) for g in grads))
    if total > clip_norm:
        scale = clip_norm / total
        with torch.no_grad():
            for g in grads:
                g.mul_(scale)
    return grads, total


# --------------------------------------------------------------------------
# Data plumbing


@dataclass
class LoadedSplit:
    images: list[np.ndarray]
    labels: list[str] | None = None


@dataclass
class TrainData:
    """Decoded in-memory corpora, grouped dataset -> split.

    Desk-scale corpora fit in memory; packed datasets are decoded once
    up front so the training loop never touches the filesystem.
    """

    labeled: dict[str, dict[str, LoadedSplit]] = field(default_factory=dict)
    unlabeled: dict[str, LoadedSplit] = field(default_factory=dict)

    def train_sets(self) -> dict[str, LoadedSplit]:
        return {
            name: splits["train"] for name, splits in self.labeled.items() if "train" in splits
        }

    def merged_split(self, split: str) -> LoadedSplit:
        images: list[np.ndarray] = []
        labels: list[str] = []
        for splits in self.labeled.values():
            part = splits.get(split)
            if part is None:
                continue
            images.extend(part.images)
            labels.extend(part.labels or [])
        return LoadedSplit(images=images, labels=labels)

    def unlabeled_pool(self) -> list[np.ndarray]:
        images: list[np.ndarray] = []
        for part in self.unlabeled.values():
            images.extend(part.images)
        return images


def decode_image(data: bytes) -> np.ndarray:
    img = cv2.imdecode(np.frombuffer(data, dtype=np.uint8), cv2.IMREAD_GRAYSCALE)
    if img is None:
        raise ValueError("image decode failed")
    return img


def load_training_data(
    labeled_paths: list[str | Path], unlabeled_paths: list[str | Path] | None = None
) -> TrainData:
    data = TrainData()
    for path in labeled_paths:
        packed = PackedDataset(path)
        for entry in packed.iter_entries():
            image = decode_image(packed.read_bytes(entry.id))
            if entry.label is None:
                part = data.unlabeled.setdefault(entry.dataset, LoadedSplit(images=[]))
                part.images.append(image)
                continue
            splits = data.labeled.setdefault(entry.dataset, {})
            part = splits.setdefault(entry.split, LoadedSplit(images=[], labels=[]))
            part.images.append(image)
            part.labels.append(entry.label)
    for path in unlabeled_paths or []:
        packed = PackedDataset(path)
        for entry in packed.iter_entries():
            image = decode_image(packed.read_bytes(entry.id))
            part = data.unlabeled.setdefault(entry.dataset, LoadedSplit(images=[]))
            part.images.append(image)
    return data


# --------------------------------------------------------------------------
# Supervised loss


def recognition_loss(
    model: TextRecognizer, images: list[np.ndarray], labels: list[str]
) -> tuple[LossValue, int]:
    """Mean word-level NLL for a batch; returns skipped sample count
    (CTC alignments that cannot fit the frame budget)."""
    batch = to_model_input(images)
    if isinstance(model.head, CtcHead):
        stages = model(batch)
        return ctc_nll_batch(stages.logits, labels, model.charset)
    inputs, targets = encode_attention_targets(labels, model.head.vocab, device=batch.device)
    stages = model(batch, target_ids=inputs)
    logits = stages.logits
    flat = F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]),
        targets.reshape(-1),
        ignore_index=AttentionVocab.PAD,
    )
    count = int((targets != AttentionVocab.PAD).sum())
    return LossValue(value=flat, count=count), 0


# --------------------------------------------------------------------------
# Metrics log


class MetricsLog:
    FIELDS = ("iter", "phase", "dataset", "loss", "accuracy", "lr")

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(self.FIELDS)

    def row(self, iteration, phase, dataset, loss=None, accuracy=None, lr=None):
        self._writer.writerow(
            [
                iteration,
                phase,
                dataset,
                "" if loss is None else f"{loss:.6f}",
                "" if accuracy is None else f"{accuracy:.4f}",
                "" if lr is None else f"{lr:.8f}",
            ]
        )
        self._fh.flush()

    def close(self):
        self._fh.close()


# --------------------------------------------------------------------------
# Batch producer (optional single prefetch thread)


class _BatchProducer:
    """Produces (images, labels) batches; with workers > 0 a single
    background thread keeps a bounded queue filled. One producer thread
    preserves the RNG draw order, so results match synchronous mode."""

    def __init__(self, make_batch, iterations: int, workers: int = 0):
        self.make_batch = make_batch
        self.iterations = iterations
        self.workers = workers

    def __iter__(self):
        if self.workers <= 0:
            for _ in range(self.iterations):
                yield self.make_batch()
            return
        q: queue_mod.Queue = queue_mod.Queue(maxsize=max(2, self.workers + 1))

        def fill():
            for _ in range(self.iterations):
                q.put(self.make_batch())

        thread = threading.Thread(target=fill, daemon=True)
        thread.start()
        for _ in range(self.iterations):
            yield q.get()
        thread.join()


# --------------------------------------------------------------------------
# Core loops


@dataclass
class RunResult:
    best: CheckpointRecord
    metrics_path: str
    records: list[CheckpointRecord]
    extras: dict = field(default_factory=dict)


def _make_optimizer(params, config: OptimizerConfig):
    if config.kind == "adam":
        return torch.optim.Adam(params, lr=config.max_lr, betas=config.betas, eps=config.eps)
    return torch.optim.SGD(params, lr=config.max_lr, momentum=0.9, weight_decay=5e-4)


def _apply_lr(optimizer, lr: float):
    for group in optimizer.param_groups:
        group["lr"] = lr


def _validation_points(total: int, every: int) -> list[int]:
    points = [i for i in range(every, total + 1, every)]
    if not points or points[-1] != total:
        points.append(total)
    return points


def _init_model(model_config: ModelConfig, recipe: TrainRecipe) -> TextRecognizer:
    if recipe.init == "checkpoint":
        model, _ = load_checkpoint(recipe.init_path, model_config)
        return model
    model = TextRecognizer(model_config)
    if recipe.init == "pretext-weights":
        payload = torch.load(recipe.init_path, map_location="cpu", weights_only=False)
        if payload.get("features_kind") != model_config.features:
            raise ValueError(
                f"pretext weights are for {payload.get('features_kind')!r}, "
                f"model uses {model_config.features!r}"
            )
        model.features.load_state_dict(payload["state_dict"])
    return model


def train_supervised(
    model: TextRecognizer,
    train_sets: dict[str, LoadedSplit],
    valid: LoadedSplit,
    opt_config: OptimizerConfig,
    policy: AugmentPolicy,
    out_dir: str | Path,
    seed: int = 0,
    workers: int = 0,
    teacher_hook=None,
) -> RunResult:
    """The shared supervised loop: balanced batches, augmentation,
    one-cycle schedule, clipping, periodic validation.

    ``teacher_hook(model, images, labels, rng)`` replaces the plain
    recognition loss when provided (mean-teacher recipe)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)

    index_sets = {
        name: [(name, i) for i in range(len(split.images))] for name, split in train_sets.items()
    }
    sampler = BalancedSampler(index_sets, batch_size=opt_config.batch_size, seed=seed)
    optimizer = _make_optimizer(model.parameters(), opt_config)
    metrics = MetricsLog(out_dir / "metrics.csv")
    val_points = set(_validation_points(opt_config.total_iters, opt_config.val_every))

    augment_in_producer = teacher_hook is None

    def make_batch():
        picks = sampler.next_batch()
        images = [train_sets[name].images[i] for name, i in picks]
        if augment_in_producer:
            images = [sample_view(img, policy, rng) for img in images]
        labels = [train_sets[name].labels[i] for name, i in picks]
        return images, labels

    records: list[CheckpointRecord] = []
    best_path = out_dir / "best.ckpt"
    skipped_total = 0
    loss_accum, loss_count = 0.0, 0
    model.train()
    producer = _BatchProducer(make_batch, opt_config.total_iters, workers)
    for step, (images, labels) in enumerate(producer):
        iteration = step + 1
        lr = lr_one_cycle(step, opt_config)
        _apply_lr(optimizer, lr)
        optimizer.zero_grad()
        if teacher_hook is None:
            loss, skipped = recognition_loss(model, images, labels)
        else:
            loss, skipped = teacher_hook(model, images, labels, rng)
        skipped_total += skipped
        if loss.count == 0:
            continue
        loss.value.backward()
        clip_gradients(
            (p.grad for p in model.parameters()),
            opt_config.clip_norm,
            context=f"at iteration {iteration}",
        )
        optimizer.step()
        if teacher_hook is not None and hasattr(teacher_hook, "after_step"):
            teacher_hook.after_step(model)
        loss_accum += float(loss.value.detach())
        loss_count += 1

        if iteration in val_points:
            accuracy = word_accuracy(model, valid.images, valid.labels)
            metrics.row(iteration, "train", "balanced", loss=loss_accum / max(1, loss_count), lr=lr)
            metrics.row(iteration, "valid", "union", accuracy=accuracy, lr=lr)
            loss_accum, loss_count = 0.0, 0
            record = CheckpointRecord(
                iteration=iteration,
                val_accuracy=accuracy,
                config_digest=model.config.digest(),
                path=str(best_path),
            )
            if not records or accuracy > max(r.val_accuracy for r in records):
                save_checkpoint(best_path, model, iteration, accuracy)
            records.append(record)
            model.train()
    metrics.close()
    best = select_best_checkpoint(records)
    return RunResult(
        best=best,
        metrics_path=str(metrics.path),
        records=records,
        extras={"skipped_ctc": skipped_total},
    )


class _MeanTeacherHook:
    def __init__(self, teacher: EmaTeacher, unlabeled_sampler, unlabeled_images, policy, alpha):
        self.teacher = teacher
        self.unlabeled_sampler = unlabeled_sampler
        self.unlabeled_images = unlabeled_images
        self.policy = policy
        self.alpha = alpha

    def __call__(self, model, images, labels, rng):
        picks = self.unlabeled_sampler.next_batch()
        unlabeled = [self.unlabeled_images[name][i] for name, i in picks]
        loss, detail = mean_teacher_step(
            model, self.teacher, images, labels, unlabeled, self.policy, self.alpha, rng
        )
        return loss, detail["skipped"]

    def after_step(self, model):
        self.teacher.update(model)


# --------------------------------------------------------------------------
# Pretext models and loops


class RotationPretextModel(nn.Module):
    """Feature extractor plus a 4-way rotation head.

    For TPS-based recognizers the transform stage is deliberately
    absent: only the feature extractor is pretrained.
    """

    def __init__(self, features_kind: str):
        super().__init__()
        self.features_kind = features_kind
        self.features = build_feature_extractor(features_kind)
        self.head = RotationHead(feature_dim(features_kind))

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(images))


class ContrastiveEncoder(nn.Module):
    """Feature extractor plus projection to unit-norm 128-d embeddings."""

    def __init__(self, features_kind: str, out_dim: int = 128):
        super().__init__()
        self.features_kind = features_kind
        self.features = build_feature_extractor(features_kind)
        self.head = ProjectionHead(feature_dim(features_kind), out_dim)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(images))


def save_pretext_weights(path, features: nn.Module, features_kind: str) -> None:
    torch.save(
        {"features_kind": features_kind, "state_dict": features.state_dict()},
        path,
    )


def rotation_accuracy(model: RotationPretextModel, images: list[np.ndarray]) -> float:
    model.eval()
    correct = 0
    total = 0
    with torch.no_grad():
        for start in range(0, len(images), 64):
            batch = to_model_input(images[start : start + 64])
            rotated, labels = make_rotation_batch(batch)
            pred = model(rotated).argmax(dim=-1)
            correct += int((pred == labels).sum())
            total += int(labels.numel())
    model.train()
    return 100.0 * correct / total if total else 0.0


def train_rotnet(
    features_kind: str,
    unlabeled_sets: dict[str, LoadedSplit],
    opt_config: OptimizerConfig,
    out_dir: str | Path,
    seed: int = 0,
) -> RunResult:
    """Rotation pretext: batches of B images become 4B rotated images."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = RotationPretextModel(features_kind)
    optimizer = _make_optimizer(model.parameters(), opt_config)
    metrics = MetricsLog(out_dir / "metrics.csv")
    val_points = set(_validation_points(opt_config.total_iters, opt_config.val_every))

    index_sets = {
        name: [(name, i) for i in range(len(split.images))]
        for name, split in unlabeled_sets.items()
    }
    sampler = BalancedSampler(index_sets, batch_size=opt_config.batch_size, seed=seed)
    pool = [img for split in unlabeled_sets.values() for img in split.images]
    probe = [pool[i] for i in rng.choice(len(pool), size=min(128, len(pool)), replace=False)]

    weights_path = out_dir / "pretext.weights"
    records: list[CheckpointRecord] = []
    model.train()
    for step in range(opt_config.total_iters):
        iteration = step + 1
        lr = lr_one_cycle(step, opt_config)
        _apply_lr(optimizer, lr)
        picks = sampler.next_batch()
        batch = to_model_input([unlabeled_sets[name].images[i] for name, i in picks])
        rotated, labels = make_rotation_batch(batch)
        optimizer.zero_grad()
        loss = rotation_nll(model(rotated), labels)
        loss.value.backward()
        clip_gradients(
            (p.grad for p in model.parameters()),
            opt_config.clip_norm,
            context=f"at iteration {iteration}",
        )
        optimizer.step()
        if iteration in val_points:
            accuracy = rotation_accuracy(model, probe)
            metrics.row(iteration, "train", "balanced", loss=float(loss.value.detach()), lr=lr)
            metrics.row(iteration, "valid", "rotation", accuracy=accuracy, lr=lr)
            record = CheckpointRecord(
                iteration=iteration,
                val_accuracy=accuracy,
                config_digest=features_kind,
                path=str(weights_path),
            )
            if not records or accuracy > max(r.val_accuracy for r in records):
                save_pretext_weights(weights_path, model.features, features_kind)
            records.append(record)
    metrics.close()
    best = select_best_checkpoint(records)
    return RunResult(best=best, metrics_path=str(metrics.path), records=records)


def contrastive_accuracy(
    encoder: ContrastiveEncoder,
    momentum: EmaTeacher,
    queue: NegativeQueue,
    images: list[np.ndarray],
    policy: ContrastivePolicy,
    tau: float,
    rng: np.random.Generator,
) -> float:
    """Top-1 rate of the positive key against the queued negatives."""
    if len(queue) == 0 or not images:
        return 0.0
    encoder.eval()
    hits = 0
    with torch.no_grad():
        negatives = queue.keys()
        for start in range(0, len(images), 64):
            chunk = images[start : start + 64]
            pairs = [contrastive_views(img, policy, rng) for img in chunk]
            q = encoder(to_model_input([a for a, _ in pairs]))
            k = momentum.module(to_model_input([b for _, b in pairs]))
            l_pos = (q * k).sum(dim=1, keepdim=True)
            l_neg = q @ negatives.t()
            hits += int((torch.cat([l_pos, l_neg], dim=1).argmax(dim=1) == 0).sum())
    encoder.train()
    return 100.0 * hits / len(images)


def train_moco(
    features_kind: str,
    unlabeled_sets: dict[str, LoadedSplit],
    opt_config: OptimizerConfig,
    out_dir: str | Path,
    seed: int = 0,
    queue_size: int = 4096,
    tau: float = 0.07,
    momentum: float = 0.999,
) -> RunResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    encoder = ContrastiveEncoder(features_kind)
    momentum_encoder = EmaTeacher(encoder, momentum=momentum)
    state = MocoState(queue=NegativeQueue(queue_size, encoder.head.out_dim))
    optimizer = _make_optimizer(encoder.parameters(), opt_config)
    metrics = MetricsLog(out_dir / "metrics.csv")
    val_points = set(_validation_points(opt_config.total_iters, opt_config.val_every))
    policy = ContrastivePolicy()

    index_sets = {
        name: [(name, i) for i in range(len(split.images))]
        for name, split in unlabeled_sets.items()
    }
    sampler = BalancedSampler(index_sets, batch_size=opt_config.batch_size, seed=seed)
    pool = [img for split in unlabeled_sets.values() for img in split.images]
    probe = [pool[i] for i in rng.choice(len(pool), size=min(128, len(pool)), replace=False)]

    weights_path = out_dir / "pretext.weights"
    records: list[CheckpointRecord] = []
    encoder.train()
    for step in range(opt_config.total_iters):
        iteration = step + 1
        lr = lr_one_cycle(step, opt_config)
        _apply_lr(optimizer, lr)
        picks = sampler.next_batch()
        images = [unlabeled_sets[name].images[i] for name, i in picks]
        optimizer.zero_grad()
        loss = moco_step(encoder, momentum_encoder, state, images, policy, tau=tau, rng=rng)
        loss.value.backward()
        clip_gradients(
            (p.grad for p in encoder.parameters()),
            opt_config.clip_norm,
            context=f"at iteration {iteration}",
        )
        optimizer.step()
        if iteration in val_points:
            accuracy = contrastive_accuracy(
                encoder, momentum_encoder, state.queue, probe, policy, tau, rng
            )
            metrics.row(iteration, "train", "balanced", loss=float(loss.value.detach()), lr=lr)
            metrics.row(iteration, "valid", "contrastive", accuracy=accuracy, lr=lr)
            record = CheckpointRecord(
                iteration=iteration,
                val_accuracy=accuracy,
                config_digest=features_kind,
                path=str(weights_path),
            )
            if not records or accuracy > max(r.val_accuracy for r in records):
                save_pretext_weights(weights_path, encoder.features, features_kind)
            records.append(record)
    metrics.close()
    best = select_best_checkpoint(records)
    return RunResult(
        best=best,
        metrics_path=str(metrics.path),
        records=records,
        extras={"warmup_steps": state.warmup_steps},
    )


# --------------------------------------------------------------------------
# Recipe orchestration


def _pseudo_label_phase(
    model_config: ModelConfig,
    checkpoint_path: str,
    data: TrainData,
    min_confidence: float,
) -> tuple[dict[str, LoadedSplit], dict]:
    """Label every unlabeled set with the given checkpoint; returns the
    pseudo-labeled training sets keyed by source dataset."""
    model, _ = load_checkpoint(checkpoint_path, model_config)
    pseudo_sets: dict[str, LoadedSplit] = {}
    stats_by_dataset = {}
    for name, split in data.unlabeled.items():
        samples = [
            UnlabeledSample(
                image=b"", dataset=name, id=f"{name}_{i:08d}",
                width=img.shape[1], height=img.shape[0],
            )
            for i, img in enumerate(split.images)
        ]
        pseudo, stats = generate_pseudo_labels(
            model, samples, split.images, min_confidence=min_confidence
        )
        kept_ids = {p.base.id for p in pseudo}
        label_of = {p.base.id: p.pseudo_label for p in pseudo}
        images, labels = [], []
        for sample, img in zip(samples, split.images):
            if sample.id in kept_ids:
                images.append(img)
                labels.append(label_of[sample.id])
        pseudo_sets[f"{name}+pseudo"] = LoadedSplit(images=images, labels=labels)
        stats_by_dataset[name] = stats
    return pseudo_sets, stats_by_dataset


def run_recipe(
    recipe: TrainRecipe,
    data: TrainData,
    model_config: ModelConfig,
    opt_config: OptimizerConfig,
    out_dir: str | Path,
    seed: int = 0,
    workers: int = 0,
) -> RunResult:
    """Execute one experiment recipe end to end."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    # Seed before any model construction so a recipe run is reproducible
    # regardless of what ran earlier in the process.
    torch.manual_seed(seed)
    train_sets = data.train_sets()
    valid = data.merged_split("valid")
    policy = recipe.policy()

    needs_unlabeled = recipe.name in (
        "mean_teacher", "pseudo_label", "rotnet_pretrain", "moco_pretrain", "pr"
    )
    if needs_unlabeled and not data.unlabeled:
        raise ValueError(f"recipe {recipe.name!r} requires an unlabeled corpus")
    if recipe.name not in ("rotnet_pretrain", "moco_pretrain"):
        if not train_sets:
            raise ValueError("no labeled training data")
        if not valid.images:
            raise ValueError("no validation split")

    if recipe.name == "baseline":
        model = _init_model(model_config, recipe)
        return train_supervised(
            model, train_sets, valid, opt_config, policy, out_dir, seed, workers
        )

    if recipe.name == "fine_tune":
        model, _ = load_checkpoint(recipe.init_path, model_config)
        ft_config = replace(opt_config, total_iters=recipe.fine_tune_iters)
        return train_supervised(
            model, train_sets, valid, ft_config, policy, out_dir, seed, workers
        )

    if recipe.name == "mean_teacher":
        model = _init_model(model_config, recipe)
        teacher = EmaTeacher(model, momentum=recipe.ema_momentum)
        unlabeled_images = {name: split.images for name, split in data.unlabeled.items()}
        unlabeled_index = {
            name: [(name, i) for i in range(len(images))]
            for name, images in unlabeled_images.items()
        }
        hook = _MeanTeacherHook(
            teacher,
            BalancedSampler(unlabeled_index, batch_size=opt_config.batch_size, seed=seed + 1),
            unlabeled_images,
            policy,
            recipe.alpha,
        )
        return train_supervised(
            model, train_sets, valid, opt_config, policy, out_dir, seed, workers,
            teacher_hook=hook,
        )

    if recipe.name == "rotnet_pretrain":
        return train_rotnet(model_config.features, data.unlabeled, opt_config, out_dir, seed)

    if recipe.name == "moco_pretrain":
        return train_moco(
            model_config.features, data.unlabeled, opt_config, out_dir, seed,
            queue_size=recipe.queue_size, tau=recipe.tau, momentum=recipe.ema_momentum,
        )

    if recipe.name == "pseudo_label":
        labeler_recipe = replace(recipe, name="baseline")
        if recipe.labeler_aug_preset is not None:
            labeler_recipe = replace(
                labeler_recipe, aug_preset=recipe.labeler_aug_preset, aug_policy=None
            )
        labeler_opt = opt_config
        if recipe.labeler_iters is not None:
            labeler_opt = replace(opt_config, total_iters=recipe.labeler_iters)
        labeler_result = run_recipe(
            labeler_recipe, data, model_config, labeler_opt, out_dir / "labeler", seed, workers
        )
        pseudo_sets, stats = _pseudo_label_phase(
            model_config, labeler_result.best.path, data, recipe.min_confidence
        )
        retrain_sets = dict(train_sets)
        retrain_sets.update(
            {name: split for name, split in pseudo_sets.items() if split.images}
        )
        model = _init_model(model_config, recipe)
        final = train_supervised(
            model, retrain_sets, valid, opt_config, policy, out_dir / "final", seed, workers
        )
        final.extras["labeler"] = labeler_result.best
        final.extras["pseudo_stats"] = {
            name: vars(s) for name, s in stats.items()
        }
        return final

    if recipe.name == "pr":
        pretext_config = opt_config
        if recipe.pretext_iters is not None:
            pretext_config = replace(opt_config, total_iters=recipe.pretext_iters)
        pretext = train_rotnet(
            model_config.features, data.unlabeled, pretext_config, out_dir / "pretext", seed
        )
        pl_recipe = replace(
            recipe, name="pseudo_label", init="pretext-weights", init_path=pretext.best.path
        )
        result = run_recipe(
            pl_recipe, data, model_config, opt_config, out_dir, seed, workers
        )
        result.extras["pretext"] = pretext.best
        return result

    raise ValueError(f"unknown recipe {recipe.name!r}")
