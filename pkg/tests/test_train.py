import csv
import math

import numpy as np
import pytest
import torch

from strkit.models.recognizer import ModelConfig, TextRecognizer
from strkit.train import (
    CheckpointRecord,
    LoadedSplit,
    OptimizerConfig,
    RotationPretextModel,
    TrainData,
    TrainRecipe,
    clip_gradients,
    lr_one_cycle,
    recognition_loss,
    run_recipe,
    select_best_checkpoint,
    train_rotnet,
    train_supervised,
)

DIGEST = "x" * 64


# --------------------------------------------------------------------------
# One-cycle schedule


def test_lr_starts_at_max_over_25():
    config = OptimizerConfig(total_iters=10_000)
    assert lr_one_cycle(0, config) == pytest.approx(0.0005 / 25, abs=0)


def test_lr_peak_is_exactly_max_at_ten_percent():
    config = OptimizerConfig(total_iters=10_000)
    assert lr_one_cycle(1000, config) == 0.0005


def test_lr_final_is_max_over_1e4():
    config = OptimizerConfig(total_iters=10_000)
    assert lr_one_cycle(9999, config) == pytest.approx(0.0005 / 1e4, rel=1e-9)


def test_lr_monotone_segments_at_1000_points():
    config = OptimizerConfig(total_iters=200_000)
    warmup = round(0.1 * config.total_iters)
    points = np.linspace(0, config.total_iters - 1, 1000).astype(int)
    values = [lr_one_cycle(int(i), config) for i in points]
    for i, j, v1, v2 in zip(points, points[1:], values, values[1:]):
        if j <= warmup:
            assert v2 >= v1
        elif i >= warmup:
            assert v2 <= v1
    assert max(values) <= 0.0005
    assert lr_one_cycle(warmup, config) == 0.0005  # peak exactly at the 10% mark


def test_lr_out_of_range():
    config = OptimizerConfig(total_iters=100)
    with pytest.raises(ValueError):
        lr_one_cycle(100, config)
    with pytest.raises(ValueError):
        lr_one_cycle(-1, config)


# --------------------------------------------------------------------------
# Gradient clipping


def test_clip_scales_down_to_norm():
    grads = [torch.tensor([6.0, 8.0])]  # norm 10
    _, total = clip_gradients(grads, 5.0)
    assert total == pytest.approx(10.0)
    assert float(torch.linalg.vector_norm(grads[0])) == pytest.approx(5.0, abs=1e-6)


def test_clip_leaves_small_gradients_untouched():
    original = torch.tensor([1.2345678, -2.0, 0.5])
    grads = [original.clone()]
    clip_gradients(grads, 5.0)
    assert torch.equal(grads[0], original)


def test_clip_zero_gradients_unchanged():
    grads = [torch.zeros(4)]
    clip_gradients(grads, 5.0)
    assert torch.equal(grads[0], torch.zeros(4))


def test_clip_global_norm_across_tensors():
    grads = [torch.full((2,), 3.0), torch.full((2,), 4.0)]  # global norm sqrt(9*2+16*2)
    _, total = clip_gradients(grads, 5.0)
    assert total == pytest.approx(math.sqrt(50))
    post = math.sqrt(sum(float((g**2).sum()) for g in grads))
    assert post <= 5.0 + 1e-6


def test_clip_rejects_nonfinite():
    with pytest.raises(RuntimeError, match="non-finite"):
        clip_gradients([torch.tensor([float("nan")])], 5.0, context="at iteration 7")


# --------------------------------------------------------------------------
# Checkpoint selection


def record(iteration, accuracy):
    return CheckpointRecord(iteration=iteration, val_accuracy=accuracy,
                            config_digest=DIGEST, path="x")


def test_select_best_argmax():
    records = [record(2000, 70.0), record(4000, 75.0), record(6000, 73.0)]
    assert select_best_checkpoint(records).iteration == 4000


def test_select_best_tie_earliest():
    records = [record(2000, 75.0), record(4000, 75.0)]
    assert select_best_checkpoint(records).iteration == 2000


def test_select_best_single():
    only = record(2000, 10.0)
    assert select_best_checkpoint([only]) is only


def test_select_best_empty():
    with pytest.raises(ValueError):
        select_best_checkpoint([])


def test_checkpoint_record_validates_accuracy():
    with pytest.raises(ValueError):
        CheckpointRecord(iteration=1, val_accuracy=101.0, config_digest=DIGEST, path="x")


# --------------------------------------------------------------------------
# Recipe invariants


def test_recipe_validation():
    with pytest.raises(ValueError):
        TrainRecipe(name="magic")
    with pytest.raises(ValueError):
        TrainRecipe(name="fine_tune")  # needs a checkpoint
    with pytest.raises(ValueError):
        TrainRecipe(init="pretext-weights")  # needs init_path
    assert TrainRecipe(name="fine_tune", init_path="ckpt").fine_tune_iters == 40_000


def test_optimizer_config_defaults_match_training_regime():
    config = OptimizerConfig()
    assert config.max_lr == 0.0005
    assert config.clip_norm == 5.0
    assert config.total_iters == 200_000
    assert config.batch_size == 128
    assert config.val_every == 2000
    assert config.betas == (0.9, 0.999)
    assert config.eps == 1e-8


# --------------------------------------------------------------------------
# Training loop behavior (tiny runs)


def toy_training_data(n_words=6, renders=8, seed=0):
    from strkit.toygen import DEFAULT_WORDS, ToyCorpusSpec, render_word

    words = DEFAULT_WORDS[:n_words]
    spec = ToyCorpusSpec(vocabulary=tuple(words), samples_per_word=renders, seed=seed)
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for word in words:
        for _ in range(renders):
            images.append(render_word(word, spec, rng))
            labels.append(word)
    cut = max(1, len(images) // 6)
    return TrainData(
        labeled={
            "toy": {
                "train": LoadedSplit(images=images[cut:], labels=labels[cut:]),
                "valid": LoadedSplit(images=images[:cut], labels=labels[:cut]),
            }
        },
        unlabeled={"pool": LoadedSplit(images=list(images[cut:]))},
    )


def tiny_opt(iters=24, val_every=8, batch=8):
    return OptimizerConfig(max_lr=1e-3, total_iters=iters, batch_size=batch,
                           val_every=val_every)


def test_metrics_log_has_expected_validation_rows(tmp_path):
    data = toy_training_data()
    model = TextRecognizer(ModelConfig.mini_crnn())
    result = train_supervised(
        model, data.train_sets(), data.merged_split("valid"), tiny_opt(),
        TrainRecipe().policy(), tmp_path / "run", seed=0,
    )
    with open(result.metrics_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    valid_rows = [r for r in rows if r["phase"] == "valid"]
    assert len(valid_rows) == 24 // 8  # total_iters / val_every, exactly
    assert len(result.records) == 3
    assert (tmp_path / "run" / "best.ckpt").exists()


def test_validation_cadence_default_is_2000():
    assert OptimizerConfig().val_every == 2000


def test_deterministic_loss_curves(tmp_path):
    losses = []
    for run in range(2):
        torch.manual_seed(999)
        data = toy_training_data()
        model = TextRecognizer(ModelConfig.mini_crnn())
        result = train_supervised(
            model, data.train_sets(), data.merged_split("valid"), tiny_opt(),
            TrainRecipe().policy(), tmp_path / f"run{run}", seed=5,
        )
        with open(result.metrics_path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        losses.append([r["loss"] for r in rows if r["phase"] == "train"])
    assert losses[0] == losses[1]


def test_recipe_requires_unlabeled_corpus(tmp_path):
    data = toy_training_data()
    data.unlabeled = {}
    with pytest.raises(ValueError, match="unlabeled"):
        run_recipe(
            TrainRecipe(name="mean_teacher"), data, ModelConfig.mini_crnn(),
            tiny_opt(), tmp_path / "run", seed=0,
        )


def test_mean_teacher_alpha_zero_reduces_to_supervised(tmp_path):
    """With alpha 0 the mean-teacher loop optimizes the same objective as
    the supervised one (the consistency term vanishes)."""
    from strkit.ssl import EmaTeacher, mean_teacher_step
    from strkit.augment import AugmentPolicy

    torch.manual_seed(3)
    data = toy_training_data()
    model = TextRecognizer(ModelConfig.mini_crnn())
    teacher = EmaTeacher(model)
    split = data.labeled["toy"]["train"]
    images, labels = split.images[:4], split.labels[:4]
    rng = np.random.default_rng(0)
    loss, detail = mean_teacher_step(
        model, teacher, images, labels, split.images[4:6], AugmentPolicy(),
        alpha=0.0, rng=rng,
    )
    supervised, _ = recognition_loss(model, images, labels)
    assert float(loss.value.detach()) == pytest.approx(float(supervised.value.detach()), rel=1e-5)
    assert detail["consistency"] == 0.0


def test_mean_teacher_identical_views_zero_consistency():
    """Identity augmentation policy + teacher == student at init gives a
    zero consistency term."""
    from strkit.ssl import EmaTeacher, mean_teacher_step
    from strkit.augment import AugmentPolicy

    torch.manual_seed(4)
    data = toy_training_data()
    model = TextRecognizer(ModelConfig.mini_crnn())
    teacher = EmaTeacher(model)  # exact copy at construction
    split = data.labeled["toy"]["train"]
    loss, detail = mean_teacher_step(
        model, teacher, split.images[:3], split.labels[:3], split.images[3:5],
        AugmentPolicy(), alpha=1.0, rng=np.random.default_rng(1),
    )
    assert detail["consistency"] == pytest.approx(0.0, abs=1e-10)


def test_rotnet_emits_backbone_weights_only(tmp_path):
    data = toy_training_data()
    result = train_rotnet("mini", data.unlabeled, tiny_opt(iters=8, val_every=8),
                          tmp_path / "rot", seed=0)
    payload = torch.load(result.best.path, weights_only=False)
    assert payload["features_kind"] == "mini"
    reference = RotationPretextModel("mini").features.state_dict()
    assert set(payload["state_dict"].keys()) == set(reference.keys())
    assert not any("localization" in k or "warper" in k for k in payload["state_dict"])


def test_pretext_weights_load_into_recognizer_without_touching_tps(tmp_path):
    data = toy_training_data()
    result = train_rotnet("mini", data.unlabeled, tiny_opt(iters=8, val_every=8),
                          tmp_path / "rot", seed=0)
    torch.manual_seed(77)
    recipe = TrainRecipe(name="baseline", init="pretext-weights", init_path=result.best.path)
    from strkit.train import _init_model

    model = _init_model(ModelConfig.mini_trba(), recipe)
    payload = torch.load(result.best.path, weights_only=False)
    for key, value in payload["state_dict"].items():
        assert torch.equal(model.features.state_dict()[key], value)
    # TPS parameters exist and came from fresh initialization, not the pretext file
    assert any("localization" in name for name, _ in model.named_parameters())


def test_pretext_weights_kind_mismatch_rejected(tmp_path):
    data = toy_training_data()
    result = train_rotnet("mini", data.unlabeled, tiny_opt(iters=8, val_every=8),
                          tmp_path / "rot", seed=0)
    recipe = TrainRecipe(name="baseline", init="pretext-weights", init_path=result.best.path)
    from strkit.train import _init_model

    with pytest.raises(ValueError, match="pretext weights"):
        _init_model(ModelConfig.crnn(), recipe)


def test_ctc_skip_counter_propagates(tmp_path):
    """Labels that cannot align within 26 frames are skipped and counted."""
    from strkit.charset import default_charset

    torch.manual_seed(6)
    model = TextRecognizer(ModelConfig.mini_crnn())
    rng = np.random.default_rng(0)
    images = [rng.integers(0, 256, size=(20, 60), dtype=np.uint8) for _ in range(2)]
    labels = ["ok", "aaaaaaaaaaaaaaaaaaaaaaaaa"]  # 25 a's need 49 frames
    loss, skipped = recognition_loss(model, images, labels)
    assert skipped == 1
    assert loss.count == 1


def test_workers_prefetch_matches_synchronous(tmp_path):
    results = []
    for workers in (0, 1):
        torch.manual_seed(1)
        data = toy_training_data()
        model = TextRecognizer(ModelConfig.mini_crnn())
        result = train_supervised(
            model, data.train_sets(), data.merged_split("valid"), tiny_opt(iters=10, val_every=10),
            TrainRecipe().policy(), tmp_path / f"w{workers}", seed=3, workers=workers,
        )
        with open(result.metrics_path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        results.append([r["loss"] for r in rows])
    assert results[0] == results[1]
