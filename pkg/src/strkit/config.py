"""Run configuration files (INI) with data/model/optim/recipe/aug sections.

Example::

    [data]
    labeled = runs/toy/packed
    unlabeled = runs/toy/packed_u

    [model]
    preset = mini-crnn

    [optim]
    max_lr = 0.0005
    total_iters = 3000
    batch_size = 64
    val_every = 500

    [recipe]
    name = baseline

    [aug]
    preset = crnn-best

Relative data paths resolve against the STRKIT_DATA_ROOT environment
variable when it is set, else against the config file's directory.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path

from .augment import PRESETS, AugmentPolicy
from .models.recognizer import ModelConfig
from .train import OptimizerConfig, TrainRecipe

DATA_ROOT_ENV = "STRKIT_DATA_ROOT"


@dataclass
class RunConfig:
    labeled_paths: list[Path]
    unlabeled_paths: list[Path]
    model: ModelConfig
    optim: OptimizerConfig
    recipe: TrainRecipe


def _resolve(path_str: str, base: Path) -> Path:
    path = Path(path_str)
    if path.is_absolute():
        return path
    root = os.environ.get(DATA_ROOT_ENV)
    if root:
        return Path(root) / path
    return base / path


def _paths(raw: str | None, base: Path) -> list[Path]:
    if not raw:
        return []
    return [_resolve(part.strip(), base) for part in raw.split(",") if part.strip()]


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(f"config file not found: {path}")
    base = path.parent

    data = parser["data"] if parser.has_section("data") else {}
    labeled = _paths(data.get("labeled"), base)
    unlabeled = _paths(data.get("unlabeled"), base)

    model_section = parser["model"] if parser.has_section("model") else {}
    model = ModelConfig.preset(model_section.get("preset", "mini-crnn"))

    optim = parser["optim"] if parser.has_section("optim") else {}
    opt_config = OptimizerConfig(
        kind=optim.get("kind", "adam"),
        max_lr=float(optim.get("max_lr", 0.0005)),
        clip_norm=float(optim.get("clip_norm", 5.0)),
        total_iters=int(optim.get("total_iters", 200_000)),
        batch_size=int(optim.get("batch_size", 128)),
        val_every=int(optim.get("val_every", 2000)),
    )

    recipe_section = parser["recipe"] if parser.has_section("recipe") else {}
    aug = parser["aug"] if parser.has_section("aug") else {}
    preset = aug.get("preset", "none")
    custom_policy = None
    if preset == "custom":
        custom_policy = AugmentPolicy(
            blur_max_radius=float(aug.get("blur", 0.0)),
            crop_min_pct=float(aug.get("crop", 100.0)),
            rot_max_deg=float(aug.get("rot", 0.0)),
        )
        preset = "none"
    elif preset not in PRESETS:
        raise ValueError(f"unknown augmentation preset {preset!r}")

    init_path = recipe_section.get("init_path") or None
    if init_path:
        init_path = str(_resolve(init_path, base))
    pretext_iters = recipe_section.get("pretext_iters")
    labeler_iters = recipe_section.get("labeler_iters")
    recipe = TrainRecipe(
        name=recipe_section.get("name", "baseline"),
        aug_preset=preset,
        aug_policy=custom_policy,
        init=recipe_section.get("init", "fresh"),
        init_path=init_path,
        alpha=float(recipe_section.get("alpha", 1.0)),
        ema_momentum=float(recipe_section.get("ema_momentum", 0.999)),
        queue_size=int(recipe_section.get("queue_size", 4096)),
        tau=float(recipe_section.get("tau", 0.07)),
        min_confidence=float(recipe_section.get("min_confidence", 0.0)),
        fine_tune_iters=int(recipe_section.get("fine_tune_iters", 40_000)),
        pretext_iters=int(pretext_iters) if pretext_iters else None,
        labeler_aug_preset=recipe_section.get("labeler_aug_preset") or None,
        labeler_iters=int(labeler_iters) if labeler_iters else None,
    )
    return RunConfig(
        labeled_paths=labeled,
        unlabeled_paths=unlabeled,
        model=model,
        optim=opt_config,
        recipe=recipe,
    )
