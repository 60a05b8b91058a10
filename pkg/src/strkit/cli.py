"""Command-line surface.

Subcommands: toygen, prepare, train, pretrain, pseudolabel, eval,
report. Every subcommand is a no-op when its primary output already
exists, unless --overwrite is passed; --seed governs all randomness and
--deterministic forces single-worker, single-thread execution for
bit-reproducible runs.
"""

from __future__ import annotations

import argparse
import json
import logging
import statistics
import sys
from pathlib import Path

log = logging.getLogger("strkit")


def _skip_existing(marker: Path, overwrite: bool, what: str) -> bool:
    if marker.exists() and not overwrite:
        print(f"{what} already exists at {marker}; skipping (pass --overwrite to redo)")
        return True
    return False


# --------------------------------------------------------------------------
# toygen


def _cmd_toygen(args) -> int:
    from .toygen import DEFAULT_WORDS, ToyCorpusSpec, render_toy_corpus

    out = Path(args.out)
    if _skip_existing(out / "manifest.jsonl", args.overwrite, "toy corpus"):
        return 0
    if args.words > len(DEFAULT_WORDS):
        raise SystemExit(
            f"--words must be <= {len(DEFAULT_WORDS)} (bundled vocabulary size)"
        )
    spec = ToyCorpusSpec(
        vocabulary=tuple(DEFAULT_WORDS[: args.words]),
        samples_per_word=args.samples_per_word,
        seed=args.seed,
        unlabeled_twin=args.unlabeled_twin,
    )
    manifest = render_toy_corpus(spec, out)
    print(f"rendered {len(manifest.entries)} labeled toy images into {out}")
    return 0


# --------------------------------------------------------------------------
# prepare


def _cmd_prepare(args) -> int:
    from .corpus import load_manifest
    from .prepare import load_policy_file, prepare_corpus

    out = Path(args.out)
    if _skip_existing(out / "index", args.overwrite, "packed dataset"):
        return 0
    manifest = load_manifest(args.manifest)
    default_policy, overrides = load_policy_file(args.policy)
    ratios = tuple(float(r) for r in args.ratios.split(","))
    base_dir = Path(args.base_dir) if args.base_dir else Path(args.manifest).parent
    result = prepare_corpus(
        manifest,
        out,
        base_dir=base_dir,
        ratios=ratios,
        seed=args.seed,
        default_policy=default_policy,
        policy_overrides=overrides,
        dedup_across=args.dedup,
        subsample=args.subsample,
    )
    counts = result.packed.counts()
    print(f"packed {len(result.packed)} samples into {out}")
    for (dataset, split), n in sorted(counts.items()):
        print(f"  {dataset}/{split}: {n}")
    return 0


# --------------------------------------------------------------------------
# train / pretrain


def _run_sweep(args) -> int:
    """Execute a declarative list of runs sequentially and summarize.

    The sweep file is JSON: {"runs": [{"name": ..., "config": ...,
    "seeds": [0, 1, 2], "ratio": 0.2}, ...]}; ratio is an optional
    x-axis value carried into the summary for accuracy-vs-data plots.
    """
    import csv
    import torch

    from .config import load_run_config
    from .train import load_training_data, run_recipe

    sweep_path = Path(args.sweep)
    sweep = json.loads(sweep_path.read_text(encoding="utf-8"))
    out = Path(args.out)
    summary_path = out / "sweep_summary.csv"
    if _skip_existing(summary_path, args.overwrite, "sweep summary"):
        return 0
    if args.deterministic:
        torch.set_num_threads(1)
    workers = 0 if args.deterministic else args.workers

    rows = []
    for entry in sweep["runs"]:
        name = entry["name"]
        config_path = Path(entry["config"])
        if not config_path.is_absolute():
            config_path = sweep_path.parent / config_path
        config = load_run_config(config_path)
        data = load_training_data(config.labeled_paths, config.unlabeled_paths)
        for seed in entry.get("seeds", [args.seed]):
            run_dir = out / name / f"seed_{seed}"
            result = run_recipe(
                config.recipe, data, config.model, config.optim, run_dir,
                seed=seed, workers=workers,
            )
            rows.append(
                {
                    "method": name,
                    "ratio": entry.get("ratio", ""),
                    "seed": seed,
                    "accuracy": result.best.val_accuracy,
                }
            )
            print(f"{name} seed {seed}: {result.best.val_accuracy:.2f}")
    out.mkdir(parents=True, exist_ok=True)
    with summary_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["method", "ratio", "seed", "accuracy"])
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {summary_path}")
    return 0


def _run_training(args, pretext_only: bool) -> int:
    import torch

    from .config import load_run_config
    from .train import load_training_data, run_recipe

    if getattr(args, "sweep", None):
        return _run_sweep(args)
    if not args.config:
        raise SystemExit("train needs --config (or --sweep)")
    config = load_run_config(args.config)
    if pretext_only and config.recipe.name not in ("rotnet_pretrain", "moco_pretrain"):
        raise SystemExit(
            f"pretrain requires a pretext recipe, got {config.recipe.name!r}"
        )
    out = Path(args.out)
    if _skip_existing(out / "run_summary.json", args.overwrite, "training run"):
        return 0
    workers = 0 if args.deterministic else args.workers
    if args.deterministic:
        torch.set_num_threads(1)

    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [args.seed]
    data = load_training_data(config.labeled_paths, config.unlabeled_paths)
    runs = []
    for seed in seeds:
        run_dir = out / f"seed_{seed}" if len(seeds) > 1 else out
        result = run_recipe(
            config.recipe, data, config.model, config.optim, run_dir, seed=seed,
            workers=workers,
        )
        runs.append(
            {
                "seed": seed,
                "best_iteration": result.best.iteration,
                "best_val_accuracy": result.best.val_accuracy,
                "checkpoint": result.best.path,
                "metrics": result.metrics_path,
            }
        )
        print(
            f"seed {seed}: best accuracy {result.best.val_accuracy:.2f} "
            f"at iteration {result.best.iteration}"
        )
    summary = {
        "recipe": config.recipe.name,
        "runs": runs,
        "mean_val_accuracy": statistics.mean(r["best_val_accuracy"] for r in runs),
    }
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"mean validation accuracy over {len(runs)} run(s): "
          f"{summary['mean_val_accuracy']:.2f}")
    return 0


def _cmd_train(args) -> int:
    return _run_training(args, pretext_only=False)


def _cmd_pretrain(args) -> int:
    return _run_training(args, pretext_only=True)


# --------------------------------------------------------------------------
# pseudolabel


def _cmd_pseudolabel(args) -> int:
    from .corpus import ManifestEntry, UnlabeledSample, write_manifest
    from .models.recognizer import ModelConfig, load_checkpoint
    from .packing import PackedDataset
    from .ssl import generate_pseudo_labels
    from .train import decode_image

    out = Path(args.out)
    if _skip_existing(out / "manifest.jsonl", args.overwrite, "pseudo-label manifest"):
        return 0
    model, _ = load_checkpoint(args.checkpoint, ModelConfig.preset(args.model))
    packed = PackedDataset(args.data)
    samples, images = [], []
    for entry in packed.iter_entries(split=args.split):
        data = packed.read_bytes(entry.id)
        samples.append(
            UnlabeledSample(
                image=data, dataset=entry.dataset, id=entry.id,
                width=entry.width, height=entry.height,
            )
        )
        images.append(decode_image(data))
    pseudo, stats = generate_pseudo_labels(
        model, samples, images, min_confidence=args.min_confidence
    )

    image_dir = out / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for p in pseudo:
        name = f"images/{p.base.id}.png"
        (out / name).write_bytes(p.base.image)
        entries.append(
            ManifestEntry(
                image=name,
                label=p.pseudo_label,
                dataset=f"{p.base.dataset}_pl",
                width=p.base.width,
                height=p.base.height,
                confidence=round(p.confidence, 6),
            )
        )
    write_manifest(entries, out / "manifest.jsonl")
    print(
        f"kept {stats.kept}/{stats.total} pseudo-labels "
        f"(dropped {stats.dropped_empty} empty, "
        f"{stats.dropped_low_confidence} below confidence {args.min_confidence})"
    )
    print(f"confidence histogram (10 bins): {stats.confidence_histogram}")
    return 0


# --------------------------------------------------------------------------
# eval


def _cmd_eval(args) -> int:
    from .evaluation import evaluate
    from .models.recognizer import ModelConfig, load_checkpoint
    from .packing import PackedDataset
    from .train import decode_image

    model, meta = load_checkpoint(args.checkpoint, ModelConfig.preset(args.model))
    splits: dict[str, tuple[list, list]] = {}
    for path in args.splits.split(","):
        packed = PackedDataset(path.strip())
        for dataset in packed.datasets():
            images, labels = splits.setdefault(dataset, ([], []))
            for entry in packed.iter_entries(dataset=dataset, split=args.split):
                if entry.label is None:
                    continue
                images.append(decode_image(packed.read_bytes(entry.id)))
                labels.append(entry.label)
    splits = {name: parts for name, parts in splits.items() if parts[0]}
    if not splits:
        raise SystemExit(f"no labeled samples found for split {args.split!r}")
    report = evaluate(
        model,
        splits,
        metadata={"checkpoint": str(args.checkpoint), "iteration": meta["iteration"]},
    )
    print(report.to_table())
    if args.out:
        report.save(args.out)
        print(f"wrote report to {args.out}")
    return 0


# --------------------------------------------------------------------------
# report


def _cmd_report(args) -> int:
    from .report import plot_accuracy_vs_data, plot_training_curves, read_sweep_csv

    out = Path(args.out)
    if _skip_existing(out / "training_curves.png", args.overwrite, "report"):
        return 0
    wrote = []
    if args.metrics:
        paths = [p.strip() for p in args.metrics.split(",")]
        fig, csv_path = plot_training_curves(paths, out)
        wrote += [fig, csv_path]
    if args.sweep:
        records = read_sweep_csv(args.sweep)
        fig, csv_path = plot_accuracy_vs_data(records, out)
        wrote += [fig, csv_path]
    if not wrote:
        raise SystemExit("report needs --metrics and/or --sweep")
    for path in wrote:
        print(f"wrote {path}")
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="strkit",
        description="Scene text recognition on real labels, with semi- and "
        "self-supervised training over unlabeled word images.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("toygen", help="render the deterministic toy corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--words", type=int, default=50)
    p.add_argument("--samples-per-word", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--unlabeled-twin", action="store_true")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=_cmd_toygen)

    p = sub.add_parser("prepare", help="filter, split, and pack a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--policy", default=None, help="filter policy INI file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ratios", default="0.8,0.1,0.1")
    p.add_argument("--base-dir", default=None)
    p.add_argument("--dedup", action="store_true", help="dedup across datasets")
    p.add_argument("--subsample", type=float, default=None,
                   help="keep this fraction of every dataset (labeled-amount sweeps)")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=_cmd_prepare)

    for name, handler, help_text in (
        ("train", _cmd_train, "run a training recipe from a config file"),
        ("pretrain", _cmd_pretrain, "run a pretext pretraining recipe"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=name == "pretrain")
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--seeds", default=None, help="comma list; runs each seed")
        if name == "train":
            p.add_argument("--sweep", default=None,
                           help="JSON list of runs executed sequentially")
        p.add_argument("--workers", type=int, default=0)
        p.add_argument("--deterministic", action="store_true")
        p.add_argument("--overwrite", action="store_true")
        p.set_defaults(func=handler)

    p = sub.add_parser("pseudolabel", help="label an unlabeled packed corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--model", default="mini-crnn")
    p.add_argument("--data", required=True, help="packed unlabeled dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--min-confidence", type=float, default=0.0)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=_cmd_pseudolabel)

    p = sub.add_parser("eval", help="evaluate a checkpoint on packed splits")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--model", default="mini-crnn")
    p.add_argument("--splits", required=True, help="comma list of packed dirs")
    p.add_argument("--split", default="eval")
    p.add_argument("--out", default=None, help="write machine-readable report JSON")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("report", help="render metric curves and sweep figures")
    p.add_argument("--metrics", default=None, help="comma list of metrics.csv files")
    p.add_argument("--sweep", default=None, help="sweep summary CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(f"error: {exc.code}", file=sys.stderr)
            return 1
        return int(exc.code or 0)
    except Exception as exc:  # surface a diagnostic, not a stack trace
        log.error("%s", exc, exc_info=log.isEnabledFor(logging.DEBUG))
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
