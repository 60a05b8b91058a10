"""End-to-end corpus preparation: manifest -> filter -> dedup -> split -> pack.

The filter policy file is INI with a [default] section plus optional
[dataset:<name>] overrides::

    [default]
    dont_care_mode = exclude-pure-hash-runs
    exclude_star_labels = false
    charset_filter = true
    vertical_rule = labeled
    max_label_length = 25

    [dataset:uber]
    exclude_star_labels = true

Unlabeled datasets (null labels in the manifest) automatically switch
to the unlabeled vertical rule unless their policy says otherwise. A
sidecar ``prepare_report.json`` records per-rule rejections, dedup
removals, and split sizes for auditing.
"""

from __future__ import annotations

import configparser
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .charset import CharsetSpec, default_charset
from .corpus import (
    DatasetManifest,
    FilterPolicy,
    LabeledSample,
    SplitSpec,
    UnlabeledSample,
    dedup_samples,
    filter_samples,
    load_manifest,
    pixel_hash_key,
    split_dataset,
)
from .packing import PackedDataset, pack_samples
from .sampler import subsample_ratio

log = logging.getLogger(__name__)


def load_policy_file(path: str | Path | None) -> tuple[FilterPolicy, dict[str, FilterPolicy]]:
    """(default policy, per-dataset overrides) from an INI file."""
    if path is None:
        return FilterPolicy(), {}
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise FileNotFoundError(f"policy file not found: {path}")

    def build(section, base: FilterPolicy) -> FilterPolicy:
        return FilterPolicy(
            dont_care_mode=section.get("dont_care_mode", base.dont_care_mode),
            exclude_star_labels=section.getboolean(
                "exclude_star_labels", base.exclude_star_labels
            ),
            charset_filter=section.getboolean("charset_filter", base.charset_filter),
            vertical_rule=section.get("vertical_rule", base.vertical_rule),
            max_label_length=section.getint("max_label_length", base.max_label_length),
        )

    default = FilterPolicy()
    if parser.has_section("default"):
        default = build(parser["default"], default)
    overrides = {}
    for name in parser.sections():
        if name.startswith("dataset:"):
            overrides[name.split(":", 1)[1]] = build(parser[name], default)
    return default, overrides


@dataclass
class PrepareResult:
    packed: PackedDataset
    report: dict


def prepare_corpus(
    manifest: DatasetManifest,
    out: str | Path,
    base_dir: str | Path,
    ratios: tuple[float, ...] = (0.8, 0.1, 0.1),
    seed: int = 0,
    default_policy: FilterPolicy | None = None,
    policy_overrides: dict[str, FilterPolicy] | None = None,
    dedup_across: bool = False,
    charset: CharsetSpec | None = None,
    subsample: float | None = None,
) -> PrepareResult:
    """Run the full preprocessing pipeline and pack the result.

    Entries carrying an explicit split hint keep it; only hint-less
    entries are ratio-split. With ``dedup_across`` every dataset is
    deduplicated against all previously accepted datasets (pixel hash).
    ``subsample`` proportionally reduces every dataset after filtering
    (for labeled-amount sweeps); dataset diversity is preserved.
    """
    out = Path(out)
    base_dir = Path(base_dir)
    charset = charset or default_charset()
    default_policy = default_policy or FilterPolicy()
    policy_overrides = policy_overrides or {}

    by_dataset: dict[str, list] = {}
    hinted_split: dict[str, str] = {}
    for i, entry in enumerate(manifest.entries):
        path = Path(entry.image)
        if not path.is_absolute():
            path = base_dir / path
        image = path.read_bytes()
        sample_id = f"{entry.dataset}_{i:08d}"
        common = dict(
            image=image, dataset=entry.dataset, id=sample_id,
            width=entry.width, height=entry.height,
        )
        sample = (
            UnlabeledSample(**common)
            if entry.label is None
            else LabeledSample(label=entry.label, **common)
        )
        by_dataset.setdefault(entry.dataset, []).append(sample)
        if entry.split is not None:
            hinted_split[sample_id] = entry.split

    report: dict = {"datasets": {}, "seed": seed, "ratios": list(ratios)}
    accepted_pool: list = []
    to_pack: list[tuple] = []
    for dataset, samples in by_dataset.items():
        policy = policy_overrides.get(dataset)
        if policy is None:
            policy = default_policy
            is_unlabeled = isinstance(samples[0], UnlabeledSample)
            if is_unlabeled and policy.vertical_rule != "unlabeled":
                policy = FilterPolicy(
                    dont_care_mode=policy.dont_care_mode,
                    exclude_star_labels=policy.exclude_star_labels,
                    charset_filter=policy.charset_filter,
                    vertical_rule="unlabeled",
                    max_label_length=policy.max_label_length,
                )
        kept, rejections = filter_samples(samples, policy, charset)
        removed_pairs: list = []
        if dedup_across and accepted_pool:
            kept, removed_pairs = dedup_samples(kept, accepted_pool, pixel_hash_key)
        accepted_pool.extend(kept)
        subsampled_away = 0
        if subsample is not None and kept:
            reduced = subsample_ratio({dataset: kept}, subsample, seed=seed)[dataset]
            subsampled_away = len(kept) - len(reduced)
            kept = reduced

        hinted = [s for s in kept if s.id in hinted_split]
        unhinted = [s for s in kept if s.id not in hinted_split]
        split_sizes: dict[str, int] = {}
        for sample in hinted:
            split = hinted_split[sample.id]
            to_pack.append((sample, split))
            split_sizes[split] = split_sizes.get(split, 0) + 1
        if unhinted:
            parts = split_dataset(unhinted, SplitSpec(ratios=ratios, seed=seed))
            for split_name, part in zip(("train", "valid", "eval"), parts):
                for sample in part:
                    to_pack.append((sample, split_name))
                split_sizes[split_name] = split_sizes.get(split_name, 0) + len(part)

        report["datasets"][dataset] = {
            "original": len(samples),
            "kept": len(kept),
            "rejections": rejections,
            "dedup_removed": [list(pair) for pair in removed_pairs],
            "subsampled_away": subsampled_away,
            "splits": split_sizes,
        }

    packed = pack_samples(to_pack, out)
    report_path = out / "prepare_report.json"
    report_path.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    log.info("packed %d samples into %s", len(packed), out)
    return PrepareResult(packed=packed, report=report)
