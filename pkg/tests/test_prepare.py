import json
from pathlib import Path

import pytest

from strkit.corpus import DONT_CARE_NONE, FilterPolicy, load_manifest, write_manifest, ManifestEntry
from strkit.prepare import load_policy_file, prepare_corpus

from conftest import png_bytes


def write_image(path: Path, width: int, height: int, seed: int = 0):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(png_bytes(width, height, seed=seed))


def build_corpus_dir(tmp_path, entries):
    """entries: list of (label_or_None, dataset, width, height, split_or_None)."""
    manifest_entries = []
    for i, (label, dataset, width, height, split) in enumerate(entries):
        name = f"images/{i:04d}.png"
        write_image(tmp_path / name, width, height, seed=i)
        manifest_entries.append(
            ManifestEntry(image=name, label=label, dataset=dataset,
                          width=width, height=height, split=split)
        )
    write_manifest(manifest_entries, tmp_path / "manifest.jsonl")
    return tmp_path / "manifest.jsonl"


def test_prepare_filters_splits_and_packs(tmp_path):
    entries = [("word%d" % i, "toy", 40, 20, None) for i in range(10)]
    entries.append(("###", "toy", 40, 20, None))  # filtered out
    manifest = load_manifest(build_corpus_dir(tmp_path, entries))
    result = prepare_corpus(
        manifest, tmp_path / "packed", base_dir=tmp_path, ratios=(0.8, 0.1, 0.1), seed=0
    )
    report = result.report["datasets"]["toy"]
    assert report["original"] == 11
    assert report["kept"] == 10
    assert report["rejections"]["dont_care"] == 1
    assert report["splits"] == {"train": 8, "valid": 1, "eval": 1}
    assert (tmp_path / "packed" / "prepare_report.json").exists()


def test_prepare_honors_split_hints(tmp_path):
    entries = [("w%d" % i, "bench", 40, 20, "eval") for i in range(4)]
    entries += [("t%d" % i, "bench", 40, 20, None) for i in range(4)]
    manifest = load_manifest(build_corpus_dir(tmp_path, entries))
    result = prepare_corpus(
        manifest, tmp_path / "packed", base_dir=tmp_path, ratios=(0.9, 0.1), seed=1
    )
    counts = result.packed.counts()
    assert counts[("bench", "eval")] == 4
    assert counts[("bench", "train")] + counts.get(("bench", "valid"), 0) == 4


def test_prepare_unlabeled_gets_vertical_rule(tmp_path):
    entries = [
        (None, "pool", 40, 20, None),
        (None, "pool", 20, 40, None),  # taller than wide: excluded for unlabeled data
    ]
    manifest = load_manifest(build_corpus_dir(tmp_path, entries))
    result = prepare_corpus(
        manifest, tmp_path / "packed", base_dir=tmp_path, ratios=(1.0, 0.0), seed=0
    )
    assert result.report["datasets"]["pool"]["kept"] == 1
    assert result.report["datasets"]["pool"]["rejections"]["vertical"] == 1


def test_prepare_dedup_across_datasets(tmp_path):
    entries = [("same", "a", 12, 8, None), ("same", "b", 12, 8, None)]
    manifest_path = build_corpus_dir(tmp_path, entries)
    # make dataset b's image byte-identical to dataset a's
    src = (tmp_path / "images/0000.png").read_bytes()
    (tmp_path / "images/0001.png").write_bytes(src)
    manifest = load_manifest(manifest_path)
    result = prepare_corpus(
        manifest, tmp_path / "packed", base_dir=tmp_path, ratios=(0.9, 0.1), seed=0,
        dedup_across=True,
    )
    assert result.report["datasets"]["a"]["kept"] == 1
    assert result.report["datasets"]["b"]["kept"] == 0
    assert len(result.report["datasets"]["b"]["dedup_removed"]) == 1


def test_packed_labels_contain_only_recognizable_characters(tmp_path):
    from strkit.charset import default_charset

    entries = [
        ("good", "mix", 40, 20, None),
        ("café", "mix", 40, 20, None),  # filtered by the charset rule
        ("Hello!", "mix", 40, 20, None),
        ("日本", "mix", 40, 20, None),
    ]
    manifest = load_manifest(build_corpus_dir(tmp_path, entries))
    result = prepare_corpus(
        manifest, tmp_path / "packed", base_dir=tmp_path, ratios=(0.9, 0.1), seed=0
    )
    charset = default_charset()
    labels = [e.label for e in result.packed.iter_entries() if e.label is not None]
    assert labels and all(charset.is_clean(label) for label in labels)


def test_prepare_subsample_reduces_proportionally(tmp_path):
    entries = [("w%d" % i, "big", 40, 20, None) for i in range(20)]
    entries += [("v%d" % i, "small", 40, 20, None) for i in range(10)]
    manifest = load_manifest(build_corpus_dir(tmp_path, entries))
    result = prepare_corpus(
        manifest, tmp_path / "packed", base_dir=tmp_path, ratios=(0.9, 0.1), seed=0,
        subsample=0.5,
    )
    assert result.report["datasets"]["big"]["kept"] == 10
    assert result.report["datasets"]["big"]["subsampled_away"] == 10
    assert result.report["datasets"]["small"]["kept"] == 5
    assert set(result.packed.datasets()) == {"big", "small"}  # diversity preserved


def test_policy_file_round_trip(tmp_path):
    policy_file = tmp_path / "policy.cfg"
    policy_file.write_text(
        """
[default]
dont_care_mode = none
max_label_length = 12

[dataset:uber]
exclude_star_labels = true
dont_care_mode = exclude-pure-hash-runs
"""
    )
    default, overrides = load_policy_file(policy_file)
    assert default.dont_care_mode == DONT_CARE_NONE
    assert default.max_label_length == 12
    assert not default.exclude_star_labels
    assert overrides["uber"].exclude_star_labels
    assert overrides["uber"].max_label_length == 12  # inherits the default


def test_policy_file_missing():
    with pytest.raises(FileNotFoundError):
        load_policy_file("/does/not/exist.cfg")


def test_policy_none_gives_defaults():
    default, overrides = load_policy_file(None)
    assert default == FilterPolicy()
    assert overrides == {}
