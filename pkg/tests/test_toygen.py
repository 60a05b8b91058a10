import filecmp
import json
from pathlib import Path

import numpy as np
import pytest

from strkit.charset import default_charset
from strkit.corpus import FilterPolicy, LabeledSample, filter_samples, load_manifest
from strkit.toygen import DEFAULT_WORDS, GLYPHS, ToyCorpusSpec, render_toy_corpus, render_word


def small_spec(**kw):
    base = dict(vocabulary=tuple(DEFAULT_WORDS[:8]), samples_per_word=3, seed=11)
    base.update(kw)
    return ToyCorpusSpec(**base)


def test_glyphs_cover_lowercase_and_digits():
    for c in "abcdefghijklmnopqrstuvwxyz0123456789":
        assert c in GLYPHS
        assert GLYPHS[c].shape == (7, 5)


def test_render_is_wider_than_tall_for_words():
    spec = small_spec()
    rng = np.random.default_rng(0)
    for word in ("stop", "verylongbutok", "cafe"):
        img = render_word(word, spec, rng)
        assert img.shape[1] > img.shape[0]
        assert img.dtype == np.uint8


def test_corpus_count_and_manifest(tmp_path):
    manifest = render_toy_corpus(small_spec(), tmp_path)
    assert len(manifest.entries) == 8 * 3
    reloaded = load_manifest(tmp_path / "manifest.jsonl")
    assert len(reloaded.entries) == 24
    assert reloaded.dataset_counts() == {"toy": 24}
    for entry in reloaded.entries:
        assert (tmp_path / entry.image).exists()


def test_corpus_is_byte_deterministic(tmp_path):
    spec = small_spec()
    render_toy_corpus(spec, tmp_path / "a")
    render_toy_corpus(spec, tmp_path / "b")
    a_files = sorted((tmp_path / "a" / "images").iterdir())
    b_files = sorted((tmp_path / "b" / "images").iterdir())
    assert len(a_files) == len(b_files)
    for fa, fb in zip(a_files, b_files):
        assert fa.read_bytes() == fb.read_bytes(), fa.name
    assert (tmp_path / "a" / "manifest.jsonl").read_bytes() == (
        tmp_path / "b" / "manifest.jsonl"
    ).read_bytes()


def test_different_seed_changes_bytes(tmp_path):
    render_toy_corpus(small_spec(seed=1), tmp_path / "a")
    render_toy_corpus(small_spec(seed=2), tmp_path / "b")
    a0 = (tmp_path / "a" / "images" / "000000.png").read_bytes()
    b0 = (tmp_path / "b" / "images" / "000000.png").read_bytes()
    assert a0 != b0


def test_output_passes_default_filters_with_zero_rejections(tmp_path):
    manifest = render_toy_corpus(small_spec(samples_per_word=4), tmp_path)
    samples = [
        LabeledSample(
            image=b"", label=e.label, dataset=e.dataset, id=f"toy_{i}",
            width=e.width, height=e.height,
        )
        for i, e in enumerate(manifest.entries)
    ]
    kept, rejections = filter_samples(samples, FilterPolicy(), default_charset())
    assert len(kept) == len(samples)
    assert all(v == 0 for v in rejections.values())


def test_unlabeled_twin(tmp_path):
    render_toy_corpus(small_spec(unlabeled_twin=True), tmp_path)
    twin = load_manifest(tmp_path / "unlabeled_manifest.jsonl")
    assert len(twin.entries) == 24
    assert all(e.label is None for e in twin.entries)
    assert twin.dataset_counts() == {"toy_u": 24}
    labeled = load_manifest(tmp_path / "manifest.jsonl")
    first_labeled = (tmp_path / labeled.entries[0].image).read_bytes()
    first_twin = (tmp_path / twin.entries[0].image).read_bytes()
    assert first_labeled != first_twin  # fresh renders, not copies


def test_unrenderable_character_named():
    with pytest.raises(ValueError, match="'X'"):
        ToyCorpusSpec(vocabulary=("goodword", "baXd"))


def test_word_length_cap():
    with pytest.raises(ValueError, match="25"):
        ToyCorpusSpec(vocabulary=("a" * 26,))


def test_default_vocabulary_is_large_enough():
    assert len(DEFAULT_WORDS) >= 50
    assert len(set(DEFAULT_WORDS)) == len(DEFAULT_WORDS)
