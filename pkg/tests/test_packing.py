import pytest

from strkit.corpus import LabeledSample, UnlabeledSample
from strkit.packing import PackedDataset, PackError, pack_samples

from conftest import png_bytes


def make_samples(n=5, dataset="fix"):
    out = []
    for i in range(n):
        out.append(
            LabeledSample(
                image=png_bytes(10 + i, 8, seed=i), label=f"w{i}", dataset=dataset,
                id=f"{dataset}_{i:04d}", width=10 + i, height=8,
            )
        )
    return out


def test_pack_load_round_trip_bit_exact(tmp_path):
    samples = make_samples(5)
    packed = pack_samples([(s, "train") for s in samples], tmp_path / "packed")
    reloaded = PackedDataset(tmp_path / "packed")
    assert len(reloaded) == 5
    for original in samples:
        loaded = reloaded.load_sample(original.id)
        assert loaded.image == original.image
        assert loaded.label == original.label
        assert (loaded.width, loaded.height) == (original.width, original.height)


def test_missing_index_errors(tmp_path):
    (tmp_path / "packed").mkdir()
    with pytest.raises(PackError, match="index not found"):
        PackedDataset(tmp_path / "packed")


def test_per_dataset_per_split_counts(tmp_path):
    pairs = []
    for dataset, n_train, n_valid in (("a", 3, 1), ("b", 2, 2), ("c", 4, 0)):
        samples = make_samples(n_train + n_valid, dataset=dataset)
        pairs += [(s, "train") for s in samples[:n_train]]
        pairs += [(s, "valid") for s in samples[n_train:]]
    packed = pack_samples(pairs, tmp_path / "packed")
    counts = packed.counts()
    assert counts[("a", "train")] == 3 and counts[("a", "valid")] == 1
    assert counts[("b", "train")] == 2 and counts[("b", "valid")] == 2
    assert counts[("c", "train")] == 4 and ("c", "valid") not in counts


def test_decode_failure_lists_ids_and_leaves_no_index(tmp_path):
    good = make_samples(2)
    bad = LabeledSample(image=b"garbage", label="x", dataset="fix", id="fix_bad",
                        width=3, height=3)
    with pytest.raises(PackError, match="fix_bad"):
        pack_samples([(good[0], "train"), (bad, "train"), (good[1], "train")],
                     tmp_path / "packed")
    assert not (tmp_path / "packed" / "index").exists()


def test_unlabeled_samples_round_trip(tmp_path):
    sample = UnlabeledSample(image=png_bytes(9, 7, seed=42), dataset="u", id="u_0001",
                             width=9, height=7)
    pack_samples([(sample, "train")], tmp_path / "packed")
    loaded = PackedDataset(tmp_path / "packed").load_sample("u_0001")
    assert isinstance(loaded, UnlabeledSample)
    assert loaded.image == sample.image


def test_random_access_entry_lookup(tmp_path):
    samples = make_samples(4)
    packed = pack_samples([(s, "eval") for s in samples], tmp_path / "packed")
    entry = packed.entry("fix_0002")
    assert entry.label == "w2"
    assert entry.split == "eval"
    assert packed.read_bytes("fix_0002") == samples[2].image


def test_iter_entries_filters(tmp_path):
    pairs = [(s, "train") for s in make_samples(3, dataset="a")]
    pairs += [(s, "eval") for s in make_samples(2, dataset="b")]
    packed = pack_samples(pairs, tmp_path / "packed")
    assert len(list(packed.iter_entries(dataset="a"))) == 3
    assert len(list(packed.iter_entries(split="eval"))) == 2
    assert len(list(packed.iter_entries(dataset="b", split="train"))) == 0
