import collections

import pytest

from strkit.sampler import BalancedSampler, subsample_ratio


def datasets_of_sizes(sizes: dict[str, int]):
    return {name: [f"{name}:{i}" for i in range(n)] for name, n in sizes.items()}


def test_quota_11_datasets():
    sets = datasets_of_sizes({f"d{i}": 30 + i for i in range(11)})
    sampler = BalancedSampler(sets, batch_size=128, seed=0)
    assert sampler.quota == 12
    batch = sampler.next_batch()
    assert len(batch) == 132
    per = collections.Counter(item.split(":")[0] for item in batch)
    assert all(count == 12 for count in per.values())


def test_quota_3_datasets():
    sets = datasets_of_sizes({"a": 100, "b": 50, "c": 200})
    sampler = BalancedSampler(sets, batch_size=128, seed=0)
    assert sampler.quota == 43
    assert len(sampler.next_batch()) == 129


def test_single_dataset_gets_full_batch():
    sampler = BalancedSampler(datasets_of_sizes({"only": 300}), batch_size=128, seed=0)
    assert sampler.quota == 128
    assert len(sampler.next_batch()) == 128


def test_empty_dataset_rejected_at_construction():
    with pytest.raises(ValueError, match="empty"):
        BalancedSampler({"a": [1], "b": []}, batch_size=8)
    with pytest.raises(ValueError):
        BalancedSampler({}, batch_size=8)


def test_epoch_coverage_no_repeats():
    """Within one per-dataset epoch every sample appears exactly once."""
    sets = datasets_of_sizes({"a": 24, "b": 36})
    sampler = BalancedSampler(sets, batch_size=12, seed=5)  # quota 6 each
    drawn = {"a": [], "b": []}
    for _ in range(4):  # 24 draws per dataset: one full epoch of "a"
        for item in sampler.next_batch():
            name = item.split(":")[0]
            drawn[name].append(item)
    assert sorted(drawn["a"]) == sorted(sets["a"])  # each exactly once
    assert len(set(drawn["b"])) == 24  # no repeats inside b's first epoch


def test_wrap_reshuffles_small_dataset():
    sets = datasets_of_sizes({"small": 5, "big": 1000})
    sampler = BalancedSampler(sets, batch_size=20, seed=1)  # quota 10
    batch = sampler.next_batch()
    small_items = [x for x in batch if x.startswith("small")]
    assert len(small_items) == 10
    assert collections.Counter(small_items)["small:0"] == 2
    assert sampler.epochs["small"] == 2


def test_determinism_same_seed():
    sets = datasets_of_sizes({"a": 50, "b": 70, "c": 30})
    s1 = BalancedSampler(sets, batch_size=30, seed=9)
    s2 = BalancedSampler(sets, batch_size=30, seed=9)
    for _ in range(20):
        assert s1.next_batch() == s2.next_batch()
    s3 = BalancedSampler(sets, batch_size=30, seed=10)
    assert any(s1.next_batch() != s3.next_batch() for _ in range(5))


def test_draw_counts_stay_balanced():
    sets = datasets_of_sizes({"a": 13, "b": 999, "c": 77})
    sampler = BalancedSampler(sets, batch_size=30, seed=2)
    counts = collections.Counter()
    for _ in range(50):
        for item in sampler.next_batch():
            counts[item.split(":")[0]] += 1
    assert max(counts.values()) - min(counts.values()) <= sampler.quota


# --------------------------------------------------------------------------
# Ratio subsampling


def test_subsample_identity_at_ratio_one():
    sets = datasets_of_sizes({"a": 10, "b": 4})
    reduced = subsample_ratio(sets, 1.0, seed=0)
    assert reduced == {k: list(v) for k, v in sets.items()}


def test_subsample_rounds_per_dataset():
    sets = datasets_of_sizes({"a": 231, "b": 763, "c": 25})
    reduced = subsample_ratio(sets, 0.2, seed=0)
    assert len(reduced["a"]) == round(231 * 0.2)
    assert len(reduced["b"]) == round(763 * 0.2)
    assert len(reduced["c"]) == 5
    assert set(reduced.keys()) == set(sets.keys())  # diversity preserved


def test_subsample_nested_prefix_property():
    sets = datasets_of_sizes({"a": 100, "b": 57})
    small = subsample_ratio(sets, 0.2, seed=3)
    large = subsample_ratio(sets, 0.4, seed=3)
    for name in sets:
        assert set(small[name]) <= set(large[name])


def test_subsample_keeps_at_least_one():
    sets = datasets_of_sizes({"tiny": 2})
    reduced = subsample_ratio(sets, 0.1, seed=0)
    assert len(reduced["tiny"]) == 1


def test_subsample_invalid_ratio():
    with pytest.raises(ValueError):
        subsample_ratio({"a": [1]}, 0.0)
    with pytest.raises(ValueError):
        subsample_ratio({"a": [1]}, 1.5)
