import pytest
from hypothesis import given, strategies as st

from strkit.evaluation import (
    DatasetScore,
    EvalReport,
    aggregate_report,
    normalize_for_eval,
    score_pairs,
)


# --------------------------------------------------------------------------
# Normalization


@pytest.mark.parametrize(
    "raw,expected",
    [
        ("B,ook!", "book"),
        ("WiFi-5", "wifi5"),
        ("", ""),
        ("STOP", "stop"),
        ("café", "caf"),  # accented letters are removed, not transliterated
        ("a b c", "abc"),
        ("[PAD]!?", "pad"),
    ],
)
def test_normalize_examples(raw, expected):
    assert normalize_for_eval(raw) == expected


@given(st.text(max_size=40))
def test_normalize_idempotent(s):
    once = normalize_for_eval(s)
    assert normalize_for_eval(once) == once


@given(st.text(max_size=40))
def test_normalize_output_alphabet(s):
    assert all(c.islower() or c.isdigit() for c in normalize_for_eval(s))
    assert all(ord(c) < 128 for c in normalize_for_eval(s))


def test_match_is_normalization_insensitive():
    correct, count = score_pairs([("Stop!", "stop"), ("B,ook", "BOOK"), ("wifi", "Wi-Fi")])
    assert (correct, count) == (3, 3)


def test_prediction_changes_in_removed_characters_do_not_matter():
    base, _ = score_pairs([("stop", "stop")])
    decorated, _ = score_pairs([("s.t.o.p!!!", "stop")])
    assert base == decorated == 1


# --------------------------------------------------------------------------
# Union accuracy


def test_union_total_vs_per_dataset_mean():
    """10-sample dataset fully correct, 90-sample dataset fully wrong:
    per-dataset accuracies 100 and 0, union total 10.0 (not 50)."""
    pairs_a = [("yes", "yes")] * 10
    pairs_b = [("no", "absolutely_not")] * 90
    report = aggregate_report({"small": pairs_a, "large": pairs_b})
    accs = {s.name: s.accuracy for s in report.per_dataset}
    assert accs == {"small": 100.0, "large": 0.0}
    assert report.total_accuracy == pytest.approx(10.0)


def test_six_benchmark_split_sizes_union():
    sizes = {"iiit": 3000, "svt": 647, "ic13": 1015, "ic15": 2077, "sp": 645, "ct": 288}
    pairs = {name: [("w", "w")] * n for name, n in sizes.items()}
    report = aggregate_report(pairs)
    assert report.total_count == 7672
    assert report.total_accuracy == 100.0


def test_all_correct_is_100_everywhere():
    report = aggregate_report({"a": [("x", "x")] * 5, "b": [("y", "y")] * 3})
    assert all(s.accuracy == 100.0 for s in report.per_dataset)
    assert report.total_accuracy == 100.0


def test_empty_split_reported_without_accuracy():
    report = aggregate_report({"empty": [], "full": [("a", "a")]})
    scores = {s.name: s for s in report.per_dataset}
    assert scores["empty"].count == 0
    assert scores["empty"].accuracy is None
    table = report.to_table()
    assert "-" in table


def test_total_equals_correct_count_arithmetic():
    report = EvalReport(
        per_dataset=[
            DatasetScore(name="a", count=10, correct=7),
            DatasetScore(name="b", count=30, correct=12),
        ]
    )
    assert report.total_correct == 19
    assert report.total_count == 40
    assert report.total_accuracy == pytest.approx(100.0 * 19 / 40)


def test_report_records_round_trip(tmp_path):
    report = aggregate_report({"a": [("x", "x"), ("y", "z")]}, metadata={"checkpoint": "c1"})
    path = tmp_path / "report.json"
    report.save(path)
    import json

    data = json.loads(path.read_text())
    assert data["metadata"]["checkpoint"] == "c1"
    assert data["per_dataset"][0]["count"] == 2
    assert data["total"]["correct"] == 1


def test_table_layout_has_total_column():
    report = aggregate_report({"svt": [("a", "a")], "iiit": [("b", "c")]})
    table = report.to_table()
    lines = table.splitlines()
    assert len(lines) == 3
    assert "Total" in lines[0]
    assert lines[1].split()[-1] == "2"
    assert lines[2].split()[-1] == "50.0"
