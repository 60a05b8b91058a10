"""Word-accuracy evaluation with case/punctuation-insensitive matching.

A prediction is correct when it equals the ground truth after both are
normalized to lowercase ASCII letters and digits. The "total" figure is
computed over the union of all evaluated splits (correct count divided
by union size), never as a mean of per-dataset accuracies.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from pathlib import Path

from .models.recognizer import TextRecognizer, to_model_input

_KEEP = frozenset(string.ascii_lowercase + string.digits)


def normalize_for_eval(s: str) -> str:
    """Lowercase and strip everything but ASCII letters and digits."""
    return "".join(c for c in s.lower() if c in _KEEP)


@dataclass
class DatasetScore:
    name: str
    count: int
    correct: int

    @property
    def accuracy(self) -> float | None:
        if self.count == 0:
            return None
        return 100.0 * self.correct / self.count


@dataclass
class EvalReport:
    per_dataset: list[DatasetScore]
    metadata: dict = field(default_factory=dict)

    @property
    def total_count(self) -> int:
        return sum(s.count for s in self.per_dataset)

    @property
    def total_correct(self) -> int:
        return sum(s.correct for s in self.per_dataset)

    @property
    def total_accuracy(self) -> float | None:
        if self.total_count == 0:
            return None
        return 100.0 * self.total_correct / self.total_count

    def to_table(self) -> str:
        """Benchmark-style table: one column per dataset plus Total."""
        names = [s.name for s in self.per_dataset] + ["Total"]
        counts = [str(s.count) for s in self.per_dataset] + [str(self.total_count)]
        accs = [
            "-" if s.accuracy is None else f"{s.accuracy:.1f}" for s in self.per_dataset
        ]
        accs.append("-" if self.total_accuracy is None else f"{self.total_accuracy:.1f}")
        widths = [max(len(a), len(b), len(c)) for a, b, c in zip(names, counts, accs)]
        rows = [
            "  ".join(v.rjust(w) for v, w in zip(vals, widths))
            for vals in (names, counts, accs)
        ]
        return "\n".join(rows)

    def to_records(self) -> dict:
        return {
            "metadata": self.metadata,
            "per_dataset": [
                {"name": s.name, "count": s.count, "correct": s.correct, "accuracy": s.accuracy}
                for s in self.per_dataset
            ],
            "total": {
                "count": self.total_count,
                "correct": self.total_correct,
                "accuracy": self.total_accuracy,
            },
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_records(), indent=2) + "\n", encoding="utf-8")


def score_pairs(pairs: list[tuple[str, str]]) -> tuple[int, int]:
    """(correct, count) for (prediction, truth) pairs under normalization."""
    correct = sum(
        1 for pred, truth in pairs if normalize_for_eval(pred) == normalize_for_eval(truth)
    )
    return correct, len(pairs)


def aggregate_report(
    per_dataset_pairs: dict[str, list[tuple[str, str]]], metadata: dict | None = None
) -> EvalReport:
    scores = []
    for name, pairs in per_dataset_pairs.items():
        correct, count = score_pairs(pairs)
        scores.append(DatasetScore(name=name, count=count, correct=correct))
    return EvalReport(per_dataset=scores, metadata=metadata or {})


def word_accuracy(model: TextRecognizer, images, labels, batch_size: int = 64) -> float:
    """Accuracy (percent) of greedy transcriptions against ``labels``."""
    pairs = []
    for start in range(0, len(images), batch_size):
        batch = to_model_input(images[start : start + batch_size])
        texts, _ = model.recognize(batch)
        pairs.extend(zip(texts, labels[start : start + batch_size]))
    correct, count = score_pairs(pairs)
    return 100.0 * correct / count if count else 0.0


def evaluate(
    model: TextRecognizer,
    eval_splits: dict[str, tuple[list, list]],
    metadata: dict | None = None,
    batch_size: int = 64,
) -> EvalReport:
    """Score every (images, labels) split; names key the report rows."""
    per_dataset = {}
    for name, (images, labels) in eval_splits.items():
        pairs = []
        for start in range(0, len(images), batch_size):
            batch = to_model_input(images[start : start + batch_size])
            texts, _ = model.recognize(batch)
            pairs.extend(zip(texts, labels[start : start + batch_size]))
        per_dataset[name] = pairs
    return aggregate_report(per_dataset, metadata)
