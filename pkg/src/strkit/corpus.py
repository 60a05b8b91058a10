"""Corpus ingestion: manifests, preprocessing filters, dedup, and splits.

Real word-box datasets are consumed through a manifest file (one JSON
object per line) instead of per-source scrapers; see ``load_manifest``
for the wire format. Filtering applies the preprocessing rules used to
consolidate the training corpora: don't-care labels, star labels,
out-of-charset labels, vertical boxes, and over-long labels.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .charset import CharsetSpec

log = logging.getLogger(__name__)

MANIFEST_FORMAT_VERSION = 1

# Rejection rule names, in attribution order.
RULE_DONT_CARE = "dont_care"
RULE_STAR = "star"
RULE_CHARSET = "charset"
RULE_VERTICAL = "vertical"
RULE_LENGTH = "length"
RULE_ORDER = (RULE_DONT_CARE, RULE_STAR, RULE_CHARSET, RULE_VERTICAL, RULE_LENGTH)


class ManifestError(ValueError):
    """Raised when a manifest file violates the wire format."""


@dataclass(frozen=True)
class LabeledSample:
    """A word-box image with its transcription."""

    image: bytes
    label: str
    dataset: str
    id: str
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"sample {self.id}: non-positive dimensions")
        if not self.label:
            raise ValueError(f"sample {self.id}: empty label")


@dataclass(frozen=True)
class UnlabeledSample:
    """A word-box image without a transcription."""

    image: bytes
    dataset: str
    id: str
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"sample {self.id}: non-positive dimensions")


@dataclass(frozen=True)
class PseudoLabeledSample:
    """An unlabeled sample paired with a model-predicted transcription."""

    base: UnlabeledSample
    pseudo_label: str
    confidence: float

    def __post_init__(self):
        if not self.pseudo_label:
            raise ValueError(f"sample {self.base.id}: empty pseudo label")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"sample {self.base.id}: confidence {self.confidence} outside [0,1]")


@dataclass(frozen=True)
class ManifestEntry:
    image: str
    label: str | None
    dataset: str
    width: int
    height: int
    split: str | None = None
    confidence: float | None = None


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    format_version: int = MANIFEST_FORMAT_VERSION

    def dataset_counts(self) -> dict[str, int]:
        return dict(Counter(e.dataset for e in self.entries))

    def datasets(self) -> list[str]:
        seen: dict[str, None] = {}
        for e in self.entries:
            seen.setdefault(e.dataset, None)
        return list(seen)


_REQUIRED_KEYS = ("image", "label", "dataset", "width", "height")
_VALID_SPLITS = ("train", "valid", "eval")


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse a manifest file.

    Wire format: UTF-8 text, one record per line, each line a flat JSON
    object with keys ``image``, ``label`` (string or null), ``dataset``,
    ``width``, ``height``, and optionally ``split`` and ``confidence``.
    ``label`` must be null for every record of an unlabeled dataset and a
    string for every record of a labeled one; mixing within one dataset
    is rejected.
    """
    path = Path(path)
    entries: list[ManifestEntry] = []
    labeledness: dict[str, bool] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: not valid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise ManifestError(f"{path}:{lineno}: record is not an object")
            for key in _REQUIRED_KEYS:
                if key not in record:
                    raise ManifestError(f"{path}:{lineno}: missing key {key!r}")
            label = record["label"]
            if label is not None and not isinstance(label, str):
                raise ManifestError(f"{path}:{lineno}: label must be a string or null")
            if label == "":
                raise ManifestError(f"{path}:{lineno}: empty label")
            dataset = record["dataset"]
            is_labeled = label is not None
            if dataset in labeledness and labeledness[dataset] != is_labeled:
                raise ManifestError(
                    f"{path}:{lineno}: dataset {dataset!r} mixes labeled and unlabeled records"
                )
            labeledness[dataset] = is_labeled
            try:
                width = int(record["width"])
                height = int(record["height"])
            except (TypeError, ValueError):
                raise ManifestError(f"{path}:{lineno}: width/height must be integers") from None
            if width < 1 or height < 1:
                raise ManifestError(f"{path}:{lineno}: non-positive dimensions")
            split = record.get("split")
            if split is not None and split not in _VALID_SPLITS:
                raise ManifestError(f"{path}:{lineno}: unknown split {split!r}")
            entries.append(
                ManifestEntry(
                    image=record["image"],
                    label=label,
                    dataset=dataset,
                    width=width,
                    height=height,
                    split=split,
                    confidence=record.get("confidence"),
                )
            )
    manifest = DatasetManifest(entries=entries)
    counts = manifest.dataset_counts()
    log.info("loaded manifest %s: %d entries, per-dataset counts %s", path, len(entries), counts)
    return manifest


def write_manifest(entries: Iterable[ManifestEntry], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for e in entries:
            record: dict = {
                "image": e.image,
                "label": e.label,
                "dataset": e.dataset,
                "width": e.width,
                "height": e.height,
            }
            if e.split is not None:
                record["split"] = e.split
            if e.confidence is not None:
                record["confidence"] = e.confidence
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


# --------------------------------------------------------------------------
# Filtering


DONT_CARE_ANY_HASH_RUN = "exclude-pure-hash-runs"  # "#", "##", "###", "####"
DONT_CARE_MLT19 = "exclude-###-and-####"
DONT_CARE_NONE = "none"


@dataclass(frozen=True)
class FilterPolicy:
    """Per-dataset preprocessing switches.

    ``vertical_rule`` is "labeled" (exclude boxes taller than wide only
    when the label has more than two characters, so one- and two-letter
    words like "it" survive) or "unlabeled" (exclude every box taller
    than wide). Ties at height == width are kept.
    """

    dont_care_mode: str = DONT_CARE_ANY_HASH_RUN
    exclude_star_labels: bool = False
    charset_filter: bool = True
    vertical_rule: str = "labeled"
    max_label_length: int = 25

    def __post_init__(self):
        if self.dont_care_mode not in (DONT_CARE_ANY_HASH_RUN, DONT_CARE_MLT19, DONT_CARE_NONE):
            raise ValueError(f"unknown dont_care_mode {self.dont_care_mode!r}")
        if self.vertical_rule not in ("labeled", "unlabeled"):
            raise ValueError(f"unknown vertical_rule {self.vertical_rule!r}")
        if self.max_label_length < 1:
            raise ValueError("max_label_length must be >= 1")


def default_policy_table() -> dict[str, FilterPolicy]:
    """Per-dataset policies matching the consolidation rules of the
    eleven real sources: older benchmark sets carry no don't-care
    markers, MLT19 only uses "###"/"####", and Uber additionally drops
    labels containing "*"."""
    no_dont_care = FilterPolicy(dont_care_mode=DONT_CARE_NONE)
    hash_runs = FilterPolicy(dont_care_mode=DONT_CARE_ANY_HASH_RUN)
    return {
        "svt": no_dont_care,
        "iiit": no_dont_care,
        "ic13": no_dont_care,
        "ic15": no_dont_care,
        "coco": no_dont_care,
        "rctw": hash_runs,
        "uber": FilterPolicy(dont_care_mode=DONT_CARE_ANY_HASH_RUN, exclude_star_labels=True),
        "art": hash_runs,
        "lsvt": hash_runs,
        "mlt19": FilterPolicy(dont_care_mode=DONT_CARE_MLT19),
        "rects": hash_runs,
    }


def _dont_care_match(label: str, mode: str) -> bool:
    if mode == DONT_CARE_NONE:
        return False
    if mode == DONT_CARE_MLT19:
        return label in ("###", "####")
    return label in ("#", "##", "###", "####")


def _rule_failures(
    sample: LabeledSample | UnlabeledSample, policy: FilterPolicy, charset: CharsetSpec
) -> list[str]:
    """All rules the sample fails, unordered semantics (pure predicates)."""
    failures = []
    label = getattr(sample, "label", None)
    if label is not None:
        if _dont_care_match(label, policy.dont_care_mode):
            failures.append(RULE_DONT_CARE)
        if policy.exclude_star_labels and "*" in label:
            failures.append(RULE_STAR)
        if policy.charset_filter and not charset.is_clean(label):
            failures.append(RULE_CHARSET)
        if policy.vertical_rule == "labeled":
            if len(label) > 2 and sample.height > sample.width:
                failures.append(RULE_VERTICAL)
        else:
            if sample.height > sample.width:
                failures.append(RULE_VERTICAL)
        if len(label) > policy.max_label_length:
            failures.append(RULE_LENGTH)
    else:
        if policy.vertical_rule == "unlabeled" and sample.height > sample.width:
            failures.append(RULE_VERTICAL)
    return failures


def filter_samples(
    samples: Sequence[LabeledSample | UnlabeledSample],
    policy: FilterPolicy,
    charset: CharsetSpec,
) -> tuple[list, dict[str, int]]:
    """Keep samples passing every enabled rule.

    Returns the kept list plus per-rule rejection counts; a rejected
    sample is attributed to the first rule it fails in the order
    don't-care, star, charset, vertical, length.
    """
    kept = []
    rejections = {rule: 0 for rule in RULE_ORDER}
    for sample in samples:
        failures = _rule_failures(sample, policy, charset)
        if failures:
            first = min(failures, key=RULE_ORDER.index)
            rejections[first] += 1
        else:
            kept.append(sample)
    return kept, rejections


# --------------------------------------------------------------------------
# Deduplication


def pixel_hash_key(sample) -> str:
    """Content key: SHA-256 over the decoded pixel bytes.

    Hashing decoded pixels (mode + size + raw bytes) rather than the
    encoded file catches re-encoded copies of the same crop.
    """
    from PIL import Image

    try:
        with Image.open(io.BytesIO(sample.image)) as img:
            img.load()
            payload = f"{img.mode}:{img.size}".encode() + img.tobytes()
    except Exception as exc:
        raise ValueError(f"sample {sample.id}: cannot decode image ({exc})") from exc
    return hashlib.sha256(payload).hexdigest()


def scene_label_key(sample) -> str:
    """Alternate key for sources whose boxes share scene images: the
    scene portion of the id (everything before the last underscore)
    plus the label. Matches near-duplicates that differ pixelwise."""
    scene = sample.id.rsplit("_", 1)[0]
    label = getattr(sample, "label", "")
    return f"{scene}\x00{label}"


def dedup_samples(
    primary: Sequence,
    against: Sequence,
    keyer: Callable = pixel_hash_key,
) -> tuple[list, list[tuple[str, str]]]:
    """Drop samples of ``primary`` whose key appears in ``against``.

    Returns the surviving samples and a report of (removed id,
    matching id) pairs.
    """
    against_keys: dict[str, str] = {}
    for sample in against:
        against_keys.setdefault(keyer(sample), sample.id)
    kept = []
    removed: list[tuple[str, str]] = []
    for sample in primary:
        key = keyer(sample)
        if key in against_keys:
            removed.append((sample.id, against_keys[key]))
        else:
            kept.append(sample)
    return kept, removed


# --------------------------------------------------------------------------
# Splitting


@dataclass(frozen=True)
class SplitSpec:
    """Split ratios (train, valid) or (train, valid, eval) plus a seed."""

    ratios: tuple[float, ...]
    seed: int = 0

    def __post_init__(self):
        if len(self.ratios) not in (2, 3):
            raise ValueError("ratios must have 2 or 3 components")
        if any(r < 0 for r in self.ratios):
            raise ValueError("ratios must be nonnegative")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError(f"ratios must sum to 1, got {sum(self.ratios)}")


SPLIT_NAMES = ("train", "valid", "eval")


def split_dataset(samples: Sequence, spec: SplitSpec) -> tuple[list, ...]:
    """Deterministically shuffle and partition ``samples``.

    Non-train splits get floor(n * ratio) samples each; the remainder
    goes to train so no labeled data is wasted.
    """
    if not samples:
        raise ValueError("cannot split an empty sample list")
    n = len(samples)
    order = list(range(n))
    random.Random(spec.seed).shuffle(order)
    shuffled = [samples[i] for i in order]

    tail_sizes = [int(n * r) for r in spec.ratios[1:]]
    train_size = n - sum(tail_sizes)
    for name, ratio, size in zip(SPLIT_NAMES[1:], spec.ratios[1:], tail_sizes):
        if ratio > 0 and size == 0:
            log.warning("%s split is empty: %d samples at ratio %.3f", name, n, ratio)

    parts = [shuffled[:train_size]]
    start = train_size
    for size in tail_sizes:
        parts.append(shuffled[start : start + size])
        start += size
    return tuple(parts)
