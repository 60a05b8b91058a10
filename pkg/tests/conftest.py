import io

import numpy as np
import pytest
from PIL import Image

from strkit.charset import CharsetSpec, default_charset
from strkit.corpus import LabeledSample


def png_bytes(width: int, height: int, seed: int = 0) -> bytes:
    """A small deterministic grayscale PNG."""
    rng = np.random.default_rng(seed)
    array = rng.integers(0, 256, size=(height, width), dtype=np.uint8)
    buf = io.BytesIO()
    Image.fromarray(array, mode="L").save(buf, format="PNG")
    return buf.getvalue()


@pytest.fixture(scope="session")
def charset() -> CharsetSpec:
    return default_charset()


@pytest.fixture(scope="session")
def tiny_charset() -> CharsetSpec:
    return CharsetSpec(recognizable_chars="ab", special_tokens=("[PAD]",))


def labeled(label: str, width: int = 40, height: int = 20, dataset: str = "fix", idx: int = 0):
    return LabeledSample(
        image=b"", label=label, dataset=dataset, id=f"{dataset}_{idx:04d}",
        width=width, height=height,
    )


# The 25-sample filter fixture: every rule exercised, kept set known by hand.
# Tuples: (label, width, height, expected disposition)
FILTER_FIXTURE = [
    ("###", 40, 20, "dont_care"),
    ("##", 40, 20, "dont_care"),
    ("#", 40, 20, "dont_care"),
    ("####", 40, 20, "dont_care"),
    ("a#b", 40, 20, "kept"),
    ("12*4", 40, 20, "star"),
    ("*", 40, 20, "star"),
    ("héllo", 40, 20, "charset"),
    ("日本", 40, 20, "charset"),
    ("ABC", 20, 40, "vertical"),
    ("it", 20, 40, "kept"),
    ("ab", 40, 40, "kept"),  # height == width tie is kept
    ("abcd", 40, 41, "vertical"),
    ("a" * 26, 100, 20, "length"),
    ("a" * 25, 100, 20, "kept"),
    ("stop", 60, 20, "kept"),
    ("exit", 60, 20, "kept"),
    ("Hello!", 60, 20, "kept"),
    ("#####", 40, 20, "kept"),  # five hashes is not a don't-care run
    ("a*b", 40, 20, "star"),
    ("x", 10, 30, "kept"),  # short words are exempt from the vertical rule
    ("3.14", 40, 20, "kept"),
    ("café", 40, 20, "charset"),
    ("verylongbutok", 80, 20, "kept"),
    ("a b", 40, 20, "charset"),  # space is not among the 94 characters
]

FIXTURE_EXPECTED_KEPT = [label for label, _, _, kind in FILTER_FIXTURE if kind == "kept"]
FIXTURE_EXPECTED_REJECTIONS = {
    "dont_care": 4,
    "star": 3,
    "charset": 4,
    "vertical": 2,
    "length": 1,
}


def filter_fixture_samples():
    return [
        labeled(label, width, height, idx=i)
        for i, (label, width, height, _) in enumerate(FILTER_FIXTURE)
    ]
