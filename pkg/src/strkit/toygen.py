"""Deterministic toy word-image corpus for desk-scale runs.

Words are rendered from a bundled 5x7 bitmap glyph set (no system font
dependency, so corpora are byte-identical across machines), with
per-sample jitter: integer scale, foreground/background gray levels,
additive noise, and a small rotation. Labels are lowercase words and
digits, so every render passes the default corpus filters.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from .corpus import DatasetManifest, ManifestEntry, write_manifest

log = logging.getLogger(__name__)

GLYPH_H = 7
GLYPH_W = 5

_RAW_GLYPHS = {
    "a": (".....", ".....", ".###.", "....#", ".####", "#...#", ".####"),
    "b": ("#....", "#....", "####.", "#...#", "#...#", "#...#", "####."),
    "c": (".....", ".....", ".####", "#....", "#....", "#....", ".####"),
    "d": ("....#", "....#", ".####", "#...#", "#...#", "#...#", ".####"),
    "e": (".....", ".....", ".###.", "#...#", "#####", "#....", ".###."),
    "f": ("..##.", ".#..#", ".#...", "###..", ".#...", ".#...", ".#..."),
    "g": (".....", ".####", "#...#", "#...#", ".####", "....#", ".###."),
    "h": ("#....", "#....", "####.", "#...#", "#...#", "#...#", "#...#"),
    "i": ("..#..", ".....", ".##..", "..#..", "..#..", "..#..", ".###."),
    "j": ("...#.", ".....", "..##.", "...#.", "...#.", "#..#.", ".##.."),
    "k": ("#....", "#....", "#..#.", "#.#..", "##...", "#.#..", "#..#."),
    "l": (".##..", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."),
    "m": (".....", ".....", "##.#.", "#.#.#", "#.#.#", "#.#.#", "#.#.#"),
    "n": (".....", ".....", "####.", "#...#", "#...#", "#...#", "#...#"),
    "o": (".....", ".....", ".###.", "#...#", "#...#", "#...#", ".###."),
    "p": (".....", "####.", "#...#", "#...#", "####.", "#....", "#...."),
    "q": (".....", ".####", "#...#", "#...#", ".####", "....#", "....#"),
    "r": (".....", ".....", "#.##.", "##...", "#....", "#....", "#...."),
    "s": (".....", ".....", ".####", "#....", ".###.", "....#", "####."),
    "t": (".#...", ".#...", "####.", ".#...", ".#...", ".#..#", "..##."),
    "u": (".....", ".....", "#...#", "#...#", "#...#", "#...#", ".####"),
    "v": (".....", ".....", "#...#", "#...#", "#...#", ".#.#.", "..#.."),
    "w": (".....", ".....", "#.#.#", "#.#.#", "#.#.#", "#.#.#", ".#.#."),
    "x": (".....", ".....", "#...#", ".#.#.", "..#..", ".#.#.", "#...#"),
    "y": (".....", "#...#", "#...#", ".####", "....#", "#...#", ".###."),
    "z": (".....", ".....", "#####", "...#.", "..#..", ".#...", "#####"),
    "0": (".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."),
    "1": ("..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."),
    "2": (".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"),
    "3": (".###.", "#...#", "....#", "..##.", "....#", "#...#", ".###."),
    "4": ("...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."),
    "5": ("#####", "#....", "####.", "....#", "....#", "#...#", ".###."),
    "6": (".###.", "#....", "####.", "#...#", "#...#", "#...#", ".###."),
    "7": ("#####", "....#", "...#.", "..#..", "..#..", ".#...", ".#..."),
    "8": (".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."),
    "9": (".###.", "#...#", "#...#", ".####", "....#", "....#", ".###."),
}

GLYPHS = {
    char: np.array([[cell == "#" for cell in row] for row in rows], dtype=bool)
    for char, rows in _RAW_GLYPHS.items()
}

DEFAULT_WORDS = [
    "stop", "exit", "open", "sale", "cafe", "park", "milk", "fish", "book", "road",
    "shop", "taxi", "bank", "hotel", "pizza", "metro", "beach", "house", "plant", "bread",
    "water", "light", "music", "paper", "phone", "table", "chair", "clock", "cloud", "storm",
    "train", "plane", "bus", "car", "door", "wall", "gate", "sign", "menu", "soup",
    "rice", "corn", "apple", "lemon", "grape", "sugar", "salt", "honey", "juice", "candy",
    "north", "south", "east", "west", "main", "first", "second", "third", "green", "blue",
    "red7", "gold2", "zone9", "dock4",
]


@dataclass(frozen=True)
class ToyCorpusSpec:
    vocabulary: tuple[str, ...] = tuple(DEFAULT_WORDS[:50])
    samples_per_word: int = 20
    seed: int = 0
    scale_range: tuple[int, int] = (2, 3)
    noise_sigma_range: tuple[float, float] = (2.0, 8.0)
    rot_jitter_deg: float = 2.0
    unlabeled_twin: bool = False

    def __post_init__(self):
        if not self.vocabulary:
            raise ValueError("vocabulary must be nonempty")
        for word in self.vocabulary:
            if not word:
                raise ValueError("empty word in vocabulary")
            if len(word) > 25:
                raise ValueError(f"word {word!r} longer than 25 characters")
            for char in word:
                if char not in GLYPHS:
                    raise ValueError(f"character {char!r} of word {word!r} is not renderable")
        if self.samples_per_word < 1:
            raise ValueError("samples_per_word must be >= 1")


def render_word(word: str, spec: ToyCorpusSpec, rng: np.random.Generator) -> np.ndarray:
    """One jittered render of ``word`` as a grayscale uint8 raster."""
    bitmap_cols = []
    for i, char in enumerate(word):
        if i:
            bitmap_cols.append(np.zeros((GLYPH_H, 1), dtype=bool))
        bitmap_cols.append(GLYPHS[char])
    bitmap = np.concatenate(bitmap_cols, axis=1)

    lo, hi = spec.scale_range
    scale = int(rng.integers(lo, hi + 1))
    raster = np.kron(bitmap, np.ones((scale, scale), dtype=bool))
    margin = 2 * scale
    fg = float(rng.uniform(10, 80))
    bg = float(rng.uniform(160, 230))
    canvas = np.full(
        (raster.shape[0] + 2 * margin, raster.shape[1] + 2 * margin), bg, dtype=np.float32
    )
    canvas[margin : margin + raster.shape[0], margin : margin + raster.shape[1]][raster] = fg

    sigma = float(rng.uniform(*spec.noise_sigma_range))
    canvas += rng.normal(0.0, sigma, size=canvas.shape)

    if spec.rot_jitter_deg > 0:
        angle = float(rng.uniform(-spec.rot_jitter_deg, spec.rot_jitter_deg))
        h, w = canvas.shape
        matrix = cv2.getRotationMatrix2D(((w - 1) / 2.0, (h - 1) / 2.0), angle, 1.0)
        canvas = cv2.warpAffine(
            canvas, matrix, (w, h), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE
        )
    return np.clip(canvas, 0, 255).astype(np.uint8)


def _write_png(array: np.ndarray, path: Path) -> None:
    Image.fromarray(array, mode="L").save(path, format="PNG")


def render_toy_corpus(spec: ToyCorpusSpec, out: str | Path) -> DatasetManifest:
    """Render the corpus into ``out``; returns the labeled manifest.

    Layout: images under ``out/images``, manifest at ``out/manifest.jsonl``.
    With ``spec.unlabeled_twin`` a second set of fresh renders is written
    under ``out/images_unlabeled`` with ``out/unlabeled_manifest.jsonl``
    (labels null, dataset "toy_u").
    """
    out = Path(out)
    image_dir = out / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)

    entries: list[ManifestEntry] = []
    index = 0
    for word in spec.vocabulary:
        for _ in range(spec.samples_per_word):
            array = render_word(word, spec, rng)
            name = f"images/{index:06d}.png"
            _write_png(array, out / name)
            entries.append(
                ManifestEntry(
                    image=name,
                    label=word,
                    dataset="toy",
                    width=array.shape[1],
                    height=array.shape[0],
                )
            )
            index += 1
    manifest = DatasetManifest(entries=entries)
    write_manifest(entries, out / "manifest.jsonl")

    if spec.unlabeled_twin:
        twin_dir = out / "images_unlabeled"
        twin_dir.mkdir(parents=True, exist_ok=True)
        twin_entries: list[ManifestEntry] = []
        index = 0
        for word in spec.vocabulary:
            for _ in range(spec.samples_per_word):
                array = render_word(word, spec, rng)
                name = f"images_unlabeled/{index:06d}.png"
                _write_png(array, out / name)
                twin_entries.append(
                    ManifestEntry(
                        image=name,
                        label=None,
                        dataset="toy_u",
                        width=array.shape[1],
                        height=array.shape[0],
                    )
                )
                index += 1
        write_manifest(twin_entries, out / "unlabeled_manifest.jsonl")
        log.info("rendered %d labeled + %d unlabeled toy images", len(entries), len(twin_entries))
    else:
        log.info("rendered %d labeled toy images", len(entries))
    return manifest
