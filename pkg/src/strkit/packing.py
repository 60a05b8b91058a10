"""Packed on-disk corpora with O(1) random access by sample id.

Layout of a packed directory::

    packed/
      payload.bin    raw image file bytes, concatenated
      index          binary index, written last

Index format (all integers little-endian):

    magic   4 bytes  b"PKDS"
    version u32      currently 1
    count   u64      number of entries
    entry*  count times:
        offset   u64   byte offset into payload.bin
        size     u64   byte length of the image payload
        meta_len u32   length of the UTF-8 JSON metadata blob
        meta     bytes {"id", "dataset", "split", "label", "width", "height"}

The payload stores the source file bytes unmodified, so a pack/load
round trip is bit-exact. The index is written only after the payload is
complete; a crashed pack never leaves a loadable dataset behind.
"""

from __future__ import annotations

import io
import json
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .corpus import DatasetManifest, LabeledSample, UnlabeledSample

MAGIC = b"PKDS"
INDEX_VERSION = 1
_HEADER = struct.Struct("<4sIQ")
_ENTRY_FIXED = struct.Struct("<QQI")


class PackError(RuntimeError):
    pass


@dataclass(frozen=True)
class PackedEntry:
    id: str
    dataset: str
    split: str
    label: str | None
    width: int
    height: int
    offset: int
    size: int


class PackedDataset:
    """Reader over a packed directory. Immutable and safe to share."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        index_path = self.root / "index"
        if not index_path.exists():
            raise PackError(f"index not found in {self.root}")
        self._entries: dict[str, PackedEntry] = {}
        self._order: list[str] = []
        raw = index_path.read_bytes()
        magic, version, count = _HEADER.unpack_from(raw, 0)
        if magic != MAGIC:
            raise PackError(f"{index_path}: bad magic {magic!r}")
        if version != INDEX_VERSION:
            raise PackError(f"{index_path}: unsupported index version {version}")
        pos = _HEADER.size
        for _ in range(count):
            offset, size, meta_len = _ENTRY_FIXED.unpack_from(raw, pos)
            pos += _ENTRY_FIXED.size
            meta = json.loads(raw[pos : pos + meta_len].decode("utf-8"))
            pos += meta_len
            entry = PackedEntry(
                id=meta["id"],
                dataset=meta["dataset"],
                split=meta["split"],
                label=meta["label"],
                width=meta["width"],
                height=meta["height"],
                offset=offset,
                size=size,
            )
            self._entries[entry.id] = entry
            self._order.append(entry.id)
        self._payload_path = self.root / "payload.bin"

    def __len__(self) -> int:
        return len(self._order)

    def ids(self) -> list[str]:
        return list(self._order)

    def entry(self, sample_id: str) -> PackedEntry:
        return self._entries[sample_id]

    def read_bytes(self, sample_id: str) -> bytes:
        entry = self._entries[sample_id]
        with self._payload_path.open("rb") as fh:
            fh.seek(entry.offset)
            return fh.read(entry.size)

    def load_sample(self, sample_id: str) -> LabeledSample | UnlabeledSample:
        entry = self._entries[sample_id]
        image = self.read_bytes(sample_id)
        common = dict(
            image=image, dataset=entry.dataset, id=entry.id, width=entry.width, height=entry.height
        )
        if entry.label is None:
            return UnlabeledSample(**common)
        return LabeledSample(label=entry.label, **common)

    def iter_entries(self, dataset: str | None = None, split: str | None = None):
        for sample_id in self._order:
            entry = self._entries[sample_id]
            if dataset is not None and entry.dataset != dataset:
                continue
            if split is not None and entry.split != split:
                continue
            yield entry

    def counts(self) -> dict[tuple[str, str], int]:
        """Per (dataset, split) sample counts."""
        return dict(Counter((e.dataset, e.split) for e in self._entries.values()))

    def datasets(self) -> list[str]:
        seen: dict[str, None] = {}
        for sample_id in self._order:
            seen.setdefault(self._entries[sample_id].dataset, None)
        return list(seen)


def _decode_check(image_bytes: bytes) -> tuple[int, int]:
    from PIL import Image

    with Image.open(io.BytesIO(image_bytes)) as img:
        img.load()
        return img.width, img.height


def pack_samples(
    samples: Iterable[tuple[LabeledSample | UnlabeledSample, str]],
    out: str | Path,
) -> PackedDataset:
    """Pack (sample, split) pairs into ``out``.

    Every image must decode; failures are collected and reported in one
    error. The index is written last so partial packs are never valid.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    index_path = out / "index"
    if index_path.exists():
        index_path.unlink()

    bad_ids: list[str] = []
    records = []
    offset = 0
    with (out / "payload.bin").open("wb") as payload:
        for sample, split in samples:
            try:
                _decode_check(sample.image)
            except Exception:
                bad_ids.append(sample.id)
                continue
            payload.write(sample.image)
            meta = {
                "id": sample.id,
                "dataset": sample.dataset,
                "split": split,
                "label": getattr(sample, "label", None),
                "width": sample.width,
                "height": sample.height,
            }
            records.append((offset, len(sample.image), meta))
            offset += len(sample.image)
    if bad_ids:
        raise PackError(f"undecodable images: {', '.join(bad_ids)}")

    buf = bytearray()
    buf += _HEADER.pack(MAGIC, INDEX_VERSION, len(records))
    for rec_offset, size, meta in records:
        blob = json.dumps(meta, ensure_ascii=False).encode("utf-8")
        buf += _ENTRY_FIXED.pack(rec_offset, size, len(blob))
        buf += blob
    tmp = out / "index.tmp"
    tmp.write_bytes(bytes(buf))
    tmp.rename(index_path)
    return PackedDataset(out)


def pack_dataset(
    manifest: DatasetManifest,
    out: str | Path,
    base_dir: str | Path | None = None,
    split_of: dict[str, str] | None = None,
) -> PackedDataset:
    """Pack every manifest entry, resolving image paths at pack time.

    ``split_of`` maps sample id to split name; entries absent from the
    map fall back to their manifest split hint, then to "train".
    """
    base = Path(base_dir) if base_dir is not None else None

    def generate():
        for i, entry in enumerate(manifest.entries):
            path = Path(entry.image)
            if base is not None and not path.is_absolute():
                path = base / path
            image = path.read_bytes()
            sample_id = f"{entry.dataset}_{i:08d}"
            common = dict(
                image=image,
                dataset=entry.dataset,
                id=sample_id,
                width=entry.width,
                height=entry.height,
            )
            if entry.label is None:
                sample = UnlabeledSample(**common)
            else:
                sample = LabeledSample(label=entry.label, **common)
            split = (split_of or {}).get(sample_id) or entry.split or "train"
            yield sample, split

    return pack_samples(generate(), out)
