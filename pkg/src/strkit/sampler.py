"""Balanced mini-batch sampling across datasets of very different sizes.

Each batch draws the same quota of samples from every dataset, quota =
round(batch_size / num_datasets), so an 11-dataset setup with nominal
batch size 128 yields 12 per dataset and an effective batch of 132.
Small datasets wrap around with a fresh reshuffle per wrap.
"""

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)


class BalancedSampler:
    """Single-consumer iterator over balanced batches.

    ``datasets`` maps dataset name to its sample list (any item type).
    Deterministic for a fixed seed: per-dataset streams use independent
    generators spawned from the seed, and each wrap reshuffles that
    dataset only.
    """

    def __init__(self, datasets: dict[str, Sequence], batch_size: int = 128, seed: int = 0):
        if not datasets:
            raise ValueError("at least one dataset is required")
        for name, samples in datasets.items():
            if len(samples) == 0:
                raise ValueError(f"dataset {name!r} is empty")
        self.names = list(datasets)
        self.datasets = {name: list(samples) for name, samples in datasets.items()}
        self.batch_size = batch_size
        self.quota = max(1, round(batch_size / len(self.names)))
        self.seed = seed
        seq = np.random.SeedSequence(seed)
        self._rngs = {
            name: np.random.default_rng(child)
            for name, child in zip(self.names, seq.spawn(len(self.names)))
        }
        self._orders = {name: self._fresh_order(name) for name in self.names}
        self._cursors = {name: 0 for name in self.names}
        self.epochs = {name: 0 for name in self.names}

    def _fresh_order(self, name: str) -> np.ndarray:
        return self._rngs[name].permutation(len(self.datasets[name]))

    def _draw(self, name: str, count: int) -> list:
        samples = self.datasets[name]
        out = []
        while count > 0:
            order = self._orders[name]
            cursor = self._cursors[name]
            take = min(count, len(order) - cursor)
            out.extend(samples[i] for i in order[cursor : cursor + take])
            cursor += take
            count -= take
            if cursor == len(order):
                self._orders[name] = self._fresh_order(name)
                cursor = 0
                self.epochs[name] += 1
            self._cursors[name] = cursor
        return out

    def next_batch(self) -> list:
        """A batch of quota samples per dataset, length quota * num_datasets."""
        batch = []
        for name in self.names:
            batch.extend(self._draw(name, self.quota))
        return batch

    def __iter__(self):
        while True:
            yield self.next_batch()


def subsample_ratio(
    datasets: dict[str, Sequence], ratio: float, seed: int = 0
) -> dict[str, list]:
    """Proportionally reduce every dataset to round(n * ratio) samples.

    Selection is a nested prefix of one seeded permutation per dataset,
    so subsample(0.2) is a subset of subsample(0.4) at the same seed and
    dataset diversity is preserved. A nonempty dataset never drops to
    zero; it keeps one sample and a warning is logged.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    seq = np.random.SeedSequence(seed)
    reduced: dict[str, list] = {}
    for name, child in zip(datasets, seq.spawn(len(datasets))):
        samples = list(datasets[name])
        if ratio == 1.0:
            reduced[name] = samples
            continue
        keep = round(len(samples) * ratio)
        if keep == 0 and samples:
            log.warning("dataset %s: ratio %.3f rounds to 0 samples, keeping 1", name, ratio)
            keep = 1
        order = np.random.default_rng(child).permutation(len(samples))
        reduced[name] = [samples[i] for i in order[:keep]]
    return reduced
