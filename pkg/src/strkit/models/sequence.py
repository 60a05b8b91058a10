"""Contextual sequence modeling over visual feature sequences."""

from __future__ import annotations

import torch
import torch.nn as nn


class _BiLstmLayer(nn.Module):
    def __init__(self, in_dim: int, hidden: int, out_dim: int):
        super().__init__()
        self.rnn = nn.LSTM(in_dim, hidden, bidirectional=True, batch_first=True)
        self.proj = nn.Linear(hidden * 2, out_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        recurrent, _ = self.rnn(x)
        return self.proj(recurrent)


class ContextEncoder(nn.Module):
    """Two stacked bidirectional LSTM layers with linear projections.

    Maps a (B, T, in_dim) feature sequence to a (B, T, hidden) context
    sequence; length is always preserved.
    """

    def __init__(self, in_dim: int, hidden: int = 256):
        super().__init__()
        self.hidden = hidden
        self.layers = nn.Sequential(
            _BiLstmLayer(in_dim, hidden, hidden),
            _BiLstmLayer(hidden, hidden, hidden),
        )

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        if features.dim() != 3 or features.shape[1] == 0:
            raise ValueError(f"expected nonempty (B, T, D) features, got {tuple(features.shape)}")
        return self.layers(features)
