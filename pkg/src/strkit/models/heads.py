"""Prediction heads: CTC, attention decoding, and the pretext heads.

Vocabulary conventions:
  CTC        [CTCblank]=0, then the recognizable characters (95 classes
             for the default 94-character set).
  Attention  [SOS]=0, [EOS]=1, [PAD]=2, [UNK]=3, space=4, then the
             recognizable characters. Teacher forcing feeds [SOS] plus
             the target; every position predicts the next symbol, so a
             length-L word yields L+1 logit rows ([EOS] included).
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..charset import CharsetSpec

MAX_WORD_LENGTH = 25


class CtcHead(nn.Module):
    """Per-step classifier over blank plus the recognizable characters."""

    BLANK = 0

    def __init__(self, in_dim: int, charset: CharsetSpec):
        super().__init__()
        self.charset = charset
        self.num_classes = len(charset) + 1
        self.fc = nn.Linear(in_dim, self.num_classes)

    def forward(self, context: torch.Tensor) -> torch.Tensor:
        return self.fc(context)  # (B, T, classes)


def decode_ctc_greedy(logits: torch.Tensor, charset: CharsetSpec) -> str:
    """Best-path decoding: argmax per step, collapse repeats, drop blanks."""
    if logits.dim() != 2:
        raise ValueError(f"expected (T, classes) logits, got {tuple(logits.shape)}")
    path = logits.argmax(dim=-1).tolist()
    chars = []
    prev = None
    for cls in path:
        if cls != prev and cls != CtcHead.BLANK:
            chars.append(charset.char_at(cls - 1))
        prev = cls
    return "".join(chars)


def ctc_sequence_confidence(logits: torch.Tensor, label: str, charset: CharsetSpec) -> float:
    """Total probability of ``label`` under the frame distribution."""
    from ..losses import CtcInfeasibleError, ctc_nll

    if not label:
        return 0.0
    try:
        nll = ctc_nll(logits, label, charset)
    except CtcInfeasibleError:
        return 0.0
    return float(torch.exp(-nll.value))


class AttentionVocab:
    SOS = 0
    EOS = 1
    PAD = 2
    UNK = 3
    SPACE = 4
    FIRST_CHAR = 5

    def __init__(self, charset: CharsetSpec):
        self.charset = charset
        self.num_classes = len(charset) + self.FIRST_CHAR

    def encode(self, label: str) -> list[int]:
        return [self.charset.index_of(c) + self.FIRST_CHAR for c in label]

    def decode_id(self, class_id: int) -> str:
        if class_id >= self.FIRST_CHAR:
            return self.charset.char_at(class_id - self.FIRST_CHAR)
        if class_id == self.SPACE:
            return " "
        return ""


def encode_attention_targets(
    labels: list[str], vocab: "AttentionVocab", device=None
) -> tuple[torch.Tensor, torch.Tensor]:
    """(inputs, targets) id matrices for teacher forcing.

    inputs is (B, L) label characters padded with PAD; targets is
    (B, L+1) with [EOS] appended after each word, PAD elsewhere.
    """
    for label in labels:
        if len(label) > MAX_WORD_LENGTH:
            raise ValueError(f"label longer than {MAX_WORD_LENGTH}: {label!r}")
    L = max((len(label) for label in labels), default=0)
    B = len(labels)
    inputs = torch.full((B, L), AttentionVocab.PAD, dtype=torch.long, device=device)
    targets = torch.full((B, L + 1), AttentionVocab.PAD, dtype=torch.long, device=device)
    for i, label in enumerate(labels):
        ids = vocab.encode(label)
        inputs[i, : len(ids)] = torch.tensor(ids, dtype=torch.long, device=device)
        targets[i, : len(ids)] = torch.tensor(ids, dtype=torch.long, device=device)
        targets[i, len(ids)] = AttentionVocab.EOS
    return inputs, targets


class _AttentionCell(nn.Module):
    """Additive attention over the context sequence feeding an LSTM cell."""

    def __init__(self, context_dim: int, hidden: int, num_classes: int):
        super().__init__()
        self.i2h = nn.Linear(context_dim, hidden, bias=False)
        self.h2h = nn.Linear(hidden, hidden)
        self.score = nn.Linear(hidden, 1, bias=False)
        self.rnn = nn.LSTMCell(context_dim + num_classes, hidden)

    def forward(self, prev_state, context, symbol_onehot):
        hidden, cell = prev_state
        energies = self.score(torch.tanh(self.i2h(context) + self.h2h(hidden).unsqueeze(1)))
        alpha = F.softmax(energies, dim=1)  # (B, T, 1)
        glimpse = (alpha * context).sum(dim=1)  # (B, context_dim)
        hidden, cell = self.rnn(torch.cat([glimpse, symbol_onehot], dim=1), (hidden, cell))
        return (hidden, cell)


class AttentionDecoder(nn.Module):
    """Greedy/teacher-forced autoregressive decoder with a 25-step cap."""

    def __init__(self, context_dim: int, hidden: int, charset: CharsetSpec):
        super().__init__()
        self.vocab = AttentionVocab(charset)
        self.hidden = hidden
        self.cell = _AttentionCell(context_dim, hidden, self.vocab.num_classes)
        self.generator = nn.Linear(hidden, self.vocab.num_classes)

    def _onehot(self, ids: torch.Tensor) -> torch.Tensor:
        return F.one_hot(ids, num_classes=self.vocab.num_classes).to(
            dtype=self.generator.weight.dtype
        )

    def _init_state(self, batch: int, device, dtype):
        zeros = torch.zeros(batch, self.hidden, device=device, dtype=dtype)
        return (zeros, zeros.clone())

    def teacher_forced_logits(self, context: torch.Tensor, target_ids: torch.Tensor):
        """Logits for every target position plus the end token.

        ``target_ids`` is (B, L) in vocab space, padded with PAD; the
        returned logits are (B, L+1, classes) where row i predicts
        target position i (row L predicts [EOS]).
        """
        B, L = target_ids.shape
        if L > MAX_WORD_LENGTH:
            raise ValueError(f"target length {L} exceeds {MAX_WORD_LENGTH}")
        state = self._init_state(B, context.device, context.dtype)
        inputs = torch.cat(
            [torch.full((B, 1), AttentionVocab.SOS, dtype=torch.long, device=context.device),
             target_ids],
            dim=1,
        )
        steps = []
        for i in range(L + 1):
            state = self.cell(state, context, self._onehot(inputs[:, i]))
            steps.append(self.generator(state[0]))
        return torch.stack(steps, dim=1)

    def greedy_decode(self, context: torch.Tensor, max_len: int = MAX_WORD_LENGTH):
        """Decode until [EOS] or ``max_len`` symbols; returns the decoded
        strings and the product of per-step probabilities of the chosen
        symbols ([EOS] step included)."""
        B = context.shape[0]
        state = self._init_state(B, context.device, context.dtype)
        symbol = torch.full((B,), AttentionVocab.SOS, dtype=torch.long, device=context.device)
        finished = torch.zeros(B, dtype=torch.bool, device=context.device)
        confidence = torch.ones(B, dtype=context.dtype, device=context.device)
        outputs: list[list[int]] = [[] for _ in range(B)]
        for _ in range(max_len + 1):
            state = self.cell(state, context, self._onehot(symbol))
            probs = F.softmax(self.generator(state[0]), dim=-1)
            best = probs.argmax(dim=-1)
            best_p = probs.gather(1, best.unsqueeze(1)).squeeze(1)
            confidence = torch.where(finished, confidence, confidence * best_p)
            for b in range(B):
                if finished[b]:
                    continue
                cls = int(best[b])
                if cls == AttentionVocab.EOS:
                    finished[b] = True
                elif len(outputs[b]) < max_len:
                    outputs[b].append(cls)
            finished = finished | (best == AttentionVocab.EOS)
            symbol = best
            if bool(finished.all()):
                break
        texts = ["".join(self.vocab.decode_id(c) for c in ids) for ids in outputs]
        return texts, confidence.detach()

    def rollout_logits(self, context: torch.Tensor, steps: int):
        """Greedy rollout for a fixed number of steps, returning the
        per-step logits and the chosen symbols; used for consistency
        targets where both models must emit aligned sequences."""
        B = context.shape[0]
        state = self._init_state(B, context.device, context.dtype)
        symbol = torch.full((B,), AttentionVocab.SOS, dtype=torch.long, device=context.device)
        all_logits = []
        symbols = []
        for _ in range(steps):
            state = self.cell(state, context, self._onehot(symbol))
            logits = self.generator(state[0])
            all_logits.append(logits)
            symbol = logits.argmax(dim=-1).detach()
            symbols.append(symbol)
        return torch.stack(all_logits, dim=1), torch.stack(symbols, dim=1)

    def forced_logits(self, context: torch.Tensor, symbols: torch.Tensor):
        """Logits when consuming a fixed symbol sequence (B, L)."""
        B, L = symbols.shape
        state = self._init_state(B, context.device, context.dtype)
        inputs = torch.cat(
            [torch.full((B, 1), AttentionVocab.SOS, dtype=torch.long, device=context.device),
             symbols[:, :-1]],
            dim=1,
        )
        steps = []
        for i in range(L):
            state = self.cell(state, context, self._onehot(inputs[:, i]))
            steps.append(self.generator(state[0]))
        return torch.stack(steps, dim=1)


class RotationHead(nn.Module):
    """4-way orientation classifier over pooled backbone features."""

    def __init__(self, in_dim: int):
        super().__init__()
        self.fc = nn.Linear(in_dim, 4)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.fc(features.mean(dim=1))  # pool over sequence steps


class ProjectionHead(nn.Module):
    """Pooled features to a unit-norm embedding for contrastive learning."""

    def __init__(self, in_dim: int, out_dim: int = 128):
        super().__init__()
        self.fc = nn.Linear(in_dim, out_dim)
        self.out_dim = out_dim

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        z = self.fc(features.mean(dim=1))
        norms = z.norm(dim=-1, keepdim=True)
        if bool((norms < 1e-12).any()):
            raise RuntimeError("zero-norm embedding; reinitialize the projection head")
        return z / norms
