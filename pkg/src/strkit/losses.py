"""Objective functions: recognition NLL (CTC and attention), consistency
MSE, rotation cross-entropy, and the contrastive InfoNCE loss.

The CTC negative log-likelihood is computed with a log-space forward
algorithm written in plain torch ops, so it is differentiable and runs
in float64 when the inputs are float64. ``ctc_oracle_nll`` is a
brute-force enumeration over every frame path, kept deliberately
independent as a correctness oracle for small instances.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .charset import CharsetSpec

NEG_INF = float("-inf")


@dataclass
class LossValue:
    """A loss in natural-log units plus the number of contributing terms."""

    value: torch.Tensor
    count: int

    def item(self) -> float:
        return float(self.value.detach() if hasattr(self.value, "detach") else self.value)


class CtcInfeasibleError(ValueError):
    """The label cannot be aligned: T < len(label) + adjacent repeats."""


def ctc_min_frames(target: list[int]) -> int:
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def encode_ctc_target(label: str, charset: CharsetSpec) -> list[int]:
    """Class indices for a label under the CTC head: blank is 0,
    recognizable characters occupy 1..len(charset)."""
    return [charset.index_of(c) + 1 for c in label]


def ctc_nll(logits: torch.Tensor, label: str, charset: CharsetSpec) -> LossValue:
    """Negative log-probability of ``label`` summed over all alignments.

    ``logits`` has shape (T, C+1) with blank at class 0; rows are
    unnormalized scores. Raises :class:`CtcInfeasibleError` when the
    label needs more frames than available; callers skip such samples
    and count them rather than folding in a bogus zero.
    """
    if logits.dim() != 2:
        raise ValueError(f"expected (T, classes) logits, got shape {tuple(logits.shape)}")
    target = encode_ctc_target(label, charset)
    T = logits.shape[0]
    if T < ctc_min_frames(target):
        raise CtcInfeasibleError(
            f"label {label!r} needs >= {ctc_min_frames(target)} frames, got {T}"
        )
    log_probs = F.log_softmax(logits, dim=-1)

    if not target:
        value = -log_probs[:, 0].sum()
        return LossValue(value=value, count=1)

    # Extended target: blank, y1, blank, y2, ..., blank
    ext = [0]
    for t in target:
        ext.extend((t, 0))
    S = len(ext)
    ext_t = torch.tensor(ext, dtype=torch.long, device=logits.device)

    # Positions allowed to skip from s-2: non-blank and different from s-2.
    skip_ok = torch.zeros(S, dtype=torch.bool, device=logits.device)
    for s in range(2, S):
        skip_ok[s] = ext[s] != 0 and ext[s] != ext[s - 2]

    # A large negative constant instead of -inf: logsumexp over all-(-inf)
    # rows would backpropagate NaN.
    low = torch.finfo(logits.dtype).min / 4
    neg = torch.full((1,), low, dtype=logits.dtype, device=logits.device)
    head = torch.stack([log_probs[0, 0], log_probs[0, ext[1]]])
    alpha = torch.cat([head, torch.full((S - 2,), low, dtype=logits.dtype, device=logits.device)])
    for t in range(1, T):
        stay = alpha
        step = torch.cat([neg, alpha[:-1]])
        skip = torch.cat([neg, neg, alpha[:-2]])
        skip = torch.where(skip_ok, skip, torch.full_like(skip, low))
        merged = torch.logsumexp(torch.stack([stay, step, skip]), dim=0)
        alpha = merged + log_probs[t, ext_t]
    total = torch.logsumexp(alpha[-2:], dim=0)
    return LossValue(value=-total, count=1)


def ctc_nll_batch(
    logits: torch.Tensor, labels: list[str], charset: CharsetSpec
) -> tuple[LossValue, int]:
    """Mean CTC NLL over a batch, skipping infeasible samples.

    ``logits`` is (B, T, C+1). Samples whose label cannot be aligned in
    T frames are excluded from the mean and reported in the returned
    skip count. Matches per-sample :func:`ctc_nll` numerically.
    """
    if logits.dim() != 3:
        raise ValueError(f"expected (B, T, classes) logits, got shape {tuple(logits.shape)}")
    B, T, _ = logits.shape
    if len(labels) != B:
        raise ValueError(f"batch size mismatch: {B} logits vs {len(labels)} labels")

    targets = [encode_ctc_target(label, charset) for label in labels]
    usable = [i for i, t in enumerate(targets) if t and ctc_min_frames(t) <= T]
    skipped = B - len(usable)
    if not usable:
        return LossValue(value=logits.sum() * 0.0, count=0), skipped

    exts = []
    for i in usable:
        ext = [0]
        for t in targets[i]:
            ext.extend((t, 0))
        exts.append(ext)
    S_max = max(len(e) for e in exts)
    N = len(usable)
    device = logits.device
    low = torch.finfo(logits.dtype).min / 4

    ext_ids = torch.zeros((N, S_max), dtype=torch.long, device=device)
    skip_ok = torch.zeros((N, S_max), dtype=torch.bool, device=device)
    valid = torch.zeros((N, S_max), dtype=torch.bool, device=device)
    last_pos = torch.zeros(N, dtype=torch.long, device=device)
    for row, ext in enumerate(exts):
        S = len(ext)
        ext_ids[row, :S] = torch.tensor(ext, dtype=torch.long, device=device)
        valid[row, :S] = True
        last_pos[row] = S - 1
        for s in range(2, S):
            skip_ok[row, s] = ext[s] != 0 and ext[s] != ext[s - 2]

    log_probs = F.log_softmax(logits[usable], dim=-1)
    lowf = torch.full((N, 1), low, dtype=logits.dtype, device=device)
    alpha = torch.full((N, S_max), low, dtype=logits.dtype, device=device)
    frame = log_probs[:, 0].gather(1, ext_ids)
    init = torch.zeros_like(alpha, dtype=torch.bool)
    init[:, 0] = True
    init[:, 1] = True
    alpha = torch.where(init, frame, alpha)
    for t in range(1, T):
        stay = alpha
        step = torch.cat([lowf, alpha[:, :-1]], dim=1)
        skip = torch.cat([lowf, lowf, alpha[:, :-2]], dim=1)
        skip = torch.where(skip_ok, skip, torch.full_like(skip, low))
        merged = torch.logsumexp(torch.stack([stay, step, skip]), dim=0)
        frame = log_probs[:, t].gather(1, ext_ids)
        alpha = torch.where(valid, merged + frame, alpha)
    tail = torch.stack(
        [
            alpha.gather(1, last_pos.unsqueeze(1)).squeeze(1),
            alpha.gather(1, (last_pos - 1).unsqueeze(1)).squeeze(1),
        ]
    )
    totals = torch.logsumexp(tail, dim=0)
    return LossValue(value=-totals.mean(), count=N), skipped


def _collapse(path: tuple[int, ...]) -> tuple[int, ...]:
    out = []
    prev = None
    for c in path:
        if c != prev:
            if c != 0:
                out.append(c)
            prev = c
    return tuple(out)


def ctc_oracle_nll(frame_probs, label: str, charset: CharsetSpec) -> LossValue:
    """Exact CTC NLL by enumerating every frame path.

    ``frame_probs`` is a (T, C+1) array of per-frame class probabilities
    (rows sum to 1, blank at 0). Refuses instances with T > 8 or more
    than 6 classes; the enumeration is exponential by design.
    """
    probs = torch.as_tensor(frame_probs, dtype=torch.float64)
    T, num_classes = probs.shape
    if T > 8 or num_classes > 6:
        raise ValueError(f"instance too large for enumeration: T={T}, classes={num_classes}")
    target = tuple(encode_ctc_target(label, charset))
    total = 0.0
    for path in itertools.product(range(num_classes), repeat=T):
        if _collapse(path) != target:
            continue
        p = 1.0
        for t, c in enumerate(path):
            p *= float(probs[t, c])
        total += p
    if total == 0.0:
        raise CtcInfeasibleError(f"no path collapses to {label!r} with T={T}")
    return LossValue(value=torch.tensor(-math.log(total), dtype=torch.float64), count=1)


def attention_nll(step_logits: torch.Tensor, target_ids: torch.Tensor) -> LossValue:
    """Mean per-position NLL of teacher-forced decoder logits.

    ``step_logits`` is (L, C) or (B, L, C); ``target_ids`` holds the true
    class per position, end token included.
    """
    if step_logits.shape[:-1] != target_ids.shape:
        raise ValueError(
            f"logits positions {tuple(step_logits.shape[:-1])} do not match "
            f"targets {tuple(target_ids.shape)}"
        )
    log_probs = F.log_softmax(step_logits, dim=-1)
    picked = log_probs.gather(-1, target_ids.unsqueeze(-1)).squeeze(-1)
    return LossValue(value=-picked.mean(), count=target_ids.numel())


def consistency_mse(student_out: torch.Tensor, teacher_out: torch.Tensor) -> LossValue:
    """Mean squared difference between two probability sequences."""
    if student_out.shape != teacher_out.shape:
        raise ValueError(
            f"shape mismatch: {tuple(student_out.shape)} vs {tuple(teacher_out.shape)}"
        )
    value = F.mse_loss(student_out, teacher_out, reduction="mean")
    return LossValue(value=value, count=student_out.numel())


def rotation_nll(rotation_logits: torch.Tensor, true_rotations: torch.Tensor) -> LossValue:
    """Mean cross-entropy of the 4-way rotation classifier."""
    if rotation_logits.shape[-1] != 4:
        raise ValueError(f"expected 4 rotation classes, got {rotation_logits.shape[-1]}")
    if true_rotations.min() < 0 or true_rotations.max() > 3:
        raise ValueError("rotation labels must be in {0, 1, 2, 3}")
    value = F.cross_entropy(rotation_logits, true_rotations)
    return LossValue(value=value, count=int(true_rotations.numel()))


def info_nce(
    q: torch.Tensor,
    k_pos: torch.Tensor,
    queue_keys: torch.Tensor | None,
    tau: float,
) -> LossValue:
    """Contrastive loss over one positive key and the queued negatives.

    ``q`` and ``k_pos`` are (B, d) or (d,) unit vectors; ``queue_keys``
    is (K, d) or None/empty during warm-up, in which case the loss
    degenerates to the positive-only term (exactly zero).
    """
    if tau <= 0:
        raise ValueError(f"temperature must be > 0, got {tau}")
    squeeze = q.dim() == 1
    if squeeze:
        q = q.unsqueeze(0)
        k_pos = k_pos.unsqueeze(0)
    l_pos = (q * k_pos).sum(dim=-1, keepdim=True)
    if queue_keys is None or queue_keys.numel() == 0:
        logits = l_pos / tau
    else:
        l_neg = q @ queue_keys.t()
        logits = torch.cat([l_pos, l_neg], dim=1) / tau
    loss = -(logits[:, 0] - torch.logsumexp(logits, dim=1)).mean()
    return LossValue(value=loss, count=q.shape[0])
