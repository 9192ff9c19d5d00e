"""Training objective and its finite-difference validation.

The loss is the binary cross-entropy summed over all sentences of all
reports (never averaged); probabilities are clamped to [eps, 1-eps] with
eps=1e-12 so the loss stays finite at the endpoints.
"""
from __future__ import annotations

import copy
import math
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import ConfigError
from .encoding import SequenceEncoding
from .model import SentenceVerifier

CLAMP_EPS = 1e-12


def prm_loss(probs: Sequence[float], labels: Sequence[int]) -> float:
    """Summed binary cross-entropy of sentence probabilities against labels."""
    if len(probs) != len(labels):
        raise ConfigError(f"{len(probs)} probs vs {len(labels)} labels")
    total = 0.0
    for p, y in zip(probs, labels):
        p = min(max(p, CLAMP_EPS), 1.0 - CLAMP_EPS)
        total -= y * math.log(p) + (1 - y) * math.log(1.0 - p)
    return total


def collate(encodings: Sequence[SequenceEncoding], pad_id: int = 0) -> torch.Tensor:
    width = max(len(e.token_ids) for e in encodings)
    ids = torch.full((len(encodings), width), pad_id, dtype=torch.long)
    for i, enc in enumerate(encodings):
        ids[i, : len(enc.token_ids)] = torch.tensor(enc.token_ids, dtype=torch.long)
    return ids


def batch_loss(
    model: SentenceVerifier,
    encodings: Sequence[SequenceEncoding],
) -> tuple[torch.Tensor, int]:
    """Summed loss over every label position in the batch, via log-softmax.

    Numerically stable twin of prm_loss: -sum log p(y_i) over the two-way
    softmax equals the clamped BCE sum to within float rounding.
    """
    rows, cols, targets = [], [], []
    for i, enc in enumerate(encodings):
        if enc.labels is None:
            raise ConfigError(f"{enc.study_id}: encoding carries no labels")
        for pos, y in zip(enc.label_positions, enc.labels):
            rows.append(i)
            cols.append(pos - 1)
            targets.append(y)
    logits = model(collate(encodings))
    logp = F.log_softmax(logits[rows, cols], dim=-1)
    picked = logp[torch.arange(len(targets)), torch.tensor(targets, dtype=torch.long)]
    return -picked.sum(), len(targets)


def grad_check(
    model: SentenceVerifier,
    batch: Sequence[SequenceEncoding],
    eps: float = 1e-5,
    num_coords: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Runs on a float64 copy of the model over a seeded random subset of at
    least ``num_coords`` parameter coordinates. The relative error uses
    max(|analytic|, |numeric|, 1e-8) as denominator.
    """
    probe = copy.deepcopy(model).double()
    probe.zero_grad(set_to_none=True)
    loss, _ = batch_loss(probe, batch)
    loss.backward()

    params = [p for p in probe.parameters()]
    sizes = [p.numel() for p in params]
    total = sum(sizes)
    rng = np.random.default_rng(seed)
    flat_coords = rng.choice(total, size=min(num_coords, total), replace=False)

    bounds = np.cumsum([0] + sizes)
    worst = 0.0
    with torch.no_grad():
        for flat in sorted(flat_coords.tolist()):
            param_idx = int(np.searchsorted(bounds, flat, side="right") - 1)
            offset = flat - bounds[param_idx]
            p = params[param_idx]
            flat_view = p.view(-1)
            analytic = float(p.grad.view(-1)[offset])

            original = float(flat_view[offset])
            flat_view[offset] = original + eps
            plus, _ = batch_loss(probe, batch)
            flat_view[offset] = original - eps
            minus, _ = batch_loss(probe, batch)
            flat_view[offset] = original

            numeric = (float(plus) - float(minus)) / (2.0 * eps)
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
