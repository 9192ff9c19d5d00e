"""Sequential verification with greedy label feedback.

At inference the gold labels are unavailable, so the verifier supplies its
own: for each sentence in order, the prefix carries the thresholded labels
already emitted for earlier sentences (ties at the threshold go to 1). A
flag allows teacher-forcing gold labels instead, for diagnostic evaluation.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from ..corpus import AblationMask, ClinicalContext
from ..errors import DataError
from .encoding import encode_step
from .model import SentenceVerifier, label_probabilities
from .vocab import Vocabulary


@dataclass(frozen=True)
class VerificationResult:
    study_id: str
    probs: tuple[float, ...]
    fed_back_labels: tuple[int, ...]
    truncated_sentences: int = 0
    candidate_index: int | None = None

    def __post_init__(self):
        if len(self.probs) != len(self.fed_back_labels):
            raise DataError("probs and fed-back labels must align")
        if any(not 0.0 <= p <= 1.0 for p in self.probs):
            raise DataError("probabilities must lie in [0,1]")


def verify(
    model: SentenceVerifier,
    ctx: ClinicalContext,
    sentences: Sequence[str],
    vocab: Vocabulary,
    threshold: float = 0.5,
    mask: AblationMask = AblationMask(),
    max_len: int | None = None,
    prompt_budget: int = 512,
    gold_labels: Sequence[int] | None = None,
) -> VerificationResult:
    """Score each sentence given the prompt and previously fed-back labels.

    When the encoding overflows max_len the remaining sentences are dropped
    and reported via ``truncated_sentences``; probabilities cover the
    encoded prefix only.
    """
    if not sentences:
        raise DataError(f"{ctx.study_id}: nothing to verify")
    if gold_labels is not None and len(gold_labels) != len(sentences):
        raise DataError(f"{ctx.study_id}: gold labels do not align with sentences")
    limit = model.arch.max_len if max_len is None else min(max_len, model.arch.max_len)

    probs: list[float] = []
    fed: list[int] = []
    for i in range(len(sentences)):
        encoding = encode_step(
            ctx,
            sentences[: i + 1],
            fed,
            vocab,
            max_len=limit,
            prompt_budget=prompt_budget,
            mask=mask,
        )
        if encoding is None:
            break
        p = float(label_probabilities(model, encoding)[0])
        probs.append(p)
        if gold_labels is not None:
            fed.append(int(gold_labels[i]))
        else:
            fed.append(1 if p >= threshold else 0)
    return VerificationResult(
        study_id=ctx.study_id,
        probs=tuple(probs),
        fed_back_labels=tuple(fed),
        truncated_sentences=len(sentences) - len(probs),
    )
