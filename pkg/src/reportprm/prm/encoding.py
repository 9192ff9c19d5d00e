"""Label-interleaved sequence construction.

A training sequence is ``prompt ++ [sentence, SEP, LABEL(y)] per sentence``.
The verifier reads its two-way logits at each LABEL slot, i.e. from the
hidden state of the preceding SEP, which is exactly the next-token view a
causal decoder has when it must emit the label itself.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from ..corpus import AblationMask, ClinicalContext, render_prompt
from ..errors import EncodingError
from .vocab import Vocabulary, tokenize


@dataclass(frozen=True)
class SequenceEncoding:
    token_ids: tuple[int, ...]
    label_positions: tuple[int, ...]
    labels: tuple[int, ...] | None = None
    study_id: str = ""

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.label_positions, self.label_positions[1:])):
            raise EncodingError("label positions must be strictly increasing")
        if self.labels is not None and len(self.labels) != len(self.label_positions):
            raise EncodingError("labels must align with label positions")

    @property
    def num_sentences(self) -> int:
        return len(self.label_positions)


def _prompt_ids(
    ctx: ClinicalContext,
    vocab: Vocabulary,
    prompt_budget: int,
    mask: AblationMask,
) -> list[int]:
    ids = tokenize(render_prompt(ctx, mask), vocab)
    return ids[:prompt_budget]


def encode_training(
    ctx: ClinicalContext,
    sentences: Sequence[str],
    labels: Sequence[int],
    vocab: Vocabulary,
    max_len: int = 1024,
    prompt_budget: int = 512,
    mask: AblationMask = AblationMask(),
) -> SequenceEncoding:
    """Encode a labeled report for training.

    The prompt is right-truncated to ``prompt_budget``; sentences that would
    push the sequence past ``max_len`` are dropped whole, never split.
    """
    if not sentences:
        raise EncodingError(f"{ctx.study_id}: cannot encode zero sentences")
    if len(labels) != len(sentences):
        raise EncodingError(f"{ctx.study_id}: {len(labels)} labels for {len(sentences)} sentences")

    ids = _prompt_ids(ctx, vocab, prompt_budget, mask)
    label_positions = []
    kept_labels = []
    for sentence, y in zip(sentences, labels):
        block = tokenize(sentence, vocab) + [vocab.SEP, vocab.label_id(y)]
        if len(ids) + len(block) > max_len:
            break
        ids.extend(block)
        label_positions.append(len(ids) - 1)
        kept_labels.append(int(y))
    if not label_positions:
        raise EncodingError(f"{ctx.study_id}: no sentence fits within max_len={max_len}")
    return SequenceEncoding(
        token_ids=tuple(ids),
        label_positions=tuple(label_positions),
        labels=tuple(kept_labels),
        study_id=ctx.study_id,
    )


def encode_step(
    ctx: ClinicalContext,
    sentences: Sequence[str],
    fed_back_labels: Sequence[int],
    vocab: Vocabulary,
    max_len: int = 1024,
    prompt_budget: int = 512,
    mask: AblationMask = AblationMask(),
) -> SequenceEncoding | None:
    """Encode the inference prefix for the last of ``sentences``.

    Earlier sentences carry the already fed-back labels; the sequence ends
    with the current sentence and its SEP, so the single label position is
    one past the end. Returns None when the step does not fit in max_len.
    """
    if len(fed_back_labels) != len(sentences) - 1:
        raise EncodingError("need exactly one fed-back label per preceding sentence")
    ids = _prompt_ids(ctx, vocab, prompt_budget, mask)
    for sentence, y in zip(sentences[:-1], fed_back_labels):
        ids.extend(tokenize(sentence, vocab) + [vocab.SEP, vocab.label_id(y)])
    ids.extend(tokenize(sentences[-1], vocab) + [vocab.SEP])
    if len(ids) + 1 > max_len:
        return None
    return SequenceEncoding(
        token_ids=tuple(ids),
        label_positions=(len(ids),),
        labels=None,
        study_id=ctx.study_id,
    )
