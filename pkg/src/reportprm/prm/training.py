"""Optimization of the sentence verifier.

AdamW with linear warmup then linear decay, gradient accumulation up to the
effective batch, summed BCE objective. With a fixed seed the trajectory is
bit-identical on one platform: shuffling uses a seeded numpy generator and
all torch state is derived from the config seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from ..corpus import AblationMask, ClinicalContext, GeneratedReport
from ..errors import ConfigError, DataError, JoinError, TrainingDivergedError
from ..metrics import EvalPair, ranking_metrics
from .encoding import SequenceEncoding, encode_training
from .model import ModelArch, SentenceVerifier
from .objective import batch_loss
from .vocab import Vocabulary


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 3
    lr: float = 1e-5
    warmup_frac: float = 0.1
    micro_batch: int = 2
    accumulation: int = 8
    max_len: int = 1024
    prompt_budget: int = 512
    seed: int = 0
    weight_decay: float = 0.01
    grad_clip: float = 10.0
    eval_every: int = 50

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        positive = {
            "lr": self.lr,
            "micro_batch": self.micro_batch,
            "accumulation": self.accumulation,
            "max_len": self.max_len,
            "prompt_budget": self.prompt_budget,
            "eval_every": self.eval_every,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ConfigError("warmup_frac must be in [0, 1)")
        if self.prompt_budget >= self.max_len:
            raise ConfigError("prompt_budget must be smaller than max_len")

    @property
    def effective_batch(self) -> int:
        return self.micro_batch * self.accumulation

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class TrainingHistory:
    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)

    def to_records(self) -> list[dict]:
        return self.steps + self.epochs


def _lr_factor(step: int, total_steps: int, warmup_frac: float) -> float:
    warmup = max(1, int(round(warmup_frac * total_steps)))
    if step < warmup:
        return (step + 1) / warmup
    if total_steps <= warmup:
        return 1.0
    return max(0.0, (total_steps - step) / (total_steps - warmup))


def build_training_encodings(
    studies: Sequence[tuple],
    generated: Sequence[GeneratedReport],
    labels: Sequence,
    vocab: Vocabulary,
    max_len: int = 1024,
    prompt_budget: int = 512,
    mask: AblationMask = AblationMask(),
) -> list[SequenceEncoding]:
    """Join reports with their weak labels into training sequences."""
    ctx_by_study: dict[str, ClinicalContext] = {ctx.study_id: ctx for ctx, _ in studies}
    label_by_key = {(s.study_id, s.sentence_index): s.label for s in labels}
    encodings = []
    for report in generated:
        if report.study_id not in ctx_by_study:
            raise JoinError(f"generated report references unknown study {report.study_id!r}")
        ys = []
        for i in range(len(report.sentences)):
            key = (report.study_id, i)
            if key not in label_by_key:
                raise JoinError(f"no label for {report.study_id} sentence {i}")
            ys.append(label_by_key[key])
        encodings.append(
            encode_training(
                ctx_by_study[report.study_id],
                report.texts,
                ys,
                vocab,
                max_len=max_len,
                prompt_budget=prompt_budget,
                mask=mask,
            )
        )
    return encodings


def _evaluate(model: SentenceVerifier, encodings: Sequence[SequenceEncoding]) -> tuple[float, float]:
    """Teacher-forced validation loss (per-sentence mean) and AUROC."""
    probs: list[float] = []
    labels: list[int] = []
    total_loss = 0.0
    total_n = 0
    model.eval()
    with torch.no_grad():
        for enc in encodings:
            loss, n = batch_loss(model, [enc])
            total_loss += float(loss)
            total_n += n
            logits = model(torch.tensor([enc.token_ids], dtype=torch.long))[0]
            read_at = [p - 1 for p in enc.label_positions]
            p1 = torch.softmax(logits[read_at], dim=-1)[:, 1]
            probs.extend(p1.tolist())
            labels.extend(enc.labels)
    model.train()
    pairs = [EvalPair(prob=p, pred=int(p >= 0.5), label=y) for p, y in zip(probs, labels)]
    try:
        auroc = ranking_metrics(pairs)["auroc"]
    except Exception:
        auroc = float("nan")
    return total_loss / max(1, total_n), auroc


def train(
    train_encodings: Sequence[SequenceEncoding],
    config: TrainConfig,
    val_encodings: Sequence[SequenceEncoding] | None = None,
    arch: ModelArch | None = None,
    model: SentenceVerifier | None = None,
) -> tuple[SentenceVerifier, TrainingHistory]:
    if not train_encodings:
        raise DataError("training dataset is empty")
    seen = {y for enc in train_encodings for y in enc.labels}
    if seen != {0, 1}:
        raise DataError("training data must contain both label classes")

    torch.manual_seed(config.seed)
    if model is None:
        model = SentenceVerifier(arch or ModelArch(), seed=config.seed)
    history = TrainingHistory()
    if config.epochs == 0:
        return model, history

    optimizer = torch.optim.AdamW(
        model.parameters(), lr=config.lr, weight_decay=config.weight_decay
    )
    n = len(train_encodings)
    micro_per_epoch = math.ceil(n / config.micro_batch)
    steps_per_epoch = math.ceil(micro_per_epoch / config.accumulation)
    total_steps = config.epochs * steps_per_epoch

    model.train()
    step = 0
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        epoch_loss = 0.0
        epoch_sentences = 0
        pending_loss = 0.0
        pending_sentences = 0
        pending_micro = 0

        for start in range(0, n, config.micro_batch):
            chunk = [train_encodings[i] for i in order[start: start + config.micro_batch]]
            loss, n_sent = batch_loss(model, chunk)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(step)
            loss.backward()
            pending_loss += float(loss.detach())
            pending_sentences += n_sent
            pending_micro += 1

            last_chunk = start + config.micro_batch >= n
            if pending_micro == config.accumulation or last_chunk:
                lr = config.lr * _lr_factor(step, total_steps, config.warmup_frac)
                for group in optimizer.param_groups:
                    group["lr"] = lr
                if config.grad_clip > 0:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
                optimizer.step()
                optimizer.zero_grad(set_to_none=True)
                step += 1

                record = {
                    "step": step,
                    "train_loss": pending_loss / max(1, pending_sentences),
                    "lr": lr,
                }
                if val_encodings and (step % config.eval_every == 0 or step == total_steps):
                    val_loss, val_auroc = _evaluate(model, val_encodings)
                    record["val_loss"] = val_loss
                    record["val_auroc"] = val_auroc
                history.steps.append(record)
                epoch_loss += pending_loss
                epoch_sentences += pending_sentences
                pending_loss = 0.0
                pending_sentences = 0
                pending_micro = 0

        history.epochs.append(
            {"epoch": epoch + 1, "train_loss": epoch_loss / max(1, epoch_sentences)}
        )
    model.eval()
    return model, history
