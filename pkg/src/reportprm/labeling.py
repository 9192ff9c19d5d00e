"""Weak sentence-correctness labels from a pluggable entailment oracle.

A generated sentence is labeled correct (1) when any ground-truth sentence
entails it. The bundled synthetic oracle is a deterministic test double:
after normalization, a hypothesis is entailed when its content tokens are a
subset of the premise's and the negation-marker parity matches; subset with
mismatched parity is a contradiction; anything else is neutral.
"""
from __future__ import annotations

import json
import re
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .corpus import GeneratedReport
from .errors import (
    BalancingError,
    ConfigError,
    DataError,
    JoinError,
    LabelingError,
    OracleProtocolError,
    OracleStatusError,
    OracleTransportError,
    SchemaError,
)

RELATIONS = ("entailment", "neutral", "contradiction")
NEGATION_MARKERS = frozenset({"no", "not", "without", "negative"})


@dataclass(frozen=True)
class EntailmentVerdict:
    relation: str
    confidence: float | None = None

    def __post_init__(self):
        if self.relation not in RELATIONS:
            raise DataError(f"unknown relation {self.relation!r}")
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise DataError(f"confidence {self.confidence} outside [0,1]")


@dataclass(frozen=True)
class LabeledSentence:
    study_id: str
    sentence_index: int
    text: str
    label: int
    entailing_gt_index: int | None = None

    def __post_init__(self):
        if self.label not in (0, 1):
            raise DataError(f"label must be 0 or 1, got {self.label}")
        if (self.label == 1) != (self.entailing_gt_index is not None):
            raise DataError("label==1 iff entailing_gt_index is present")


@dataclass(frozen=True)
class OracleConfig:
    backend: str = "synthetic"
    endpoint: str | None = None
    timeout: float = 10.0
    retries: int = 3
    backoff: float = 0.25

    def __post_init__(self):
        if self.backend not in ("synthetic", "remote"):
            raise ConfigError(f"unknown oracle backend {self.backend!r}")
        if self.backend == "remote" and not self.endpoint:
            raise ConfigError("remote oracle requires an endpoint")


Oracle = Callable[[str, str], EntailmentVerdict]


def normalize_tokens(text: str) -> list[str]:
    """Lowercase, strip punctuation, stem a plural trailing 's'."""
    tokens = re.findall(r"[a-z0-9]+", text.lower())
    out = []
    for tok in tokens:
        if len(tok) > 3 and tok.endswith("s") and not tok.endswith("ss"):
            tok = tok[:-1]
        out.append(tok)
    return out


def negation_parity(tokens: Iterable[str]) -> int:
    return sum(1 for t in tokens if t in NEGATION_MARKERS) % 2


def synthetic_oracle(premise: str, hypothesis: str) -> EntailmentVerdict:
    """Deterministic entailment stand-in based on token containment."""
    prem = normalize_tokens(premise)
    hypo = normalize_tokens(hypothesis)
    prem_content = set(prem) - NEGATION_MARKERS
    hypo_content = set(hypo) - NEGATION_MARKERS
    if hypo_content and hypo_content <= prem_content:
        if negation_parity(hypo) == negation_parity(prem):
            return EntailmentVerdict("entailment")
        return EntailmentVerdict("contradiction")
    return EntailmentVerdict("neutral")


class RemoteOracle:
    """HTTP client for an external entailment judge.

    POSTs {"premise", "hypothesis"} and expects {"relation", "confidence"?}.
    Transport failures and 5xx responses are retried with exponential
    backoff; schema violations fail immediately.
    """

    def __init__(self, config: OracleConfig):
        if config.backend != "remote":
            raise ConfigError("RemoteOracle requires backend='remote'")
        self.config = config

    def __call__(self, premise: str, hypothesis: str) -> EntailmentVerdict:
        body = json.dumps({"premise": premise, "hypothesis": hypothesis}).encode("utf-8")
        last_error: Exception | None = None
        for attempt in range(self.config.retries + 1):
            if attempt:
                time.sleep(self.config.backoff * (2 ** (attempt - 1)))
            request = urllib.request.Request(
                self.config.endpoint,
                data=body,
                headers={"Content-Type": "application/json"},
                method="POST",
            )
            try:
                with urllib.request.urlopen(request, timeout=self.config.timeout) as resp:
                    payload = resp.read()
            except urllib.error.HTTPError as exc:
                if 500 <= exc.code < 600:
                    last_error = OracleStatusError(f"server status {exc.code}")
                    continue
                raise OracleStatusError(f"server status {exc.code}") from exc
            except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as exc:
                last_error = OracleTransportError(str(exc))
                continue
            return self._parse(payload)
        raise last_error if last_error is not None else OracleTransportError("no attempts made")

    @staticmethod
    def _parse(payload: bytes) -> EntailmentVerdict:
        try:
            record = json.loads(payload)
        except json.JSONDecodeError as exc:
            raise OracleProtocolError(f"response is not JSON: {exc.msg}") from exc
        relation = record.get("relation") if isinstance(record, dict) else None
        if relation not in RELATIONS:
            raise OracleProtocolError(f"unknown relation {relation!r}")
        confidence = record.get("confidence")
        if confidence is not None:
            confidence = float(confidence)
            if not 0.0 <= confidence <= 1.0:
                raise OracleProtocolError(f"confidence {confidence} outside [0,1]")
        return EntailmentVerdict(relation, confidence)


def make_oracle(config: OracleConfig) -> Oracle:
    if config.backend == "synthetic":
        return synthetic_oracle
    return RemoteOracle(config)


def label_sentence(
    gen: str,
    gt_sentences: Sequence[str],
    oracle: Oracle,
    study_id: str = "unknown",
    sentence_index: int = 0,
) -> LabeledSentence:
    """Label one generated sentence against all ground-truth sentences.

    Pairs are queried in order and the scan stops at the first entailment;
    the label is identical to scanning all pairs, and the first entailing
    index is recorded for audit.
    """
    if not gt_sentences:
        raise DataError("gt_sentences must be non-empty")
    for gt_index, gt in enumerate(gt_sentences):
        try:
            verdict = oracle(gt, gen)
        except LabelingError as exc:
            raise LabelingError(
                f"{study_id}[{sentence_index}] vs gt[{gt_index}]: {exc}"
            ) from exc
        if verdict.relation == "entailment":
            return LabeledSentence(study_id, sentence_index, gen, 1, gt_index)
    return LabeledSentence(study_id, sentence_index, gen, 0, None)


def label_corpus(
    studies: Sequence[tuple],
    generated: Sequence[GeneratedReport],
    oracle: Oracle,
) -> list[LabeledSentence]:
    """One label per generated sentence, ordered by (study_id, sentence_index)."""
    gt_by_study = {gt.study_id: gt.sentences for _, gt in studies}
    labeled = []
    for report in generated:
        if report.study_id not in gt_by_study:
            raise JoinError(f"generated report references unknown study {report.study_id!r}")
        for i, sentence in enumerate(report.sentences):
            labeled.append(
                label_sentence(
                    sentence.text,
                    gt_by_study[report.study_id],
                    oracle,
                    study_id=report.study_id,
                    sentence_index=i,
                )
            )
    return labeled


def balance(
    labels: Sequence[LabeledSentence],
    target_ratio: float = 1.0,
    seed: int = 0,
) -> list[LabeledSentence]:
    """Downsample the majority class to |majority|/|minority| <= target_ratio.

    Sampling is uniform without replacement and seeded; the minority class is
    untouched and output order follows original positions.
    """
    if target_ratio <= 0:
        raise ConfigError(f"target_ratio must be positive, got {target_ratio}")
    positives = [i for i, s in enumerate(labels) if s.label == 1]
    negatives = [i for i, s in enumerate(labels) if s.label == 0]
    if not positives or not negatives:
        raise BalancingError("both classes must be present to balance")

    majority, minority = (positives, negatives) if len(positives) >= len(negatives) else (negatives, positives)
    cap = int(target_ratio * len(minority))
    if len(majority) <= cap:
        return list(labels)
    rng = np.random.default_rng(seed)
    kept = set(rng.choice(len(majority), size=cap, replace=False).tolist())
    keep_indices = set(minority) | {majority[j] for j in kept}
    return [s for i, s in enumerate(labels) if i in keep_indices]


# -- labels file --------------------------------------------------------------

def label_record(sentence: LabeledSentence) -> dict:
    record = {
        "study_id": sentence.study_id,
        "sentence_index": sentence.sentence_index,
        "text": sentence.text,
        "label": sentence.label,
    }
    if sentence.entailing_gt_index is not None:
        record["entailing_gt_index"] = sentence.entailing_gt_index
    return record


def labels_from_records(records: Iterable[tuple[int, dict]]) -> list[LabeledSentence]:
    out = []
    for lineno, record in records:
        try:
            out.append(
                LabeledSentence(
                    study_id=record["study_id"],
                    sentence_index=int(record["sentence_index"]),
                    text=record["text"],
                    label=int(record["label"]),
                    entailing_gt_index=record.get("entailing_gt_index"),
                )
            )
        except (KeyError, DataError) as exc:
            raise SchemaError(f"line {lineno}: {exc}") from exc
    return out
