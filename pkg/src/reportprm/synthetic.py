"""Deterministic synthetic corpora with plantable verification signal.

Each study draws findings with a present/absent status; the ground-truth
report states each status ("There is X." / "No X."). Generated reports copy
ground-truth sentences and corrupt a seeded fraction, either flipping the
negation or swapping in a finding absent from the study, so the synthetic
entailment oracle labels them 0.

Two independent signal channels make the labels learnable at desk scale:

* surface channel: a corrupted sentence hedges ("... likely.") with
  probability ``plant_strength``, so surface tokens predict the label
  directly at high strength;
* context channel: each truth sentence is restated inside the TECHNIQUE
  field with probability ``technique_signal``, so a verifier that reads the
  prompt can check any sentence against it, and ablating TECHNIQUE removes
  that evidence. Swapped-in findings never match the restated truths.

Token statistics are class-separated with the same strength knob and
report log-probabilities sum the per-token log-probs, keeping grey-box
features and generator-score baselines coherent with the planted labels.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .corpus import (
    CandidateSet,
    ClinicalContext,
    GeneratedReport,
    GeneratedSentence,
    GroundTruthReport,
)
from .errors import ConfigError
from .metrics import DEFAULT_FINDING_LEXICON

# Surface phrase used in sentences and technique restatements, per finding.
FINDING_PHRASES: dict[str, str] = {
    "atelectasis": "atelectasis",
    "cardiomegaly": "cardiomegaly",
    "consolidation": "focal consolidation",
    "edema": "pulmonary edema",
    "emphysema": "emphysema",
    "enlarged_cardiomediastinum": "cardiomediastinal enlargement",
    "fracture": "rib fracture",
    "lung_lesion": "pulmonary nodule",
    "lung_opacity": "patchy opacity",
    "pleural_effusion": "pleural effusion",
    "pleural_thickening": "pleural thickening",
    "pneumonia": "pneumonia",
    "pneumothorax": "pneumothorax",
    "support_devices": "support tube",
}

PREAMBLE = "Describe the findings."
INDICATIONS = ("Routine check.", "Acute dyspnea.")
COMPARISONS = ("Not applicable.", "Compared to prior radiograph.")
TECHNIQUE_BASE = "Portable chest radiograph."
HEDGE = "likely"


@dataclass(frozen=True)
class SyntheticSpec:
    num_studies: int = 200
    sentences_min: int = 2
    sentences_max: int = 5
    hallucination_rate: float = 0.5
    plant_strength: float = 1.0
    technique_signal: float = 1.0
    swap_fraction: float = 0.5
    candidates_per_study: int = 8
    finding_lexicon: Mapping[str, Sequence[str]] = field(
        default_factory=lambda: dict(DEFAULT_FINDING_LEXICON)
    )
    seed: int = 0

    def __post_init__(self):
        if self.num_studies < 1:
            raise ConfigError("num_studies must be >= 1")
        if not 1 <= self.sentences_min <= self.sentences_max:
            raise ConfigError("invalid sentences-per-report range")
        for name in ("hallucination_rate", "plant_strength", "technique_signal", "swap_fraction"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be in [0,1], got {value}")
        if self.candidates_per_study < 1:
            raise ConfigError("candidates_per_study must be >= 1")
        missing = [k for k in self.finding_lexicon if k not in FINDING_PHRASES]
        if missing:
            raise ConfigError(f"no surface phrase for findings: {missing}")

    def to_dict(self) -> dict:
        return {
            "num_studies": self.num_studies,
            "sentences_min": self.sentences_min,
            "sentences_max": self.sentences_max,
            "hallucination_rate": self.hallucination_rate,
            "plant_strength": self.plant_strength,
            "technique_signal": self.technique_signal,
            "swap_fraction": self.swap_fraction,
            "candidates_per_study": self.candidates_per_study,
            "seed": self.seed,
        }


def _sentence(phrase: str, present: bool) -> str:
    if present:
        return f"There is {phrase}."
    return f"No {phrase}."


def _hedged(text: str) -> str:
    return text[:-1] + f" {HEDGE}."


def _token_stats(text: str, correct: bool, strength: float, rng) -> tuple[tuple[float, float, float], ...]:
    n_tokens = max(1, len(text.split()))
    center = 0.5 + 0.3 * strength * (1 if correct else -1)
    stats = []
    for _ in range(n_tokens):
        p = float(np.clip(center + rng.uniform(-0.1, 0.1), 0.02, 0.98))
        logit = math.log(p / (1.0 - p))
        entropy = -(p * math.log(p) + (1.0 - p) * math.log(1.0 - p))
        stats.append((logit, p, entropy))
    return tuple(stats)


def _generate_report(
    study_entities: list[tuple[str, bool]],
    all_findings: list[str],
    spec: SyntheticSpec,
    rng,
    study_id: str,
    generator_id: str,
    candidate_index: int | None = None,
) -> GeneratedReport:
    sentences = []
    log_prob = 0.0
    study_names = {name for name, _ in study_entities}
    for name, present in study_entities:
        corrupt = rng.random() < spec.hallucination_rate
        if not corrupt:
            text = _sentence(FINDING_PHRASES[name], present)
        else:
            if rng.random() < spec.swap_fraction:
                others = [f for f in all_findings if f not in study_names]
                swap = others[int(rng.integers(len(others)))] if others else name
                text = _sentence(FINDING_PHRASES[swap], present)
                corrupt = swap != name
            else:
                text = _sentence(FINDING_PHRASES[name], not present)
            if corrupt and rng.random() < spec.plant_strength:
                text = _hedged(text)
        stats = _token_stats(text, not corrupt, spec.plant_strength, rng)
        sentences.append(GeneratedSentence(text=text, token_stats=stats))
        log_prob += sum(math.log(p) for _, p, _ in stats)
    return GeneratedReport(
        study_id=study_id,
        generator_id=generator_id,
        sentences=tuple(sentences),
        log_prob=log_prob,
        candidate_index=candidate_index,
    )


def make_synthetic(
    spec: SyntheticSpec,
) -> tuple[list[tuple[ClinicalContext, GroundTruthReport]], list[GeneratedReport], list[CandidateSet]]:
    """Build aligned studies, generated reports, and candidate sets."""
    findings = list(spec.finding_lexicon)
    studies = []
    generated = []
    candidate_sets = []
    for i in range(spec.num_studies):
        rng = np.random.default_rng([spec.seed, i])
        study_id = f"synth-{i:05d}"
        n_sent = int(rng.integers(spec.sentences_min, spec.sentences_max + 1))
        n_sent = min(n_sent, len(findings))
        picked = rng.choice(len(findings), size=n_sent, replace=False)
        entities = [(findings[j], bool(rng.random() < 0.5)) for j in picked]

        technique_parts = [TECHNIQUE_BASE]
        for name, present in entities:
            if rng.random() < spec.technique_signal:
                technique_parts.append(_sentence(FINDING_PHRASES[name], present))
        ctx = ClinicalContext(
            study_id=study_id,
            preamble=PREAMBLE,
            indication=INDICATIONS[int(rng.integers(len(INDICATIONS)))],
            technique=" ".join(technique_parts),
            comparison=COMPARISONS[int(rng.integers(len(COMPARISONS)))],
        )
        gt = GroundTruthReport(
            study_id=study_id,
            sentences=tuple(_sentence(FINDING_PHRASES[n], p) for n, p in entities),
        )
        studies.append((ctx, gt))
        generated.append(
            _generate_report(entities, findings, spec, rng, study_id, "synthetic")
        )
        candidates = [
            _generate_report(
                entities, findings, spec, rng, study_id, "synthetic-candidate", candidate_index=k
            )
            for k in range(spec.candidates_per_study)
        ]
        candidate_sets.append(CandidateSet(study_id=study_id, candidates=tuple(candidates)))
    return studies, generated, candidate_sets


def synthetic_embeddings(
    generated: Sequence[GeneratedReport],
    labels: Sequence,
    dim: int = 32,
    strength: float = 2.0,
    seed: int = 0,
) -> list[tuple[str, int, np.ndarray]]:
    """Token-embedding fixtures with the class planted along one direction."""
    label_by_key = {(s.study_id, s.sentence_index): s.label for s in labels}
    direction = np.random.default_rng([seed, 997]).standard_normal(dim)
    direction /= np.linalg.norm(direction)
    records = []
    for report in generated:
        for i, sentence in enumerate(report.sentences):
            key = (report.study_id, i)
            if key not in label_by_key:
                continue
            y = label_by_key[key]
            stream = zlib.crc32(f"{report.study_id}:{i}".encode("utf-8"))
            rng = np.random.default_rng([seed, stream])
            n_tokens = max(1, len(sentence.text.split()))
            base = rng.standard_normal((n_tokens, dim))
            records.append((report.study_id, i, base + (2 * y - 1) * strength * direction))
    return records
