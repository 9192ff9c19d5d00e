"""Data model for studies, generated reports, and prompt handling.

A study prompt is free text carrying up to three structured fields behind
the markers ``INDICATION:``, ``TECHNIQUE:`` and ``COMPARISON:`` (canonical
order, case-sensitive). Parsing and rendering round-trip; an ablation mask
drops individual fields from the rendered form.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass

from .errors import DataError, PromptParseError, SchemaError

FIELD_MARKERS = ("INDICATION:", "TECHNIQUE:", "COMPARISON:")

# Splitter: sentence-final punctuation, whitespace, then an uppercase letter
# (or end of text). The abbreviation list suppresses false splits.
ABBREVIATIONS = ("a.p.", "p.a.", "e.g.", "i.e.", "dr.", "no.")


@dataclass(frozen=True)
class ClinicalContext:
    """Structured clinical context of one study."""

    study_id: str
    preamble: str = ""
    indication: str = ""
    technique: str = ""
    comparison: str = ""

    def __post_init__(self):
        if not self.study_id:
            raise DataError("study_id must be non-empty")


@dataclass(frozen=True)
class GroundTruthReport:
    study_id: str
    sentences: tuple[str, ...]

    def __post_init__(self):
        if not self.sentences:
            raise DataError(f"{self.study_id}: ground truth has no sentences")
        for s in self.sentences:
            if not s:
                raise DataError(f"{self.study_id}: empty ground-truth sentence")
            if "\n" in s:
                raise DataError(f"{self.study_id}: sentence contains separator newline")


@dataclass(frozen=True)
class GeneratedSentence:
    """One generated sentence, optionally with per-token generator statistics.

    ``token_stats`` rows are (logit, prob, entropy) per token.
    """

    text: str
    token_stats: tuple[tuple[float, float, float], ...] | None = None

    def __post_init__(self):
        if not self.text:
            raise DataError("generated sentence text must be non-empty")
        if "\n" in self.text:
            raise DataError("generated sentence contains separator newline")
        if self.token_stats is not None:
            if len(self.token_stats) == 0:
                raise DataError("token_stats present but empty")
            for logit, prob, entropy in self.token_stats:
                if not 0.0 <= prob <= 1.0:
                    raise DataError(f"token prob {prob} outside [0,1]")
                if entropy < 0.0:
                    raise DataError(f"token entropy {entropy} negative")


@dataclass(frozen=True)
class GeneratedReport:
    study_id: str
    generator_id: str
    sentences: tuple[GeneratedSentence, ...]
    log_prob: float | None = None
    candidate_index: int | None = None

    def __post_init__(self):
        if not self.sentences:
            raise DataError(f"{self.study_id}: generated report has no sentences")
        if self.log_prob is not None and self.log_prob > 0:
            raise DataError(f"{self.study_id}: log_prob {self.log_prob} > 0")

    @property
    def texts(self) -> list[str]:
        return [s.text for s in self.sentences]


@dataclass(frozen=True)
class CandidateSet:
    """All candidate reports generated for one study."""

    study_id: str
    candidates: tuple[GeneratedReport, ...]

    def __post_init__(self):
        if not self.candidates:
            raise DataError(f"{self.study_id}: empty candidate set")
        indices = [c.candidate_index for c in self.candidates]
        if indices != list(range(len(self.candidates))):
            raise DataError(f"{self.study_id}: candidate indices not 0..N-1")

    def __len__(self) -> int:
        return len(self.candidates)


@dataclass(frozen=True)
class AblationMask:
    drop_indication: bool = False
    drop_technique: bool = False
    drop_comparison: bool = False

    @classmethod
    def identity(cls) -> "AblationMask":
        return cls()

    @classmethod
    def drop(cls, field_name: str) -> "AblationMask":
        valid = {"indication", "technique", "comparison"}
        if field_name not in valid:
            raise DataError(f"unknown ablation field {field_name!r}")
        return cls(**{f"drop_{field_name}": True})


def parse_prompt(text: str, study_id: str = "unknown") -> ClinicalContext:
    """Split a prompt into preamble and the three marker fields.

    Markers must appear at most once each and in canonical order; a missing
    marker yields an empty field.
    """
    positions = []
    for marker in FIELD_MARKERS:
        first = text.find(marker)
        if first != -1 and text.find(marker, first + 1) != -1:
            raise PromptParseError(f"duplicated marker {marker!r}")
        positions.append(first)

    present = [(pos, marker) for pos, marker in zip(positions, FIELD_MARKERS) if pos != -1]
    for (pos_a, _), (pos_b, marker_b) in zip(present, present[1:]):
        if pos_a > pos_b:
            raise PromptParseError(f"marker {marker_b!r} out of order")

    cut = [pos for pos, _ in present] + [len(text)]
    preamble = text[: cut[0]].strip() if present else text.strip()
    values = {}
    for i, (pos, marker) in enumerate(present):
        values[marker] = text[pos + len(marker): cut[i + 1]].strip()
    return ClinicalContext(
        study_id=study_id,
        preamble=preamble,
        indication=values.get("INDICATION:", ""),
        technique=values.get("TECHNIQUE:", ""),
        comparison=values.get("COMPARISON:", ""),
    )


def render_prompt(ctx: ClinicalContext, mask: AblationMask = AblationMask()) -> str:
    """Render preamble plus the non-dropped, non-empty fields in fixed order."""
    parts = [ctx.preamble] if ctx.preamble else []
    for marker, value, dropped in (
        ("INDICATION:", ctx.indication, mask.drop_indication),
        ("TECHNIQUE:", ctx.technique, mask.drop_technique),
        ("COMPARISON:", ctx.comparison, mask.drop_comparison),
    ):
        if value and not dropped:
            parts.append(f"{marker} {value}")
    return " ".join(parts)


def _is_abbreviation(text: str, punct_index: int) -> bool:
    """True when the token ending at text[punct_index] is a known abbreviation."""
    head = text[: punct_index + 1].lower()
    for abbr in ABBREVIATIONS:
        if head.endswith(abbr):
            before = punct_index - len(abbr)
            if before < 0 or not (text[before].isalnum() or text[before] == "."):
                return True
    return False


def segment_sentences(text: str) -> list[str]:
    """Deterministic rule-based sentence segmentation.

    Whitespace is normalized first, so joining the result with single spaces
    reconstructs the normalized input. Splits occur after ``. ! ?`` followed
    by whitespace and an uppercase letter; the abbreviation list suppresses
    splits.
    """
    normalized = " ".join(text.split())
    if not normalized:
        return []
    sentences = []
    start = 0
    for match in re.finditer(r"[.!?](?=\s+[A-Z])", normalized):
        i = match.start()
        if normalized[i] == "." and _is_abbreviation(normalized, i):
            continue
        sentences.append(normalized[start: i + 1].strip())
        start = i + 1
    tail = normalized[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


# -- line-delimited corpus files ----------------------------------------------

SCHEMAS = ("studies", "generated", "candidates")


def _require(record: dict, key: str, lineno: int):
    if key not in record:
        raise SchemaError(f"line {lineno}: missing required field {key!r}")
    return record[key]


def _generated_from_record(record: dict, lineno: int, with_index: bool) -> GeneratedReport:
    sentences = []
    for s in _require(record, "sentences", lineno):
        stats = s.get("token_stats")
        try:
            sentences.append(
                GeneratedSentence(
                    text=_require(s, "text", lineno),
                    token_stats=tuple(tuple(float(v) for v in row) for row in stats)
                    if stats is not None
                    else None,
                )
            )
        except DataError as exc:
            raise SchemaError(f"line {lineno}: {exc}") from exc
    index = None
    if with_index:
        index = int(_require(record, "candidate_index", lineno))
    try:
        return GeneratedReport(
            study_id=_require(record, "study_id", lineno),
            generator_id=_require(record, "generator_id", lineno),
            sentences=tuple(sentences),
            log_prob=record.get("log_prob"),
            candidate_index=index,
        )
    except DataError as exc:
        raise SchemaError(f"line {lineno}: {exc}") from exc


def iter_records(path):
    """Yield (lineno, record) for each JSON line, skipping the meta header."""
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"line {lineno}: malformed JSON ({exc.msg})") from exc
            if isinstance(record, dict) and set(record) == {"meta"}:
                continue
            yield lineno, record


def ingest_corpus(path, schema: str):
    """Read one of the line-delimited corpus files into typed records.

    ``studies`` yields a list of (ClinicalContext, GroundTruthReport) pairs,
    ``generated`` a list of GeneratedReport, ``candidates`` a list of
    CandidateSet (grouped by study, ordered by candidate index).
    """
    if schema not in SCHEMAS:
        raise SchemaError(f"unknown corpus schema {schema!r}")

    if schema == "studies":
        pairs = []
        seen = set()
        for lineno, record in iter_records(path):
            study_id = _require(record, "study_id", lineno)
            if study_id in seen:
                raise SchemaError(f"line {lineno}: duplicate study_id {study_id!r}")
            seen.add(study_id)
            try:
                ctx = parse_prompt(_require(record, "prompt", lineno), study_id=study_id)
                gt = GroundTruthReport(
                    study_id=study_id,
                    sentences=tuple(_require(record, "ground_truth", lineno)),
                )
            except DataError as exc:
                raise SchemaError(f"line {lineno}: {exc}") from exc
            pairs.append((ctx, gt))
        return pairs

    if schema == "generated":
        return [
            _generated_from_record(record, lineno, with_index=False)
            for lineno, record in iter_records(path)
        ]

    by_study: dict[str, list[GeneratedReport]] = {}
    order: list[str] = []
    for lineno, record in iter_records(path):
        report = _generated_from_record(record, lineno, with_index=True)
        if report.study_id not in by_study:
            by_study[report.study_id] = []
            order.append(report.study_id)
        by_study[report.study_id].append(report)
    sets = []
    for study_id in order:
        members = sorted(by_study[study_id], key=lambda r: r.candidate_index)
        sets.append(CandidateSet(study_id=study_id, candidates=tuple(members)))
    return sets


def study_record(ctx: ClinicalContext, gt: GroundTruthReport) -> dict:
    return {
        "study_id": ctx.study_id,
        "prompt": render_prompt(ctx),
        "ground_truth": list(gt.sentences),
    }


def generated_record(report: GeneratedReport) -> dict:
    record = {
        "study_id": report.study_id,
        "generator_id": report.generator_id,
        "sentences": [
            {"text": s.text}
            | ({"token_stats": [list(row) for row in s.token_stats]} if s.token_stats else {})
            for s in report.sentences
        ],
    }
    if report.log_prob is not None:
        record["log_prob"] = report.log_prob
    if report.candidate_index is not None:
        record["candidate_index"] = report.candidate_index
    return record
