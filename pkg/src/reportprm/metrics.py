"""Classification, ranking, bootstrap, and report-quality metrics.

AUROC is the Mann-Whitney statistic with ties weighted 1/2, computed from
tie-averaged ranks (half-integers, so it matches exhaustive pair counting
bit-for-bit). AUPRC uses step interpolation at distinct score thresholds.
Bootstrap intervals are percentile intervals over seeded resamples, each
resample drawing its generator from (seed, resample_index) so execution
order cannot change results.
"""
from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .corpus import segment_sentences
from .errors import (
    BootstrapError,
    ConfigError,
    DataError,
    RankingError,
)
from .labeling import negation_parity, normalize_tokens

FindingVector = tuple[int, ...]

# Finding names and trigger phrases for the rule-based toy labeler.
DEFAULT_FINDING_LEXICON: dict[str, tuple[str, ...]] = {
    "atelectasis": ("atelectasis",),
    "cardiomegaly": ("cardiomegaly", "enlarged heart"),
    "consolidation": ("consolidation",),
    "edema": ("edema",),
    "emphysema": ("emphysema",),
    "enlarged_cardiomediastinum": ("cardiomediastinal enlargement", "widened mediastinum"),
    "fracture": ("fracture",),
    "lung_lesion": ("lesion", "nodule", "mass"),
    "lung_opacity": ("opacity", "opacities"),
    "pleural_effusion": ("pleural effusion", "effusion"),
    "pleural_thickening": ("pleural thickening",),
    "pneumonia": ("pneumonia",),
    "pneumothorax": ("pneumothorax",),
    "support_devices": ("tube", "catheter", "pacemaker", "clips"),
}


@dataclass(frozen=True)
class EvalPair:
    """One scored sentence: probability, thresholded prediction, weak label."""

    prob: float
    pred: int
    label: int
    text: str = ""
    tags: frozenset = frozenset()

    def __post_init__(self):
        if not 0.0 <= self.prob <= 1.0:
            raise DataError(f"prob {self.prob} outside [0,1]")
        if self.pred not in (0, 1) or self.label not in (0, 1):
            raise DataError("pred and label must be 0 or 1")


def make_pairs(
    probs: Sequence[float],
    labels: Sequence[int],
    texts: Sequence[str] | None = None,
    threshold: float = 0.5,
) -> list[EvalPair]:
    if len(probs) != len(labels):
        raise DataError(f"{len(probs)} probs vs {len(labels)} labels")
    if texts is not None and len(texts) != len(probs):
        raise DataError("texts do not align with probs")
    return [
        EvalPair(
            prob=float(p),
            pred=1 if p >= threshold else 0,
            label=int(y),
            text=texts[i] if texts is not None else "",
        )
        for i, (p, y) in enumerate(zip(probs, labels))
    ]


@dataclass(frozen=True)
class ConfidenceInterval:
    point: float
    lo: float
    hi: float
    level: float = 0.95
    resamples: int = 1000
    seed: int = 0
    degenerate: int = 0

    def __post_init__(self):
        if self.lo > self.hi:
            raise DataError(f"interval lo {self.lo} > hi {self.hi}")

    def to_dict(self) -> dict:
        return {
            "point": self.point,
            "lo": self.lo,
            "hi": self.hi,
            "level": self.level,
            "n": self.resamples,
            "seed": self.seed,
        }


# -- classification -----------------------------------------------------------

def _binary_f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def classification_metrics(pairs: Sequence[EvalPair]) -> dict[str, float]:
    """Accuracy, macro F1, and MCC at the pairs' declared threshold.

    MCC returns exactly 0 whenever a denominator factor vanishes, which is
    the degenerate single-class-predictor case.
    """
    if not pairs:
        raise DataError("no pairs to evaluate")
    tp = sum(1 for p in pairs if p.pred == 1 and p.label == 1)
    tn = sum(1 for p in pairs if p.pred == 0 and p.label == 0)
    fp = sum(1 for p in pairs if p.pred == 1 and p.label == 0)
    fn = sum(1 for p in pairs if p.pred == 0 and p.label == 1)

    accuracy = (tp + tn) / len(pairs)
    f1_pos = _binary_f1(tp, fp, fn)
    f1_neg = _binary_f1(tn, fn, fp)
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = 0.0 if denom == 0 else (tp * tn - fp * fn) / math.sqrt(denom)
    return {"accuracy": accuracy, "f1_macro": (f1_pos + f1_neg) / 2.0, "mcc": mcc}


# -- ranking ------------------------------------------------------------------

def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties averaged; half-integers, hence exact."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_values = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_values[j + 1] == sorted_values[i]:
            j += 1
        ranks[order[i: j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def ranking_metrics(pairs: Sequence[EvalPair]) -> dict[str, float]:
    """AUROC (rank statistic, ties 1/2) and AUPRC (step interpolation)."""
    labels = np.array([p.label for p in pairs], dtype=np.int64)
    scores = np.array([p.prob for p in pairs], dtype=np.float64)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise RankingError("both classes required for ranking metrics")

    ranks = _average_ranks(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    auroc = u / (n_pos * n_neg)

    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    auprc = 0.0
    prev_recall = 0.0
    tp = 0
    seen = 0
    i = 0
    while i < len(pairs):
        j = i
        while j + 1 < len(pairs) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        tp += int(sorted_labels[i: j + 1].sum())
        seen += j - i + 1
        recall = tp / n_pos
        precision = tp / seen
        auprc += (recall - prev_recall) * precision
        prev_recall = recall
        i = j + 1
    return {"auroc": float(auroc), "auprc": float(auprc)}


# -- bootstrap ----------------------------------------------------------------

MetricFn = Callable[[Sequence[EvalPair]], float]


def bootstrap(
    pairs: Sequence[EvalPair],
    metric_fn: MetricFn,
    n: int = 1000,
    level: float = 0.95,
    seed: int = 0,
) -> ConfidenceInterval:
    """Percentile bootstrap interval for a metric over resampled pairs.

    Resamples raising RankingError (single-class draws) are skipped and
    counted; more than half degenerate aborts.
    """
    if not pairs:
        raise DataError("no pairs to bootstrap")
    if not 0.0 < level < 1.0:
        raise ConfigError(f"level must be in (0,1), got {level}")
    point = metric_fn(pairs)
    values = []
    degenerate = 0
    size = len(pairs)
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        indices = rng.integers(0, size, size=size)
        resample = [pairs[j] for j in indices]
        try:
            values.append(metric_fn(resample))
        except RankingError:
            degenerate += 1
    if degenerate > n // 2:
        raise BootstrapError(f"{degenerate}/{n} degenerate resamples")
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(np.array(values), [alpha, 1.0 - alpha], method="linear")
    return ConfidenceInterval(
        point=float(point),
        lo=float(lo),
        hi=float(hi),
        level=level,
        resamples=n,
        seed=seed,
        degenerate=degenerate,
    )


def keyword_f1_micro(
    pairs: Sequence[EvalPair],
    keyword: str,
    n: int = 1000,
    level: float = 0.95,
    seed: int = 0,
) -> dict:
    """Micro F1 (equals accuracy for this binary single-label task) on the
    sentences containing the keyword, with a bootstrap interval."""
    if not keyword:
        raise ConfigError("keyword must be non-empty")
    needle = keyword.lower()
    subset = [p for p in pairs if needle in p.text.lower() or keyword in p.tags]
    if not subset:
        return {"keyword": keyword, "count": 0}
    accuracy = lambda ps: classification_metrics(ps)["accuracy"]  # noqa: E731
    ci = bootstrap(subset, accuracy, n=n, level=level, seed=seed)
    return {"keyword": keyword, "count": len(subset), "f1_micro": ci.point, "ci": ci}


# -- text metrics -------------------------------------------------------------

def _text_tokens(text: str) -> list[str]:
    return re.findall(r"[a-z0-9]+", text.lower())


def _ngram_counts(tokens: Sequence[str], order: int) -> Counter:
    return Counter(tuple(tokens[i: i + order]) for i in range(len(tokens) - order + 1))


def _rouge_n(cand: Sequence[str], ref: Sequence[str], order: int) -> float:
    cand_counts = _ngram_counts(cand, order)
    ref_counts = _ngram_counts(ref, order)
    overlap = sum((cand_counts & ref_counts).values())
    total_cand = sum(cand_counts.values())
    total_ref = sum(ref_counts.values())
    if not total_cand or not total_ref or not overlap:
        return 0.0
    precision = overlap / total_cand
    recall = overlap / total_ref
    return 2 * precision * recall / (precision + recall)


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for token in a:
        current = [0]
        for j, other in enumerate(b, start=1):
            if token == other:
                current.append(prev[j - 1] + 1)
            else:
                current.append(max(prev[j], current[-1]))
        prev = current
    return prev[-1]


def _bleu(cand: Sequence[str], ref: Sequence[str], smoothing: bool) -> float:
    """BLEU-4 with brevity penalty; max order shrinks to the candidate length
    so identity scores exactly 1 on short sentences."""
    if not cand or not ref:
        return 0.0
    max_order = min(4, len(cand))
    log_sum = 0.0
    for order in range(1, max_order + 1):
        cand_counts = _ngram_counts(cand, order)
        ref_counts = _ngram_counts(ref, order)
        matches = sum((cand_counts & ref_counts).values())
        total = sum(cand_counts.values())
        if smoothing and order > 1:
            matches += 1
            total += 1
        if matches == 0:
            return 0.0
        log_sum += math.log(matches / total)
    brevity = 1.0 if len(cand) > len(ref) else math.exp(1.0 - len(ref) / len(cand))
    return min(1.0, brevity) * math.exp(log_sum / max_order)


def text_metrics(candidate: str, reference: str, smoothing: bool = False) -> dict[str, float]:
    """BLEU-4, ROUGE-1/2 F1, and ROUGE-L F1 between two report texts."""
    cand = _text_tokens(candidate)
    ref = _text_tokens(reference)
    lcs = _lcs_length(cand, ref)
    if lcs and cand and ref:
        precision = lcs / len(cand)
        recall = lcs / len(ref)
        rouge_l = 2 * precision * recall / (precision + recall)
    else:
        rouge_l = 0.0
    return {
        "bleu": _bleu(cand, ref, smoothing),
        "rouge1": _rouge_n(cand, ref, 1),
        "rouge2": _rouge_n(cand, ref, 2),
        "rougeL": rouge_l,
    }


# -- finding-level metrics ------------------------------------------------------

def finding_f1(
    gen_vectors: Sequence[FindingVector],
    gt_vectors: Sequence[FindingVector],
) -> float:
    """Micro-averaged F1 over all (report, finding) cells, positive class."""
    if len(gen_vectors) != len(gt_vectors):
        raise DataError(f"{len(gen_vectors)} generated vs {len(gt_vectors)} reference vectors")
    tp = fp = fn = 0
    for gen, gt in zip(gen_vectors, gt_vectors):
        if len(gen) != len(gt):
            raise DataError("finding vectors must have equal length")
        for g, t in zip(gen, gt):
            tp += g and t
            fp += g and not t
            fn += t and not g
    return _binary_f1(tp, fp, fn)


def toy_finding_labeler(
    report_text: str,
    lexicon: Mapping[str, Sequence[str]] = DEFAULT_FINDING_LEXICON,
) -> FindingVector:
    """Deterministic trigger-phrase finding extraction.

    A finding flag is set when any of its trigger phrases appears in a
    sentence whose negation-marker parity is even (not negated), using the
    same normalization as the synthetic entailment oracle.
    """
    if not lexicon:
        raise ConfigError("finding lexicon must be non-empty")
    flags = [0] * len(lexicon)
    for sentence in segment_sentences(report_text):
        tokens = normalize_tokens(sentence)
        if negation_parity(tokens):
            continue
        haystack = " " + " ".join(tokens) + " "
        for i, triggers in enumerate(lexicon.values()):
            if flags[i]:
                continue
            for trigger in triggers:
                needle = " " + " ".join(normalize_tokens(trigger)) + " "
                if needle in haystack:
                    flags[i] = 1
                    break
    return tuple(flags)
