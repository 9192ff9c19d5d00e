"""Report-level scoring, percentile rejection, and Best-of-N selection.

Every aggregation is normalized so that higher means better: the entropy
criterion is negated internally. The geometric mean goes through clamped
logs to avoid underflow on long reports. All tie-breaking is by lowest
index / lowest study id, keeping pipelines deterministic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from .errors import AggregationError, ConfigError, DataError, SelectionError
from .metrics import FindingVector

AGGREGATION_METHODS = ("min_prob", "avg_prob", "prod_prob", "neg_entropy", "log_prob")
_LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class ReportScore:
    study_id: str
    method: str
    value: float
    candidate_index: int | None = None

    def __post_init__(self):
        if self.method not in AGGREGATION_METHODS:
            raise ConfigError(f"unknown aggregation method {self.method!r}")
        if self.method in ("min_prob", "avg_prob", "prod_prob") and not 0.0 <= self.value <= 1.0:
            raise DataError(f"{self.method} score {self.value} outside [0,1]")
        if self.method in ("neg_entropy", "log_prob") and self.value > 0.0:
            raise DataError(f"{self.method} score {self.value} must be <= 0")


@dataclass(frozen=True)
class CandidateScoreInputs:
    """Per-candidate raw inputs from which any aggregation can be computed."""

    candidate_index: int
    probs: tuple[float, ...] = ()
    token_entropies: tuple[tuple[float, ...], ...] | None = None
    log_prob: float | None = None
    finding_vector: FindingVector | None = None


@dataclass(frozen=True)
class CandidateGroup:
    """Candidates sharing one finding vector, with their summed base score."""

    finding_vector: FindingVector
    members: tuple[int, ...]
    total_score: float


def aggregate(
    probs: Sequence[float],
    method: str,
    token_entropies: Sequence[Sequence[float]] | None = None,
    log_prob: float | None = None,
    study_id: str = "",
    candidate_index: int | None = None,
    flat_token_entropy: bool = False,
) -> ReportScore:
    """Collapse sentence probabilities (or auxiliary inputs) to one score."""
    if method not in AGGREGATION_METHODS:
        raise ConfigError(f"unknown aggregation method {method!r}")

    if method == "neg_entropy":
        if not token_entropies or any(len(s) == 0 for s in token_entropies):
            raise AggregationError(method, "token entropies required")
        if flat_token_entropy:
            flat = [e for sentence in token_entropies for e in sentence]
            value = -sum(flat) / len(flat)
        else:
            per_sentence = [sum(s) / len(s) for s in token_entropies]
            value = -sum(per_sentence) / len(per_sentence)
    elif method == "log_prob":
        if log_prob is None:
            raise AggregationError(method, "generator log probability required")
        value = float(log_prob)
    else:
        if not probs:
            raise AggregationError(method, "sentence probabilities required")
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise DataError("probabilities must lie in [0,1]")
        if method == "min_prob":
            value = min(probs)
        elif method == "avg_prob":
            value = sum(probs) / len(probs)
        else:
            value = math.exp(
                sum(math.log(max(p, _LOG_CLAMP)) for p in probs) / len(probs)
            )
    return ReportScore(
        study_id=study_id, method=method, value=value, candidate_index=candidate_index
    )


def score_candidate(inputs: CandidateScoreInputs, method: str, study_id: str = "") -> ReportScore:
    return aggregate(
        inputs.probs,
        method,
        token_entropies=inputs.token_entropies,
        log_prob=inputs.log_prob,
        study_id=study_id,
        candidate_index=inputs.candidate_index,
    )


# -- percentile rejection -------------------------------------------------------

def rejection_drop_count(total: int, pct: float) -> int:
    return math.ceil(pct * total / 100.0)


def reject(
    scores: Sequence[ReportScore],
    quality: Mapping[str, Sequence],
    pct_grid: Sequence[float] = (0, 5, 10, 15, 20),
    aggregators: Mapping[str, Callable[[Sequence], float]] | None = None,
) -> list[dict]:
    """Quality of the retained set after dropping the worst-scoring reports.

    For each percentile the lowest-scoring ceil(pct*K/100) reports are
    dropped (score ties broken by study_id ascending, lower id dropped
    first) and each quality metric is recomputed on the retained values;
    the default aggregator is the arithmetic mean.
    """
    if not scores:
        raise DataError("no report scores")
    for pct in pct_grid:
        if not 0 <= pct < 100:
            raise ConfigError(f"rejection percentile {pct} outside [0,100)")
    for name, values in quality.items():
        if len(values) != len(scores):
            raise DataError(f"quality {name!r} has {len(values)} values for {len(scores)} reports")

    aggregators = aggregators or {}
    order = sorted(range(len(scores)), key=lambda i: (scores[i].value, scores[i].study_id))
    method = scores[0].method
    rows = []
    for pct in pct_grid:
        dropped = rejection_drop_count(len(scores), pct)
        retained = sorted(order[dropped:])
        for name, values in quality.items():
            kept = [values[i] for i in retained]
            agg = aggregators.get(name, _mean)
            rows.append(
                {
                    "method": method,
                    "pct": pct,
                    "metric": name,
                    "value": agg(kept),
                    "retained": len(retained),
                }
            )
    return rows


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values) if values else float("nan")


# -- Best-of-N -------------------------------------------------------------------

def bon_select(candidates: Sequence[CandidateScoreInputs], method: str) -> int:
    """Index of the candidate with the highest aggregate score (ties: lowest)."""
    if not candidates:
        raise SelectionError("empty candidate set")
    best_index = None
    best_value = None
    for cand in sorted(candidates, key=lambda c: c.candidate_index):
        value = score_candidate(cand, method).value
        if best_value is None or value > best_value:
            best_index, best_value = cand.candidate_index, value
    return best_index


def group_candidates(
    candidates: Sequence[CandidateScoreInputs],
    method: str,
) -> list[CandidateGroup]:
    """Group candidates by identical finding vector and sum their base scores."""
    groups: dict[FindingVector, list[int]] = {}
    scores: dict[int, float] = {}
    for cand in candidates:
        if cand.finding_vector is None:
            raise DataError(f"candidate {cand.candidate_index} has no finding vector")
        scores[cand.candidate_index] = score_candidate(cand, method).value
        groups.setdefault(cand.finding_vector, []).append(cand.candidate_index)
    return [
        CandidateGroup(
            finding_vector=vector,
            members=tuple(sorted(members)),
            total_score=sum(scores[m] for m in members),
        )
        for vector, members in groups.items()
    ]


def select_weighted(
    scores: Mapping[int, float],
    vectors: Mapping[int, FindingVector],
) -> int:
    """Weighted selection on precomputed base scores.

    Groups share identical finding vectors; the winning group maximizes the
    summed base score (ties: group containing the lowest candidate index);
    within it the highest base score wins (ties: lowest index). Scaling all
    scores by a positive constant cannot change the outcome.
    """
    if not scores:
        raise SelectionError("empty candidate set")
    if set(scores) != set(vectors):
        raise DataError("scores and finding vectors must cover the same candidates")
    groups: dict[FindingVector, list[int]] = {}
    for index, vector in vectors.items():
        groups.setdefault(vector, []).append(index)
    candidate_groups = [
        CandidateGroup(
            finding_vector=vector,
            members=tuple(sorted(members)),
            total_score=sum(scores[m] for m in members),
        )
        for vector, members in groups.items()
    ]
    best_group = min(candidate_groups, key=lambda g: (-g.total_score, g.members[0]))
    return min(best_group.members, key=lambda i: (-scores[i], i))


def weighted_bon(candidates: Sequence[CandidateScoreInputs], method: str) -> int:
    """Best candidate within the best finding-vector group (Best-of-N)."""
    if not candidates:
        raise SelectionError("empty candidate set")
    scores = {}
    vectors = {}
    for cand in candidates:
        if cand.finding_vector is None:
            raise DataError(f"candidate {cand.candidate_index} has no finding vector")
        scores[cand.candidate_index] = score_candidate(cand, method).value
        vectors[cand.candidate_index] = cand.finding_vector
    return select_weighted(scores, vectors)


def bon_sweep(
    candidate_sets: Sequence[Sequence[CandidateScoreInputs]],
    methods: Sequence[str],
    quality: Sequence[Mapping[str, Sequence[float]]],
    n_grid: Sequence[int] = (1, 2, 4, 8, 16, 32, 64, 128),
    weighted: bool = False,
    seed: int = 0,
    subsample: bool = False,
) -> list[dict]:
    """Mean chosen-report quality as a function of the candidate budget n.

    For each n the selection runs over the first n candidates of every
    study (or a seeded subsample of n when ``subsample`` is set) and each
    quality metric is averaged over the chosen reports. Rows are emitted in
    (method, n, metric) order.
    """
    import numpy as np

    if len(quality) != len(candidate_sets):
        raise DataError("quality tables must align with candidate sets")
    max_n = min(len(c) for c in candidate_sets)
    for n in n_grid:
        if n < 1 or n > max_n:
            raise ConfigError(f"n={n} outside the available candidate range 1..{max_n}")

    rows = []
    for method in methods:
        for n in n_grid:
            chosen_values: dict[str, list[float]] = {}
            for study_pos, candidates in enumerate(candidate_sets):
                if subsample and n < len(candidates):
                    rng = np.random.default_rng([seed, study_pos, n])
                    picked = sorted(rng.choice(len(candidates), size=n, replace=False).tolist())
                    pool = [candidates[i] for i in picked]
                else:
                    pool = list(candidates[:n])
                chooser = weighted_bon if weighted else bon_select
                chosen = chooser(pool, method)
                for metric, values in quality[study_pos].items():
                    chosen_values.setdefault(metric, []).append(values[chosen])
            for metric in sorted(chosen_values):
                rows.append(
                    {
                        "strategy": ("weighted-" if weighted else "") + method,
                        "n": n,
                        "metric": metric,
                        "value": _mean(chosen_values[metric]),
                    }
                )
    return rows
