"""Answer pooling: canonical forms, shared solution sets, per-model confidences.

For open-ended questions each model is sampled K times; the frequency of an
answer across those passes, divided by K, is the model's confidence in it.
The answers of all models are pooled and the K globally most frequent form
the shared solution set over which every model's distribution is expressed.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation

import numpy as np

from .corpus import EpisodeRecord

log = logging.getLogger(__name__)

_CURRENCY = "$€£"
_NUMERIC_RE = re.compile(r"^[-+]?(\d+(\.\d*)?|\.\d+)([eE][-+]?\d+)?$")


def _decimal_str(d: Decimal) -> str:
    # Exact canonical form without scientific notation or trailing zeros.
    if d == d.to_integral_value():
        return str(d.quantize(Decimal(1)))
    s = format(d, "f")
    return s.rstrip("0").rstrip(".") if "." in s else s


def canonical_answer(text: str | int) -> str:
    """Canonical form for answer equality.

    Numbers lose currency symbols, thousands separators, and trailing
    periods, and compare as exact decimals ("1,200." == "1200"). Everything
    else is lowercased with collapsed whitespace.
    """
    if isinstance(text, int):
        return str(text)
    s = text.strip()
    stripped = s.rstrip(".").strip()
    numeric = stripped.translate(str.maketrans("", "", _CURRENCY + ", "))
    if _NUMERIC_RE.match(numeric):
        try:
            return _decimal_str(Decimal(numeric))
        except InvalidOperation:
            pass
    return " ".join(s.rstrip(".").lower().split())


def tally(answer: str, model_answers: list[str]) -> int:
    """Number of canonical matches of ``answer`` within ``model_answers``."""
    target = canonical_answer(answer)
    return sum(1 for a in model_answers if canonical_answer(a) == target)


@dataclass
class SolutionSet:
    """Shared finite answer domain: the top-K answers pooled across models."""

    answers: list[str]
    source_counts: dict[str, int]

    def index_of(self, answer: str | int) -> int | None:
        target = canonical_answer(answer)
        for i, a in enumerate(self.answers):
            if a == target:
                return i
        return None

    def __len__(self) -> int:
        return len(self.answers)


def build_final_solution_set(
    per_model_answers: dict[str, list[str]], k: int
) -> SolutionSet:
    """Rank pooled answers by total frequency, keep the top K.

    Ties break by first-seen position (model order, then pass order). An
    empty result signals the episode is unusable (every model failed to
    parse).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    counts: dict[str, int] = {}
    first_seen: dict[str, int] = {}
    position = 0
    for answers in per_model_answers.values():
        for raw in answers:
            a = canonical_answer(raw)
            if a not in counts:
                counts[a] = 0
                first_seen[a] = position
            counts[a] += 1
            position += 1
    ranked = sorted(counts, key=lambda a: (-counts[a], first_seen[a]))[:k]
    return SolutionSet(answers=ranked, source_counts={a: counts[a] for a in ranked})


@dataclass
class ChoiceDistribution:
    """One model's probability vector over a shared finite solution set."""

    model_id: str
    probs: list[float]

    def __post_init__(self) -> None:
        if any(p < 0 for p in self.probs):
            raise ValueError(f"{self.model_id}: negative probability")
        if sum(self.probs) > 1.0 + 1e-9:
            raise ValueError(f"{self.model_id}: probabilities sum past 1")


def model_distribution(
    model_answers: list[str], final: SolutionSet, k: int, model_id: str = ""
) -> ChoiceDistribution:
    """Per-answer frequency divided by the configured pass count K.

    Missing or unparseable passes still divide by K, so a model that failed
    to answer reads as uncertain rather than confident. Answers that fell
    outside the shared set leave the vector summing below 1.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    probs = [tally(a, model_answers) / k for a in final.answers]
    return ChoiceDistribution(model_id=model_id, probs=probs)


def parsed_answers(record: EpisodeRecord, model_id: str) -> list[str]:
    """Canonical parsed answers from this model's ok passes, in pass order."""
    return [
        canonical_answer(p.parsed)
        for p in record.passes.get(model_id, ())
        if p.status == "ok" and p.parsed is not None
    ]


def parsed_choices(record: EpisodeRecord, model_id: str) -> list[int]:
    """Parsed choice indices from this model's ok passes (MCQ)."""
    return [
        p.parsed
        for p in record.passes.get(model_id, ())
        if p.status == "ok" and isinstance(p.parsed, int)
    ]


def assemble_mcq_distributions(
    record: EpisodeRecord, members: list[str], k: int | None = None
) -> list[ChoiceDistribution] | None:
    """Per-member choice distributions for an MCQ episode.

    Provider-supplied probability vectors pass through unchanged. Otherwise
    each parsed pass contributes 1/K to its choice and every missing or
    unparsed pass contributes uniform mass, so the vector always sums to 1;
    a member with no parsed pass at all becomes uniform. Returns None (the
    episode is skipped) when a member has neither probabilities nor passes.
    """
    if not record.task.is_mcq:
        raise ValueError(f"record {record.id} is not mcq")
    m = record.task.num_choices
    out: list[ChoiceDistribution] = []
    for model_id in members:
        provided = (record.provided_choice_probs or {}).get(model_id)
        if provided is not None:
            out.append(ChoiceDistribution(model_id=model_id, probs=list(provided)))
            continue
        passes = record.passes.get(model_id)
        if not passes:
            log.warning("record %s: model %s has no probs and no passes; skipping episode",
                        record.id, model_id)
            return None
        choices = parsed_choices(record, model_id)
        n_passes = k if k is not None else len(passes)
        probs = [0.0] * m
        for c in choices:
            if 0 <= c < m:
                probs[c] += 1.0 / n_passes
        residual = 1.0 - sum(probs)
        if residual > 1e-12:
            if not choices:
                log.warning("record %s: model %s has zero parsed passes; using uniform",
                            record.id, model_id)
            probs = [p + residual / m for p in probs]
        out.append(ChoiceDistribution(model_id=model_id, probs=probs))
    return out


@dataclass
class FeatureVector:
    """Concatenated per-model probability vectors in a fixed model order."""

    values: np.ndarray
    model_order: list[str]
    slots: int

    def __post_init__(self) -> None:
        if self.values.shape != (len(self.model_order) * self.slots,):
            raise ValueError("feature length does not match model_order x slots")


def concat_features(
    distributions: list[ChoiceDistribution], model_order: list[str]
) -> FeatureVector:
    """Stack distributions as [q_1, ..., q_N] following ``model_order``."""
    by_model = {d.model_id: d for d in distributions}
    missing = [m for m in model_order if m not in by_model]
    if missing:
        raise ValueError(f"missing distributions for models: {missing}")
    lengths = {len(d.probs) for d in distributions}
    if len(lengths) != 1:
        raise ValueError(f"mismatched distribution lengths: {sorted(lengths)}")
    slots = lengths.pop()
    values = np.concatenate(
        [np.asarray(by_model[m].probs, dtype=np.float64) for m in model_order]
    )
    return FeatureVector(values=values, model_order=list(model_order), slots=slots)


def model_prediction(record: EpisodeRecord, model_id: str) -> str | int | None:
    """The model's single prediction for this episode.

    MCQ: modal parsed choice over passes, falling back to the argmax of a
    provided probability vector. OEQ: modal canonical answer over passes.
    GQ: raw text of the first ok pass. None when the model gave nothing
    usable; ties break to the first-seen answer.
    """
    task = record.task
    if task.kind == "gq":
        for p in record.passes.get(model_id, ()):
            if p.status == "ok" and p.raw_text.strip():
                return p.raw_text
        return None
    if task.is_mcq:
        votes: list[int] = parsed_choices(record, model_id)
        if not votes:
            provided = (record.provided_choice_probs or {}).get(model_id)
            if provided is not None:
                return int(np.argmax(provided))
            return None
    else:
        votes = parsed_answers(record, model_id)
        if not votes:
            return None
    counts: dict = {}
    for v in votes:
        counts[v] = counts.get(v, 0) + 1
    best = max(counts.values())
    for v in votes:  # first-seen tie break
        if counts[v] == best:
            return v
    return None


def plurality_prediction(record: EpisodeRecord, members: list[str]) -> str | int | None:
    """Most frequent member prediction; ties go to the lowest-index member."""
    preds = [(m, model_prediction(record, m)) for m in members]
    preds = [(m, p) for m, p in preds if p is not None]
    if not preds:
        return None
    counts: dict = {}
    for _, p in preds:
        counts[p] = counts.get(p, 0) + 1
    best = max(counts.values())
    for _, p in preds:  # members are already in ensemble order
        if counts[p] == best:
            return p
    return None
