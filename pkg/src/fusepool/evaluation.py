"""Scoring of trained combiners and voting baselines on corpus splits."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from collections.abc import Sequence

from .answers import canonical_answer, model_prediction, plurality_prediction
from .corpus import Corpus, EpisodeRecord, SplitSpec, split
from .diversity import FailureRule, failure_matrix
from .fusion import (
    FusionParameters,
    TrainConfig,
    build_training_data,
    fusion_dims,
    predict,
    train,
)
from .pruning import CandidateScorer, brute_force_prune, plurality_accuracy_fn

log = logging.getLogger(__name__)


def answers_equal(record: EpisodeRecord, pred) -> bool:
    """Task equality: choice index match for MCQ, canonical text match otherwise."""
    if pred is None:
        return False
    if record.task.is_mcq:
        return pred == record.ground_truth
    return canonical_answer(pred) == canonical_answer(record.ground_truth)


def plurality_accuracy(records: Sequence[EpisodeRecord], members: list[str]) -> float:
    if not records:
        return 0.0
    hits = sum(
        answers_equal(rec, plurality_prediction(rec, members)) for rec in records
    )
    return hits / len(records)


def single_model_accuracies(
    records: Sequence[EpisodeRecord], model_ids: Sequence[str]
) -> dict[str, float]:
    out = {}
    for m in model_ids:
        hits = sum(answers_equal(rec, model_prediction(rec, m)) for rec in records)
        out[m] = hits / len(records) if records else 0.0
    return out


@dataclass
class EvalReport:
    task: str
    members: list[str]
    n_episodes: int
    accuracy: float
    n_abstained: int
    plurality_accuracy: float
    single_accuracies: dict[str, float]
    predictions: list[dict] = field(repr=False, default_factory=list)

    def summary(self) -> dict:
        return {
            "task": self.task,
            "members": self.members,
            "n_episodes": self.n_episodes,
            "accuracy": self.accuracy,
            "n_abstained": self.n_abstained,
            "plurality_accuracy": self.plurality_accuracy,
            "best_single_accuracy": max(self.single_accuracies.values(), default=0.0),
            "single_accuracies": self.single_accuracies,
        }


def evaluate_records(
    records: Sequence[EpisodeRecord],
    members: list[str],
    params: FusionParameters,
    k: int,
) -> EvalReport:
    """Score the fusion model on episodes; abstentions count as wrong.

    Episodes whose gold answer fell outside the shared solution set score as
    errors automatically: the combiner could not have produced them.
    """
    predictions = []
    hits = 0
    abstained = 0
    for rec in records:
        pred = predict(params, rec, members, k)
        if pred is None:
            abstained += 1
        correct = answers_equal(rec, pred)
        hits += correct
        predictions.append(
            {
                "id": rec.id,
                "predicted": pred,
                "gold": rec.ground_truth,
                "correct": bool(correct),
            }
        )
    n = len(records)
    task = records[0].task.kind if records else "mcq"
    return EvalReport(
        task=task,
        members=list(members),
        n_episodes=n,
        accuracy=hits / n if n else 0.0,
        n_abstained=abstained,
        plurality_accuracy=plurality_accuracy(records, members),
        single_accuracies=single_model_accuracies(records, members),
        predictions=predictions,
    )


def _record_choice_count(corpus: Corpus) -> int | None:
    kinds = {rec.task for rec in corpus.records}
    if len(kinds) != 1:
        raise ValueError(f"corpus mixes task kinds: {sorted(k.kind for k in kinds)}")
    task = kinds.pop()
    return task.num_choices


def train_and_score_split(
    train_corpus: Corpus,
    val_corpus: Corpus,
    test_corpus: Corpus,
    members: list[str],
    k: int,
    config: TrainConfig,
    hidden: Sequence[int] = (100, 100),
) -> tuple[FusionParameters, EvalReport]:
    """Train the combiner on one split and evaluate on its test part."""
    task = train_corpus.records[0].task
    dims = fusion_dims(task.kind, len(members), k, m=task.num_choices, hidden=hidden)
    train_data, _ = build_training_data(train_corpus.records, members, k)
    val_data, _ = build_training_data(val_corpus.records, members, k)
    params = train(train_data, val_data, dims, config)
    return params, evaluate_records(test_corpus.records, members, params, k)


def run_split_protocol(
    corpus: Corpus,
    members: list[str] | None = None,
    repeats: int = 20,
    train_frac: float = 0.7,
    test_frac: float = 0.3,
    k: int = 1,
    seed: int = 0,
    config: TrainConfig | None = None,
    w1: float = 0.6,
    w2: float = 0.4,
    rule: FailureRule = FailureRule(),
) -> list[float]:
    """Repeated train/test protocol; returns the test accuracy per repeat.

    Each repeat splits the corpus train/test, carves a validation slice out
    of the training part for early stopping (and for pruning when no member
    list is pinned), trains the fusion net, and scores the test part.
    """
    _record_choice_count(corpus)
    outer = SplitSpec(train_frac, 0.0, test_frac, seed=seed, repeats=repeats)
    carve = SplitSpec(0.85, 0.15, 0.0, seed=seed)
    accuracies = []
    for repeat in range(repeats):
        train_all, _, test_part = split(corpus, outer, repeat=repeat)
        train_part, val_part, _ = split(train_all, carve, repeat=repeat)
        if members is None:
            failures = failure_matrix(val_part.records, corpus.model_ids, rule)
            scorer = CandidateScorer(
                failures,
                plurality_accuracy_fn(val_part.records, corpus.model_ids),
                w1=w1,
                w2=w2,
            )
            picked = brute_force_prune(scorer, k=1)[0].members(corpus.model_ids)
        else:
            picked = members
        cfg = config or TrainConfig(seed=seed + repeat)
        _, report = train_and_score_split(
            train_part, val_part, test_part, picked, k, cfg
        )
        log.info("repeat %d: members=%s accuracy=%.4f", repeat, picked, report.accuracy)
        accuracies.append(report.accuracy)
    return accuracies
