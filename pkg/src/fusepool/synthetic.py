"""Deterministic synthetic corpora for tests, demos, and pipeline dry runs."""
from __future__ import annotations

import random

from .corpus import Corpus, EpisodeRecord, RawPass, TaskKind


def _peaked(m: int, peak_index: int, peak: float) -> list[float]:
    rest = (1.0 - peak) / (m - 1)
    return [peak if i == peak_index else rest for i in range(m)]


def complementary_experts(
    n_episodes: int = 3000, n_choices: int = 4, seed: int = 0
) -> Corpus:
    """Three models with disjoint expertise on an MCQ task.

    Each episode has exactly one expert (rotating with the episode index)
    that answers correctly with high confidence 95% of the time; the other
    two confidently point at a wrong choice. A combiner that learns to spot
    the sharper confidence profile beats any single model and beats
    plurality voting, which mostly follows the two confident non-experts.
    """
    rng = random.Random(seed)
    model_ids = [f"expert-{i}" for i in range(3)]
    records = []
    for e in range(n_episodes):
        gold = rng.randrange(n_choices)
        expert = e % 3
        probs = {}
        for i, model in enumerate(model_ids):
            wrong = rng.choice([c for c in range(n_choices) if c != gold])
            if i == expert:
                target = gold if rng.random() < 0.95 else wrong
                probs[model] = _peaked(n_choices, target, 0.85)
            else:
                probs[model] = _peaked(n_choices, wrong, 0.70)
        records.append(
            EpisodeRecord(
                id=f"exp-{e}",
                task=TaskKind.mcq(n_choices),
                prompt=f"synthetic expert question {e}",
                ground_truth=gold,
                choices=[f"choice {c}" for c in range(n_choices)],
                provided_choice_probs=probs,
            )
        )
    return Corpus(records=records, model_ids=model_ids)


def separable_confidences(
    n_episodes: int = 600, n_choices: int = 4, seed: int = 0
) -> Corpus:
    """Fusion task solvable exactly: the summed confidence always peaks on gold."""
    rng = random.Random(seed)
    model_ids = ["sharp", "flat-a", "flat-b"]
    records = []
    for e in range(n_episodes):
        gold = rng.randrange(n_choices)
        probs = {
            "sharp": _peaked(n_choices, gold, 0.9),
            "flat-a": [1.0 / n_choices] * n_choices,
            "flat-b": [1.0 / n_choices] * n_choices,
        }
        records.append(
            EpisodeRecord(
                id=f"sep-{e}",
                task=TaskKind.mcq(n_choices),
                prompt=f"synthetic separable question {e}",
                ground_truth=gold,
                choices=[f"choice {c}" for c in range(n_choices)],
                provided_choice_probs=probs,
            )
        )
    return Corpus(records=records, model_ids=model_ids)


def correlated_pool(
    n_models: int = 8,
    n_episodes: int = 400,
    n_choices: int = 4,
    n_clones: int = 4,
    base_accuracy: float = 0.6,
    seed: int = 0,
) -> Corpus:
    """MCQ pool with engineered error correlations.

    The first ``n_clones`` models share one latent error pattern and fail
    together on the same episodes with the same wrong answer; the remaining
    models err independently. Teams drawn from the independent side are both
    more diverse and more accurate under plurality voting, so candidate
    diversity correlates positively with performance.
    """
    if not 2 <= n_clones <= n_models:
        raise ValueError("n_clones must be in [2, n_models]")
    rng = random.Random(seed)
    model_ids = [f"clone-{i}" for i in range(n_clones)] + [
        f"solo-{i}" for i in range(n_models - n_clones)
    ]
    records = []
    for e in range(n_episodes):
        gold = rng.randrange(n_choices)
        shared_wrong = rng.choice([c for c in range(n_choices) if c != gold])
        clones_fail = rng.random() >= base_accuracy
        probs = {}
        for model in model_ids:
            if model.startswith("clone-"):
                answer = shared_wrong if clones_fail else gold
            else:
                answer = (
                    gold
                    if rng.random() < base_accuracy
                    else rng.choice([c for c in range(n_choices) if c != gold])
                )
            probs[model] = _peaked(n_choices, answer, 0.7)
        records.append(
            EpisodeRecord(
                id=f"pool-{e}",
                task=TaskKind.mcq(n_choices),
                prompt=f"synthetic pool question {e}",
                ground_truth=gold,
                choices=[f"choice {c}" for c in range(n_choices)],
                provided_choice_probs=probs,
            )
        )
    return Corpus(records=records, model_ids=model_ids)


def oeq_pool(
    n_models: int = 3,
    n_episodes: int = 300,
    k: int = 5,
    seed: int = 0,
) -> Corpus:
    """Open-ended numeric task with K noisy chain-of-thought passes per model.

    Model reliability varies; wrong passes land on nearby numbers, and a
    small fraction of passes fail to parse, exercising the frequency-based
    confidence path end to end.
    """
    rng = random.Random(seed)
    model_ids = [f"solver-{i}" for i in range(n_models)]
    reliability = [0.75 - 0.15 * i for i in range(n_models)]
    records = []
    for e in range(n_episodes):
        gold = rng.randrange(10, 10_000)
        passes = {}
        for i, model in enumerate(model_ids):
            plist = []
            for _ in range(k):
                if rng.random() < 0.05:
                    plist.append(
                        RawPass(raw_text="I cannot settle on a number here.",
                                parsed=None, status="parse_failed")
                    )
                    continue
                value = gold if rng.random() < reliability[i] else gold + rng.choice(
                    [-3, -2, -1, 1, 2, 3]
                )
                plist.append(
                    RawPass(
                        raw_text=f"Working it through, the answer is {value}.",
                        parsed=str(value),
                        status="ok",
                    )
                )
            passes[model] = plist
        records.append(
            EpisodeRecord(
                id=f"oeq-{e}",
                task=TaskKind.oeq(),
                prompt=f"synthetic arithmetic question {e}",
                ground_truth=str(gold),
                passes=passes,
            )
        )
    return Corpus(records=records, model_ids=model_ids)
