"""Sub-ensemble search over the 2^N - N - 1 candidate teams.

Candidates are bitmasks over the model pool (bit i set = model i included,
size >= 2). Each is scored by a convex combination of focal diversity and
plurality-vote validation accuracy; generative tasks have no validation
accuracy and score on diversity alone. The exact search enumerates every
mask; the genetic search evolves bitmask chromosomes with elitist selection,
uniform crossover, and per-bit mutation, memoizing fitness per mask.
"""
from __future__ import annotations

import csv
import random
from dataclasses import dataclass
from collections.abc import Callable, Iterator, Sequence

import numpy as np

from .answers import canonical_answer, model_prediction
from .corpus import EpisodeRecord
from .diversity import FailureMatrix, focal_diversity
from .metrics import pearson

BRUTE_FORCE_MAX_POOL = 22


def candidate_count(n: int) -> int:
    """Number of candidate teams of size >= 2 from a pool of n models."""
    if n < 2:
        raise ValueError("pool must have at least 2 models")
    return 2**n - n - 1


def enumerate_candidates(n: int) -> Iterator[int]:
    """Every subset mask with at least two bits set, ascending."""
    if n < 2:
        raise ValueError("pool must have at least 2 models")
    for mask in range(3, 2**n):
        if mask.bit_count() >= 2:
            yield mask


def mask_members(mask: int, model_ids: Sequence[str]) -> list[str]:
    return [m for i, m in enumerate(model_ids) if mask >> i & 1]


def mask_bitstring(mask: int, n: int) -> str:
    """Bit i of the mask rendered at position i (pool order)."""
    return "".join("1" if mask >> i & 1 else "0" for i in range(n))


def fitness(
    lam: float, val_accuracy: float | None, w1: float = 0.6, w2: float = 0.4
) -> float:
    """Convex combination w1 * diversity + w2 * accuracy.

    Without a validation accuracy (generative tasks) the score is the
    diversity alone, i.e. w1 is treated as 1.
    """
    for name, w in (("w1", w1), ("w2", w2)):
        if not 0.0 <= w <= 1.0:
            raise ValueError(f"{name}={w} outside [0, 1]")
    if abs(w1 + w2 - 1.0) > 1e-9:
        raise ValueError(f"weights sum to {w1 + w2}, expected 1")
    if val_accuracy is None:
        return lam
    return w1 * lam + w2 * val_accuracy


@dataclass(frozen=True)
class EnsembleCandidate:
    mask: int
    size: int
    focal_diversity: float
    val_accuracy: float | None
    fitness: float

    def members(self, model_ids: Sequence[str]) -> list[str]:
        return mask_members(self.mask, model_ids)


def _rank_key(c: EnsembleCandidate) -> tuple:
    # Higher fitness first; ties to the smaller, lower-mask team.
    return (-c.fitness, c.size, c.mask)


class VoteTable:
    """Per-model predictions coded as small ints for fast plurality accuracy.

    Each episode gets its own answer codebook; a code of -1 marks a model
    with no usable prediction, and a gold answer nobody voted for gets a
    sentinel code that no vote can match.
    """

    def __init__(self, records: Sequence[EpisodeRecord], model_ids: Sequence[str]) -> None:
        n = len(model_ids)
        self.codes = np.full((len(records), n), -1, dtype=np.int64)
        self.gold = np.full(len(records), -2, dtype=np.int64)
        for i, rec in enumerate(records):
            if rec.task.kind == "gq":
                raise ValueError("validation accuracy is not defined for gq tasks")
            book: dict = {}
            for j, model in enumerate(model_ids):
                pred = model_prediction(rec, model)
                if pred is None:
                    continue
                key = pred if rec.task.is_mcq else canonical_answer(pred)
                self.codes[i, j] = book.setdefault(key, len(book))
            gold_key = (
                rec.ground_truth
                if rec.task.is_mcq
                else canonical_answer(rec.ground_truth)
            )
            if gold_key in book:
                self.gold[i] = book[gold_key]
        self.n_codes = int(self.codes.max()) + 1 if len(records) else 1

    def plurality_accuracy(self, member_idx: Sequence[int]) -> float:
        """Plurality vote over the member columns; ties go to the lowest-index
        member, episodes where every member abstained count as wrong."""
        codes = self.codes[:, list(member_idx)]
        n_rows = codes.shape[0]
        if n_rows == 0:
            return 0.0
        counts = np.zeros((n_rows, max(1, self.n_codes)), dtype=np.int64)
        rows, cols = np.nonzero(codes >= 0)
        np.add.at(counts, (rows, codes[rows, cols]), 1)
        top = counts.max(axis=1)
        chosen = np.full(n_rows, -3, dtype=np.int64)
        row_idx = np.arange(n_rows)
        for s in range(codes.shape[1]):
            vote = codes[:, s]
            valid = vote >= 0
            tally = np.zeros(n_rows, dtype=np.int64)
            tally[valid] = counts[row_idx[valid], vote[valid]]
            take = valid & (chosen == -3) & (tally == top)
            chosen[take] = vote[take]
        return float(np.mean(chosen == self.gold))


def candidate_val_accuracy(
    mask: int, records: Sequence[EpisodeRecord], model_ids: Sequence[str]
) -> float:
    """Plurality-vote accuracy of the masked team on the given episodes.

    Votes are the members' single predictions; ties go to the lowest-index
    member. Not defined for generative tasks.
    """
    if not records:
        return 0.0
    table = VoteTable(records, model_ids)
    return table.plurality_accuracy(
        [i for i in range(len(model_ids)) if mask >> i & 1]
    )


class CandidateScorer:
    """Memoized candidate scoring shared by both search strategies.

    ``accuracy_fn`` maps a mask to plurality validation accuracy; pass None
    for generative tasks, where fitness is the focal diversity alone.
    """

    def __init__(
        self,
        failures: FailureMatrix,
        accuracy_fn: Callable[[int], float] | None = None,
        w1: float = 0.6,
        w2: float = 0.4,
    ) -> None:
        fitness(0.0, None if accuracy_fn is None else 0.0, w1, w2)  # validate weights
        self.failures = failures
        self.accuracy_fn = accuracy_fn
        self.w1 = w1
        self.w2 = w2
        self._memo: dict[int, EnsembleCandidate] = {}

    @property
    def n_models(self) -> int:
        return len(self.failures.model_ids)

    @property
    def evaluations(self) -> int:
        """Distinct masks scored so far."""
        return len(self._memo)

    def score(self, mask: int) -> EnsembleCandidate:
        cached = self._memo.get(mask)
        if cached is not None:
            return cached
        members = mask_members(mask, self.failures.model_ids)
        if len(members) < 2:
            raise ValueError(f"mask {mask:#x} has fewer than 2 members")
        lam = focal_diversity(self.failures, members)
        acc = self.accuracy_fn(mask) if self.accuracy_fn is not None else None
        cand = EnsembleCandidate(
            mask=mask,
            size=len(members),
            focal_diversity=lam,
            val_accuracy=acc,
            fitness=fitness(lam, acc, self.w1, self.w2),
        )
        self._memo[mask] = cand
        return cand

    def scored(self) -> list[EnsembleCandidate]:
        return sorted(self._memo.values(), key=_rank_key)


def plurality_accuracy_fn(
    records: Sequence[EpisodeRecord], model_ids: Sequence[str]
) -> Callable[[int], float]:
    """Mask-to-accuracy closure over a vote table built once."""
    table = VoteTable(records, model_ids)
    n = len(model_ids)

    def accuracy(mask: int) -> float:
        return table.plurality_accuracy([i for i in range(n) if mask >> i & 1])

    return accuracy


def brute_force_prune(scorer: CandidateScorer, k: int = 1) -> list[EnsembleCandidate]:
    """Exact top-k by fitness over every candidate mask."""
    n = scorer.n_models
    if n > BRUTE_FORCE_MAX_POOL:
        raise ValueError(
            f"pool of {n} models means {candidate_count(n)} candidates; "
            "use ga_prune for pools this large"
        )
    ranked = sorted(
        (scorer.score(mask) for mask in enumerate_candidates(n)), key=_rank_key
    )
    return ranked[:k]


@dataclass(frozen=True)
class GaConfig:
    population: int = 50
    mutation_rate: float | None = None  # None: 1 / pool size
    elite_frac: float = 0.2
    plateau_gens: int = 100
    max_gens: int = 2000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.population < 4:
            raise ValueError("population must be >= 4")
        if self.mutation_rate is not None and not 0.0 < self.mutation_rate < 1.0:
            raise ValueError("mutation_rate must be in (0, 1)")
        if not 0.0 < self.elite_frac <= 1.0:
            raise ValueError("elite_frac must be in (0, 1]")
        if self.plateau_gens < 1 or self.max_gens < 1:
            raise ValueError("plateau_gens and max_gens must be >= 1")


@dataclass
class GaResult:
    top: list[EnsembleCandidate]
    generations: int
    evaluations: int  # distinct masks scored during this run
    plateau_terminated: bool


def _repair(mask: int, n: int, rng: random.Random) -> int:
    # Teams need at least two members; set two distinct random bits.
    if mask.bit_count() >= 2:
        return mask
    i, j = rng.sample(range(n), 2)
    return mask | (1 << i) | (1 << j)


def _mutate(mask: int, n: int, rate: float, rng: random.Random) -> int:
    for i in range(n):
        if rng.random() < rate:
            mask ^= 1 << i
    return mask


def ga_prune(scorer: CandidateScorer, config: GaConfig, k: int = 1) -> GaResult:
    """Genetic search for high-fitness teams.

    Elites survive each generation unchanged; offspring come from uniform
    crossover between random elites followed by per-bit mutation, with
    undersized chromosomes repaired. Stops when the best fitness has not
    improved for ``plateau_gens`` generations or at ``max_gens``. Returns the
    k best distinct candidates ever evaluated.
    """
    if config.population < k:
        raise ValueError("population must be >= k")
    n = scorer.n_models
    rng = random.Random(config.seed)
    rate = config.mutation_rate if config.mutation_rate is not None else 1.0 / n

    population = [
        _repair(rng.getrandbits(n), n, rng) for _ in range(config.population)
    ]
    n_elite = max(2, round(config.population * config.elite_frac))
    visited: dict[int, EnsembleCandidate] = {}
    best: EnsembleCandidate | None = None
    stagnant = 0
    generations = 0
    plateau_terminated = False

    for generations in range(1, config.max_gens + 1):
        scored = [scorer.score(m) for m in population]
        visited.update((c.mask, c) for c in scored)
        ranked = sorted(scored, key=_rank_key)
        gen_best = ranked[0]
        if best is None or gen_best.fitness > best.fitness:
            best = gen_best
            stagnant = 0
        else:
            stagnant += 1
        if stagnant >= config.plateau_gens:
            plateau_terminated = True
            break
        elites = ranked[:n_elite]
        offspring: list[int] = []
        while len(offspring) < config.population - n_elite:
            p1 = rng.choice(elites).mask
            p2 = rng.choice(elites).mask
            keep = rng.getrandbits(n)
            child = (p1 & keep) | (p2 & ~keep)
            child = _mutate(child, n, rate, rng)
            offspring.append(_repair(child, n, rng))
        population = [e.mask for e in elites] + offspring

    top = sorted(visited.values(), key=_rank_key)[:k]
    return GaResult(
        top=top,
        generations=generations,
        evaluations=len(visited),
        plateau_terminated=plateau_terminated,
    )


def write_candidates_csv(
    path: str, candidates: Sequence[EnsembleCandidate], n_models: int
) -> None:
    """Ranked CSV: mask, size, lambda, val_accuracy, fitness."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mask", "size", "lambda", "val_accuracy", "fitness"])
        for c in candidates:
            writer.writerow(
                [
                    mask_bitstring(c.mask, n_models),
                    c.size,
                    f"{c.focal_diversity:.6f}",
                    "" if c.val_accuracy is None else f"{c.val_accuracy:.6f}",
                    f"{c.fitness:.6f}",
                ]
            )


@dataclass
class DiversityReport:
    candidates: list[EnsembleCandidate]
    pearson_rho: float  # correlation of diversity with accuracy, NaN for gq


def diversity_report(scorer: CandidateScorer) -> DiversityReport:
    """Score every candidate and correlate diversity with vote accuracy."""
    ranked = brute_force_prune(scorer, k=candidate_count(scorer.n_models))
    accs = [c.val_accuracy for c in ranked if c.val_accuracy is not None]
    if len(accs) == len(ranked) and len(ranked) >= 2:
        rho = pearson([c.focal_diversity for c in ranked], accs)
    else:
        rho = float("nan")
    return DiversityReport(candidates=ranked, pearson_rho=rho)
