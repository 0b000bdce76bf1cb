"""Command-line pipeline: harvest -> prune -> train-weighted -> evaluate,
plus diversity-report and summarize-prep side outputs.

Every stage reads and writes only its declared files, honors --seed for
reproducibility, and exits non-zero with an actionable message on error.
A JSON config file may supply defaults for any long flag; explicit flags
win.
"""
from __future__ import annotations

import argparse
import json
import logging
import random
import sys
from pathlib import Path

from .corpus import Corpus, SchemaError, SplitSpec, load_corpus, save_corpus, split
from .diversity import FailureRule, failure_matrix
from .evaluation import evaluate_records, train_and_score_split
from .fusion import TrainConfig, load_params, save_params
from .harvest import (
    AuthError,
    EndpointConfig,
    PromptTemplate,
    harvest,
    select_fraction,
)
from .pruning import (
    CandidateScorer,
    GaConfig,
    brute_force_prune,
    diversity_report,
    ga_prune,
    mask_bitstring,
    plurality_accuracy_fn,
    write_candidates_csv,
)
from .summary_prep import serialize_inputs

log = logging.getLogger(__name__)

GA_AUTO_THRESHOLD = 12  # pools above this are pruned genetically by default


def _add_split_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--train-frac", type=float, default=0.7)
    p.add_argument("--val-frac", type=float, default=0.15)
    p.add_argument("--test-frac", type=float, default=0.15)


def _add_task_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--task", choices=["mcq", "oeq", "gq"],
                   help="expected task kind; fails fast when the corpus differs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fusepool",
        description="Diversity-optimized LLM sub-ensemble selection and learned fusion.",
    )
    parser.add_argument("--config", help="JSON file of flag defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("harvest", help="collect K passes per model per query")
    p.add_argument("--corpus", required=True)
    _add_task_flag(p)
    p.add_argument("--endpoints", required=True, help="JSON list of endpoint configs")
    p.add_argument("--out-corpus", required=True)
    p.add_argument("--k-passes", type=int, default=1)
    p.add_argument("--alpha", type=float, default=100.0,
                   help="percent of queries to harvest")
    p.add_argument("--template-file", help="prompt template text file")
    p.add_argument("--max-in-flight", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("prune", help="rank candidate sub-ensembles")
    p.add_argument("--corpus", required=True)
    _add_task_flag(p)
    p.add_argument("--out", required=True)
    p.add_argument("--topk", type=int, default=5)
    p.add_argument("--w1", type=float, default=0.6)
    p.add_argument("--w2", type=float, default=0.4)
    p.add_argument("--method", choices=["auto", "bf", "ga"], default="auto")
    p.add_argument("--ga-population", type=int, default=50)
    p.add_argument("--ga-plateau", type=int, default=100)
    p.add_argument("--random-pick", type=int, default=None, metavar="SEED",
                   help="pick the ensemble uniformly among the top-k")
    p.add_argument("--tau", type=float, default=0.5,
                   help="unigram-recall failure threshold for generative tasks")
    p.add_argument("--seed", type=int, default=0)
    _add_split_flags(p)

    p = sub.add_parser("train-weighted", help="train the fusion combiner")
    p.add_argument("--corpus", required=True)
    _add_task_flag(p)
    p.add_argument("--out", required=True)
    p.add_argument("--k-passes", type=int, default=1)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    _add_split_flags(p)

    p = sub.add_parser("evaluate", help="score the trained combiner on the test split")
    p.add_argument("--corpus", required=True)
    _add_task_flag(p)
    p.add_argument("--out", required=True)
    p.add_argument("--k-passes", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    _add_split_flags(p)

    p = sub.add_parser("diversity-report",
                       help="per-candidate diversity/accuracy CSV and correlation")
    p.add_argument("--corpus", required=True)
    _add_task_flag(p)
    p.add_argument("--out", required=True)
    p.add_argument("--w1", type=float, default=0.6)
    p.add_argument("--w2", type=float, default=0.4)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--split", choices=["train", "val", "test", "all"], default="val")
    p.add_argument("--seed", type=int, default=0)
    _add_split_flags(p)

    p = sub.add_parser("summarize-prep",
                       help="serialize query+candidates for a summary combiner")
    p.add_argument("--corpus", required=True)
    _add_task_flag(p)
    p.add_argument("--out", required=True)
    p.add_argument("--budget", type=int, default=16396, help="token budget")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _task_of(corpus: Corpus, expected: str | None = None):
    kinds = {rec.task for rec in corpus.records}
    if len(kinds) != 1:
        raise ValueError(f"corpus mixes task kinds: {sorted(k.kind for k in kinds)}")
    task = kinds.pop()
    if expected is not None and task.kind != expected:
        raise ValueError(f"corpus holds {task.kind} records, --task asked for {expected}")
    return task


def _load_checked(args) -> Corpus:
    corpus = load_corpus(args.corpus)
    _task_of(corpus, getattr(args, "task", None))
    return corpus


def _split_spec(args) -> SplitSpec:
    return SplitSpec(args.train_frac, args.val_frac, args.test_frac, seed=args.seed)


def _require_artifact(path: Path, produced_by: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(
            f"missing artifact {path}: run the {produced_by} stage first"
        )
    return path


def cmd_harvest(args) -> int:
    corpus = _load_checked(args)
    with open(args.endpoints, encoding="utf-8") as fh:
        endpoints = [EndpointConfig(**cfg) for cfg in json.load(fh)]
    task = _task_of(corpus)
    template = None
    if args.template_file:
        text = Path(args.template_file).read_text(encoding="utf-8")
        template = PromptTemplate(task=task, template_text=text)
    if args.alpha < 100.0:
        chosen = select_fraction(corpus, args.alpha, seed=args.seed)
        subset = Corpus(
            records=[r for r in corpus.records if r.id in chosen],
            model_ids=list(corpus.model_ids),
        )
    else:
        subset = corpus
    harvested = harvest(
        subset,
        endpoints,
        k=args.k_passes,
        template=template,
        max_in_flight=args.max_in_flight,
        seed=args.seed,
    )
    by_id = {rec.id: rec for rec in harvested.records}
    merged = Corpus(
        records=[by_id.get(rec.id, rec) for rec in corpus.records],
        model_ids=harvested.model_ids,
    )
    save_corpus(merged, args.out_corpus)
    log.info("harvested %d records x %d models -> %s",
             len(harvested.records), len(endpoints), args.out_corpus)
    return 0


def _score_records(args, corpus: Corpus):
    """Records the pruning signals are computed on: the val split, falling
    back to the train split when no validation fraction was requested."""
    train_part, val_part, _ = split(corpus, _split_spec(args))
    return val_part.records if val_part.records else train_part.records


def _build_scorer(args, corpus: Corpus, records) -> CandidateScorer:
    task = _task_of(corpus)
    failures = failure_matrix(records, corpus.model_ids, FailureRule(tau=args.tau))
    accuracy_fn = (
        None if task.kind == "gq" else plurality_accuracy_fn(records, corpus.model_ids)
    )
    return CandidateScorer(failures, accuracy_fn, w1=args.w1, w2=args.w2)


def cmd_prune(args) -> int:
    corpus = _load_checked(args)
    if len(corpus.model_ids) < 2:
        raise ValueError("pruning needs a pool of at least 2 models")
    records = _score_records(args, corpus)
    scorer = _build_scorer(args, corpus, records)
    n = scorer.n_models
    method = args.method
    if method == "auto":
        method = "bf" if n <= GA_AUTO_THRESHOLD else "ga"
    if method == "bf":
        brute_force_prune(scorer, k=1)  # scores every candidate into the memo
        ranked = scorer.scored()
    else:
        config = GaConfig(
            population=args.ga_population, plateau_gens=args.ga_plateau, seed=args.seed
        )
        result = ga_prune(scorer, config, k=args.topk)
        log.info("GA stopped after %d generations, %d distinct teams scored",
                 result.generations, result.evaluations)
        ranked = scorer.scored()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_candidates_csv(out / "candidates.csv", ranked, n)
    top = ranked[: max(1, args.topk)]
    if args.random_pick is not None:
        pick = random.Random(args.random_pick).choice(top)
    else:
        pick = top[0]
    ensemble = {
        "model_ids": corpus.model_ids,
        "members": pick.members(corpus.model_ids),
        "mask": mask_bitstring(pick.mask, n),
        "size": pick.size,
        "focal_diversity": pick.focal_diversity,
        "val_accuracy": pick.val_accuracy,
        "fitness": pick.fitness,
        "method": method,
        "seed": args.seed,
    }
    with open(out / "ensemble.json", "w", encoding="utf-8") as fh:
        json.dump(ensemble, fh, indent=2)
    log.info("ranked %d candidates; selected %s", len(ranked), ensemble["members"])
    return 0


def _load_ensemble(out: Path) -> dict:
    path = _require_artifact(out / "ensemble.json", "prune")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def cmd_train_weighted(args) -> int:
    corpus = _load_checked(args)
    out = Path(args.out)
    ensemble = _load_ensemble(out)
    members = ensemble["members"]
    train_part, val_part, _ = split(corpus, _split_spec(args))
    config = TrainConfig(
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        seed=args.seed,
        optimizer=args.optimizer,
        early_stop_patience=args.patience,
    )
    params, val_report = train_and_score_split(
        train_part, val_part, val_part if val_part.records else train_part,
        members, args.k_passes, config,
    )
    save_params(params, out / "fusion_params.json")
    report = {
        "members": members,
        "dims": list(params.dims),
        "n_train": len(train_part.records),
        "n_val": len(val_part.records),
        "val_accuracy": val_report.accuracy,
        "seed": args.seed,
        "k_passes": args.k_passes,
    }
    with open(out / "train_report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
    log.info("trained fusion net %s; val accuracy %.4f", params.dims, val_report.accuracy)
    return 0


def cmd_evaluate(args) -> int:
    corpus = _load_checked(args)
    out = Path(args.out)
    ensemble = _load_ensemble(out)
    params = load_params(_require_artifact(out / "fusion_params.json", "train-weighted"))
    _, _, test_part = split(corpus, _split_spec(args))
    report = evaluate_records(test_part.records, ensemble["members"], params,
                              args.k_passes)
    with open(out / "predictions.jsonl", "w", encoding="utf-8") as fh:
        for row in report.predictions:
            fh.write(json.dumps(row, ensure_ascii=False))
            fh.write("\n")
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report.summary(), fh, indent=2)
    print(f"test accuracy {report.accuracy:.4f} over {report.n_episodes} episodes "
          f"(plurality {report.plurality_accuracy:.4f})")
    return 0


def cmd_diversity_report(args) -> int:
    corpus = _load_checked(args)
    if args.split == "all":
        records = corpus.records
    else:
        parts = dict(zip(("train", "val", "test"), split(corpus, _split_spec(args))))
        records = parts[args.split].records
    if not records:
        raise ValueError(f"the {args.split} split is empty; adjust the fractions")
    scorer = _build_scorer(args, corpus, records)
    failures = scorer.failures
    report = diversity_report(scorer)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    failures.to_csv(out / "failure_matrix.csv")
    write_candidates_csv(out / "diversity_report.csv", report.candidates, scorer.n_models)
    summary = {
        "n_candidates": len(report.candidates),
        "pearson_diversity_accuracy": report.pearson_rho,
        "split": args.split,
        "n_episodes": len(records),
    }
    with open(out / "diversity_report.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    print(f"{len(report.candidates)} candidates; "
          f"Pearson rho(diversity, accuracy) = {report.pearson_rho:.4f}")
    return 0


def cmd_summarize_prep(args) -> int:
    corpus = _load_checked(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ensemble_path = out / "ensemble.json"
    members = corpus.model_ids
    if ensemble_path.exists():
        with open(ensemble_path, encoding="utf-8") as fh:
            members = json.load(fh)["members"]
    n_written = 0
    with open(out / "summary_inputs.jsonl", "w", encoding="utf-8") as fh:
        for rec in corpus.records:
            texts = []
            used = []
            for m in members:
                for p in rec.passes.get(m, ()):
                    if p.status == "ok" and p.raw_text.strip():
                        texts.append(p.raw_text)
                        used.append(m)
                        break
            if not texts:
                log.warning("record %s: no usable candidate text; skipped", rec.id)
                continue
            serialized = serialize_inputs(rec.prompt, texts, max_tokens=args.budget)
            fh.write(json.dumps({
                "id": rec.id,
                "text": serialized.text,
                "question_span": list(serialized.question_span),
                "candidate_spans": [list(s) for s in serialized.candidate_spans],
                "model_tags": [list(t) for t in serialized.model_tags],
                "models": used,
            }, ensure_ascii=False))
            fh.write("\n")
            n_written += 1
    log.info("serialized %d records -> %s", n_written, out / "summary_inputs.jsonl")
    return 0


_COMMANDS = {
    "harvest": cmd_harvest,
    "prune": cmd_prune,
    "train-weighted": cmd_train_weighted,
    "evaluate": cmd_evaluate,
    "diversity-report": cmd_diversity_report,
    "summarize-prep": cmd_summarize_prep,
}


def _apply_config_defaults(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    if "--config" not in argv:
        return
    path = argv[argv.index("--config") + 1]
    with open(path, encoding="utf-8") as fh:
        defaults = json.load(fh)
    if not isinstance(defaults, dict):
        raise ValueError(f"config {path} must hold a JSON object")
    for sub_action in parser._subparsers._group_actions:  # noqa: SLF001
        for sub in sub_action.choices.values():
            sub.set_defaults(**{k.replace("-", "_"): v for k, v in defaults.items()})


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        _apply_config_defaults(parser, argv)
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except (SchemaError, AuthError, FileNotFoundError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
