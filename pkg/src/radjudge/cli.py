"""Command-line front end.

Every command is non-interactive, file-in file-out, and deterministic given
its manifest and cassette: randomness flows through --seed, judge traffic
through --replay/--record cassettes, and every output directory gets a
manifest.json describing the run.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .analysis import (
    AnalysisError,
    EnsembleModel,
    apply_ensemble,
    binned_error_means,
    correlate,
    export_sft,
    fit_linear_ensemble,
    save_sft,
)
from .corpus import (
    CorpusError,
    ERROR_COUNTS,
    SCALAR_SCORE,
    load_pairs,
    normalize_score,
    total_significant,
)
from .judge import API_KEY_ENV, HttpTransport, JudgeClient, JudgeError, ModelConfig, THINKING_LEVELS
from .metrics import MetricError, sweep
from .parse import ParseError, parse_assessment
from .pipeline import (
    InjectionRecord,
    PipelineError,
    evaluate_corpus,
    make_manifest,
    run_detection_study,
    run_injection,
    save_manifest,
    write_assessments_jsonl,
    write_binned_csv,
    write_category_f1_csv,
    write_correlations_csv,
    write_detection_csv,
    write_injections_jsonl,
    write_scores_csv,
    write_sweep_csv,
)
from .parse import ChangeDetail, ValidationVerdict
from .prompts import FEW_SHOT_MODES, FewShotConfig, PromptError, PromptVariant

METRIC_COLUMNS = ("green", "f1", "weighted", "ec", "vert")


def _add_io_flags(parser: argparse.ArgumentParser, corpus_required: bool = True) -> None:
    parser.add_argument("--corpus", type=Path, required=corpus_required,
                        help="pairs corpus, one JSON object per line")
    parser.add_argument("--out", type=Path, default=Path("out"),
                        help="output directory (created if missing)")
    parser.add_argument("--seed", type=int, default=0, help="seed for all randomness in this command")
    parser.add_argument("--strict", action="store_true",
                        help="exit nonzero on any per-row error instead of carrying on")


def _add_judge_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--replay", type=Path,
                        help="cassette to replay; offline, any miss is an error")
    parser.add_argument("--record", type=Path,
                        help="cassette to read through and append new responses to")
    parser.add_argument("--endpoint", help=f"chat-completions base URL; key read from ${API_KEY_ENV}")
    parser.add_argument("--model", default="gpt-4.1", help="model name sent to the endpoint")
    parser.add_argument("--thinking", choices=THINKING_LEVELS, default="none",
                        help="reasoning-effort level requested from the model")
    parser.add_argument("--temperature", type=float, default=0.0, help="sampling temperature")
    parser.add_argument("--max-output-tokens", type=int, default=4096,
                        help="completion token budget per request")
    parser.add_argument("--timeout", type=float, default=120.0, help="per-request timeout in seconds")
    parser.add_argument("--max-retries", type=int, default=3,
                        help="retries after a retryable transport failure")
    parser.add_argument("--max-in-flight", type=int, default=4,
                        help="maximum concurrent judge requests")


def _model_config(args: argparse.Namespace) -> ModelConfig:
    return ModelConfig(
        endpoint=str(args.endpoint) if args.endpoint else "",
        model_name=args.model,
        thinking_level=args.thinking,
        temperature=args.temperature,
        max_output_tokens=args.max_output_tokens,
        timeout=args.timeout,
        max_retries=args.max_retries,
    )


def _client(args: argparse.Namespace, parser_error) -> JudgeClient:
    if args.replay and (args.endpoint or args.record):
        parser_error("--replay excludes --endpoint/--record")
    if args.replay:
        return JudgeClient(cassette=args.replay, record=False)
    if args.endpoint:
        return JudgeClient(transport=HttpTransport(), cassette=args.record, record=bool(args.record))
    parser_error("need --replay for offline runs or --endpoint for live runs")


def _cassette_path(args: argparse.Namespace) -> Path | None:
    return args.replay or args.record


def _load_corpus(args: argparse.Namespace):
    result = load_pairs(args.corpus, strict=args.strict)
    if result.errors and not args.strict:
        print(f"skipped {result.skipped} malformed corpus lines", file=sys.stderr)
    return result.pairs


def _fewshot_config(args: argparse.Namespace) -> FewShotConfig | None:
    if not args.fewshot:
        return None
    return FewShotConfig(mode=args.fewshot, k=args.k, shot_source=args.shots, seed=args.seed)


def cmd_evaluate(args: argparse.Namespace) -> int:
    pairs = _load_corpus(args)
    variant = PromptVariant.load(args.variant)
    fewshot = _fewshot_config(args)
    client = _client(args, argparse.ArgumentParser(prog="radjudge evaluate").error)
    config = _model_config(args)
    rows = evaluate_corpus(pairs, variant, fewshot, client, config, max_in_flight=args.max_in_flight)
    manifest = make_manifest(
        command="evaluate",
        corpus_path=args.corpus,
        variant=variant.kind,
        fewshot={"mode": fewshot.mode, "k": fewshot.k, "seed": fewshot.seed} if fewshot else None,
        model=config,
        cassette_path=_cassette_path(args),
        seed=args.seed,
    )
    args.out.mkdir(parents=True, exist_ok=True)
    run_hash = manifest["manifest_hash"]
    write_assessments_jsonl(args.out / "assessments.jsonl", rows, run_hash)
    write_scores_csv(args.out / "scores.csv", rows, run_hash)
    save_manifest(args.out / "manifest.json", manifest)
    failures = sum(1 for row in rows if not row.ok)
    print(f"evaluated {len(rows)} pairs ({failures} failed) -> {args.out}")
    return 1 if failures and args.strict else 0


def _read_assessment_rows(path: Path) -> list[dict]:
    rows = []
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line))
    return rows


def _annotation_targets(pairs, mode: str) -> dict[str, float]:
    """pair_id -> target value derived from its annotation."""
    annotated = [p for p in pairs if p.annotation is not None]
    if not annotated:
        raise AnalysisError("corpus has no annotated pairs to correlate against")
    kinds = {p.annotation.kind for p in annotated}
    if mode == "auto":
        if len(kinds) > 1:
            raise AnalysisError(f"corpus mixes annotation kinds {sorted(kinds)}; pass --target explicitly")
        mode = "counts" if kinds == {ERROR_COUNTS} else "score"
    targets = {}
    for pair in annotated:
        if mode == "counts":
            if pair.annotation.kind != ERROR_COUNTS:
                continue
            targets[pair.id] = float(total_significant(pair.annotation))
        else:
            if pair.annotation.kind != SCALAR_SCORE:
                continue
            targets[pair.id] = normalize_score(pair.annotation.raw_score, pair.annotation.scale_max)
    if not targets:
        raise AnalysisError(f"no annotations usable as {mode!r} targets")
    return targets


def cmd_correlate(args: argparse.Namespace) -> int:
    pairs = _load_corpus(args)
    rows = _read_assessment_rows(args.scores)
    targets = _annotation_targets(pairs, args.target)
    kept = [row for row in rows if row.get("pair_id") in targets]
    if len(kept) < 2:
        raise AnalysisError("fewer than 2 assessment rows match annotated corpus pairs")
    target_vector = [targets[row["pair_id"]] for row in kept]

    scores: dict[str, list[float | None]] = {}
    for metric in METRIC_COLUMNS:
        values = [row["scores"].get(metric) if row.get("scores") else None for row in kept]
        present = [v for v in values if v is not None]
        if len(present) >= 2 and len(set(present)) > 1:
            scores[metric] = values
    if not scores:
        raise AnalysisError("no metric column has at least 2 distinct values")
    results = correlate(scores, target_vector)

    manifest = make_manifest(
        command="correlate",
        corpus_path=args.corpus,
        seed=args.seed,
        extra={"scores": args.scores.name, "target": args.target},
    )
    args.out.mkdir(parents=True, exist_ok=True)
    run_hash = manifest["manifest_hash"]
    write_correlations_csv(args.out / "correlations.csv", results, run_hash)

    if args.binned:
        human = [int(targets[row["pair_id"]]) for row in kept if row.get("scores")]
        judge = [row["scores"]["ec"] for row in kept if row.get("scores")]
        write_binned_csv(args.out / "binned_means.csv", binned_error_means(human, judge), run_hash)
    if args.category_f1:
        from .metrics import category_f1 as _category_f1

        by_id = {p.id: p for p in pairs}
        humans, judges = [], []
        for row in kept:
            annotation = by_id[row["pair_id"]].annotation
            if annotation.kind != ERROR_COUNTS or not row.get("assessment"):
                continue
            humans.append(annotation)
            judges.append(row["assessment"]["significant"])
        if not humans:
            raise AnalysisError("--category-f1 needs error-count annotations and parsed assessments")
        write_category_f1_csv(args.out / "category_f1.csv", _category_f1(humans, judges), run_hash)

    save_manifest(args.out / "manifest.json", manifest)
    print(f"correlated {len(scores)} metrics over {len(kept)} rows -> {args.out}")
    return 0


def _feature_table(paths: list[Path], metrics: list[str]) -> tuple[list[str], dict[str, list[float]]]:
    """Aligned feature vectors from one or more assessment files.

    Single file: features named by metric. Several files: "{stem}:{metric}".
    Rows are aligned by pair_id; rows missing any feature are dropped.
    """
    tables = []
    for path in paths:
        rows = _read_assessment_rows(path)
        table = {}
        for row in rows:
            if row.get("scores"):
                table[row["pair_id"]] = row["scores"]
        tables.append((path.stem, table))
    shared_ids = [pid for pid in tables[0][1] if all(pid in table for _, table in tables)]
    features: dict[str, list[float]] = {}
    kept_ids = []
    for pid in shared_ids:
        values = {}
        complete = True
        for stem, table in tables:
            for metric in metrics:
                value = table[pid].get(metric)
                if value is None:
                    complete = False
                    break
                name = metric if len(tables) == 1 else f"{stem}:{metric}"
                values[name] = float(value)
            if not complete:
                break
        if complete:
            kept_ids.append(pid)
            for name, value in values.items():
                features.setdefault(name, []).append(value)
    if not kept_ids:
        raise AnalysisError("no rows with all requested feature metrics present")
    return kept_ids, features


def cmd_ensemble_fit(args: argparse.Namespace) -> int:
    pairs = _load_corpus(args)
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    for metric in metrics:
        if metric not in METRIC_COLUMNS:
            raise AnalysisError(f"unknown metric {metric!r}; choose from {METRIC_COLUMNS}")
    ids, features = _feature_table(args.scores, metrics)
    targets_by_id = _annotation_targets(pairs, args.target)
    kept = [i for i, pid in enumerate(ids) if pid in targets_by_id]
    if not kept:
        raise AnalysisError("no feature rows match annotated corpus pairs")
    features = {name: [vector[i] for i in kept] for name, vector in features.items()}
    targets = [targets_by_id[ids[i]] for i in kept]
    model = fit_linear_ensemble(features, targets)
    args.out.mkdir(parents=True, exist_ok=True)
    model.save(args.out / "ensemble.json")
    manifest = make_manifest(
        command="ensemble-fit",
        corpus_path=args.corpus,
        seed=args.seed,
        extra={"scores": [p.name for p in args.scores], "metrics": metrics, "target": args.target},
    )
    save_manifest(args.out / "manifest.json", manifest)
    print(f"fit {len(model.feature_names)} coefficients on {model.train_n} rows -> {args.out}")
    return 0


def cmd_ensemble_apply(args: argparse.Namespace) -> int:
    model = EnsembleModel.load(args.model_json)
    metrics = sorted({name.split(":", 1)[-1] for name in model.feature_names})
    ids, features = _feature_table(args.scores, metrics)
    missing = [name for name in model.feature_names if name not in features]
    if missing:
        raise AnalysisError(f"feature files missing columns {missing}")
    features = {name: features[name] for name in model.feature_names}
    predictions = apply_ensemble(model, features)
    manifest = make_manifest(
        command="ensemble-apply",
        seed=args.seed,
        extra={"model_json": args.model_json.name, "scores": [p.name for p in args.scores]},
    )
    args.out.mkdir(parents=True, exist_ok=True)
    run_hash = manifest["manifest_hash"]
    with (args.out / "ensemble_scores.csv").open("w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["pair_id", "ensemble", "manifest_hash"])
        for pid, prediction in zip(ids, predictions):
            writer.writerow([pid, f"{prediction:.6f}", run_hash])
    save_manifest(args.out / "manifest.json", manifest)
    print(f"scored {len(ids)} rows -> {args.out}")
    return 0


def cmd_inject(args: argparse.Namespace) -> int:
    pairs = _load_corpus(args)
    client = _client(args, argparse.ArgumentParser(prog="radjudge inject").error)
    config = _model_config(args)
    validation_config = config
    if args.validation_model:
        validation_config = ModelConfig(
            endpoint=config.endpoint,
            model_name=args.validation_model,
            thinking_level=config.thinking_level,
            temperature=config.temperature,
            max_output_tokens=config.max_output_tokens,
            timeout=config.timeout,
            max_retries=config.max_retries,
        )
    records = run_injection(pairs, args.error_type, args.k, client, config,
                            validation_config=validation_config)
    manifest = make_manifest(
        command="inject",
        corpus_path=args.corpus,
        model=config,
        validation_model=validation_config,
        cassette_path=_cassette_path(args),
        seed=args.seed,
        extra={"error_type": args.error_type, "k": args.k},
    )
    args.out.mkdir(parents=True, exist_ok=True)
    write_injections_jsonl(args.out / "injections.jsonl", records, manifest["manifest_hash"])
    save_manifest(args.out / "manifest.json", manifest)
    excluded = sum(1 for r in records if r.status == "excluded")
    print(f"injected {len(records)} pairs ({excluded} excluded) -> {args.out}")
    return 1 if excluded and args.strict else 0


def _load_injections(path: Path) -> list[InjectionRecord]:
    records = []
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            records.append(
                InjectionRecord(
                    pair_id=obj["pair_id"],
                    error_type=obj["error_type"],
                    k_requested=obj["k_requested"],
                    attempts=obj["attempts"],
                    status=obj["status"],
                    modified_report=obj["modified_report"],
                    changes=[ChangeDetail(**c) for c in obj["changes"]],
                    verdicts=[ValidationVerdict(v["plausible"], v["reason"]) for v in obj["verdicts"]],
                )
            )
    return records


def cmd_detect(args: argparse.Namespace) -> int:
    pairs = _load_corpus(args)
    injections = [r for r in _load_injections(args.injections) if r.status == "accepted"]
    if not injections:
        raise PipelineError("no accepted injection records to evaluate")
    variant = PromptVariant.load(args.variant)
    client = _client(args, argparse.ArgumentParser(prog="radjudge detect").error)
    config = _model_config(args)
    table = run_detection_study(injections, pairs, variant, client, config,
                                max_in_flight=args.max_in_flight)
    manifest = make_manifest(
        command="detect",
        corpus_path=args.corpus,
        variant=variant.kind,
        model=config,
        cassette_path=_cassette_path(args),
        seed=args.seed,
        extra={"injections": args.injections.name},
    )
    args.out.mkdir(parents=True, exist_ok=True)
    run_hash = manifest["manifest_hash"]
    write_detection_csv(args.out / "detection.csv", table, run_hash)
    write_category_f1_csv(args.out / "detection_category_f1.csv", table.category_f1, run_hash)
    write_assessments_jsonl(args.out / "detection_assessments.jsonl", table.evaluations, run_hash)
    save_manifest(args.out / "manifest.json", manifest)
    failures = sum(1 for row in table.evaluations if not row.ok)
    print(f"detection study over {len(table.evaluations)} modified reports ({failures} failed) -> {args.out}")
    return 1 if failures and args.strict else 0


def cmd_simulate(args: argparse.Namespace) -> int:
    lo_text, _, hi_text = args.range.partition(":")
    try:
        x_range = (int(lo_text), int(hi_text))
    except ValueError as exc:
        raise MetricError(f"bad --range {args.range!r}; expected LO:HI") from exc
    points = sweep(args.metric, args.vary, args.fixed, x_range)
    args.out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(args.out / "sweep.csv", points, args.metric)
    manifest = make_manifest(
        command="simulate",
        seed=args.seed,
        extra={"metric": args.metric, "vary": args.vary, "fixed": args.fixed, "range": args.range},
    )
    save_manifest(args.out / "manifest.json", manifest)
    print(f"swept {len(points)} points -> {args.out}")
    return 0


def cmd_export_sft(args: argparse.Namespace) -> int:
    pairs = _load_corpus(args)
    annotated = [p for p in pairs if p.annotation is not None]
    records = export_sft(annotated, seed=args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    save_sft(args.out / "sft.jsonl", records)
    manifest = make_manifest(command="export-sft", corpus_path=args.corpus, seed=args.seed)
    save_manifest(args.out / "manifest.json", manifest)
    n_val = sum(1 for r in records if r["split"] == "val")
    print(f"exported {len(records)} records ({n_val} val) -> {args.out}")
    return 0


def cmd_parse_check(args: argparse.Namespace) -> int:
    raw = Path(args.input).read_text(encoding="utf-8")
    assessment = parse_assessment(raw, expect_score=args.expect_score, strict=args.strict)
    print(json.dumps(assessment.to_json_dict(), indent=2, ensure_ascii=False))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radjudge",
        description="Reference-based radiology report evaluation with LLM judges.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("evaluate", help="judge every corpus pair and emit scores")
    _add_io_flags(p)
    _add_judge_flags(p)
    p.add_argument("--variant", choices=("green", "vert", "formula", "rubric"), default="vert",
                   help="judge prompt variant")
    p.add_argument("--fewshot", choices=FEW_SHOT_MODES, help="few-shot mode; omit for zero-shot")
    p.add_argument("--k", type=int, default=None, help="shot count for the random_k mode")
    p.add_argument("--shots", type=Path, help="shot-source corpus for corpus-backed few-shot modes")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("correlate", help="rank-correlate judge scores with annotations")
    _add_io_flags(p)
    p.add_argument("--scores", type=Path, required=True, help="assessments JSONL from evaluate")
    p.add_argument("--target", choices=("auto", "counts", "score"), default="auto",
                   help="annotation signal to correlate against")
    p.add_argument("--binned", action="store_true",
                   help="also write binned_means.csv (mean judge errors per human error total)")
    p.add_argument("--category-f1", action="store_true",
                   help="also write category_f1.csv (per-category error-count F1)")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("ensemble-fit", help="fit a linear ensemble of metric scores")
    _add_io_flags(p)
    p.add_argument("--scores", type=Path, action="append", required=True,
                   help="assessments JSONL; repeat for multi-model ensembles")
    p.add_argument("--metrics", default="green,f1,weighted,ec,vert",
                   help="comma-separated metric columns to use as features")
    p.add_argument("--target", choices=("auto", "counts", "score"), default="auto",
                   help="annotation signal used as the regression target")
    p.set_defaults(func=cmd_ensemble_fit)

    p = sub.add_parser("ensemble-apply", help="apply a fitted ensemble to score files")
    _add_io_flags(p, corpus_required=False)
    p.add_argument("--model-json", type=Path, required=True, help="ensemble.json from ensemble-fit")
    p.add_argument("--scores", type=Path, action="append", required=True,
                   help="assessments JSONL; repeat to match the fitted features")
    p.set_defaults(func=cmd_ensemble_apply)

    p = sub.add_parser("inject", help="inject k errors of one type into each reference report")
    _add_io_flags(p)
    _add_judge_flags(p)
    p.add_argument("--error-type", choices=("a", "b"), required=True,
                   help="a = false finding, b = omitted finding")
    p.add_argument("--k", type=int, choices=(1, 2, 3), required=True, help="errors per report")
    p.add_argument("--validation-model", help="model name for the plausibility check, if different")
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("detect", help="judge injected reports and compare against ground truth")
    _add_io_flags(p)
    _add_judge_flags(p)
    p.add_argument("--injections", type=Path, required=True, help="injections JSONL from inject")
    p.add_argument("--variant", choices=("green", "vert", "formula", "rubric"), default="green",
                   help="judge prompt variant for detection")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("simulate", help="sweep a structural metric along S or TP")
    _add_io_flags(p, corpus_required=False)
    p.add_argument("--metric", choices=("green", "f1"), required=True, help="metric to sweep")
    p.add_argument("--vary", choices=("S", "TP"), required=True, help="axis to vary")
    p.add_argument("--fixed", type=int, required=True, help="value of the non-varying count")
    p.add_argument("--range", required=True, help="inclusive LO:HI range for the varied count")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("export-sft", help="emit chat-format fine-tuning records from scalar annotations")
    _add_io_flags(p)
    p.set_defaults(func=cmd_export_sft)

    p = sub.add_parser("parse-check", help="parse one raw judge response and print the result")
    _add_io_flags(p, corpus_required=False)
    p.add_argument("--input", type=Path, required=True, help="file holding one raw judge response")
    p.add_argument("--expect-score", action="store_true",
                   help="require the overall-score section (non-GREEN variants)")
    p.set_defaults(func=cmd_parse_check)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CorpusError, PromptError, ParseError, MetricError, AnalysisError,
            PipelineError, JudgeError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
