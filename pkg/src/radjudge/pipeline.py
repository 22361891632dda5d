"""End-to-end orchestration: corpus -> prompts -> judge -> parse -> scores,
plus the error-injection loop and the detection study built on top of it.

Every run writes a manifest JSON describing its inputs (corpus hash, prompt
variant, model config, cassette, seed).  The manifest hash excludes the
timestamp, so reruns of identical inputs produce identical hashes, and output
rows embed that hash so a results file can always be traced to its manifest.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Sequence

from .analysis import BinnedMeansTable, CorrelationResult
from .corpus import ReportPair, with_candidate
from .judge import JudgeClient, JudgeRequest, ModelConfig
from .metrics import CategoryF1Report, ScoreBundle, category_f1, scores_from_assessment
from .parse import (
    ChangeDetail,
    JudgeAssessment,
    ParseError,
    ValidationVerdict,
    parse_assessment,
    parse_injection_response,
    parse_validation_response,
)
from .corpus import ExpertAnnotation
from .prompts import (
    FewShotConfig,
    PromptVariant,
    render_few_shot,
    render_injection_prompt,
    render_validation_prompt,
    render_zero_shot,
)

MAX_INJECTION_ATTEMPTS = 5


class PipelineError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# manifest


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def make_manifest(
    command: str,
    corpus_path: str | Path | None = None,
    variant: str | None = None,
    fewshot: Mapping | None = None,
    model: ModelConfig | None = None,
    validation_model: ModelConfig | None = None,
    cassette_path: str | Path | None = None,
    seed: int = 0,
    extra: Mapping | None = None,
) -> dict:
    manifest: dict = {
        "command": command,
        "corpus_path": str(corpus_path) if corpus_path else None,
        "corpus_hash": file_sha256(corpus_path) if corpus_path else None,
        "variant": variant,
        "fewshot": dict(fewshot) if fewshot else None,
        "model": model.to_json_dict() if model else None,
        "validation_model": validation_model.to_json_dict() if validation_model else None,
        "cassette_path": str(cassette_path) if cassette_path else None,
        "seed": seed,
        "extra": dict(extra) if extra else None,
    }
    manifest["manifest_hash"] = manifest_hash(manifest)
    manifest["timestamp"] = datetime.now(timezone.utc).isoformat()
    return manifest


# location-dependent fields; content identity comes from corpus_hash instead
_VOLATILE_MANIFEST_KEYS = ("timestamp", "manifest_hash", "corpus_path", "cassette_path")


def manifest_hash(manifest: Mapping) -> str:
    """Hash of the manifest content, excluding volatile/location fields."""
    stable = {k: v for k, v in manifest.items() if k not in _VOLATILE_MANIFEST_KEYS}
    canonical = json.dumps(stable, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def save_manifest(path: str | Path, manifest: Mapping) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# corpus evaluation


@dataclass
class EvaluationRow:
    pair_id: str
    raw_response: str
    assessment: JudgeAssessment | None
    scores: ScoreBundle | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_json_dict(self) -> dict:
        warnings = list(self.assessment.parse_warnings) if self.assessment else []
        if self.error:
            warnings = warnings + [self.error]
        return {
            "pair_id": self.pair_id,
            "raw_response": self.raw_response,
            "assessment": self.assessment.to_json_dict() if self.assessment else None,
            "scores": self.scores.to_json_dict() if self.scores else None,
            "warnings": warnings,
            "error": self.error,
        }


def evaluate_corpus(
    pairs: Sequence[ReportPair],
    variant: PromptVariant,
    fewshot: FewShotConfig | None,
    client: JudgeClient,
    config: ModelConfig,
    max_in_flight: int = 4,
) -> list[EvaluationRow]:
    """Judge every pair; one row per pair, parse/judge failures included.

    Resumption falls out of the cassette: pairs answered by a previous run
    hit the cache and cost zero judge calls.
    """
    requests = []
    for pair in pairs:
        if fewshot is not None:
            prompt = render_few_shot(variant, fewshot, pair)
        else:
            prompt = render_zero_shot(variant, pair)
        requests.append(JudgeRequest(user=prompt, config=config, tag=pair.id))
    responses = client.complete_batch(requests, max_in_flight=max_in_flight)

    expect_score = variant.kind != "GREEN"
    rows = []
    for pair, response in zip(pairs, responses):
        if not response.ok:
            rows.append(EvaluationRow(pair.id, "", None, None, error=f"judge: {response.error}"))
            continue
        try:
            assessment = parse_assessment(response.raw_text, expect_score=expect_score)
        except ParseError as exc:
            rows.append(
                EvaluationRow(pair.id, response.raw_text, None, None, error=f"parse: {exc}")
            )
            continue
        rows.append(
            EvaluationRow(pair.id, response.raw_text, assessment, scores_from_assessment(assessment))
        )
    return rows


# ---------------------------------------------------------------------------
# error injection


@dataclass
class InjectionRecord:
    pair_id: str
    error_type: str
    k_requested: int
    attempts: int
    status: str  # "accepted" | "excluded"
    modified_report: str
    changes: list[ChangeDetail] = field(default_factory=list)
    verdicts: list[ValidationVerdict] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.status not in ("accepted", "excluded"):
            raise PipelineError(f"bad status {self.status!r}")
        if not 1 <= self.attempts <= MAX_INJECTION_ATTEMPTS:
            raise PipelineError(f"attempts {self.attempts} outside [1, {MAX_INJECTION_ATTEMPTS}]")
        if self.status == "accepted":
            if not self.verdicts or not self.verdicts[-1].plausible:
                raise PipelineError("accepted record requires a plausible final verdict")
            if len(self.changes) != self.k_requested:
                raise PipelineError(
                    f"accepted record has {len(self.changes)} changes, expected {self.k_requested}"
                )
        else:
            if self.attempts != MAX_INJECTION_ATTEMPTS:
                raise PipelineError("excluded record must have exhausted all attempts")
            if any(v.plausible for v in self.verdicts):
                raise PipelineError("excluded record must have only implausible verdicts")

    def to_json_dict(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "error_type": self.error_type,
            "k_requested": self.k_requested,
            "attempts": self.attempts,
            "status": self.status,
            "modified_report": self.modified_report,
            "changes": [c.to_json_dict() for c in self.changes],
            "verdicts": [{"plausible": v.plausible, "reason": v.reason} for v in self.verdicts],
        }


def _settled(client: JudgeClient, request: JudgeRequest) -> tuple[str | None, str | None]:
    """(text, error): judge failures become values, not exceptions."""
    response = client.complete_settled(request)
    if response.ok:
        return response.raw_text, None
    return None, response.error


def inject_pair(
    pair: ReportPair,
    error_type: str,
    k: int,
    client: JudgeClient,
    config: ModelConfig,
    validation_config: ModelConfig | None = None,
) -> InjectionRecord:
    """Generate-validate loop for one report; up to 5 attempts.

    Every attempt contributes exactly one verdict.  Attempts that never reach
    the validation call (judge failure, unparseable output, wrong change
    count) get a synthesized implausible verdict naming the cause, so the
    verdict list always documents why each attempt failed.
    """
    verdicts: list[ValidationVerdict] = []
    validation_config = validation_config or config
    for attempt in range(1, MAX_INJECTION_ATTEMPTS + 1):
        system, user = render_injection_prompt(error_type, k, pair.reference, attempt=attempt)
        text, error = _settled(
            client, JudgeRequest(user=user, config=config, system=system, tag=f"{pair.id}:inject:{attempt}")
        )
        if error is not None:
            verdicts.append(ValidationVerdict(False, f"attempt {attempt}: judge error: {error}"))
            continue
        try:
            modified, changes = parse_injection_response(text)
        except ParseError as exc:
            verdicts.append(ValidationVerdict(False, f"attempt {attempt}: unparseable injection output: {exc}"))
            continue
        # change-count pre-check: wrong k never reaches validation
        if len(changes) != k:
            verdicts.append(
                ValidationVerdict(False, f"attempt {attempt}: {len(changes)} changes, expected {k}")
            )
            continue
        vsystem, vuser = render_validation_prompt(
            modified,
            pair.modality or "unspecified",
            pair.anatomy or "unspecified",
            [c.to_json_dict() for c in changes],
        )
        vtext, verror = _settled(
            client,
            JudgeRequest(
                user=vuser, config=validation_config, system=vsystem, tag=f"{pair.id}:validate:{attempt}"
            ),
        )
        if verror is not None:
            verdicts.append(ValidationVerdict(False, f"attempt {attempt}: validation judge error: {verror}"))
            continue
        try:
            verdict = parse_validation_response(vtext)
        except ParseError as exc:
            verdicts.append(ValidationVerdict(False, f"attempt {attempt}: unparseable verdict: {exc}"))
            continue
        verdicts.append(verdict)
        if verdict.plausible:
            return InjectionRecord(
                pair_id=pair.id,
                error_type=error_type,
                k_requested=k,
                attempts=attempt,
                status="accepted",
                modified_report=modified,
                changes=changes,
                verdicts=verdicts,
            )
    return InjectionRecord(
        pair_id=pair.id,
        error_type=error_type,
        k_requested=k,
        attempts=MAX_INJECTION_ATTEMPTS,
        status="excluded",
        modified_report="",
        changes=[],
        verdicts=verdicts,
    )


def run_injection(
    pairs: Sequence[ReportPair],
    error_type: str,
    k: int,
    client: JudgeClient,
    config: ModelConfig,
    validation_config: ModelConfig | None = None,
) -> list[InjectionRecord]:
    """Injection loop over a corpus; one record per pair, in order."""
    return [
        inject_pair(pair, error_type, k, client, config, validation_config=validation_config)
        for pair in pairs
    ]


# ---------------------------------------------------------------------------
# detection study


@dataclass(frozen=True)
class DetectionRow:
    k_injected: int
    error_type: str
    mean_detected: float
    n: int


@dataclass
class DetectionTable:
    rows: list[DetectionRow]
    category_f1: CategoryF1Report
    evaluations: list[EvaluationRow]


def run_detection_study(
    injections: Sequence[InjectionRecord],
    originals: Sequence[ReportPair],
    variant: PromptVariant,
    client: JudgeClient,
    config: ModelConfig,
    max_in_flight: int = 4,
) -> DetectionTable:
    """Judge each (reference, modified) pair and compare against injected truth."""
    by_id = {pair.id: pair for pair in originals}
    eval_pairs = []
    truths = []
    for record in injections:
        if record.status != "accepted":
            raise PipelineError(f"detection study requires accepted records, got {record.status!r}")
        if len(record.changes) != record.k_requested:
            raise PipelineError(f"record {record.pair_id!r}: ground truth diverged from k_requested")
        if record.pair_id not in by_id:
            raise PipelineError(f"no original pair with id {record.pair_id!r}")
        eval_pairs.append(with_candidate(by_id[record.pair_id], record.modified_report))
        truths.append(ExpertAnnotation.from_counts(significant={record.error_type: record.k_requested}))

    evaluations = evaluate_corpus(eval_pairs, variant, None, client, config, max_in_flight=max_in_flight)

    groups: dict[tuple[int, str], list[int]] = {}
    kept_truths = []
    kept_judges = []
    for record, truth, row in zip(injections, truths, evaluations):
        if not row.ok:
            continue
        groups.setdefault((record.k_requested, record.error_type), []).append(
            row.assessment.total_significant
        )
        kept_truths.append(truth)
        kept_judges.append(row.assessment)

    rows = [
        DetectionRow(
            k_injected=k,
            error_type=error_type,
            mean_detected=sum(values) / len(values),
            n=len(values),
        )
        for (k, error_type), values in sorted(groups.items(), key=lambda kv: (kv[0][1], kv[0][0]))
    ]
    report = category_f1(kept_truths, kept_judges)
    return DetectionTable(rows=rows, category_f1=report, evaluations=evaluations)


# ---------------------------------------------------------------------------
# deterministic output files


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def _writer(fh) -> csv.writer:
    return csv.writer(fh, lineterminator="\n")


def write_assessments_jsonl(path: str | Path, rows: Sequence[EvaluationRow], run_hash: str) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            obj = row.to_json_dict()
            obj["manifest_hash"] = run_hash
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def write_scores_csv(path: str | Path, rows: Sequence[EvaluationRow], run_hash: str) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        writer = _writer(fh)
        writer.writerow(["pair_id", "green", "f1", "weighted", "ec", "vert", "empty", "error", "manifest_hash"])
        for row in rows:
            if row.scores is None:
                writer.writerow([row.pair_id, "", "", "", "", "", "", row.error or "", run_hash])
                continue
            bundle = row.scores
            writer.writerow(
                [
                    row.pair_id,
                    _fmt(bundle.green.value),
                    _fmt(bundle.f1.value),
                    _fmt(bundle.weighted.value),
                    str(bundle.ec),
                    _fmt(bundle.vert) if bundle.vert is not None else "",
                    "true" if bundle.green.empty else "false",
                    "",
                    run_hash,
                ]
            )


def write_correlations_csv(
    path: str | Path, results: Mapping[str, CorrelationResult], run_hash: str
) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        writer = _writer(fh)
        writer.writerow(["metric", "tau", "abs_tau", "p_value", "n", "significant", "manifest_hash"])
        for name in sorted(results):
            r = results[name]
            writer.writerow(
                [name, _fmt(r.tau), _fmt(r.abs_tau), f"{r.p_value:.6g}", str(r.n),
                 "true" if r.significant else "false", run_hash]
            )


def write_injections_jsonl(path: str | Path, records: Sequence[InjectionRecord], run_hash: str) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            obj = record.to_json_dict()
            obj["manifest_hash"] = run_hash
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def write_detection_csv(path: str | Path, table: DetectionTable, run_hash: str) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        writer = _writer(fh)
        writer.writerow(["k_injected", "error_type", "mean_detected", "n", "manifest_hash"])
        for row in table.rows:
            writer.writerow([str(row.k_injected), row.error_type, _fmt(row.mean_detected), str(row.n), run_hash])


def write_category_f1_csv(path: str | Path, report: CategoryF1Report, run_hash: str) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        writer = _writer(fh)
        writer.writerow(["category", "tp", "fp", "fn", "precision", "recall", "f1", "manifest_hash"])
        for tag, score in report.per_category.items():
            writer.writerow(
                [tag, str(score.tp), str(score.fp), str(score.fn),
                 _fmt(score.precision), _fmt(score.recall), _fmt(score.f1), run_hash]
            )


def write_binned_csv(path: str | Path, table: BinnedMeansTable, run_hash: str) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        writer = _writer(fh)
        writer.writerow(["human_error_bin", "mean_judge_errors", "n", "manifest_hash"])
        for row in table.rows:
            writer.writerow([str(row.human_error_bin), _fmt(row.mean_judge_errors), str(row.n), run_hash])


def write_sweep_csv(path: str | Path, points: Sequence[tuple[int, float]], metric: str) -> None:
    # fixed 3-column schema; run metadata goes in the sidecar manifest instead
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        writer = _writer(fh)
        writer.writerow(["x", "metric", "score"])
        for x, score in points:
            writer.writerow([str(x), metric, _fmt(score)])
