"""Score computations over judge assessments.

The structural scores are all instances of one family,

    score = alpha*TP / (alpha*TP + beta_s*S + beta_i*I)

where TP is the matched-findings count and S / I are the significant and
insignificant error totals.  The dedicated functions keep their own
closed-form expressions; ``unified_score`` must agree with them bit for bit
under the matching presets, which holds because both sides build the
denominator with the same left-to-right evaluation order and exact float
arithmetic on small integers.

The all-zero case (no findings, no errors) is not an error: it scores 1.0
and carries an ``empty`` flag so downstream analysis can exclude such rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .corpus import CLINICAL_TAGS, ERROR_COUNTS, ExpertAnnotation
from .parse import JudgeAssessment


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreValue:
    """A score plus the flag marking the defined-empty (0/0) case."""

    value: float
    empty: bool = False

    def __float__(self) -> float:
        return self.value


@dataclass(frozen=True)
class MetricWeights:
    alpha: float
    beta_s: float
    beta_i: float

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise MetricError("alpha must be positive")
        if self.beta_s < 0 or self.beta_i < 0:
            raise MetricError("beta_s and beta_i must be non-negative")


GREEN_WEIGHTS = MetricWeights(1.0, 1.0, 0.0)
F1_WEIGHTS = MetricWeights(2.0, 1.0, 0.0)
FORMULA_WEIGHTS = MetricWeights(1.0, 2.0, 0.5)
PRESET_WEIGHTS: dict[str, MetricWeights] = {
    "green": GREEN_WEIGHTS,
    "f1": F1_WEIGHTS,
    "formula": FORMULA_WEIGHTS,
}


def _check_counts(**counts: float) -> None:
    for name, value in counts.items():
        if value < 0:
            raise MetricError(f"{name} must be non-negative, got {value}")


def green_score(tp: int, s: int) -> ScoreValue:
    """TP / (TP + S)."""
    _check_counts(tp=tp, s=s)
    if tp + s == 0:
        return ScoreValue(1.0, empty=True)
    return ScoreValue(tp / (tp + s))


def f1_score(tp: int, s: int) -> ScoreValue:
    """2TP / (2TP + S)."""
    _check_counts(tp=tp, s=s)
    if tp + s == 0:
        return ScoreValue(1.0, empty=True)
    return ScoreValue(2 * tp / (2 * tp + s))


def weighted_score(tp: int, s: int, i: int) -> ScoreValue:
    """TP / (TP + 2S + 0.5I)."""
    _check_counts(tp=tp, s=s, i=i)
    denominator = tp + 2 * s + 0.5 * i
    if denominator == 0:
        return ScoreValue(1.0, empty=True)
    return ScoreValue(tp / denominator)


def unified_score(tp: int, s: int, i: int, weights: MetricWeights) -> ScoreValue:
    """alpha*TP / (alpha*TP + beta_s*S + beta_i*I)."""
    _check_counts(tp=tp, s=s, i=i)
    numerator = weights.alpha * tp
    denominator = weights.alpha * tp + weights.beta_s * s + weights.beta_i * i
    if denominator == 0:
        return ScoreValue(1.0, empty=True)
    return ScoreValue(numerator / denominator)


def error_count(assessment: JudgeAssessment) -> int:
    """Total significant errors reported by the judge (the EC metric)."""
    return assessment.total_significant


@dataclass(frozen=True)
class ScoreBundle:
    """Every score derivable from one assessment."""

    green: ScoreValue
    f1: ScoreValue
    weighted: ScoreValue
    ec: int
    vert: float | None = None

    def to_json_dict(self) -> dict:
        return {
            "green": self.green.value,
            "f1": self.f1.value,
            "weighted": self.weighted.value,
            "ec": self.ec,
            "vert": self.vert,
            "empty": self.green.empty,
        }


def scores_from_assessment(assessment: JudgeAssessment) -> ScoreBundle:
    tp = assessment.matched_findings
    s = assessment.total_significant
    i = assessment.total_insignificant
    return ScoreBundle(
        green=green_score(tp, s),
        f1=f1_score(tp, s),
        weighted=weighted_score(tp, s, i),
        ec=error_count(assessment),
        vert=assessment.overall_score,
    )


@dataclass(frozen=True)
class CategoryScore:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class CategoryF1Report:
    per_category: Mapping[str, CategoryScore]
    n_reports: int

    def __getitem__(self, tag: str) -> CategoryScore:
        return self.per_category[tag]


def _judge_counts(judge: JudgeAssessment | Mapping[str, int]) -> Mapping[str, int]:
    if isinstance(judge, JudgeAssessment):
        return judge.significant
    return judge


def category_f1(
    humans: Sequence[ExpertAnnotation],
    judges: Sequence[JudgeAssessment | Mapping[str, int]],
) -> CategoryF1Report:
    """Per-category error-count F1 against human annotations.

    Per report and category: TP = min(h, g), FP = max(0, g - h),
    FN = max(0, h - g), summed over reports; precision, recall, and F1
    follow, with every zero-denominator case defined as 0.
    """
    if len(humans) != len(judges):
        raise MetricError(f"length mismatch: {len(humans)} annotations vs {len(judges)} assessments")
    for annotation in humans:
        if annotation.kind != ERROR_COUNTS:
            raise MetricError(f"category_f1 needs {ERROR_COUNTS} annotations, got {annotation.kind}")
    report: dict[str, CategoryScore] = {}
    for tag in CLINICAL_TAGS:
        tp = fp = fn = 0
        for human, judge in zip(humans, judges):
            h = (human.significant or {}).get(tag, 0)
            g = _judge_counts(judge).get(tag, 0)
            tp += min(h, g)
            fp += max(0, g - h)
            fn += max(0, h - g)
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        report[tag] = CategoryScore(tp=tp, fp=fp, fn=fn, precision=precision, recall=recall, f1=f1)
    return CategoryF1Report(per_category=report, n_reports=len(humans))


SWEEP_METRICS = ("green", "f1")
SWEEP_AXES = ("S", "TP")


def sweep(metric: str, vary: str, fixed_value: int, x_range: tuple[int, int]) -> list[tuple[int, float]]:
    """Evaluate green or f1 pointwise along S or TP with the other fixed."""
    if metric not in SWEEP_METRICS:
        raise MetricError(f"metric must be one of {SWEEP_METRICS}, got {metric!r}")
    if vary not in SWEEP_AXES:
        raise MetricError(f"vary must be one of {SWEEP_AXES}, got {vary!r}")
    lo, hi = x_range
    if lo > hi:
        raise MetricError(f"empty range {lo}:{hi}")
    if lo < 0 or fixed_value < 0:
        raise MetricError("sweep values must be non-negative")
    fn = green_score if metric == "green" else f1_score
    points = []
    for x in range(lo, hi + 1):
        tp, s = (fixed_value, x) if vary == "S" else (x, fixed_value)
        points.append((x, fn(tp, s).value))
    return points
