"""Correlation statistics, score ensembling, binned detection summaries,
and fine-tuning data export.

Rank correlation is Kendall's tau-b with the tie-corrected asymptotic
p-value (scipy); targets here are few-valued and heavily tied, so the
tie-corrected variant is the only defensible choice.  Tables report |tau|,
with significance fixed at p < 0.01.

Ensembling is plain least squares with an explicit intercept column.
Features are name-keyed everywhere so column order can never silently
shuffle between fit and apply.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .corpus import SCALAR_SCORE, ReportPair, shuffled
from .prompts import load_template

SIGNIFICANCE_LEVEL = 0.01


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class CorrelationResult:
    tau: float
    abs_tau: float
    p_value: float
    n: int
    significant: bool

    def to_json_dict(self) -> dict:
        return {
            "tau": self.tau,
            "abs_tau": self.abs_tau,
            "p_value": self.p_value,
            "n": self.n,
            "significant": self.significant,
        }


def _is_constant(values: Sequence[float]) -> bool:
    first = values[0]
    return all(v == first for v in values)


def kendall_tau(x: Sequence[float], y: Sequence[float]) -> CorrelationResult:
    """Tie-corrected Kendall's tau-b with the asymptotic p-value."""
    if len(x) != len(y):
        raise AnalysisError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise AnalysisError("need at least 2 observations")
    if _is_constant(x) or _is_constant(y):
        raise AnalysisError("degenerate input: one side is constant, tau is undefined")
    statistic, pvalue = stats.kendalltau(
        np.asarray(x, dtype=float), np.asarray(y, dtype=float), variant="b", method="asymptotic"
    )
    tau = float(statistic)
    p_value = float(pvalue)
    return CorrelationResult(
        tau=tau,
        abs_tau=abs(tau),
        p_value=p_value,
        n=len(x),
        significant=p_value < SIGNIFICANCE_LEVEL,
    )


def correlate(
    scores: Mapping[str, Sequence[float | None]], target: Sequence[float]
) -> dict[str, CorrelationResult]:
    """Per-metric tau against the target, dropping missing rows pairwise."""
    results: dict[str, CorrelationResult] = {}
    for name, values in scores.items():
        if len(values) != len(target):
            raise AnalysisError(f"metric {name!r}: length {len(values)} != target length {len(target)}")
        kept_x, kept_y = [], []
        for value, t in zip(values, target):
            if value is None or (isinstance(value, float) and value != value):
                continue
            kept_x.append(float(value))
            kept_y.append(float(t))
        if len(kept_x) < 2:
            raise AnalysisError(f"metric {name!r}: fewer than 2 rows left after dropping missing scores")
        results[name] = kendall_tau(kept_x, kept_y)
    return results


def average_ensemble(score_vectors: Sequence[Sequence[float]]) -> list[float]:
    """Elementwise mean of two or more aligned score vectors."""
    if len(score_vectors) < 2:
        raise AnalysisError("need at least 2 score vectors to ensemble")
    length = len(score_vectors[0])
    for i, vector in enumerate(score_vectors):
        if len(vector) != length:
            raise AnalysisError(f"vector {i} has length {len(vector)}, expected {length}")
    matrix = np.asarray(score_vectors, dtype=float)
    return [float(v) for v in matrix.mean(axis=0)]


@dataclass(frozen=True)
class EnsembleModel:
    feature_names: tuple[str, ...]
    coefficients: tuple[float, ...]
    intercept: float
    train_n: int

    def __post_init__(self) -> None:
        if len(self.coefficients) != len(self.feature_names):
            raise AnalysisError("one coefficient per feature required")

    def to_json_dict(self) -> dict:
        return {
            "features": list(self.feature_names),
            "coefficients": list(self.coefficients),
            "intercept": self.intercept,
            "train_n": self.train_n,
        }

    @classmethod
    def from_json_dict(cls, obj: Mapping) -> "EnsembleModel":
        return cls(
            feature_names=tuple(obj["features"]),
            coefficients=tuple(float(c) for c in obj["coefficients"]),
            intercept=float(obj["intercept"]),
            train_n=int(obj["train_n"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "EnsembleModel":
        return cls.from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _feature_matrix(
    features: Mapping[str, Sequence[float]] | Sequence[Sequence[float]],
    feature_names: Sequence[str] | None,
) -> tuple[np.ndarray, list[str]]:
    if isinstance(features, Mapping):
        names = list(features.keys())
        matrix = np.column_stack([np.asarray(features[name], dtype=float) for name in names])
    else:
        matrix = np.asarray(features, dtype=float)
        if matrix.ndim != 2:
            raise AnalysisError("feature matrix must be 2-dimensional")
        names = list(feature_names) if feature_names else [f"f{i}" for i in range(matrix.shape[1])]
        if len(names) != matrix.shape[1]:
            raise AnalysisError(f"{len(names)} names for {matrix.shape[1]} feature columns")
    return matrix, names


def fit_linear_ensemble(
    features: Mapping[str, Sequence[float]] | Sequence[Sequence[float]],
    targets: Sequence[float],
    feature_names: Sequence[str] | None = None,
) -> EnsembleModel:
    """Ordinary least squares with an intercept.

    Rank is checked incrementally as columns are added so a rank-deficiency
    error can name the offending column instead of just failing.
    """
    matrix, names = _feature_matrix(features, feature_names)
    y = np.asarray(targets, dtype=float)
    n, k = matrix.shape
    if len(y) != n:
        raise AnalysisError(f"{len(y)} targets for {n} feature rows")
    if n <= k:
        raise AnalysisError(f"need more rows than features, got n={n}, k={k}")
    design = np.ones((n, 1))
    for j in range(k):
        candidate = np.hstack([design, matrix[:, j : j + 1]])
        if np.linalg.matrix_rank(candidate) <= np.linalg.matrix_rank(design):
            raise AnalysisError(f"feature {names[j]!r} is linearly dependent on earlier columns")
        design = candidate
    solution, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    return EnsembleModel(
        feature_names=tuple(names),
        coefficients=tuple(float(c) for c in solution[1:]),
        intercept=float(solution[0]),
        train_n=n,
    )


def apply_ensemble(
    model: EnsembleModel,
    features: Mapping[str, Sequence[float]] | Sequence[Sequence[float]],
) -> list[float]:
    """intercept + features · coefficients, aligned by feature name."""
    if isinstance(features, Mapping):
        missing = [name for name in model.feature_names if name not in features]
        extra = [name for name in features if name not in model.feature_names]
        if missing or extra:
            raise AnalysisError(f"feature name mismatch: missing {missing}, unexpected {extra}")
        matrix = np.column_stack(
            [np.asarray(features[name], dtype=float) for name in model.feature_names]
        )
    else:
        matrix = np.asarray(features, dtype=float)
        if matrix.ndim != 2 or matrix.shape[1] != len(model.feature_names):
            raise AnalysisError(f"expected {len(model.feature_names)} feature columns")
    predictions = model.intercept + matrix @ np.asarray(model.coefficients, dtype=float)
    return [float(p) for p in predictions]


@dataclass(frozen=True)
class BinRow:
    human_error_bin: int
    mean_judge_errors: float
    n: int


@dataclass(frozen=True)
class BinnedMeansTable:
    rows: tuple[BinRow, ...]
    bin_lo: int
    bin_hi: int


def binned_error_means(
    human_totals: Sequence[int],
    judge_totals: Sequence[float],
    bin_lo: int = 1,
    bin_hi: int = 12,
) -> BinnedMeansTable:
    """Mean judge error total for each human error total in [bin_lo, bin_hi]."""
    if len(human_totals) != len(judge_totals):
        raise AnalysisError(f"length mismatch: {len(human_totals)} vs {len(judge_totals)}")
    buckets: dict[int, list[float]] = {}
    for human, judge in zip(human_totals, judge_totals):
        if bin_lo <= human <= bin_hi:
            buckets.setdefault(int(human), []).append(float(judge))
    rows = tuple(
        BinRow(human_error_bin=b, mean_judge_errors=sum(vals) / len(vals), n=len(vals))
        for b, vals in sorted(buckets.items())
    )
    return BinnedMeansTable(rows=rows, bin_lo=bin_lo, bin_hi=bin_hi)


def format_sft_score(raw_score: float, scale_max: float) -> str:
    """Normalized score as a one-decimal string, rounded half-up.

    Decimal arithmetic on repr() strings keeps ties like 0.54999... vs 0.55
    honest: 2.7/5 = 0.54 rounds to "0.5", 2.75/5 = 0.55 rounds to "0.6".
    """
    normalized = Decimal(repr(raw_score)) / Decimal(repr(scale_max))
    return str(normalized.quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def _sft_user_text(reference: str, candidate: str) -> str:
    first_two = "\n".join(load_template("vert").splitlines()[:2])
    return f"{first_two}\n\nReference Report:\n{reference}\n\nCandidate Report:\n{candidate}"


def export_sft(pairs: Sequence[ReportPair], seed: int = 0) -> list[dict]:
    """Chat-format fine-tuning records with a deterministic 90/10 split.

    One record per pair, in input order; the validation set is the first
    round(n * 0.1) elements of the seed-shuffled index permutation.
    """
    for pair in pairs:
        if pair.annotation is None or pair.annotation.kind != SCALAR_SCORE:
            raise AnalysisError(f"pair {pair.id!r}: export_sft needs {SCALAR_SCORE} annotations")
    n = len(pairs)
    n_val = int(n * 0.1 + 0.5)
    val_indices = set(shuffled(range(n), seed)[:n_val])
    records = []
    for index, pair in enumerate(pairs):
        annotation = pair.annotation
        records.append(
            {
                "messages": [
                    {"role": "user", "content": _sft_user_text(pair.reference, pair.candidate)},
                    {
                        "role": "assistant",
                        "content": format_sft_score(annotation.raw_score, annotation.scale_max),
                    },
                ],
                "split": "val" if index in val_indices else "train",
            }
        )
    return records


def save_sft(path: str | Path, records: Sequence[Mapping]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
