"""Data model for report pairs and expert annotations.

A corpus is a UTF-8 JSONL file, one report pair per line:

    {"id": str, "dataset": str, "reference": str, "candidate": str,
     "modality": str?, "anatomy": str?, "annotation": {...} | null}

where ``annotation`` is either an error-count record
(``{"kind": "error_counts", "significant": {"a": int, ..., "g": int},
"insignificant": {...}}``) or a scalar-score record
(``{"kind": "scalar_score", "raw_score": num, "scale_max": num}``).

All sampling in the package goes through :func:`shuffled` /
:func:`sample_subset`, a partial Fisher-Yates shuffle driven exclusively by
``random.Random(seed).random()``.  CPython guarantees that ``random()``
produces the same stream for a given seed across versions and platforms, so
seeded outputs are stable enough to commit as golden files.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence


class ErrorCategory(str, Enum):
    """The seven annotation categories; (g) is stylistic, not clinical."""

    FALSE_FINDING = "a"
    MISSING_FINDING = "b"
    WRONG_LOCATION = "c"
    WRONG_SEVERITY = "d"
    FALSE_COMPARISON = "e"
    OMITTED_COMPARISON = "f"
    GRAMMAR = "g"


CATEGORY_TAGS: tuple[str, ...] = tuple(c.value for c in ErrorCategory)
CLINICAL_TAGS: tuple[str, ...] = CATEGORY_TAGS[:6]

CATEGORY_LABELS: dict[str, str] = {
    "a": "False report of a finding in the candidate",
    "b": "Missing a finding present in the reference",
    "c": "Misidentification of a finding's anatomic location/position",
    "d": "Misassessment of the severity of a finding",
    "e": "Mentioning a comparison that isn't in the reference",
    "f": "Omitting a comparison detailing a change from a prior study",
    "g": "Inarticulate report / grammar",
}

ERROR_COUNTS = "error_counts"
SCALAR_SCORE = "scalar_score"


class CorpusError(ValueError):
    """Raised for malformed corpus files and annotation misuse."""


def _clean_counts(counts: Mapping[str, object] | None, where: str) -> dict[str, int]:
    """Validate a category->count map and fill absent categories with 0."""
    out = {tag: 0 for tag in CATEGORY_TAGS}
    if counts is None:
        return out
    for key, value in counts.items():
        tag = str(key)
        if tag not in out:
            raise CorpusError(f"{where}: unknown category tag {tag!r}")
        if not isinstance(value, int) or isinstance(value, bool) or value < 0:
            raise CorpusError(f"{where}: count for ({tag}) must be a non-negative integer")
        out[tag] = value
    return out


@dataclass(frozen=True)
class ExpertAnnotation:
    """Human annotation: per-category error counts or one scalar score."""

    kind: str
    significant: Mapping[str, int] | None = None
    insignificant: Mapping[str, int] | None = None
    raw_score: float | None = None
    scale_max: float | None = None

    def __post_init__(self) -> None:
        if self.kind == ERROR_COUNTS:
            if self.raw_score is not None or self.scale_max is not None:
                raise CorpusError("error_counts annotation must not carry a scalar score")
            object.__setattr__(self, "significant", _clean_counts(self.significant, "significant"))
            object.__setattr__(self, "insignificant", _clean_counts(self.insignificant, "insignificant"))
        elif self.kind == SCALAR_SCORE:
            if self.significant is not None or self.insignificant is not None:
                raise CorpusError("scalar_score annotation must not carry error counts")
            if self.raw_score is None or self.scale_max is None:
                raise CorpusError("scalar_score annotation requires raw_score and scale_max")
            if self.scale_max <= 0:
                raise CorpusError("scale_max must be positive")
            if not 0 <= self.raw_score <= self.scale_max:
                raise CorpusError(f"raw_score {self.raw_score} outside [0, {self.scale_max}]")
        else:
            raise CorpusError(f"unknown annotation kind {self.kind!r}")

    @classmethod
    def from_counts(
        cls,
        significant: Mapping[str, int] | None = None,
        insignificant: Mapping[str, int] | None = None,
    ) -> "ExpertAnnotation":
        return cls(kind=ERROR_COUNTS, significant=significant or {}, insignificant=insignificant or {})

    @classmethod
    def from_score(cls, raw_score: float, scale_max: float = 5.0) -> "ExpertAnnotation":
        return cls(kind=SCALAR_SCORE, raw_score=float(raw_score), scale_max=float(scale_max))

    def to_json_dict(self) -> dict:
        if self.kind == ERROR_COUNTS:
            return {
                "kind": self.kind,
                "significant": dict(self.significant or {}),
                "insignificant": dict(self.insignificant or {}),
            }
        return {"kind": self.kind, "raw_score": self.raw_score, "scale_max": self.scale_max}

    @classmethod
    def from_json_dict(cls, obj: Mapping) -> "ExpertAnnotation":
        if not isinstance(obj, Mapping) or "kind" not in obj:
            raise CorpusError("annotation must be an object with a 'kind' field")
        kind = obj["kind"]
        if kind == ERROR_COUNTS:
            return cls(kind=kind, significant=obj.get("significant"), insignificant=obj.get("insignificant"))
        if kind == SCALAR_SCORE:
            raw = obj.get("raw_score")
            mx = obj.get("scale_max")
            if not isinstance(raw, (int, float)) or not isinstance(mx, (int, float)):
                raise CorpusError("scalar_score annotation requires numeric raw_score and scale_max")
            return cls(kind=kind, raw_score=float(raw), scale_max=float(mx))
        raise CorpusError(f"unknown annotation kind {kind!r}")


@dataclass(frozen=True)
class ReportPair:
    """One reference/candidate pair, optionally annotated."""

    id: str
    dataset: str
    reference: str
    candidate: str
    modality: str | None = None
    anatomy: str | None = None
    annotation: ExpertAnnotation | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise CorpusError("pair id must be non-empty")
        if not self.reference or not self.candidate:
            raise CorpusError(f"pair {self.id!r}: reference and candidate must be non-empty")

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "dataset": self.dataset,
            "reference": self.reference,
            "candidate": self.candidate,
            "modality": self.modality,
            "anatomy": self.anatomy,
            "annotation": self.annotation.to_json_dict() if self.annotation else None,
        }

    @classmethod
    def from_json_dict(cls, obj: Mapping) -> "ReportPair":
        if not isinstance(obj, Mapping):
            raise CorpusError("pair record must be a JSON object")
        for key in ("id", "dataset", "reference", "candidate"):
            if not isinstance(obj.get(key), str):
                raise CorpusError(f"pair record missing string field {key!r}")
        ann = obj.get("annotation")
        return cls(
            id=obj["id"],
            dataset=obj["dataset"],
            reference=obj["reference"],
            candidate=obj["candidate"],
            modality=obj.get("modality"),
            anatomy=obj.get("anatomy"),
            annotation=ExpertAnnotation.from_json_dict(ann) if ann is not None else None,
        )


@dataclass
class LoadResult:
    """Pairs in file order plus a tolerant-mode load report."""

    pairs: list[ReportPair] = field(default_factory=list)
    skipped: int = 0
    errors: list[tuple[int, str]] = field(default_factory=list)

    def __iter__(self):
        return iter(self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)


def load_pairs(path: str | Path, strict: bool = False) -> LoadResult:
    """Load a JSONL corpus.

    In strict mode any malformed line raises; otherwise malformed lines are
    skipped and reported in the result.  A duplicate id raises in both modes.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"corpus file not found: {path}")
    result = LoadResult()
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                pair = ReportPair.from_json_dict(obj)
            except (json.JSONDecodeError, CorpusError) as exc:
                if strict:
                    raise CorpusError(f"{path}:{lineno}: {exc}") from exc
                result.skipped += 1
                result.errors.append((lineno, str(exc)))
                continue
            if pair.id in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate pair id {pair.id!r}")
            seen.add(pair.id)
            result.pairs.append(pair)
    return result


def save_pairs(path: str | Path, pairs: Iterable[ReportPair]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for pair in pairs:
            fh.write(json.dumps(pair.to_json_dict(), ensure_ascii=False) + "\n")


def normalize_score(raw: float, scale_max: float) -> float:
    """Map a raw score on [0, scale_max] linearly onto [0, 1]."""
    if scale_max <= 0:
        raise CorpusError("scale_max must be positive")
    if not 0 <= raw <= scale_max:
        raise CorpusError(f"raw score {raw} outside [0, {scale_max}]")
    return raw / scale_max


def total_significant(annotation: ExpertAnnotation, include_grammar: bool = False) -> int:
    """Sum of significant counts over categories a-f (g only on request)."""
    if annotation.kind != ERROR_COUNTS:
        raise CorpusError(f"total_significant needs an {ERROR_COUNTS} annotation, got {annotation.kind}")
    counts = annotation.significant or {}
    tags = CATEGORY_TAGS if include_grammar else CLINICAL_TAGS
    return sum(counts.get(tag, 0) for tag in tags)


def shuffled(items: Sequence, seed: int) -> list:
    """Seeded Fisher-Yates shuffle using only ``Random.random()`` draws."""
    out = list(items)
    rng = random.Random(seed)
    for i in range(len(out) - 1):
        j = i + int(rng.random() * (len(out) - i))
        out[i], out[j] = out[j], out[i]
    return out


def sample_subset(
    pairs: Sequence[ReportPair],
    n: int,
    seed: int,
    exclude_ids: Iterable[str] = (),
) -> list[ReportPair]:
    """Deterministic n-subset of ``pairs`` (order fixed by seed), minus exclusions."""
    excluded = set(exclude_ids)
    eligible = [p for p in pairs if p.id not in excluded]
    if n < 0:
        raise CorpusError("sample size must be non-negative")
    if n > len(eligible):
        raise CorpusError(f"requested {n} pairs but only {len(eligible)} are eligible")
    return shuffled(eligible, seed)[:n]


def with_candidate(pair: ReportPair, candidate: str) -> ReportPair:
    """Copy of ``pair`` with another candidate report (used by detection runs)."""
    return replace(pair, candidate=candidate)
