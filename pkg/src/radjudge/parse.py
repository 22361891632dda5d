"""Parsers for judge output: the bracketed assessment format and the
injection/validation JSON.

Parsing is tolerant by default.  Recoverable deviations (missing sections,
unreadable counts, out-of-range scores) are repaired with documented defaults
and reported through ``parse_warnings`` instead of raising; only output with
no recognizable section headers at all is rejected.  ``strict=True`` turns
every warning into an error, which is how the shipped fixtures are validated.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .corpus import CATEGORY_LABELS, CLINICAL_TAGS


class ParseError(ValueError):
    """Unrecoverable parse failure; ``raw`` preserves the offending text."""

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


def _full_counts(counts: Mapping[str, int] | None) -> dict[str, int]:
    out = {tag: 0 for tag in CLINICAL_TAGS}
    for tag, value in (counts or {}).items():
        if tag not in out:
            raise ParseError(f"unknown category tag {tag!r}")
        if value < 0:
            raise ParseError(f"negative count for category ({tag})")
        out[tag] = int(value)
    return out


@dataclass
class JudgeAssessment:
    """Structured judge verdict: counts, matched findings, optional score."""

    explanation: str = ""
    significant: dict[str, int] = field(default_factory=dict)
    insignificant: dict[str, int] = field(default_factory=dict)
    significant_detail: dict[str, str] = field(default_factory=dict)
    insignificant_detail: dict[str, str] = field(default_factory=dict)
    matched_findings: int = 0
    matched_text: str = ""
    overall_score: float | None = None
    parse_warnings: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.significant = _full_counts(self.significant)
        self.insignificant = _full_counts(self.insignificant)
        if self.matched_findings < 0:
            raise ParseError("matched_findings must be non-negative")
        if self.overall_score is not None and not 0.0 <= self.overall_score <= 1.0:
            raise ParseError(f"overall_score {self.overall_score} outside [0, 1]")

    @property
    def total_significant(self) -> int:
        return sum(self.significant.values())

    @property
    def total_insignificant(self) -> int:
        return sum(self.insignificant.values())

    @property
    def total_errors(self) -> int:
        return self.total_significant + self.total_insignificant

    def to_json_dict(self) -> dict:
        return {
            "explanation": self.explanation,
            "significant": dict(self.significant),
            "insignificant": dict(self.insignificant),
            "significant_detail": dict(self.significant_detail),
            "insignificant_detail": dict(self.insignificant_detail),
            "matched_findings": self.matched_findings,
            "matched_text": self.matched_text,
            "overall_score": self.overall_score,
            "parse_warnings": list(self.parse_warnings),
        }

    @classmethod
    def from_json_dict(cls, obj: Mapping) -> "JudgeAssessment":
        return cls(
            explanation=obj.get("explanation", ""),
            significant=obj.get("significant") or {},
            insignificant=obj.get("insignificant") or {},
            significant_detail=dict(obj.get("significant_detail") or {}),
            insignificant_detail=dict(obj.get("insignificant_detail") or {}),
            matched_findings=int(obj.get("matched_findings", 0)),
            matched_text=obj.get("matched_text", ""),
            overall_score=obj.get("overall_score"),
            parse_warnings=list(obj.get("parse_warnings") or []),
        )


@dataclass(frozen=True)
class ChangeDetail:
    """One sentence-level modification reported by the injection model."""

    sentence_index: int
    original: str
    modified: str
    explanation: str = ""
    severity: str = ""
    harm_potential: str = ""

    def __post_init__(self) -> None:
        if self.sentence_index < 0:
            raise ParseError(f"sentence_index must be non-negative, got {self.sentence_index}")

    def to_json_dict(self) -> dict:
        return {
            "sentence_index": self.sentence_index,
            "original": self.original,
            "modified": self.modified,
            "explanation": self.explanation,
            "severity": self.severity,
            "harm_potential": self.harm_potential,
        }


@dataclass(frozen=True)
class ValidationVerdict:
    plausible: bool
    reason: str

    def __post_init__(self) -> None:
        if not self.plausible and not self.reason:
            raise ParseError("implausible verdict requires a reason")


_FENCE_LINE = re.compile(r"^\s*```[A-Za-z0-9_-]*\s*$")
_HEADER_LINE = re.compile(r"^\s*\[([^\]\n]+)\]\s*:?\s*(.*)$")
_CATEGORY_LINE = re.compile(r"^\s*\(([A-Za-z])\)\s*:?\s*(.*)$")
_INTEGER = re.compile(r"\d+")
_REAL = re.compile(r"-?\d+(?:\.\d+)?")

_SECTION_ALIASES = {
    "explanation": "explanation",
    "clinically significant errors": "significant",
    "clinically insignificant errors": "insignificant",
    "matched findings": "matched",
    "overall accuracy score": "score",
}


def strip_code_fences(text: str) -> str:
    return "\n".join(line for line in text.splitlines() if not _FENCE_LINE.match(line))


def _split_sections(text: str) -> list[tuple[str, str]]:
    """(canonical-name, body) for each recognized bracketed header, in order."""
    sections: list[tuple[str, list[str]]] = []
    for line in text.splitlines():
        match = _HEADER_LINE.match(line)
        name = None
        if match:
            name = _SECTION_ALIASES.get(match.group(1).strip().lower())
        if name is not None:
            sections.append((name, [match.group(2)] if match.group(2) else []))
        elif sections:
            sections[-1][1].append(line)
    return [(name, "\n".join(body).strip()) for name, body in sections]


def _parse_count_lines(body: str, section: str, warnings: list[str]) -> tuple[dict[str, int], dict[str, str]]:
    counts: dict[str, int] = {}
    details: dict[str, str] = {}
    current: str | None = None
    for line in body.splitlines():
        match = _CATEGORY_LINE.match(line)
        tag = match.group(1).lower() if match else None
        if match and tag not in CLINICAL_TAGS:
            current = None  # stray letters like (g) are ignored, not glued to a detail
            continue
        if tag in CLINICAL_TAGS:
            if tag in counts:
                warnings.append(f"{section}: duplicate line for category ({tag}); keeping the first")
                current = None
                continue
            rest = match.group(2)
            # count = first integer before the first period; label text has no digits
            head, dot, tail = rest.partition(".")
            found = _INTEGER.search(head)
            if found:
                counts[tag] = int(found.group())
            else:
                counts[tag] = 0
                warnings.append(f"{section}: no count found on the ({tag}) line; defaulting to 0")
            details[tag] = tail.strip() if dot else ""
            current = tag
        elif current is not None and line.strip():
            details[current] = (details[current] + " " + line.strip()).strip()
    missing = [tag for tag in CLINICAL_TAGS if tag not in counts]
    if missing:
        warnings.append(f"{section}: missing categories {missing}; defaulting to 0")
        for tag in missing:
            counts[tag] = 0
    return counts, details


def parse_assessment(raw: str, expect_score: bool = True, strict: bool = False) -> JudgeAssessment:
    """Parse bracketed judge output into a JudgeAssessment.

    expect_score mirrors the prompt variant: True for the variants whose
    output format ends with an overall-score section, False for the
    counts-only variant (a stray score section is then discarded).
    """
    text = strip_code_fences(raw)
    sections = _split_sections(text)
    if not sections:
        raise ParseError("no recognizable section headers in judge output", raw=raw)
    warnings: list[str] = []
    seen: dict[str, str] = {}
    for name, body in sections:
        if name in seen:
            warnings.append(f"duplicate [{name}] section; keeping the first")
        else:
            seen[name] = body

    explanation = seen.get("explanation", "")
    if "explanation" not in seen:
        warnings.append("missing [Explanation] section")

    if "significant" in seen:
        significant, sig_detail = _parse_count_lines(seen["significant"], "significant", warnings)
    else:
        warnings.append("missing [Clinically Significant Errors] section; all counts 0")
        significant, sig_detail = {tag: 0 for tag in CLINICAL_TAGS}, {}

    if "insignificant" in seen:
        insignificant, insig_detail = _parse_count_lines(seen["insignificant"], "insignificant", warnings)
    else:
        warnings.append("missing [Clinically Insignificant Errors] section; all counts 0")
        insignificant, insig_detail = {tag: 0 for tag in CLINICAL_TAGS}, {}

    matched_findings = 0
    matched_text = ""
    if "matched" in seen:
        body = seen["matched"]
        head, dot, tail = body.partition(".")
        found = _INTEGER.search(head)
        if found:
            matched_findings = int(found.group())
            matched_text = tail.strip() if dot else ""
        else:
            matched_text = body.strip()
            warnings.append("no leading integer in [Matched Findings]; defaulting to 0")
    else:
        warnings.append("missing [Matched Findings] section; defaulting to 0")

    overall_score: float | None = None
    if "score" in seen:
        if expect_score:
            found = _REAL.search(seen["score"])
            if found:
                overall_score = float(found.group())
                if not 0.0 <= overall_score <= 1.0:
                    warnings.append(f"overall score {overall_score} outside [0, 1]; clamped")
                    overall_score = min(1.0, max(0.0, overall_score))
            else:
                warnings.append("no number in [Overall Accuracy Score] section")
        else:
            warnings.append("unexpected [Overall Accuracy Score] section discarded")
    elif expect_score:
        warnings.append("missing [Overall Accuracy Score] section")

    if strict and warnings:
        raise ParseError("; ".join(warnings), raw=raw)

    return JudgeAssessment(
        explanation=explanation,
        significant=significant,
        insignificant=insignificant,
        significant_detail=sig_detail,
        insignificant_detail=insig_detail,
        matched_findings=matched_findings,
        matched_text=matched_text,
        overall_score=overall_score,
        parse_warnings=warnings,
    )


def format_assessment(assessment: JudgeAssessment) -> str:
    """Emit the bracketed block shape; parse_assessment round-trips it."""

    def count_line(tag: str, count: int, detail: str) -> str:
        line = f"({tag}) {CATEGORY_LABELS[tag]}: {count}."
        return f"{line} {detail}" if detail else line

    lines = ["[Explanation]:", assessment.explanation, ""]
    lines.append("[Clinically Significant Errors]:")
    for tag in CLINICAL_TAGS:
        lines.append(count_line(tag, assessment.significant.get(tag, 0), assessment.significant_detail.get(tag, "")))
    lines.append("")
    lines.append("[Clinically Insignificant Errors]:")
    for tag in CLINICAL_TAGS:
        lines.append(count_line(tag, assessment.insignificant.get(tag, 0), assessment.insignificant_detail.get(tag, "")))
    lines.append("")
    lines.append("[Matched Findings]:")
    matched = f"{assessment.matched_findings}."
    if assessment.matched_text:
        matched = f"{matched} {assessment.matched_text}"
    lines.append(matched)
    if assessment.overall_score is not None:
        lines += ["", "[Overall Accuracy Score]:", f"{assessment.overall_score:.2f}"]
    return "\n".join(lines)


def _strict_json(raw: str) -> dict:
    text = strip_code_fences(raw).strip()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", raw=raw) from exc
    if not isinstance(obj, dict):
        raise ParseError("expected a JSON object", raw=raw)
    return obj


def parse_injection_response(raw: str) -> tuple[str, list[ChangeDetail]]:
    """Parse the injection model's JSON into (modified_report, changes)."""
    obj = _strict_json(raw)
    for key in ("modified_report", "changes_detail"):
        if key not in obj:
            raise ParseError(f"missing required key {key!r}", raw=raw)
    if not isinstance(obj["changes_detail"], list):
        raise ParseError("changes_detail must be an array", raw=raw)
    changes = []
    for i, entry in enumerate(obj["changes_detail"]):
        if not isinstance(entry, dict):
            raise ParseError(f"changes_detail[{i}] must be an object", raw=raw)
        for key in ("sentence_index", "original", "modified"):
            if key not in entry:
                raise ParseError(f"changes_detail[{i}] missing required key {key!r}", raw=raw)
        try:
            index = int(entry["sentence_index"])
        except (TypeError, ValueError) as exc:
            raise ParseError(f"changes_detail[{i}] non-integer sentence_index", raw=raw) from exc
        if index < 0:
            raise ParseError(f"changes_detail[{i}] negative sentence_index", raw=raw)
        changes.append(
            ChangeDetail(
                sentence_index=index,
                original=str(entry["original"]),
                modified=str(entry["modified"]),
                explanation=str(entry.get("explanation", "")),
                severity=str(entry.get("severity", "")),
                harm_potential=str(entry.get("harm_potential", "")),
            )
        )
    return str(obj["modified_report"]), changes


def parse_validation_response(raw: str) -> ValidationVerdict:
    """Parse the plausibility check's JSON verdict."""
    obj = _strict_json(raw)
    if "plausible" not in obj:
        raise ParseError("missing required key 'plausible'", raw=raw)
    plausible = bool(obj["plausible"])
    reason = str(obj.get("reason", "") or "")
    if not plausible and not reason:
        reason = "no reason given"
    return ValidationVerdict(plausible=plausible, reason=reason)
