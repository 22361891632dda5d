"""Prompt assembly for the judge variants and the error-injection flow.

Templates live next to this module as resource files:

    green.txt / vert.txt / formula.txt / rubric.txt   zero-shot judge prompts
    fragments/*.txt                                   shared template pieces
    shots/*.jsonl                                     curated few-shot data
    injection/{type_a,type_b,validation}.txt          injection system prompts

A line consisting of ``<<name>>`` in a template is expanded from
``fragments/name.txt`` at load time.  Report texts are substituted into the
``{reference}`` / ``{candidate}`` placeholders, each of which appears exactly
once per template; everything else is emitted byte for byte, which is what
makes the checksum tests meaningful.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from ..corpus import (
    CATEGORY_LABELS,
    CLINICAL_TAGS,
    ERROR_COUNTS,
    ReportPair,
    load_pairs,
    normalize_score,
    sample_subset,
    total_significant,
)

VARIANT_KINDS = ("GREEN", "VERT", "FORMULA", "RUBRIC")
FEW_SHOT_MODES = ("random_k", "rad_err", "rate_err", "rad_err_10_human", "rate_err_10_vert")
RANDOM_K_CHOICES = (3, 5, 10)

SIGNIFICANT_HEADER = "[Clinically Significant Errors]:"
INSIGNIFICANT_HEADER = "[Clinically Insignificant Errors]:"
MATCHED_HEADER = "[Matched Findings]:"
SCORE_HEADER = "[Overall Accuracy Score]:"
EXPLANATION_HEADER = "[Explanation]:"

# User-turn wording that accompanies the injection/validation system prompts.
INJECTION_USER_TEMPLATE = "Number of errors to inject: {k}\n\nREPORT:\n{report}"
REGENERATION_NONCE = "[regeneration attempt {attempt}]"

_FRAGMENT_LINE = re.compile(r"^<<([a-z0-9_]+)>>$", re.MULTILINE)
_PLACEHOLDER = re.compile(r"\{([a-z_]+)\}")


class PromptError(ValueError):
    """Raised for malformed templates, bad configs, and shot problems."""


def _read_resource(relpath: str) -> str:
    return (resources.files(__package__) / relpath).read_text(encoding="utf-8")


_template_cache: dict[str, str] = {}


def load_template(name: str) -> str:
    """Load a template file with ``<<fragment>>`` lines expanded."""
    cached = _template_cache.get(name)
    if cached is not None:
        return cached

    def expand(match: re.Match) -> str:
        return _read_resource(f"fragments/{match.group(1)}.txt").rstrip("\n")

    try:
        text = _FRAGMENT_LINE.sub(expand, _read_resource(f"{name}.txt"))
    except FileNotFoundError as exc:
        raise PromptError(f"no template named {name!r}") from exc
    _template_cache[name] = text
    return text


@dataclass(frozen=True)
class PromptVariant:
    """One of the four judge prompt templates."""

    kind: str
    template: str

    def __post_init__(self) -> None:
        if self.kind not in VARIANT_KINDS:
            raise PromptError(f"unknown variant kind {self.kind!r}; expected one of {VARIANT_KINDS}")
        for placeholder in ("{reference}", "{candidate}"):
            if self.template.count(placeholder) != 1:
                raise PromptError(f"{self.kind}: template must contain {placeholder} exactly once")
        extra = sorted(set(_PLACEHOLDER.findall(self.template)) - {"reference", "candidate"})
        if extra:
            raise PromptError(f"{self.kind}: unresolved placeholders {extra}")

    @classmethod
    def load(cls, kind: str) -> "PromptVariant":
        normalized = kind.upper()
        if normalized not in VARIANT_KINDS:
            raise PromptError(f"unknown variant kind {kind!r}; expected one of {VARIANT_KINDS}")
        return cls(kind=normalized, template=load_template(normalized.lower()))


def get_variant(kind: str) -> PromptVariant:
    return PromptVariant.load(kind)


def render_zero_shot(variant: PromptVariant, pair: ReportPair) -> str:
    if not pair.reference or not pair.candidate:
        raise PromptError(f"pair {pair.id!r}: reference and candidate must be non-empty")
    return variant.template.replace("{reference}", pair.reference).replace("{candidate}", pair.candidate)


def derive_shot_score(sig_errors: int) -> float:
    """Score attached to an error-annotated shot: max(0, 1 - 0.15 * sig_errors)."""
    if sig_errors < 0:
        raise PromptError("sig_errors must be non-negative")
    return max(0.0, 1.0 - 0.15 * sig_errors)


@dataclass(frozen=True)
class ShotExample:
    """One few-shot example; fields beyond the reports are mode-dependent."""

    reference: str
    candidate: str
    significant: Mapping[str, int] | None = None
    insignificant: Mapping[str, int] | None = None
    score: float | None = None
    explanation: str | None = None
    matched_findings: int | None = None
    matched_text: str | None = None
    illustrates: str | None = None

    def __post_init__(self) -> None:
        if not self.reference or not self.candidate:
            raise PromptError("shot reference and candidate must be non-empty")
        if self.score is not None and not 0.0 <= self.score <= 1.0:
            raise PromptError(f"shot score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class Illustration:
    """Short error-type vignette used by the section-5 illustration blocks."""

    category: str
    label: str
    reference: str
    candidate: str
    note: str


@dataclass(frozen=True)
class FewShotConfig:
    mode: str
    k: int | None = None
    shot_source: object = None  # path or sequence of ReportPair, for corpus-backed modes
    seed: int = 0
    allow_any_k: bool = False

    def __post_init__(self) -> None:
        if self.mode not in FEW_SHOT_MODES:
            raise PromptError(f"unknown few-shot mode {self.mode!r}; expected one of {FEW_SHOT_MODES}")
        if self.mode == "random_k":
            if self.k is None:
                raise PromptError("random_k mode requires k")
            if self.k not in RANDOM_K_CHOICES and not self.allow_any_k:
                raise PromptError(f"k={self.k} not in {RANDOM_K_CHOICES}; pass allow_any_k to override")
            if self.k < 1:
                raise PromptError("k must be at least 1")


def _load_jsonl(relpath: str) -> list[dict]:
    rows = []
    for line in _read_resource(relpath).splitlines():
        if line.strip():
            rows.append(json.loads(line))
    return rows


def load_shots(name: str) -> list[ShotExample]:
    return [ShotExample(**row) for row in _load_jsonl(f"shots/{name}.jsonl")]


def load_illustrations(name: str) -> list[Illustration]:
    return [Illustration(**row) for row in _load_jsonl(f"shots/{name}.jsonl")]


def _score_text(score: float) -> str:
    return f"{score:.2f}"


def _counts_lines(header: str, counts: Mapping[str, int] | None) -> list[str]:
    counts = counts or {}
    lines = [header]
    for tag in CLINICAL_TAGS:
        lines.append(f"({tag}) {CATEGORY_LABELS[tag]}: {counts.get(tag, 0)}.")
    return lines


def _example_header(n: int, illustrates: str | None) -> str:
    if illustrates:
        return f"--- Example {n} (illustrating error category ({illustrates})) ---"
    return f"--- Example {n} ---"


def _shot_block(
    n: int,
    shot: ShotExample,
    score: float,
    with_counts: bool,
    with_explanation: bool = False,
    with_matched: bool = False,
    tag_category: bool = False,
) -> str:
    if score is None:
        raise PromptError("shot has no score to render")
    parts = [
        _example_header(n, shot.illustrates if tag_category else None),
        f"Reference Report:\n{shot.reference}",
        "",
        f"Candidate Report:\n{shot.candidate}",
        "",
    ]
    if with_explanation and shot.explanation:
        parts += [f"{EXPLANATION_HEADER}\n{shot.explanation}", ""]
    if with_counts:
        parts += ["\n".join(_counts_lines(SIGNIFICANT_HEADER, shot.significant)), ""]
        parts += ["\n".join(_counts_lines(INSIGNIFICANT_HEADER, shot.insignificant)), ""]
    if with_matched:
        matched = shot.matched_text or ""
        if shot.matched_findings is not None:
            matched = f"{shot.matched_findings}. {matched}" if matched else str(shot.matched_findings)
        parts += [f"{MATCHED_HEADER}\n{matched}", ""]
    parts.append(f"{SCORE_HEADER}\n{_score_text(score)}")
    # the "" entries become the blank lines between sections
    return "\n".join(parts)


def _illustration_block(item: Illustration) -> str:
    return (
        f"--- Error type ({item.category}): {item.label} ---\n"
        f"Reference: {item.reference}\n"
        f"Candidate: {item.candidate}\n"
        f"→ {item.note}"
    )


def _shot_score(pair: ReportPair) -> float:
    ann = pair.annotation
    if ann is None:
        raise PromptError(f"shot pair {pair.id!r} has no annotation")
    if ann.kind == ERROR_COUNTS:
        return derive_shot_score(total_significant(ann))
    return normalize_score(ann.raw_score, ann.scale_max)


def _resolve_source(config: FewShotConfig) -> list[ReportPair]:
    source = config.shot_source
    if source is None:
        raise PromptError(f"mode {config.mode!r} requires a shot_source corpus")
    if isinstance(source, (str, Path)):
        return list(load_pairs(source).pairs)
    return list(source)


def _check_overlap(pair: ReportPair, reference: str, candidate: str) -> None:
    if pair.reference == reference and pair.candidate == candidate:
        raise PromptError(f"shot overlaps with evaluated pair {pair.id!r}")


def _sampled_shots(config: FewShotConfig, pair: ReportPair, n: int, counts_only: bool) -> list[ReportPair]:
    pool = [
        p
        for p in _resolve_source(config)
        if p.annotation is not None and (not counts_only or p.annotation.kind == ERROR_COUNTS)
    ]
    if len([p for p in pool if p.id != pair.id]) < n:
        raise PromptError(f"mode {config.mode!r} needs {n} eligible shots, found fewer")
    sampled = sample_subset(pool, n, config.seed, exclude_ids={pair.id})
    for shot in sampled:
        _check_overlap(pair, shot.reference, shot.candidate)
    return sampled


def render_few_shot(variant: PromptVariant, config: FewShotConfig, pair: ReportPair) -> str:
    """Zero-shot prompt plus the numbered example sections for ``config.mode``."""
    base = render_zero_shot(variant, pair).rstrip("\n")
    sections: list[str] = []

    if config.mode == "random_k":
        shots = _sampled_shots(config, pair, config.k, counts_only=False)
        blocks = []
        for n, shot_pair in enumerate(shots, start=1):
            shot = ShotExample(reference=shot_pair.reference, candidate=shot_pair.candidate)
            blocks.append(_shot_block(n, shot, _shot_score(shot_pair), with_counts=False))
        sections.append("5. Examples:\n\n" + "\n\n".join(blocks))

    elif config.mode == "rad_err":
        blocks = []
        for n, item in enumerate(load_illustrations("illustrations_rad"), start=1):
            _check_overlap(pair, item.reference, item.candidate)
            shot = ShotExample(
                reference=item.reference,
                candidate=item.candidate,
                significant={item.category: 1},
                insignificant={},
                illustrates=item.category,
            )
            blocks.append(_shot_block(n, shot, derive_shot_score(1), with_counts=True, tag_category=True))
        sections.append("5. Examples:\n\n" + "\n\n".join(blocks))

    elif config.mode == "rate_err":
        blocks = []
        for n, shot in enumerate(load_shots("rate_err"), start=1):
            _check_overlap(pair, shot.reference, shot.candidate)
            blocks.append(
                _shot_block(n, shot, shot.score, with_counts=True, with_explanation=True, tag_category=True)
            )
        sections.append("5. Examples:\n\n" + "\n\n".join(blocks))

    elif config.mode == "rad_err_10_human":
        illos = [_illustration_block(i) for i in load_illustrations("illustrations_rad")]
        sections.append("5. Error Type Illustrations:\n\n" + "\n\n".join(illos))
        shots = _sampled_shots(config, pair, 10, counts_only=True)
        blocks = []
        for n, shot_pair in enumerate(shots, start=1):
            ann = shot_pair.annotation
            shot = ShotExample(
                reference=shot_pair.reference,
                candidate=shot_pair.candidate,
                significant=ann.significant,
                insignificant=ann.insignificant,
            )
            score = derive_shot_score(total_significant(ann))
            blocks.append(_shot_block(n, shot, score, with_counts=True))
        sections.append("6. Full Assessment Examples:\n\n" + "\n\n".join(blocks))

    elif config.mode == "rate_err_10_vert":
        illos = [_illustration_block(i) for i in load_illustrations("illustrations_rate")]
        sections.append("5. Error Type Illustrations:\n\n" + "\n\n".join(illos))
        blocks = []
        for n, shot in enumerate(load_shots("rate_err_10_vert"), start=1):
            _check_overlap(pair, shot.reference, shot.candidate)
            blocks.append(
                _shot_block(
                    n, shot, shot.score, with_counts=True, with_explanation=True, with_matched=True
                )
            )
        sections.append("6. Full Assessment Examples:\n\n" + "\n\n".join(blocks))

    return base + "\n\n" + "\n\n".join(sections) + "\n"


def render_injection_prompt(
    error_type: str, k: int, report: str, attempt: int = 1
) -> tuple[str, str]:
    """System/user pair instructing the model to inject k errors of one type."""
    if error_type not in ("a", "b"):
        raise PromptError(f"unsupported injection error type {error_type!r}; expected 'a' or 'b'")
    if k not in (1, 2, 3):
        raise PromptError(f"k must be 1, 2, or 3, got {k}")
    if not report:
        raise PromptError("report must be non-empty")
    system = load_template(f"injection/type_{error_type}")
    user = INJECTION_USER_TEMPLATE.format(k=k, report=report)
    if attempt > 1:
        user += "\n\n" + REGENERATION_NONCE.format(attempt=attempt)
    return system, user


def _format_change(change: object, n: int) -> str:
    if isinstance(change, Mapping):
        idx = change.get("sentence_index", "?")
        original = change.get("original", "")
        modified = change.get("modified", "")
        return f"{n}. [sentence {idx}] '{original}' -> '{modified}'"
    return f"{n}. {change}"


def render_validation_prompt(
    modified: str, modality: str, region: str, changes: Sequence
) -> tuple[str, str]:
    """System/user pair asking whether a modified report stays plausible."""
    if not changes:
        raise PromptError("changes must be non-empty")
    system = load_template("injection/validation")
    lines = [
        f"MODALITY: {modality}",
        f"REGION: {region}",
        "",
        "MODIFIED REPORT:",
        modified,
        "",
        "CHANGES:",
    ]
    lines += [_format_change(change, n) for n, change in enumerate(changes, start=1)]
    return system, "\n".join(lines)
