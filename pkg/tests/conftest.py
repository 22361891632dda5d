"""Shared test scaffolding: scripted transports and small corpus factories."""

from __future__ import annotations

from pathlib import Path

from radjudge.corpus import ExpertAnnotation, ReportPair
from radjudge.judge import JudgeClient, TransportError

DATA_DIR = Path(__file__).resolve().parent / "data"
GOLDEN_DIR = DATA_DIR / "golden"
CORPUS_20 = DATA_DIR / "corpus_20.jsonl"
CASSETTE_VERT = DATA_DIR / "cassette_vert.jsonl"
CORPUS_SFT_100 = DATA_DIR / "corpus_sft_100.jsonl"


class DictTransport:
    """Canned response text keyed by the exact user prompt."""

    def __init__(self, responses):
        self.responses = dict(responses)
        self.calls = 0

    def send(self, request):
        self.calls += 1
        try:
            return self.responses[request.user], {"total_tokens": 1}
        except KeyError:
            raise TransportError("no canned response for this prompt", retryable=False)


class SequenceTransport:
    """Pops scripted outcomes in order; exceptions are raised, strings returned."""

    def __init__(self, outcomes):
        self.outcomes = list(outcomes)
        self.requests = []

    def send(self, request):
        self.requests.append(request)
        if not self.outcomes:
            raise TransportError("script exhausted", retryable=False)
        item = self.outcomes.pop(0)
        if isinstance(item, Exception):
            raise item
        return item, {"total_tokens": 1}


class RoutingTransport:
    """Delegates to handler(request) -> str; for multi-stage pipelines."""

    def __init__(self, handler):
        self.handler = handler
        self.requests = []

    def send(self, request):
        self.requests.append(request)
        return self.handler(request), {"total_tokens": 1}


def instant_client(transport) -> JudgeClient:
    """Client whose retry backoff never actually sleeps."""
    return JudgeClient(transport=transport, sleeper=lambda seconds: None)


def make_pair(i: int = 1, sig=None, insig=None, score=None, scale_max: float = 5.0, **kw) -> ReportPair:
    annotation = None
    if sig is not None or insig is not None:
        annotation = ExpertAnnotation.from_counts(sig, insig)
    elif score is not None:
        annotation = ExpertAnnotation.from_score(score, scale_max)
    defaults = dict(
        id=f"pair-{i:03d}",
        dataset="unit",
        reference=f"Reference finding set {i}. No acute abnormality.",
        candidate=f"Candidate reading {i}. Lungs grossly clear.",
        annotation=annotation,
    )
    defaults.update(kw)
    return ReportPair(**defaults)


def assessment_block(
    sig=None,
    insig=None,
    matched: int = 3,
    matched_text: str = "clear lungs; normal heart size; no effusion",
    score: float | None = None,
    explanation: str = "Counts assigned per category.",
) -> str:
    """Hand-rolled judge output, independent of format_assessment."""
    from radjudge.corpus import CATEGORY_LABELS, CLINICAL_TAGS

    sig = sig or {}
    insig = insig or {}
    lines = ["[Explanation]:", explanation, "", "[Clinically Significant Errors]:"]
    for tag in CLINICAL_TAGS:
        lines.append(f"({tag}) {CATEGORY_LABELS[tag]}: {sig.get(tag, 0)}.")
    lines += ["", "[Clinically Insignificant Errors]:"]
    for tag in CLINICAL_TAGS:
        lines.append(f"({tag}) {CATEGORY_LABELS[tag]}: {insig.get(tag, 0)}.")
    lines += ["", "[Matched Findings]:", f"{matched}. {matched_text}"]
    if score is not None:
        lines += ["", "[Overall Accuracy Score]:", f"{score:.2f}"]
    return "\n".join(lines)
