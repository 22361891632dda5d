"""Reference-based radiology report evaluation with LLM judges.

Submodules: corpus (data model), prompts (template assembly), judge
(completion client with record/replay), parse (output parsing), metrics
(score family), analysis (correlation, ensembling, SFT export), pipeline
(end-to-end runs), cli (command-line front end).
"""

from .corpus import (
    CATEGORY_LABELS,
    CorpusError,
    ErrorCategory,
    ExpertAnnotation,
    LoadResult,
    ReportPair,
    load_pairs,
    normalize_score,
    sample_subset,
    save_pairs,
    total_significant,
)
from .metrics import (
    F1_WEIGHTS,
    FORMULA_WEIGHTS,
    GREEN_WEIGHTS,
    MetricWeights,
    ScoreBundle,
    ScoreValue,
    category_f1,
    error_count,
    f1_score,
    green_score,
    scores_from_assessment,
    sweep,
    unified_score,
    weighted_score,
)
from .parse import (
    ChangeDetail,
    JudgeAssessment,
    ParseError,
    ValidationVerdict,
    format_assessment,
    parse_assessment,
    parse_injection_response,
    parse_validation_response,
)
from .prompts import (
    FewShotConfig,
    PromptError,
    PromptVariant,
    ShotExample,
    derive_shot_score,
    render_few_shot,
    render_injection_prompt,
    render_validation_prompt,
    render_zero_shot,
)
from .judge import Cassette, JudgeClient, JudgeError, JudgeRequest, JudgeResponse, ModelConfig
from .analysis import (
    CorrelationResult,
    EnsembleModel,
    apply_ensemble,
    average_ensemble,
    binned_error_means,
    correlate,
    export_sft,
    fit_linear_ensemble,
    kendall_tau,
)
from .pipeline import (
    InjectionRecord,
    evaluate_corpus,
    run_detection_study,
    run_injection,
)

__version__ = "0.1.0"
