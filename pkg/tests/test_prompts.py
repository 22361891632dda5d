"""Prompt templates, variants, few-shot rendering, injection prompts."""

import pytest

from conftest import make_pair
from radjudge.prompts import (
    FEW_SHOT_MODES,
    FewShotConfig,
    INJECTION_USER_TEMPLATE,
    PromptError,
    PromptVariant,
    RANDOM_K_CHOICES,
    REGENERATION_NONCE,
    VARIANT_KINDS,
    derive_shot_score,
    get_variant,
    load_illustrations,
    load_shots,
    load_template,
    render_few_shot,
    render_injection_prompt,
    render_validation_prompt,
    render_zero_shot,
)

SCORE_HEADER = "[Overall Accuracy Score]:"


class TestTemplates:
    def test_all_variants_load(self):
        for kind in VARIANT_KINDS:
            variant = PromptVariant.load(kind)
            assert variant.kind == kind
            assert "{reference}" in variant.template
            assert "{candidate}" in variant.template

    def test_load_is_case_insensitive(self):
        assert get_variant("green").kind == "GREEN"
        assert get_variant("VERT").kind == "VERT"

    def test_unknown_kind_rejected(self):
        with pytest.raises(PromptError):
            PromptVariant.load("nope")

    def test_green_has_no_score_section(self):
        assert SCORE_HEADER not in PromptVariant.load("GREEN").template

    def test_score_variants_request_a_score(self):
        for kind in ("VERT", "FORMULA", "RUBRIC"):
            assert SCORE_HEADER in PromptVariant.load(kind).template

    def test_fragments_fully_expanded(self):
        for kind in VARIANT_KINDS:
            template = PromptVariant.load(kind).template
            assert "<<" not in template

    def test_variant_validation_rejects_duplicate_placeholder(self):
        with pytest.raises(PromptError):
            PromptVariant(kind="GREEN", template="{reference} {reference} {candidate}")
        with pytest.raises(PromptError):
            PromptVariant(kind="GREEN", template="{reference} only")

    def test_unknown_template_name_raises(self):
        with pytest.raises(PromptError):
            load_template("does_not_exist")


class TestZeroShot:
    def test_substitutes_both_reports(self):
        pair = make_pair(1, reference="REF TEXT HERE", candidate="CAND TEXT HERE")
        for kind in VARIANT_KINDS:
            rendered = render_zero_shot(PromptVariant.load(kind), pair)
            assert "REF TEXT HERE" in rendered
            assert "CAND TEXT HERE" in rendered
            assert "{reference}" not in rendered
            assert "{candidate}" not in rendered


class TestShotScore:
    def test_derive_shot_score_values(self):
        assert derive_shot_score(0) == 1.0
        assert derive_shot_score(1) == 0.85
        assert derive_shot_score(2) == 0.7
        assert derive_shot_score(7) == 0.0  # floor at zero
        with pytest.raises(PromptError):
            derive_shot_score(-1)


def annotated_pool(n=15, start=100):
    return [make_pair(start + i, sig={"a": i % 3, "b": (i + 1) % 2}) for i in range(n)]


class TestFewShotConfig:
    def test_random_k_requires_listed_k(self):
        for k in RANDOM_K_CHOICES:
            FewShotConfig(mode="random_k", k=k)
        with pytest.raises(PromptError):
            FewShotConfig(mode="random_k", k=4)
        FewShotConfig(mode="random_k", k=4, allow_any_k=True)
        with pytest.raises(PromptError):
            FewShotConfig(mode="random_k")

    def test_unknown_mode_rejected(self):
        with pytest.raises(PromptError):
            FewShotConfig(mode="bogus")


class TestFewShotRendering:
    def test_modes_registry(self):
        assert FEW_SHOT_MODES == (
            "random_k", "rad_err", "rate_err", "rad_err_10_human", "rate_err_10_vert",
        )

    def test_random_k_renders_k_blocks(self):
        pair = make_pair(1)
        config = FewShotConfig(mode="random_k", k=3, shot_source=annotated_pool(), seed=5)
        rendered = render_few_shot(PromptVariant.load("VERT"), config, pair)
        assert rendered.count("--- Example ") == 3
        assert "5. Examples:" in rendered
        # shot scores derive from the annotation error totals
        assert rendered.count(SCORE_HEADER) >= 3

    def test_random_k_deterministic_per_seed(self):
        pair = make_pair(1)
        pool = annotated_pool()
        one = render_few_shot(
            PromptVariant.load("VERT"), FewShotConfig(mode="random_k", k=5, shot_source=pool, seed=2), pair
        )
        two = render_few_shot(
            PromptVariant.load("VERT"), FewShotConfig(mode="random_k", k=5, shot_source=pool, seed=2), pair
        )
        other = render_few_shot(
            PromptVariant.load("VERT"), FewShotConfig(mode="random_k", k=5, shot_source=pool, seed=3), pair
        )
        assert one == two
        assert one != other

    def test_random_k_excludes_evaluated_pair(self):
        pool = annotated_pool(n=11)
        pair = pool[0]
        config = FewShotConfig(mode="random_k", k=10, shot_source=pool, seed=0)
        rendered = render_few_shot(PromptVariant.load("VERT"), config, pair)
        # every other pool member appears; the evaluated pair's candidate only
        # appears once (as the candidate under evaluation), never as a shot
        assert rendered.count(pair.candidate) == 1

    def test_random_k_insufficient_pool_raises(self):
        config = FewShotConfig(mode="random_k", k=10, shot_source=annotated_pool(n=5), seed=0)
        with pytest.raises(PromptError, match="eligible shots"):
            render_few_shot(PromptVariant.load("VERT"), config, make_pair(1))

    def test_rad_err_renders_six_category_tagged_blocks(self):
        rendered = render_few_shot(
            PromptVariant.load("VERT"), FewShotConfig(mode="rad_err"), make_pair(1)
        )
        for tag in "abcdef":
            assert f"(illustrating error category ({tag}))" in rendered
        assert rendered.count("--- Example ") == 6
        # one significant error per shot scores 0.85
        assert rendered.count("0.85") >= 6

    def test_rate_err_renders_four_blocks_with_explanations(self):
        rendered = render_few_shot(
            PromptVariant.load("VERT"), FewShotConfig(mode="rate_err"), make_pair(1)
        )
        assert rendered.count("--- Example ") == 4
        assert "[Explanation]:" in rendered

    def test_rad_err_10_human_has_illustrations_then_ten_shots(self):
        config = FewShotConfig(mode="rad_err_10_human", shot_source=annotated_pool(), seed=1)
        rendered = render_few_shot(PromptVariant.load("VERT"), config, make_pair(1))
        assert "5. Error Type Illustrations:" in rendered
        assert "6. Full Assessment Examples:" in rendered
        assert rendered.count("--- Error type (") == 6
        assert rendered.count("--- Example ") == 10

    def test_rate_err_10_vert_uses_stored_assessments(self):
        rendered = render_few_shot(
            PromptVariant.load("VERT"), FewShotConfig(mode="rate_err_10_vert"), make_pair(1)
        )
        assert "5. Error Type Illustrations:" in rendered
        assert "6. Full Assessment Examples:" in rendered
        assert rendered.count("--- Example ") == 10
        assert "[Matched Findings]:" in rendered

    def test_few_shot_appends_after_base_prompt(self):
        pair = make_pair(1)
        base = render_zero_shot(PromptVariant.load("VERT"), pair)
        rendered = render_few_shot(PromptVariant.load("VERT"), FewShotConfig(mode="rad_err"), pair)
        assert rendered.startswith(base.rstrip("\n"))
        assert rendered.endswith("\n")

    def test_corpus_backed_mode_requires_source(self):
        with pytest.raises(PromptError, match="shot_source"):
            render_few_shot(
                PromptVariant.load("VERT"),
                FewShotConfig(mode="random_k", k=3),
                make_pair(1),
            )


class TestShotResources:
    def test_rate_err_shots_have_scores(self):
        shots = load_shots("rate_err")
        assert len(shots) == 4
        assert all(s.score is not None for s in shots)

    def test_vert_shot_store_has_ten(self):
        shots = load_shots("rate_err_10_vert")
        assert len(shots) == 10
        assert all(s.score is not None for s in shots)
        assert all(s.matched_findings is not None for s in shots)

    def test_illustration_sets_cover_all_clinical_categories(self):
        for name in ("illustrations_rad", "illustrations_rate"):
            items = load_illustrations(name)
            assert sorted(i.category for i in items) == list("abcdef")


class TestInjectionPrompts:
    def test_system_user_split(self):
        system, user = render_injection_prompt("a", 2, "Some report text.")
        assert "ERROR TYPE (a)" in system
        assert user == INJECTION_USER_TEMPLATE.format(k=2, report="Some report text.")

    def test_type_b_uses_omission_template(self):
        system, _ = render_injection_prompt("b", 1, "Report.")
        assert "ERROR TYPE (b)" in system
        assert "Omission" in system

    def test_regeneration_nonce_only_after_first_attempt(self):
        _, first = render_injection_prompt("a", 1, "Report.", attempt=1)
        _, second = render_injection_prompt("a", 1, "Report.", attempt=2)
        assert REGENERATION_NONCE.format(attempt=2) not in first
        assert second.endswith(REGENERATION_NONCE.format(attempt=2))
        assert second.startswith(first)

    def test_invalid_arguments_rejected(self):
        with pytest.raises(PromptError):
            render_injection_prompt("c", 1, "Report.")
        with pytest.raises(PromptError):
            render_injection_prompt("a", 4, "Report.")
        with pytest.raises(PromptError):
            render_injection_prompt("a", 1, "")

    def test_validation_prompt_lists_changes(self):
        system, user = render_validation_prompt(
            "Modified report.", "CT", "chest",
            [{"sentence_index": 0, "original": "Old.", "modified": "New."}],
        )
        assert "MODALITY: CT" in user
        assert "REGION: chest" in user
        assert "MODIFIED REPORT:\nModified report." in user
        assert "1. [sentence 0] 'Old.' -> 'New.'" in user
        assert system == load_template("injection/validation")

    def test_validation_prompt_requires_changes(self):
        with pytest.raises(PromptError):
            render_validation_prompt("Modified.", "CT", "chest", [])
