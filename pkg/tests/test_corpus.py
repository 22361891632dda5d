"""Corpus data model, JSONL loading, and seeded sampling."""

import json

import pytest

from conftest import CORPUS_20, GOLDEN_DIR, make_pair
from radjudge.corpus import (
    CATEGORY_TAGS,
    CLINICAL_TAGS,
    CorpusError,
    ERROR_COUNTS,
    ExpertAnnotation,
    ReportPair,
    SCALAR_SCORE,
    load_pairs,
    normalize_score,
    sample_subset,
    save_pairs,
    shuffled,
    total_significant,
    with_candidate,
)


def test_category_tags_cover_a_through_g():
    assert CATEGORY_TAGS == ("a", "b", "c", "d", "e", "f", "g")
    assert CLINICAL_TAGS == ("a", "b", "c", "d", "e", "f")


class TestExpertAnnotation:
    def test_counts_fill_missing_categories_with_zero(self):
        ann = ExpertAnnotation.from_counts({"a": 2})
        assert ann.kind == ERROR_COUNTS
        assert ann.significant["a"] == 2
        assert all(ann.significant[t] == 0 for t in CATEGORY_TAGS if t != "a")
        assert all(ann.insignificant[t] == 0 for t in CATEGORY_TAGS)

    def test_unknown_tag_rejected(self):
        with pytest.raises(CorpusError):
            ExpertAnnotation.from_counts({"z": 1})

    def test_negative_and_bool_counts_rejected(self):
        with pytest.raises(CorpusError):
            ExpertAnnotation.from_counts({"a": -1})
        with pytest.raises(CorpusError):
            ExpertAnnotation.from_counts({"a": True})

    def test_kinds_are_mutually_exclusive(self):
        with pytest.raises(CorpusError):
            ExpertAnnotation(kind=ERROR_COUNTS, significant={"a": 1}, raw_score=0.5)
        with pytest.raises(CorpusError):
            ExpertAnnotation(kind=SCALAR_SCORE, raw_score=1.0, scale_max=5.0, significant={"a": 1})
        with pytest.raises(CorpusError):
            ExpertAnnotation(kind="other")

    def test_scalar_score_range_checked(self):
        assert ExpertAnnotation.from_score(5.0).raw_score == 5.0
        with pytest.raises(CorpusError):
            ExpertAnnotation.from_score(5.5, scale_max=5.0)
        with pytest.raises(CorpusError):
            ExpertAnnotation.from_score(-0.1, scale_max=5.0)
        with pytest.raises(CorpusError):
            ExpertAnnotation.from_score(1.0, scale_max=0.0)

    def test_json_round_trip_both_kinds(self):
        counts = ExpertAnnotation.from_counts({"b": 2}, {"g": 1})
        assert ExpertAnnotation.from_json_dict(counts.to_json_dict()) == counts
        score = ExpertAnnotation.from_score(3.5, 5.0)
        assert ExpertAnnotation.from_json_dict(score.to_json_dict()) == score


class TestReportPair:
    def test_empty_fields_rejected(self):
        with pytest.raises(CorpusError):
            ReportPair(id="", dataset="d", reference="r", candidate="c")
        with pytest.raises(CorpusError):
            ReportPair(id="x", dataset="d", reference="", candidate="c")
        with pytest.raises(CorpusError):
            ReportPair(id="x", dataset="d", reference="r", candidate="")

    def test_json_round_trip(self):
        pair = make_pair(7, sig={"a": 1}, modality="CT", anatomy="abdomen")
        assert ReportPair.from_json_dict(pair.to_json_dict()) == pair

    def test_with_candidate_replaces_only_candidate(self):
        pair = make_pair(1, sig={"a": 1})
        swapped = with_candidate(pair, "different text")
        assert swapped.candidate == "different text"
        assert swapped.reference == pair.reference
        assert swapped.id == pair.id
        assert swapped.annotation == pair.annotation


class TestLoadPairs:
    def test_loads_committed_corpus(self):
        result = load_pairs(CORPUS_20)
        assert len(result) == 20
        assert result.skipped == 0
        assert all(p.annotation is not None for p in result.pairs)

    def test_missing_file_raises(self, tmp_path):
        with pytest.raises(CorpusError):
            load_pairs(tmp_path / "absent.jsonl")

    def test_tolerant_mode_skips_and_reports(self, tmp_path):
        path = tmp_path / "c.jsonl"
        good = make_pair(1).to_json_dict()
        path.write_text(
            json.dumps(good) + "\n" + "not json\n" + '{"id": "x"}\n',
            encoding="utf-8",
        )
        result = load_pairs(path)
        assert len(result) == 1
        assert result.skipped == 2
        assert [lineno for lineno, _ in result.errors] == [2, 3]

    def test_strict_mode_raises_with_line_number(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text("not json\n", encoding="utf-8")
        with pytest.raises(CorpusError, match=":1:"):
            load_pairs(path, strict=True)

    def test_duplicate_id_raises_even_tolerant(self, tmp_path):
        path = tmp_path / "c.jsonl"
        row = json.dumps(make_pair(1).to_json_dict())
        path.write_text(row + "\n" + row + "\n", encoding="utf-8")
        with pytest.raises(CorpusError, match="duplicate"):
            load_pairs(path)

    def test_save_load_round_trip(self, tmp_path):
        pairs = [make_pair(i, sig={"a": i % 3}) for i in range(1, 6)]
        path = tmp_path / "c.jsonl"
        save_pairs(path, pairs)
        assert load_pairs(path).pairs == pairs


class TestScores:
    def test_normalize_score(self):
        assert normalize_score(2.5, 5.0) == 0.5
        assert normalize_score(0.0, 5.0) == 0.0
        assert normalize_score(5.0, 5.0) == 1.0
        with pytest.raises(CorpusError):
            normalize_score(6.0, 5.0)
        with pytest.raises(CorpusError):
            normalize_score(1.0, 0.0)

    def test_total_significant_excludes_grammar_by_default(self):
        ann = ExpertAnnotation.from_counts({"a": 2, "f": 1, "g": 4})
        assert total_significant(ann) == 3
        assert total_significant(ann, include_grammar=True) == 7

    def test_total_significant_rejects_scalar(self):
        with pytest.raises(CorpusError):
            total_significant(ExpertAnnotation.from_score(3.0))


class TestSampling:
    def test_shuffled_is_a_permutation(self):
        items = list(range(100))
        out = shuffled(items, seed=7)
        assert sorted(out) == items
        assert out != items  # seed 7 is not the identity permutation

    def test_shuffled_deterministic_per_seed(self):
        items = list(range(50))
        assert shuffled(items, 3) == shuffled(items, 3)
        assert shuffled(items, 3) != shuffled(items, 4)

    def test_sample_subset_is_shuffle_prefix(self):
        pool = [make_pair(i) for i in range(30)]
        small = sample_subset(pool, 5, seed=11)
        large = sample_subset(pool, 9, seed=11)
        assert large[:5] == small

    def test_sample_subset_excludes_ids(self):
        pool = [make_pair(i) for i in range(10)]
        out = sample_subset(pool, 9, seed=0, exclude_ids={"pair-004"})
        assert len(out) == 9
        assert all(p.id != "pair-004" for p in out)

    def test_sample_subset_bounds(self):
        pool = [make_pair(i) for i in range(3)]
        with pytest.raises(CorpusError):
            sample_subset(pool, 4, seed=0)
        with pytest.raises(CorpusError):
            sample_subset(pool, -1, seed=0)
        assert sample_subset(pool, 0, seed=0) == []

    def test_sample_ids_match_golden(self):
        golden = json.loads((GOLDEN_DIR / "sample_ids_seed42.json").read_text(encoding="utf-8"))
        pool = [
            ReportPair(id=f"p{i:04d}", dataset="synthetic", reference="r", candidate="c")
            for i in range(golden["corpus_size"])
        ]
        sampled = sample_subset(pool, golden["n"], seed=golden["seed"])
        assert [p.id for p in sampled] == golden["ids"]
