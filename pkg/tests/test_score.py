"""Pairwise scoring, index construction, and top-k retrieval."""

import numpy as np
import pytest

from tabret.corpus import Corpus, TableMapping
from tabret.embed import EmbedderConfig
from tabret.errors import FingerprintMismatchError, SchemaError
from tabret.model import ModelParams, table_representation
from tabret.score import (
    build_index,
    brute_force_retrieve,
    load_index,
    retrieve_topk,
    save_index,
    score_against_index,
    score_pair,
)
from tabret.textproc import analyze_question, linearize_table

from factories import canonical_ranking, distinct


def hashed_params(dim=16, n_seeds=3, seed=0, init_seed=0):
    return ModelParams.initialize(
        embedder=EmbedderConfig(kind="hashed", dim=dim, seed=seed),
        mode="implicit",
        n_seeds=n_seeds,
        init_seed=init_seed,
    )


def small_corpus():
    tables = [
        distinct("t1", ["team", "points"], [["spurs", "110"], ["heat", "95"]]),
        distinct("t2", ["city", "river"], [["cairo", "nile"]]),
        distinct("t3", ["season"], [["winter"], ["summer"]]),
    ]
    mapping = TableMapping(entries={t.distinct_id: t.distinct_id for t in tables})
    return Corpus(tables=tables, mapping=mapping)


class TestScorePair:
    def test_single_vector_picks_its_best_row(self):
        score, w = score_pair(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0], [0.0, 1.0]]))
        assert score == 1.0
        np.testing.assert_allclose(w, [[1.0, 0.0]])

    def test_sums_per_vector_maxima(self):
        q = np.array([[1.0, 0.0], [0.0, 1.0]])
        c = np.array([[2.0, 0.0], [0.0, 3.0]])
        score, _ = score_pair(q, c)
        assert score == 5.0

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            q = rng.standard_normal((3, 8))
            c = rng.standard_normal((6, 8))
            score, w = score_pair(q, c)
            expected = 0.0
            for i in range(3):
                best = -np.inf
                for j in range(6):
                    w_ij = float(q[i] @ c[j])
                    assert abs(w[i, j] - w_ij) < 1e-12
                    best = max(best, w_ij)
                expected += best
            assert abs(score - expected) < 1e-12

    def test_empty_sides_rejected(self):
        with pytest.raises(ValueError):
            score_pair(np.zeros((0, 4)), np.zeros((2, 4)))
        with pytest.raises(ValueError):
            score_pair(np.zeros((2, 4)), np.zeros((0, 4)))

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ValueError):
            score_pair(np.zeros((2, 4)), np.zeros((2, 5)))

    def test_additive_over_question_vectors(self):
        """Appending a question vector adds exactly that vector's best match."""
        rng = np.random.default_rng(1)
        q = rng.standard_normal((3, 6))
        c = rng.standard_normal((5, 6))
        extra = rng.standard_normal((1, 6))
        base, _ = score_pair(q, c)
        extended, _ = score_pair(np.vstack([q, extra]), c)
        assert abs(extended - (base + float(np.max(extra @ c.T)))) < 1e-12

    def test_appending_table_rows_never_decreases(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            q = rng.standard_normal((3, 6))
            c = rng.standard_normal((4, 6))
            extra = rng.standard_normal((1, 6))
            base, _ = score_pair(q, c)
            grown, _ = score_pair(q, np.vstack([c, extra]))
            assert grown >= base - 1e-12


class TestBuildIndex:
    def test_empty_corpus_builds_empty_index(self):
        params = hashed_params()
        index = build_index([], params)
        assert len(index) == 0
        assert index.reps.shape == (0, 16)
        assert list(index.offsets) == [0]
        assert index.fingerprint == params.table_fingerprint()

    def test_tables_sorted_by_id(self):
        params = hashed_params()
        corpus = small_corpus()
        index = build_index(corpus, params)
        assert index.ids == ["t1", "t2", "t3"]
        assert len(index.kinds) == 3

    def test_blocks_match_direct_representation(self):
        params = hashed_params()
        corpus = small_corpus()
        index = build_index(corpus, params)
        for i, table in enumerate(corpus.tables):
            expected = table_representation(params, linearize_table(table))
            np.testing.assert_array_equal(index.block(i), expected.matrix)
            assert index.kinds[i] == expected.kinds

    def test_offsets_bracket_blocks(self):
        index = build_index(small_corpus(), hashed_params())
        assert index.offsets[0] == 0
        assert index.offsets[-1] == index.reps.shape[0]
        assert np.all(np.diff(index.offsets) > 0)

    def test_external_kind_requires_records(self):
        params = ModelParams.initialize(
            embedder=EmbedderConfig(kind="external", dim=8), mode="implicit", n_seeds=2
        )
        with pytest.raises(SchemaError):
            build_index(small_corpus(), params)


class TestSaveLoadIndex:
    def test_round_trip_preserves_structure(self, tmp_path):
        index = build_index(small_corpus(), hashed_params())
        path = tmp_path / "index.bin"
        save_index(path, index)
        loaded = load_index(path)
        assert loaded.ids == index.ids
        assert loaded.kinds == index.kinds
        assert loaded.fingerprint == index.fingerprint
        np.testing.assert_array_equal(loaded.offsets, index.offsets)
        np.testing.assert_allclose(loaded.reps, index.reps, atol=1e-6)
        assert loaded.reps.dtype == np.float64

    def test_rebuild_writes_identical_bytes(self, tmp_path):
        """Building and saving the same corpus twice is byte-deterministic."""
        for name in ("a.bin", "b.bin"):
            save_index(tmp_path / name, build_index(small_corpus(), hashed_params()))
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_wrong_container_rejected(self, tmp_path):
        path = tmp_path / "not_index.bin"
        path.write_text('{"format":"something-else","version":1,"meta":{},"blocks":[]}\n')
        with pytest.raises(SchemaError):
            load_index(path)

    def test_truncated_file_rejected(self, tmp_path):
        index = build_index(small_corpus(), hashed_params())
        path = tmp_path / "index.bin"
        save_index(path, index)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 8])
        with pytest.raises(SchemaError):
            load_index(path)


class TestScoreAgainstIndex:
    def test_matches_per_table_scoring(self):
        params = hashed_params()
        corpus = small_corpus()
        index = build_index(corpus, params)
        rng = np.random.default_rng(3)
        q = rng.standard_normal((3, 16))
        scores = score_against_index(q, index)
        for i in range(len(index)):
            expected, _ = score_pair(q, index.block(i))
            assert abs(scores[i] - expected) < 1e-9

    def test_empty_index_gives_no_scores(self):
        index = build_index([], hashed_params())
        scores = score_against_index(np.zeros((2, 16)), index)
        assert scores.shape == (0,)

    def test_positive_scaling_preserves_order(self):
        """Scaling all stored representations by an exactly representable
        positive constant cannot change the ranking."""
        import dataclasses

        params = hashed_params()
        index = build_index(small_corpus(), params)
        scaled = dataclasses.replace(index, reps=index.reps * 2.0)
        rng = np.random.default_rng(4)
        for _ in range(10):
            q = rng.standard_normal((3, 16))
            base = score_against_index(q, index)
            double = score_against_index(q, scaled)
            assert list(np.argsort(-base, kind="stable")) == list(
                np.argsort(-double, kind="stable")
            )


class TestRetrieveTopk:
    def test_single_table_ranks_first(self):
        params = hashed_params()
        table = distinct("only", ["team"], [["spurs"]])
        index = build_index([table], params)
        ranked = retrieve_topk(analyze_question("which team"), index, 1, params)
        assert [r.distinct_id for r in ranked] == ["only"]

    def test_k_beyond_size_returns_full_ranking(self):
        params = hashed_params()
        index = build_index(small_corpus(), params)
        ranked = retrieve_topk(analyze_question("which team"), index, 50, params)
        assert len(ranked) == 3
        assert sorted(r.distinct_id for r in ranked) == ["t1", "t2", "t3"]

    def test_identical_tables_tie_in_id_order(self):
        params = hashed_params()
        twins = [
            distinct("zz", ["team"], [["spurs"]]),
            distinct("aa", ["team"], [["spurs"]]),
        ]
        index = build_index(twins, params)
        ranked = retrieve_topk(analyze_question("which team"), index, 2, params)
        assert [r.distinct_id for r in ranked] == ["aa", "zz"]
        assert ranked[0].score == ranked[1].score

    def test_topk_is_prefix_of_larger_k(self):
        params = hashed_params()
        index = build_index(small_corpus(), params)
        question = analyze_question("which river city")
        for k in (1, 2):
            small = retrieve_topk(question, index, k, params)
            bigger = retrieve_topk(question, index, k + 1, params)
            assert [r.distinct_id for r in small] == [r.distinct_id for r in bigger][:k]

    def test_invalid_k_rejected(self):
        params = hashed_params()
        index = build_index(small_corpus(), params)
        with pytest.raises(ValueError):
            retrieve_topk(analyze_question("x"), index, 0, params)

    def test_empty_index_returns_nothing(self):
        params = hashed_params()
        index = build_index([], params)
        assert retrieve_topk(analyze_question("which team"), index, 5, params) == []

    def test_fingerprint_mismatch_rejected(self):
        params = hashed_params(seed=0)
        index = build_index(small_corpus(), params)
        other = hashed_params(seed=1)
        with pytest.raises(FingerprintMismatchError):
            retrieve_topk(analyze_question("which team"), index, 1, other)

    def test_question_side_changes_keep_index_valid(self):
        """A different seed bank is a question-side change; the index built
        for the same table-side settings still serves it."""
        params = hashed_params(init_seed=0)
        index = build_index(small_corpus(), params)
        retrained = hashed_params(init_seed=99)
        assert retrained.table_fingerprint() == params.table_fingerprint()
        ranked = retrieve_topk(analyze_question("which team"), index, 2, retrained)
        assert len(ranked) == 2


class TestBruteForceAgreement:
    def test_fast_path_matches_oracle(self):
        """Packed scoring and per-table scoring agree on ranking and scores."""
        rng = np.random.default_rng(5)
        tables = []
        words = ["team", "points", "city", "river", "season", "coach", "spurs", "heat"]
        for i in range(40):
            k = int(rng.integers(1, 4))
            headers = [words[int(j)] for j in rng.choice(len(words), k, replace=False)]
            rows = [
                [words[int(rng.integers(len(words)))] for _ in headers]
                for _ in range(int(rng.integers(0, 3)))
            ]
            tables.append(distinct(f"t{i:03d}", headers, rows))
        params = hashed_params()
        index = build_index(tables, params)
        for text in ("which team", "river city", "season of the coach", "spurs points"):
            question = analyze_question(text)
            fast = retrieve_topk(question, index, len(tables), params)
            slow = brute_force_retrieve(question, index, params)
            assert canonical_ranking(fast) == canonical_ranking(slow)
            slow_scores = {r.distinct_id: r.score for r in slow}
            for entry in fast:
                assert abs(entry.score - slow_scores[entry.distinct_id]) <= 1e-9
