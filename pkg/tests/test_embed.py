"""Hashed token embeddings, vocab tables, context blending, external files."""

import numpy as np
import pytest

from tabret.embed import (
    EmbedderConfig,
    ExternalRecord,
    VocabTable,
    align_external,
    contextualize,
    contextualize_backward,
    embed_hashed,
    load_external_embeddings,
    read_external_embeddings,
    save_external_embeddings,
    token_vector,
)
from tabret.errors import SchemaError


class TestEmbedderConfig:
    def test_valid_config(self):
        cfg = EmbedderConfig(kind="hashed", dim=64, seed=3)
        assert cfg.dim == 64

    def test_unknown_kind_rejected(self):
        with pytest.raises(SchemaError):
            EmbedderConfig(kind="magic", dim=64)

    def test_tiny_dim_rejected(self):
        with pytest.raises(SchemaError):
            EmbedderConfig(kind="hashed", dim=1)

    def test_context_bounds(self):
        with pytest.raises(SchemaError):
            EmbedderConfig(kind="hashed", dim=8, context_window=-1)
        with pytest.raises(SchemaError):
            EmbedderConfig(kind="hashed", dim=8, context_alpha=1.0)


class TestTokenVector:
    def test_deterministic(self):
        a = token_vector("team", 32, seed=0)
        b = token_vector("team", 32, seed=0)
        np.testing.assert_array_equal(a, b)

    def test_seed_changes_vector(self):
        a = token_vector("team", 32, seed=0)
        b = token_vector("team", 32, seed=1)
        assert not np.allclose(a, b)

    def test_text_changes_vector(self):
        a = token_vector("team", 32, seed=0)
        b = token_vector("teams", 32, seed=0)
        assert not np.allclose(a, b)

    def test_mean_squared_norm_is_one(self):
        """Vectors are scaled so the expected squared norm is 1; the sample
        mean over many tokens stays within 5 percent."""
        norms = [
            float(np.dot(v, v))
            for i in range(10_000)
            for v in [token_vector(f"tok{i}", 64, seed=0)]
        ]
        assert abs(np.mean(norms) - 1.0) < 0.05


class TestEmbedHashed:
    def test_repeated_token_repeats_row(self):
        matrix = embed_hashed(["team", "team"], 16)
        np.testing.assert_array_equal(matrix[0], matrix[1])

    def test_rows_match_single_token_vectors(self):
        matrix = embed_hashed(["team", "points"], 16, seed=2)
        np.testing.assert_array_equal(matrix[0], token_vector("team", 16, 2))
        np.testing.assert_array_equal(matrix[1], token_vector("points", 16, 2))

    def test_empty_sequence_rejected(self):
        with pytest.raises(ValueError):
            embed_hashed([], 16)

    def test_distinct_tokens_nearly_orthogonal(self):
        """At dim 256 the mean absolute cosine over random distinct pairs is
        far below chance alignment."""
        vectors = embed_hashed([f"w{i}" for i in range(2000)], 256)
        unit = vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
        rng = np.random.default_rng(0)
        cosines = []
        for _ in range(1000):
            i, j = rng.choice(2000, size=2, replace=False)
            cosines.append(abs(float(unit[i] @ unit[j])))
        assert np.mean(cosines) < 0.15


class TestVocabTable:
    def test_build_sorts_and_dedupes(self):
        vocab = VocabTable.build(["b", "a", "b", "c"], 8)
        assert vocab.tokens == ["a", "b", "c"]
        assert vocab.vectors.shape == (3, 8)

    def test_untrained_embed_matches_hashed(self):
        vocab = VocabTable.build(["points", "team"], 16, seed=4)
        np.testing.assert_array_equal(
            vocab.embed(["team", "points"]), embed_hashed(["team", "points"], 16, seed=4)
        )

    def test_unknown_token_falls_back_to_hashed(self):
        vocab = VocabTable.build(["team"], 16, seed=4)
        np.testing.assert_array_equal(
            vocab.embed(["mystery"])[0], token_vector("mystery", 16, 4)
        )

    def test_lookup_ids_marks_oov(self):
        vocab = VocabTable.build(["a", "b"], 8)
        np.testing.assert_array_equal(vocab.lookup_ids(["b", "zz", "a"]), [1, -1, 0])

    def test_empty_build_rejected(self):
        with pytest.raises(SchemaError):
            VocabTable.build([], 8)

    def test_duplicate_tokens_rejected(self):
        with pytest.raises(SchemaError):
            VocabTable(tokens=["a", "a"], vectors=np.zeros((2, 4)))

    def test_row_count_mismatch_rejected(self):
        with pytest.raises(SchemaError):
            VocabTable(tokens=["a"], vectors=np.zeros((2, 4)))


class TestContextualize:
    def test_zero_alpha_is_identity(self):
        matrix = np.random.default_rng(1).standard_normal((6, 4))
        np.testing.assert_array_equal(contextualize(matrix, window=2, alpha=0.0), matrix)

    def test_zero_window_is_identity(self):
        matrix = np.random.default_rng(2).standard_normal((6, 4))
        np.testing.assert_array_equal(contextualize(matrix, window=0, alpha=0.5), matrix)

    def test_single_row_unchanged(self):
        matrix = np.random.default_rng(3).standard_normal((1, 4))
        np.testing.assert_allclose(contextualize(matrix, window=3, alpha=0.7), matrix)

    def test_window_one_matches_direct_formula(self):
        """Each output row blends the row with the mean of its clipped
        neighborhood: (1 - a) * x_i + a * mean(x[i-w : i+w+1])."""
        rng = np.random.default_rng(4)
        matrix = rng.standard_normal((5, 4))
        alpha, window = 0.5, 1
        expected = np.empty_like(matrix)
        for i in range(5):
            lo, hi = max(0, i - window), min(5, i + window + 1)
            neighborhood = matrix[lo:hi].mean(axis=0)
            expected[i] = (1 - alpha) * matrix[i] + alpha * neighborhood
        np.testing.assert_allclose(contextualize(matrix, window, alpha), expected, atol=1e-12)

    def test_larger_windows_match_direct_formula(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            rows = int(rng.integers(1, 9))
            window = int(rng.integers(1, 5))
            alpha = float(rng.uniform(0, 0.95))
            matrix = rng.standard_normal((rows, 3))
            expected = np.empty_like(matrix)
            for i in range(rows):
                lo, hi = max(0, i - window), min(rows, i + window + 1)
                expected[i] = (1 - alpha) * matrix[i] + alpha * matrix[lo:hi].mean(axis=0)
            np.testing.assert_allclose(contextualize(matrix, window, alpha), expected, atol=1e-12)

    def test_bad_arguments_rejected(self):
        matrix = np.zeros((2, 2))
        with pytest.raises(ValueError):
            contextualize(matrix, window=-1, alpha=0.5)
        with pytest.raises(ValueError):
            contextualize(matrix, window=1, alpha=1.5)
        with pytest.raises(ValueError):
            contextualize(np.zeros(3), window=1, alpha=0.5)


class TestContextualizeBackward:
    def test_adjoint_identity(self):
        """The blend is linear, so <G, blend(V)> must equal <backward(G), V>
        for any gradient G and perturbation V."""
        rng = np.random.default_rng(6)
        for _ in range(30):
            rows = int(rng.integers(1, 10))
            window = int(rng.integers(0, 4))
            alpha = float(rng.uniform(0, 0.9))
            grad = rng.standard_normal((rows, 5))
            perturbation = rng.standard_normal((rows, 5))
            lhs = float(np.sum(grad * contextualize(perturbation, window, alpha)))
            rhs = float(np.sum(contextualize_backward(grad, window, alpha) * perturbation))
            assert abs(lhs - rhs) < 1e-12 * max(1.0, abs(lhs))

    def test_identity_at_zero_alpha(self):
        grad = np.random.default_rng(7).standard_normal((4, 3))
        np.testing.assert_array_equal(contextualize_backward(grad, 2, 0.0), grad)


class TestExternalEmbeddings:
    def record(self, rid="r1", with_sequence=False):
        rng = np.random.default_rng(8)
        vectors = rng.standard_normal((3, 4))
        sequence = rng.standard_normal(4) if with_sequence else None
        return ExternalRecord(id=rid, tokens=["a", "b", "c"], vectors=vectors,
                              sequence_vector=sequence)

    def test_round_trip_is_exact(self, tmp_path):
        """JSON float serialization preserves every bit of the matrix."""
        record = self.record(with_sequence=True)
        path = tmp_path / "ext.jsonl"
        save_external_embeddings(path, [record])
        loaded = read_external_embeddings(path)["r1"]
        np.testing.assert_array_equal(loaded.vectors, record.vectors)
        np.testing.assert_array_equal(loaded.sequence_vector, record.sequence_vector)
        assert loaded.tokens == record.tokens

    def test_duplicate_id_rejected(self, tmp_path):
        path = tmp_path / "ext.jsonl"
        save_external_embeddings(path, [self.record(), self.record()])
        with pytest.raises(SchemaError, match="r1"):
            read_external_embeddings(path)

    def test_align_passes_on_match(self):
        record = self.record()
        np.testing.assert_array_equal(align_external(record, ["a", "b", "c"]), record.vectors)

    def test_align_reports_first_divergence(self):
        record = self.record()
        with pytest.raises(SchemaError, match="token 2"):
            align_external(record, ["a", "b", "x"])

    def test_align_reports_length_mismatch(self):
        record = self.record()
        with pytest.raises(SchemaError, match="token"):
            align_external(record, ["a", "b"])

    def test_load_requires_single_record_without_id(self, tmp_path):
        path = tmp_path / "ext.jsonl"
        save_external_embeddings(path, [self.record("r1"), self.record("r2")])
        with pytest.raises(SchemaError):
            load_external_embeddings(path, ["a", "b", "c"])
        np.testing.assert_array_equal(
            load_external_embeddings(path, ["a", "b", "c"], record_id="r2"),
            self.record("r2").vectors,
        )
