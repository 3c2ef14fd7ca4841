import math

import numpy as np
import pytest

from zerogen import (NGramToyLM, OracleError, TableMultimodalOracle,
                     TableTextualOracle, Vocabulary, cosine,
                     load_embedding_table, resolve_visual_control,
                     save_embedding_table, toy_embed_text, toy_representation)
from zerogen.core import VisualControl
from zerogen.oracles import ZERO_NORM_EVENTS

from helpers import make_vocab, random_table, table_from_rows
from reference_decoders import ref_mean_normalize, ref_ngram_probs


class TestCosine:
    def test_zero_norm_counts_instead_of_raising(self):
        ZERO_NORM_EVENTS.reset()
        assert cosine(np.zeros(3), np.ones(3)) == 0.0
        assert ZERO_NORM_EVENTS.count == 1

    def test_unit_self_similarity(self):
        v = np.array([3.0, 4.0])
        assert cosine(v, v) == pytest.approx(1.0)


class TestEmbeddingTableIO:
    def test_parse_single_line(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("the 0.1 0.2\n")
        vocab = Vocabulary(("a", "the"))
        table = load_embedding_table(str(path), vocab)
        assert table.dim == 2
        assert np.allclose(table.vectors[vocab.id_of("the")], [0.1, 0.2])
        assert table.coverage == 1

    def test_inconsistent_dimension(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("the 0.1 0.2\ncat 0.1\n")
        with pytest.raises(OracleError, match="inconsistent dimension"):
            load_embedding_table(str(path), Vocabulary(("the", "cat")))

    def test_unparsable_float(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("the 0.1 oops\n")
        with pytest.raises(OracleError, match="unparsable float"):
            load_embedding_table(str(path), Vocabulary(("the", "cat")))

    def test_write_read_round_trip(self, tmp_path):
        # independent oracle: the vectors we wrote are the expected values
        rng = np.random.default_rng(7)
        vocab = make_vocab(20)
        table = random_table(vocab, 8, rng)
        path = tmp_path / "emb.txt"
        save_embedding_table(str(path), table, vocab)
        loaded = load_embedding_table(str(path), vocab)
        assert loaded.dim == 8
        assert loaded.coverage == 20
        assert np.max(np.abs(loaded.vectors - table.vectors)) <= 1e-12

    def test_out_of_vocab_lines_skipped(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("the 1.0 0.0\nxyzzy 0.0 1.0\n")
        table = load_embedding_table(str(path), Vocabulary(("the", "cat")))
        assert table.coverage == 1


class TestToyEmbedText:
    def setup_method(self):
        self.vocab = Vocabulary(("a", "b", "c", "d"))

    def test_single_token_normalized(self):
        table = table_from_rows(self.vocab, [[3, 4], [0, 1], [1, 0], [1, 1]])
        out = toy_embed_text(["a"], table, self.vocab)
        assert np.allclose(out, [0.6, 0.8])

    def test_repeated_token_equals_single(self):
        table = table_from_rows(self.vocab, [[3, 4], [0, 1], [1, 0], [1, 1]])
        one = toy_embed_text(["a"], table, self.vocab)
        two = toy_embed_text(["a", "a"], table, self.vocab)
        assert np.array_equal(one, two)

    def test_matches_reference_mean_normalize(self):
        # expected value from the independent plain-python oracle
        rng = np.random.default_rng(3)
        table = random_table(self.vocab, 6, rng)
        tokens = ["a", "c", "d", "b"]
        expected = ref_mean_normalize([list(table.vectors[self.vocab.id_of(t)])
                                       for t in tokens])
        out = toy_embed_text(tokens, table, self.vocab)
        assert np.max(np.abs(out - np.array(expected))) <= 1e-9
        assert abs(np.linalg.norm(out) - 1.0) <= 1e-9

    def test_permutation_invariant(self):
        rng = np.random.default_rng(4)
        table = random_table(self.vocab, 5, rng)
        fwd = toy_embed_text(["a", "b", "c"], table, self.vocab)
        rev = toy_embed_text(["c", "a", "b"], table, self.vocab)
        assert np.allclose(fwd, rev)

    def test_empty_sequence_rejected(self):
        table = table_from_rows(self.vocab, np.eye(4))
        with pytest.raises(OracleError, match="empty"):
            toy_embed_text([], table, self.vocab)

    def test_zero_norm_mean_reported(self):
        table = table_from_rows(self.vocab, [[1, 0], [-1, 0], [0, 1], [0, -1]])
        with pytest.raises(OracleError, match="zero-norm"):
            toy_embed_text(["a", "b"], table, self.vocab)


class TestNGramToyLM:
    def test_bigram_add_one_example(self):
        vocab = Vocabulary(("a", "b"))
        lm = NGramToyLM(2, vocab, k_s=1.0)
        lm.fit([vocab.id_of(t) for t in "a b a b".split()])
        probs = lm.next_distribution([vocab.id_of("a")])
        assert probs[vocab.id_of("b")] == pytest.approx(0.75)
        assert probs.sum() == pytest.approx(1.0, abs=1e-9)

    def test_unseen_context_uniform(self):
        vocab = Vocabulary(("a", "b"))
        lm = NGramToyLM(2, vocab, k_s=1.0)
        lm.fit([0, 0])
        probs = lm.next_distribution([vocab.id_of("b")])
        assert np.allclose(probs, [0.5, 0.5])

    def test_trigram_matches_brute_force_recount(self):
        # expected values from an independent corpus-rescanning oracle
        rng = np.random.default_rng(11)
        vocab = make_vocab(12)
        corpus = [int(x) for x in rng.integers(12, size=200)]
        lm = NGramToyLM(3, vocab, k_s=0.5).fit(corpus)
        for prefix in ([], [3], [3, 5], [1, 2, 3, 4], corpus[:17]):
            expected = ref_ngram_probs(corpus, 3, 0.5, 12, prefix)
            assert np.allclose(lm.next_distribution(prefix), expected, atol=0, rtol=0)

    def test_min_probability_positive(self):
        vocab = make_vocab(5)
        lm = NGramToyLM(2, vocab, k_s=0.5).fit([0, 1, 2, 3, 4, 0, 1])
        for prefix in ([0], [4], [2, 3]):
            probs = lm.next_distribution(prefix)
            floor = 0.5 / (lm._totals.get(tuple(prefix[-1:]), 0) + 0.5 * 5)
            assert probs.min() >= floor > 0

    def test_context_window_only_last_m_minus_1(self):
        vocab = make_vocab(6)
        lm = NGramToyLM(2, vocab, k_s=0.5).fit([0, 1, 2, 3, 0, 1])
        a = lm.next_distribution([5, 4, 3, 0])
        b = lm.next_distribution([2, 0])
        assert np.array_equal(a, b)


class TestToyRepresentation:
    def test_static_and_context_independent(self):
        vocab = Vocabulary(("a", "b"))
        table = table_from_rows(vocab, [[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(toy_representation([], 0, table), [1.0, 2.0])
        assert np.array_equal(toy_representation([1, 1, 1], 0, table),
                              toy_representation([0], 0, table))

    def test_self_cosine_is_one(self):
        vocab = Vocabulary(("a", "b"))
        table = table_from_rows(vocab, [[1.0, 2.0], [3.0, 4.0]])
        h = toy_representation([], 0, table)
        assert cosine(h, toy_representation([1], 0, table)) == pytest.approx(1.0)


class TestOracleContracts:
    """Shared contract: determinism, dimension consistency, unit norms,
    distribution normalization within 1e-9 for local implementations."""

    def setup_method(self):
        rng = np.random.default_rng(5)
        self.vocab = make_vocab(15)
        self.table = random_table(self.vocab, 7, rng)
        self.textual = TableTextualOracle(self.table, self.vocab)
        self.mm = TableMultimodalOracle(self.table, self.vocab)
        corpus = [int(x) for x in rng.integers(15, size=120)]
        self.lm = NGramToyLM(2, self.vocab, repr_table=self.table).fit(corpus)

    def test_textual_deterministic_and_dimensioned(self):
        for tok in self.vocab.tokens[:5]:
            a, b = self.textual.embed_token(tok), self.textual.embed_token(tok)
            assert np.array_equal(a, b)
            assert a.shape == (self.textual.dim,)

    def test_multimodal_unit_norm_and_deterministic(self):
        seq = list(self.vocab.tokens[:4])
        a, b = self.mm.embed_text(seq), self.mm.embed_text(seq)
        assert np.array_equal(a, b)
        assert abs(np.linalg.norm(a) - 1.0) <= 1e-9
        c = self.mm.embed_control(" ".join(seq))
        assert np.array_equal(a, c)

    def test_lm_distribution_normalized(self):
        for prefix in ([], [0], [1, 2, 3]):
            probs = self.lm.next_distribution(prefix)
            assert probs.shape == (self.vocab.size,)
            assert np.all(probs >= 0)
            assert abs(probs.sum() - 1.0) <= 1e-9


class TestResolveVisualControl:
    def setup_method(self):
        self.vocab = Vocabulary(("a", "b", "c"))
        self.table = table_from_rows(self.vocab, np.eye(3))
        self.mm = TableMultimodalOracle(self.table, self.vocab)

    def test_raw_vector_normalized(self):
        out = resolve_visual_control(VisualControl(vector=np.array([2.0, 0.0, 0.0])), self.mm)
        assert np.allclose(out, [1.0, 0.0, 0.0])

    def test_ref_resolved_by_oracle(self):
        out = resolve_visual_control(VisualControl(ref="a b"), self.mm)
        assert np.allclose(out, np.array([1.0, 1.0, 0.0]) / math.sqrt(2))

    def test_dimension_mismatch(self):
        from zerogen import ConfigError
        with pytest.raises(ConfigError, match="dimension"):
            resolve_visual_control(VisualControl(vector=np.ones(4)), self.mm)
