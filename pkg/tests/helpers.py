"""Shared builders for hermetic fixtures: vocabularies, random embedding
tables, corpora, and toy LMs."""

from __future__ import annotations

import numpy as np

from zerogen import EmbeddingTable, NGramToyLM, OracleSet, TableMultimodalOracle, \
    TableTextualOracle, Vocabulary


def make_vocab(n: int, prefix: str = "w") -> Vocabulary:
    width = len(str(n - 1))
    return Vocabulary(tuple(f"{prefix}{i:0{width}d}" for i in range(n)))


def table_from_rows(vocab: Vocabulary, rows: np.ndarray) -> EmbeddingTable:
    rows = np.asarray(rows, dtype=np.float64)
    assert rows.shape[0] == vocab.size
    return EmbeddingTable(dim=rows.shape[1], vectors=rows,
                          covered=frozenset(range(vocab.size)))


def random_table(vocab: Vocabulary, dim: int, rng: np.random.Generator) -> EmbeddingTable:
    return table_from_rows(vocab, rng.standard_normal((vocab.size, dim)))


def random_unit_table(vocab: Vocabulary, dim: int, rng: np.random.Generator) -> EmbeddingTable:
    rows = rng.standard_normal((vocab.size, dim))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    return table_from_rows(vocab, rows)


def random_corpus_ids(vocab_size: int, length: int, rng: np.random.Generator) -> list[int]:
    return [int(x) for x in rng.integers(vocab_size, size=length)]


def fit_lm(vocab: Vocabulary, corpus_ids, order: int = 2, k_s: float = 0.5,
           table: EmbeddingTable | None = None) -> NGramToyLM:
    return NGramToyLM(order, vocab, k_s=k_s, repr_table=table).fit(corpus_ids)


def toy_world(v: int = 20, dim: int = 8, corpus_len: int = 200, order: int = 2,
              k_s: float = 0.5, seed: int = 0):
    """A complete toy setup: vocab, table, corpus ids, LM, and oracle set."""
    rng = np.random.default_rng(seed)
    vocab = make_vocab(v)
    table = random_table(vocab, dim, rng)
    corpus = random_corpus_ids(v, corpus_len, rng)
    lm = fit_lm(vocab, corpus, order=order, k_s=k_s, table=table)
    oracles = OracleSet(lm=lm, textual=TableTextualOracle(table, vocab),
                        multimodal=TableMultimodalOracle(table, vocab))
    return vocab, table, corpus, lm, oracles


def forcing_world():
    """Vocabulary with a 'cat' token orthogonal in embedding space to every
    other token, over a corpus whose LM never prefers 'cat' on its own."""
    vocab = Vocabulary(("cat", "the", "sun", "is", "hot"))
    rows = np.zeros((5, 5))
    rows[vocab.id_of("cat")] = np.eye(5)[0]
    for i, tok in enumerate(vocab.tokens):
        if tok != "cat":
            rows[i] = np.eye(5)[1] + 0.1 * np.eye(5)[2 + (i % 3)]
    table = table_from_rows(vocab, rows)
    corpus_tokens = ("the sun is hot " * 30).split()
    lm = fit_lm(vocab, [vocab.id_of(t) for t in corpus_tokens], order=2, table=table)
    oracles = OracleSet(lm=lm, textual=TableTextualOracle(table, vocab),
                        multimodal=TableMultimodalOracle(table, vocab))
    return vocab, oracles
