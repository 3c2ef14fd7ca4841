import numpy as np
import pytest

from zerogen import Vocabulary, save_embedding_table
from zerogen.oracles import EmbeddingTable


@pytest.fixture(scope="session")
def cli_fixture(tmp_path_factory):
    """On-disk toy fixture for CLI runs: corpus, embedding table (with one
    deliberately uncovered token, 'dog'), and a control vector file."""
    root = tmp_path_factory.mktemp("cli_fixture")
    rng = np.random.default_rng(2024)

    words = ["cat", "dog", "sun", "moon", "tree", "river", "stone", "cloud",
             "bird", "fish", "wind", "rain", "road", "house", "light", "night"]
    parts = []
    for _ in range(120):
        parts.append(words[int(rng.integers(len(words)))])
        if rng.random() < 0.35:
            parts.append("cat" if rng.random() < 0.5 else "sun")
    corpus_path = root / "corpus.txt"
    corpus_path.write_text(" ".join(parts) + "\n", encoding="utf-8")

    vocab = Vocabulary.from_corpus(parts)
    dim = 8
    vectors = rng.standard_normal((vocab.size, dim))
    covered = frozenset(i for i in range(vocab.size) if vocab.tokens[i] != "dog")
    table = EmbeddingTable(dim=dim, vectors=vectors, covered=covered)
    table_path = root / "emb.txt"
    save_embedding_table(str(table_path), table, vocab)

    ctl = rng.standard_normal(dim)
    ctl /= np.linalg.norm(ctl)
    ctl_path = root / "ctl.vec"
    ctl_path.write_text(" ".join(repr(float(x)) for x in ctl) + "\n", encoding="utf-8")

    prompts_path = root / "prompts.txt"
    prompts_path.write_text("sun river\nmoon tree\ncat road\n", encoding="utf-8")

    return {"root": root, "corpus": str(corpus_path), "emb": str(table_path),
            "ctl": str(ctl_path), "prompts": str(prompts_path), "vocab": vocab}
