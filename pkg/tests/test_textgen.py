import numpy as np
import pytest

from bytelm.data import build_corpus
from bytelm.errors import ConfigError
from bytelm.segment import patch_stats
from bytelm.textgen import SEED_TEXT, synth_corpus, synth_words


def test_synth_corpus_deterministic():
    a = synth_corpus(50_000, seed=3)
    b = synth_corpus(50_000, seed=3)
    assert a == b
    c = synth_corpus(50_000, seed=4)
    assert a != c


def test_synth_corpus_size_and_cleanliness():
    docs = synth_corpus(30_000, seed=1)
    total = sum(len(d) + 1 for d in docs)
    assert total >= 30_000
    assert all(docs)
    corpus = build_corpus(docs)  # would raise on reserved bytes
    assert corpus.n_docs == len(docs)


def test_synth_text_word_statistics():
    doc = b" ".join(synth_corpus(40_000, seed=7))
    stats = patch_stats(doc)
    assert stats.count > 4000
    assert 4.0 < stats.mean_len < 9.0


def test_bigram_walk_stays_on_seed_adjacencies():
    pairs = set(zip(SEED_TEXT.split(), SEED_TEXT.split()[1:]))
    words = SEED_TEXT.split()
    pairs.add((words[-1], words[0]))  # the wrap edge
    out = synth_words(400, np.random.default_rng(0))
    hits = sum((a, b) in pairs for a, b in zip(out, out[1:]))
    assert hits == len(out) - 1


def test_synth_validation():
    with pytest.raises(ConfigError):
        synth_words(0, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        synth_corpus(0, seed=1)
    with pytest.raises(ConfigError):
        synth_corpus(100, seed=1, doc_bytes=(10, 5))
