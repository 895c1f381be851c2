"""Corpus assembly, context sampling, and evaluation windows.

A corpus is the concatenation BOS + doc_1 + BOS + doc_2 + ... in one flat
id array. Byte corpora use ids 0..255 (BOS byte 255); token corpora hold
BPE ids (BOS id 256). Documents may not contain the reserved byte values
254 and 255.

Training draws seek a BOS inside a uniformly sampled window and align the
context to start there, clamping at the corpus end; windows with no BOS
get one prepended instead. Evaluation walks non-overlapping windows with
the same prepend rule, so every evaluated byte is predicted exactly once.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bpe import BOS_ID, Vocab, encode
from .errors import DataError
from .segment import BOS, RESERVED

_DOC_SUFFIXES = (".txt", ".text")


@dataclass
class Corpus:
    """Flat id array; `bos` distinguishes byte space (255) from token space (256)."""

    data: np.ndarray
    n_docs: int
    bos: int = BOS

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 1:
            raise DataError(f"corpus must be flat, got shape {self.data.shape}")

    def __len__(self) -> int:
        return int(self.data.size)


@dataclass
class Sample:
    tokens: np.ndarray
    targets: np.ndarray


def build_corpus(documents) -> Corpus:
    """Concatenate byte documents with a BOS byte before each one."""
    parts = []
    n_docs = 0
    for i, doc in enumerate(documents):
        if isinstance(doc, (bytes, bytearray, memoryview)):
            arr = np.frombuffer(bytes(doc), dtype=np.uint8)
        else:
            arr = np.asarray(doc, dtype=np.uint8)
        for bad in (RESERVED, BOS):
            hits = np.flatnonzero(arr == bad)
            if len(hits):
                raise DataError(
                    f"document {i} contains reserved byte {bad} at offset {int(hits[0])}"
                )
        parts.append(np.array([BOS], dtype=np.uint8))
        parts.append(arr)
        n_docs += 1
    if n_docs == 0:
        raise DataError("no documents")
    return Corpus(data=np.concatenate(parts).astype(np.int64), n_docs=n_docs, bos=BOS)


def token_corpus(corpus: Corpus, vocab: Vocab) -> Corpus:
    """Re-encode a byte corpus into BPE token space (BOS byte becomes BOS id)."""
    if corpus.bos != BOS:
        raise DataError("token_corpus expects a byte corpus")
    ids = encode(vocab, corpus.data)
    return Corpus(data=ids, n_docs=corpus.n_docs, bos=BOS_ID)


def split_corpus(corpus: Corpus, eval_fraction: float) -> tuple[Corpus, Corpus]:
    """Contiguous head for training, tail for evaluation."""
    if not 0.0 < eval_fraction < 1.0:
        raise DataError(f"eval_fraction must be in (0, 1), got {eval_fraction}")
    n = len(corpus)
    cut = n - max(1, int(n * eval_fraction))
    if cut < 1:
        raise DataError(f"corpus of {n} ids too small to split")
    head, tail = corpus.data[:cut], corpus.data[cut:]
    return (
        Corpus(head, n_docs=int((head == corpus.bos).sum()), bos=corpus.bos),
        Corpus(tail, n_docs=int((tail == corpus.bos).sum()), bos=corpus.bos),
    )


def sample_context(corpus: Corpus, t: int, rng: np.random.Generator) -> Sample:
    """Draw one BOS-aligned training context of length `t`.

    The context starts at the first BOS inside a uniform random window,
    clamped back when fewer than `t` ids remain; a window with no BOS gets
    one prepended and keeps its first t-1 ids. Targets are the next id at
    each position, -1 past the corpus end.
    """
    data, n = corpus.data, len(corpus)
    if n < t:
        raise DataError(f"corpus of {n} ids is shorter than context {t}")
    pos = int(rng.integers(0, n - t + 1))
    window = data[pos : pos + t]
    hits = np.flatnonzero(window == corpus.bos)
    if len(hits):
        start = min(pos + int(hits[0]), n - t)
        tokens = data[start : start + t]
        if tokens[0] != corpus.bos:
            return _prepend_sample(corpus, start, t)
        targets = np.full(t, -1, dtype=np.int64)
        end = min(start + 1 + t, n)
        targets[: end - start - 1] = data[start + 1 : end]
        return Sample(tokens=tokens.astype(np.int64), targets=targets)
    return _prepend_sample(corpus, pos, t)


def _prepend_sample(corpus: Corpus, pos: int, t: int) -> Sample:
    """Context = BOS + t-1 ids from `pos`; targets are those t ids themselves."""
    data = corpus.data
    tokens = np.concatenate([[corpus.bos], data[pos : pos + t - 1]]).astype(np.int64)
    targets = data[pos : pos + t].astype(np.int64)
    return Sample(tokens=tokens, targets=targets)


def sample_batch(corpus: Corpus, t: int, batch: int, rng: np.random.Generator) -> Sample:
    draws = [sample_context(corpus, t, rng) for _ in range(batch)]
    return Sample(
        tokens=np.stack([d.tokens for d in draws]),
        targets=np.stack([d.targets for d in draws]),
    )


def eval_windows(corpus: Corpus, t: int, limit: int | None = None):
    """Yield non-overlapping evaluation Samples of length `t`.

    Window k covers ids [k*t, (k+1)*t). If it starts with BOS it is used
    as-is (targets shifted by one); otherwise BOS is prepended and the
    window's own ids are the targets, so each id is scored exactly once.
    A trailing remainder shorter than `t` is dropped.
    """
    data, n = corpus.data, len(corpus)
    count = n // t
    if limit is not None:
        count = min(count, limit)
    for k in range(count):
        chunk = data[k * t : (k + 1) * t]
        if chunk[0] == corpus.bos:
            tokens = chunk.astype(np.int64)
            targets = np.full(t, -1, dtype=np.int64)
            end = min((k + 1) * t + 1, n)
            targets[: end - k * t - 1] = data[k * t + 1 : end]
        else:
            tokens = np.concatenate([[corpus.bos], chunk[: t - 1]]).astype(np.int64)
            targets = chunk.astype(np.int64)
        yield Sample(tokens=tokens, targets=targets)


# -- loading ------------------------------------------------------------------


def load_documents(path) -> list[bytes]:
    """Read documents from a directory of text files, a .jsonl, or one text file."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"data path not found: {path}")
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in _DOC_SUFFIXES)
        if not files:
            raise DataError(f"no .txt documents under {path}")
        return [p.read_bytes() for p in files]
    if path.suffix.lower() == ".jsonl":
        docs = []
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as e:
                    raise DataError(f"{path}:{lineno}: bad JSON: {e}")
                if not isinstance(row, dict) or "text" not in row:
                    raise DataError(f"{path}:{lineno}: expected an object with a 'text' key")
                docs.append(str(row["text"]).encode("utf-8"))
        if not docs:
            raise DataError(f"{path} holds no documents")
        return docs
    return [path.read_bytes()]


def load_corpus(path) -> Corpus:
    return build_corpus(load_documents(path))
