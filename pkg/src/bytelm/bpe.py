"""Byte-level BPE without pre-tokenization.

Ids 0..255 are raw bytes, 256 is BOS, merged tokens start at 257. Merge
selection is greedy by pair frequency; ties go to the pair whose first
occurrence is earliest. Pairs touching BOS never merge, so tokens never
span a document boundary. A merge pass replaces occurrences left to
right, so overlapping runs like "aaa" become [aa, a].

The per-merge passes are vectorized: on an N-id corpus each round costs
O(N) numpy work rather than O(N) python-loop work, which is what makes
training on multi-megabyte corpora workable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .segment import BOS

BOS_ID = 256
FIRST_MERGE_ID = 257


@dataclass
class Vocab:
    """BPE merge list; `merges[r]` produces id FIRST_MERGE_ID + r."""

    merges: list[tuple[int, int]]
    _expansions: list[bytes] = field(default=None, repr=False, compare=False)

    @property
    def vocab_size(self) -> int:
        return FIRST_MERGE_ID + len(self.merges)

    def _expand_all(self) -> list[bytes]:
        if self._expansions is None:
            exp = [bytes([i]) for i in range(256)] + [bytes([BOS])]
            for left, right in self.merges:
                if left >= len(exp) or right >= len(exp):
                    raise DataError(f"merge ({left}, {right}) references a later id")
                exp.append(exp[left] + exp[right])
            self._expansions = exp
        return self._expansions

    def token_bytes(self, token_id: int) -> bytes:
        exp = self._expand_all()
        if not 0 <= token_id < len(exp):
            raise DataError(f"token id {token_id} outside vocab of {len(exp)}")
        return exp[token_id]

    def byte_lengths(self) -> np.ndarray:
        """Length in bytes of every token id; BOS counts as 1."""
        return np.array([len(b) for b in self._expand_all()], dtype=np.int64)

    def to_dict(self) -> dict:
        return {"vocab_size": self.vocab_size, "merges": [list(m) for m in self.merges]}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        unknown = set(d) - {"vocab_size", "merges"}
        if unknown:
            raise DataError(f"unknown vocab keys: {sorted(unknown)}")
        merges = [(int(l), int(r)) for l, r in d.get("merges", [])]
        v = cls(merges=merges)
        if "vocab_size" in d and d["vocab_size"] != v.vocab_size:
            raise DataError(
                f"vocab_size {d['vocab_size']} inconsistent with {len(merges)} merges"
            )
        v._expand_all()
        return v


def save_vocab(path, vocab: Vocab) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(vocab.to_dict(), f)
        f.write("\n")


def load_vocab(path) -> Vocab:
    path = Path(path)
    if not path.exists():
        raise DataError(f"vocab not found: {path}")
    try:
        return Vocab.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, UnicodeDecodeError, TypeError, ValueError) as e:
        raise DataError(f"corrupt vocab {path}: {e}")


def _initial_ids(data) -> np.ndarray:
    if isinstance(data, (bytes, bytearray, memoryview)):
        arr = np.frombuffer(bytes(data), dtype=np.uint8).astype(np.int32)
    else:
        arr = np.asarray(data).astype(np.int32)
    arr = arr.copy()
    arr[arr == BOS] = BOS_ID
    return arr


def _pair_keys(seq: np.ndarray) -> np.ndarray:
    return seq[:-1].astype(np.int64) * (1 << 32) + seq[1:]


def _merge_pass(seq: np.ndarray, pair: tuple[int, int], new_id: int) -> np.ndarray:
    """Replace occurrences of `pair` left to right; overlaps keep the leftmost."""
    if len(seq) < 2:
        return seq
    hits = np.flatnonzero((seq[:-1] == pair[0]) & (seq[1:] == pair[1]))
    if len(hits) == 0:
        return seq
    if pair[0] == pair[1]:
        # in a run like "aaaa" only every other match applies: indices 0, 2, ...
        run_start = np.flatnonzero(np.diff(hits, prepend=hits[0] - 2) != 1)
        run_id = np.cumsum(np.diff(hits, prepend=hits[0] - 2) != 1) - 1
        pos_in_run = np.arange(len(hits)) - run_start[run_id]
        hits = hits[pos_in_run % 2 == 0]
    out = seq.copy()
    out[hits] = new_id
    keep = np.ones(len(seq), dtype=bool)
    keep[hits + 1] = False
    return out[keep]


def bpe_train(data, vocab_size: int) -> Vocab:
    """Greedy pair-merge training to at most `vocab_size` ids.

    Stops early when no pair occurs at least twice. BOS never merges.
    """
    if vocab_size < FIRST_MERGE_ID:
        raise ConfigError(f"vocab_size must be >= {FIRST_MERGE_ID}, got {vocab_size}")
    seq = _initial_ids(data)
    if seq.size == 0:
        raise DataError("cannot train a tokenizer on an empty corpus")
    merges: list[tuple[int, int]] = []
    while len(merges) < vocab_size - FIRST_MERGE_ID and len(seq) >= 2:
        keys = _pair_keys(seq)
        usable = (seq[:-1] != BOS_ID) & (seq[1:] != BOS_ID)
        if not usable.any():
            break
        uniq, counts = np.unique(keys[usable], return_counts=True)
        top = counts.max()
        if top < 2:
            break
        candidates = uniq[counts == top]
        if len(candidates) == 1:
            best = candidates[0]
        else:
            # tie-break on earliest first occurrence in the current sequence
            firsts = [np.argmax(keys == c) for c in candidates]
            best = candidates[int(np.argmin(firsts))]
        pair = (int(best >> 32), int(best & 0xFFFFFFFF))
        seq = _merge_pass(seq, pair, FIRST_MERGE_ID + len(merges))
        merges.append(pair)
    return Vocab(merges=merges)


def encode(vocab: Vocab, data) -> np.ndarray:
    """Byte sequence to token ids, applying merges in rank order."""
    seq = _initial_ids(data)
    for rank, pair in enumerate(vocab.merges):
        if len(seq) < 2:
            break
        seq = _merge_pass(seq, pair, FIRST_MERGE_ID + rank)
    return seq.astype(np.int64)


def decode(vocab: Vocab, ids) -> bytes:
    """Token ids back to bytes; BOS decodes to the BOS byte."""
    ids = np.asarray(ids).reshape(-1)
    return b"".join(vocab.token_bytes(int(i)) for i in ids)


def bytes_per_token(vocab: Vocab, data) -> float:
    n_bytes = len(data) if isinstance(data, (bytes, bytearray)) else np.asarray(data).size
    if n_bytes == 0:
        raise DataError("empty input")
    return n_bytes / len(encode(vocab, data))
