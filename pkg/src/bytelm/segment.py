"""Byte classification and word-aligned patch segmentation.

A byte is "spacelike" when it does not encode a letter, a digit, or a
UTF-8 continuation byte. Patch boundaries are placed at the first
spacelike byte after a run of non-spacelike bytes, so multi-byte
punctuation marks only once (at its leading byte) and words carry their
trailing whitespace.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

BOS = 255  # document-boundary byte; never occurs in valid UTF-8
RESERVED = 254  # kept free for future control markers


def _coerce(data) -> np.ndarray:
    if isinstance(data, (bytes, bytearray, memoryview)):
        return np.frombuffer(bytes(data), dtype=np.uint8)
    return np.asarray(data)


def as_byte_array(data) -> np.ndarray:
    """Coerce bytes / list / array input to a 1-D uint8 array."""
    arr = _coerce(data)
    if arr.ndim != 1:
        raise DataError(f"expected a 1-D byte sequence, got shape {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise DataError("byte values must lie in [0, 255]")
    return arr.astype(np.uint8)


def is_spacelike(b: int) -> bool:
    """True for any byte outside the digit, letter, and UTF-8 continuation ranges."""
    return (
        b < 0x30
        or 0x39 < b < 0x41
        or 0x5A < b < 0x61
        or 0x7A < b < 0x80
        or b >= 0xC0
    )


def spacelike_mask(data) -> np.ndarray:
    """Vectorized `is_spacelike` over an array of byte values."""
    b = _coerce(data)
    return (
        (b < 0x30)
        | ((0x39 < b) & (b < 0x41))
        | ((0x5A < b) & (b < 0x61))
        | ((0x7A < b) & (b < 0x80))
        | (b >= 0xC0)
    )


def insertion_mask(data) -> np.ndarray:
    """Mark positions that open a patch boundary.

    A position is marked when its byte is spacelike and the previous byte
    is not. Position 0 is marked iff byte 0 is spacelike. BOS bytes are
    always marked. Works on 1-D or 2-D (batch-first) inputs; the previous
    byte is taken along the last axis.
    """
    b = _coerce(data)
    sl = spacelike_mask(b)
    mask = sl.copy()
    mask[..., 1:] &= ~sl[..., :-1]
    mask |= b == BOS
    return mask


@dataclass(frozen=True)
class PatchBoundaries:
    """Patch starts for one byte sequence.

    `starts[k]` is the index of the first byte of patch k. A patch is
    complete when it ends one past a marked position; a trailing partial
    patch (no closing mark yet) is included in `starts` but not counted
    by `n_complete`.
    """

    starts: np.ndarray
    total: int
    n_complete: int

    def spans(self) -> list[tuple[int, int]]:
        ends = list(self.starts[1:]) + [self.total]
        return [(int(s), int(e)) for s, e in zip(self.starts, ends)]


def split_patches(data) -> PatchBoundaries:
    """Segment a byte sequence into word-aligned patches."""
    b = as_byte_array(data)
    marks = np.flatnonzero(insertion_mask(b))
    starts = np.concatenate([[0], marks + 1]).astype(np.int64)
    if len(starts) > 1 and starts[-1] == len(b):
        starts = starts[:-1]
    if len(b) == 0:
        starts = starts[:0]
    return PatchBoundaries(starts=starts, total=len(b), n_complete=len(marks))


@dataclass(frozen=True)
class PatchStats:
    """Length statistics over complete patches only."""

    count: int
    mean_len: float
    histogram: dict[int, int]


def patch_stats(data) -> PatchStats:
    """Summarize complete-patch lengths; a trailing partial patch is excluded."""
    b = as_byte_array(data)
    marks = np.flatnonzero(insertion_mask(b))
    if len(marks) == 0:
        return PatchStats(count=0, mean_len=0.0, histogram={})
    lengths = np.diff(marks + 1, prepend=0)
    covered = int(marks[-1]) + 1
    values, counts = np.unique(lengths, return_counts=True)
    hist = {int(v): int(c) for v, c in zip(values, counts)}
    return PatchStats(count=len(marks), mean_len=covered / len(marks), histogram=hist)


def length_percentile(stats: PatchStats, q: float) -> float:
    """Percentile of the complete-patch length distribution (nearest-rank)."""
    if stats.count == 0:
        return 0.0
    rank = max(1, int(np.ceil(q / 100.0 * stats.count)))
    seen = 0
    for length in sorted(stats.histogram):
        seen += stats.histogram[length]
        if seen >= rank:
            return float(length)
    return float(max(stats.histogram))
