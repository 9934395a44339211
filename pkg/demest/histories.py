from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike

from demest.dem import EventMask
from demest.errors import ArgumentError, CapacityError, DimensionError

logger = logging.getLogger(__name__)


def _row_bytes(n_detectors: int) -> int:
    return (n_detectors + 7) // 8


def _padding_mask(n_detectors: int) -> int:
    used = n_detectors % 8
    return 0xFF if used == 0 else (1 << used) - 1


@dataclass(frozen=True, eq=False)
class DetectorHistories:
    """K shots of N detector bits, packed row-wise.

    `rows` has shape (K, ceil(N/8)); within a byte, bit j holds detector
    8*byte_index + j and padding bits are zero (the binary shot file layout).
    """

    n_detectors: int
    rows: np.ndarray

    def __post_init__(self) -> None:
        if self.n_detectors < 1:
            raise ArgumentError(f"n_detectors must be >= 1, got {self.n_detectors}")
        rows = np.ascontiguousarray(self.rows, dtype=np.uint8)
        if rows.ndim != 2 or rows.shape[1] != _row_bytes(self.n_detectors):
            raise DimensionError(
                f"rows must have shape (K, {_row_bytes(self.n_detectors)}), got {rows.shape}"
            )
        if rows.shape[0] and np.any(rows[:, -1] & ~np.uint8(_padding_mask(self.n_detectors))):
            raise DimensionError("padding bits beyond detector N-1 must be zero")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @classmethod
    def from_bits(cls, bits: ArrayLike, n_detectors: int | None = None) -> DetectorHistories:
        arr = np.asarray(bits)
        if arr.ndim != 2:
            if arr.size == 0 and n_detectors is not None:
                arr = arr.reshape(0, n_detectors)
            else:
                raise DimensionError(f"expected a (K, N) bit array, got shape {arr.shape}")
        n = arr.shape[1] if n_detectors is None else n_detectors
        if arr.shape[1] != n:
            raise DimensionError(f"bit array has {arr.shape[1]} columns, expected {n}")
        packed = np.packbits(arr.astype(bool), axis=1, bitorder="little")
        return cls(n, packed.reshape(arr.shape[0], _row_bytes(n)))

    @classmethod
    def from_strings(cls, lines: Iterable[str], n_detectors: int | None = None) -> DetectorHistories:
        lines = [ln.strip() for ln in lines]
        if not lines:
            if n_detectors is None:
                raise ArgumentError("cannot infer n_detectors from zero shots")
            return cls.zeros(n_detectors, 0)
        n = len(lines[0]) if n_detectors is None else n_detectors
        if any(len(ln) != n for ln in lines):
            raise DimensionError(f"every shot must have exactly {n} characters")
        raw = np.frombuffer("".join(lines).encode("ascii"), dtype=np.uint8)
        if np.any((raw != ord("0")) & (raw != ord("1"))):
            raise ArgumentError("shot strings may only contain '0' and '1'")
        return cls.from_bits((raw - ord("0")).reshape(len(lines), n))

    @classmethod
    def from_integers(cls, values: ArrayLike, n_detectors: int) -> DetectorHistories:
        """Shots given as integers with bit i = detector i."""
        ints = np.asarray(values, dtype=np.uint64)
        raw = ints.astype("<u8").view(np.uint8).reshape(-1, 8)
        nb = _row_bytes(n_detectors)
        if n_detectors > 64:
            raise ArgumentError("integer-encoded shots support at most 64 detectors")
        rows = raw[:, :nb].copy()
        if rows.shape[0]:
            rows[:, -1] &= np.uint8(_padding_mask(n_detectors))
        return cls(n_detectors, rows)

    @classmethod
    def zeros(cls, n_detectors: int, n_shots: int) -> DetectorHistories:
        return cls(n_detectors, np.zeros((n_shots, _row_bytes(n_detectors)), dtype=np.uint8))

    @classmethod
    def concatenate(cls, parts: Sequence[DetectorHistories], n_detectors: int) -> DetectorHistories:
        if not parts:
            return cls.zeros(n_detectors, 0)
        if any(p.n_detectors != n_detectors for p in parts):
            raise DimensionError("cannot concatenate histories with different N")
        return cls(n_detectors, np.concatenate([p.rows for p in parts], axis=0))

    @property
    def n_shots(self) -> int:
        return int(self.rows.shape[0])

    def __len__(self) -> int:
        return self.n_shots

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DetectorHistories):
            return NotImplemented
        return self.n_detectors == other.n_detectors and np.array_equal(self.rows, other.rows)

    __hash__ = None  # type: ignore[assignment]

    def to_bits(self) -> np.ndarray:
        return np.unpackbits(
            self.rows, axis=1, count=self.n_detectors, bitorder="little"
        ).astype(bool)

    def to_strings(self) -> list[str]:
        bits = self.to_bits().astype(np.uint8) + ord("0")
        return [row.tobytes().decode("ascii") for row in bits]

    def take(self, shot_indices: ArrayLike) -> DetectorHistories:
        return DetectorHistories(self.n_detectors, self.rows[np.asarray(shot_indices, dtype=np.intp)])

    def select(self, detector_indices: Sequence[int]) -> DetectorHistories:
        """Histories restricted to the given detectors, in the given order."""
        idx = list(detector_indices)
        if not idx:
            raise ArgumentError("select needs at least one detector")
        if min(idx) < 0 or max(idx) >= self.n_detectors:
            raise DimensionError(f"detector indices {idx} out of range for N={self.n_detectors}")
        return DetectorHistories.from_bits(self.to_bits()[:, idx], len(idx))

    @cached_property
    def columns(self) -> np.ndarray:
        """Detector-major packing: (N, ceil(K/64)) uint64, shot bits zero-padded."""
        n_words = (self.n_shots + 63) // 64
        packed = np.packbits(self.to_bits().T, axis=1, bitorder="little")
        padded = np.zeros((self.n_detectors, n_words * 8), dtype=np.uint8)
        padded[:, : packed.shape[1]] = packed
        logger.debug("Built column view: %d detectors x %d words", self.n_detectors, n_words)
        return padded.view(np.uint64)

    def parity_bits(self, y: EventMask) -> np.ndarray:
        """Packed per-shot parities x·y, one bit per shot."""
        if y.n_detectors != self.n_detectors:
            raise DimensionError(f"mask has {y.n_detectors} detectors, data has {self.n_detectors}")
        idx = list(y.indices)
        if not idx:
            return np.zeros(self.columns.shape[1], dtype=np.uint64)
        return np.bitwise_xor.reduce(self.columns[idx], axis=0)

    def odd_count(self, y: EventMask) -> int:
        """Number of shots with odd parity x·y."""
        return int(np.bitwise_count(self.parity_bits(y)).sum())

    def as_integers(self) -> np.ndarray:
        """Shots as integers (bit i = detector i); N <= 64."""
        if self.n_detectors > 64:
            raise CapacityError("integer view needs N <= 64")
        padded = np.zeros((self.n_shots, 8), dtype=np.uint8)
        padded[:, : self.rows.shape[1]] = self.rows
        return padded.view("<u8").ravel().astype(np.uint64)

    def histogram(self, cap: int = 24) -> np.ndarray:
        """Counts of each history, indexed by history-as-integer (length 2^N)."""
        if self.n_detectors > cap:
            raise CapacityError(f"histogram needs 2^{self.n_detectors} bins; cap is N <= {cap}")
        return np.bincount(self.as_integers().astype(np.intp), minlength=1 << self.n_detectors)
