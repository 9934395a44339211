"""Detector-history sampling, exact distributions and reference DEM families."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from itertools import combinations
from typing import Iterator, Sequence

import numpy as np
from numpy.typing import ArrayLike

from demest.config import DISTRIBUTION_CAP
from demest.dem import Dem, DemEvent, EventMask
from demest.errors import ArgumentError, CapacityError, DimensionError
from demest.histories import DetectorHistories
from demest.progress import track
from demest.rng import derived_generator
from demest.workers import imap_ordered

logger = logging.getLogger(__name__)

_BLOCK_SHOTS = 65_536
# above this probability an event is drawn shot-by-shot; below it, by count + positions
_DENSE_PROBABILITY = 0.05
_SUM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Distribution:
    """Probability of every N-bit history, indexed by history-as-integer."""

    n_detectors: int
    weights: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (1 << self.n_detectors,):
            raise DimensionError(f"distribution over N={self.n_detectors} needs 2^N entries, got {w.shape}")
        if np.any(w < -1e-15):
            raise ArgumentError("distribution weights must be nonnegative")
        total = math.fsum(w)
        if abs(total - 1.0) > _SUM_TOL:
            raise ArgumentError(f"distribution weights sum to {total}, expected 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_histories(cls, data: DetectorHistories, cap: int = DISTRIBUTION_CAP) -> Distribution:
        if data.n_shots == 0:
            raise ArgumentError("cannot build an empirical distribution from zero shots")
        counts = data.histogram(cap)
        return cls(data.n_detectors, counts / data.n_shots)

    def probability(self, history: EventMask | str) -> float:
        mask = EventMask.from_string(history) if isinstance(history, str) else history
        if mask.n_detectors != self.n_detectors:
            raise DimensionError("history length does not match distribution")
        return float(self.weights[mask.bits])

    def marginal(self, keep_indices: Sequence[int]) -> Distribution:
        """Distribution of the kept detectors (sorted), bit j = detector keep[j]."""
        keep = list(keep_indices)
        if not keep or any(b <= a for a, b in zip(keep, keep[1:])):
            raise ArgumentError("keep_indices must be non-empty and strictly increasing")
        if keep[0] < 0 or keep[-1] >= self.n_detectors:
            raise DimensionError(f"keep_indices {keep} out of range for N={self.n_detectors}")
        n = self.n_detectors
        # C-order reshape: axis k holds detector n-1-k
        cube = self.weights.reshape((2,) * n)
        dropped = tuple(n - 1 - d for d in range(n) if d not in set(keep))
        reduced = cube.sum(axis=dropped) if dropped else cube
        return Distribution(len(keep), np.ascontiguousarray(reduced).reshape(-1))

    def total_variation(self, other: Distribution) -> float:
        if other.n_detectors != self.n_detectors:
            raise DimensionError("distributions have different N")
        return 0.5 * float(np.abs(self.weights - other.weights).sum())


def _check_cap(n_detectors: int, cap: int) -> None:
    if n_detectors > cap:
        raise CapacityError(
            f"2^{n_detectors} entries exceed the cap N <= {cap}; raise the cap explicitly to override"
        )


def exact_distribution(dem: Dem, cap: int = DISTRIBUTION_CAP) -> Distribution:
    """Apply (1-p) I + p X_s for every event to the delta on the all-zero history."""
    _check_cap(dem.n_detectors, cap)
    size = 1 << dem.n_detectors
    weights = np.zeros(size)
    weights[0] = 1.0
    index = np.arange(size)
    for ev in dem.events:
        p = ev.probability
        weights = (1.0 - p) * weights + p * weights[index ^ ev.mask.bits]
    return Distribution(dem.n_detectors, weights)


def _block_sizes(n_shots: int) -> list[int]:
    full, rest = divmod(n_shots, _BLOCK_SHOTS)
    return [_BLOCK_SHOTS] * full + ([rest] if rest else [])


def _block_occurrences(dem: Dem, n_shots: int, seed: int, block: int) -> Iterator[tuple[int, np.ndarray]]:
    """(event index, shot indices) for every event in one block of shots."""
    rng = derived_generator(seed, block)
    probs = np.array([ev.probability for ev in dem.events], dtype=np.float64)
    sparse = probs < _DENSE_PROBABILITY
    counts = rng.binomial(n_shots, np.where(sparse, probs, 0.0)) if len(probs) else np.zeros(0, int)
    for k in range(len(probs)):
        if not sparse[k]:
            yield k, np.flatnonzero(rng.random(n_shots) < probs[k])
        elif counts[k]:
            yield k, rng.choice(n_shots, size=int(counts[k]), replace=False)


def _packed_masks(dem: Dem) -> np.ndarray:
    nb = (dem.n_detectors + 7) // 8
    if not dem.events:
        return np.zeros((0, nb), dtype=np.uint8)
    return np.frombuffer(b"".join(ev.mask.to_bytes() for ev in dem.events), dtype=np.uint8).reshape(-1, nb)


def sample_histories(
    dem: Dem,
    n_shots: int,
    seed: int,
    workers: int | None = None,
    show_progress: bool = False,
) -> DetectorHistories:
    """Sample K shots: each event's mask is XORed in with probability p_s.

    Shots are generated in fixed-size blocks with per-block streams, so the
    result depends only on (dem, n_shots, seed).
    """
    if n_shots < 0:
        raise ArgumentError(f"n_shots must be >= 0, got {n_shots}")
    masks = _packed_masks(dem)
    sizes = _block_sizes(n_shots)

    def run_block(args: tuple[int, int]) -> np.ndarray:
        block, size = args
        rows = np.zeros((size, masks.shape[1]), dtype=np.uint8)
        for k, shots in _block_occurrences(dem, size, seed, block):
            rows[shots] ^= masks[k]
        return rows

    logger.debug("Sampling %d shots in %d block(s) from %d events", n_shots, len(sizes), len(dem))
    blocks = track(
        imap_ordered(run_block, list(enumerate(sizes)), workers),
        total=len(sizes),
        desc="Sampling",
        enabled=show_progress,
    )
    parts = list(blocks)
    if not parts:
        return DetectorHistories.zeros(dem.n_detectors, 0)
    return DetectorHistories(dem.n_detectors, np.concatenate(parts, axis=0))


def sample_occurrences(dem: Dem, n_shots: int, seed: int) -> np.ndarray:
    """Event-occurrence matrix q (K x L) using the same draws as sample_histories."""
    if n_shots < 0:
        raise ArgumentError(f"n_shots must be >= 0, got {n_shots}")
    q = np.zeros((n_shots, len(dem)), dtype=bool)
    offset = 0
    for block, size in enumerate(_block_sizes(n_shots)):
        for k, shots in _block_occurrences(dem, size, seed, block):
            q[offset + shots, k] = True
        offset += size
    return q


def event_matrix(dem: Dem) -> np.ndarray:
    """Binary L x N matrix whose row k is the mask of event k."""
    bits = np.unpackbits(_packed_masks(dem), axis=1, count=dem.n_detectors, bitorder="little")
    return bits.reshape(len(dem), dem.n_detectors)


def histories_from_occurrences(dem: Dem, occurrences: ArrayLike, method: str = "matmul") -> DetectorHistories:
    """Detector histories x = q E (mod 2) for an occurrence matrix q."""
    q = np.asarray(occurrences, dtype=bool)
    if q.ndim != 2 or q.shape[1] != len(dem):
        raise DimensionError(f"occurrence matrix must be (K, {len(dem)}), got {q.shape}")
    if method == "matmul":
        x = (q.astype(np.int64) @ event_matrix(dem).astype(np.int64)) & 1
        return DetectorHistories.from_bits(x, dem.n_detectors)
    if method == "xor":
        masks = _packed_masks(dem)
        rows = np.zeros((q.shape[0], masks.shape[1]), dtype=np.uint8)
        for k in range(len(dem)):
            rows[q[:, k]] ^= masks[k]
        return DetectorHistories(dem.n_detectors, rows)
    raise ArgumentError(f"unknown method {method!r}; expected 'matmul' or 'xor'")


def make_uniform_depolarizing_dem(n_detectors: int, epsilon: float, cap: int = DISTRIBUTION_CAP) -> Dem:
    """Every nonzero N-bit mask with probability epsilon / 2^N.

    The all-zero mask is omitted: it is unobservable. epsilon = 0 gives the
    empty DEM.
    """
    _check_cap(n_detectors, cap)
    if not 0.0 <= epsilon < 2.0 ** (n_detectors - 1):
        raise ArgumentError(f"epsilon must lie in [0, 2^(N-1)), got {epsilon}")
    if epsilon == 0.0:
        return Dem(n_detectors)
    p = epsilon / 2.0**n_detectors
    return Dem(
        n_detectors,
        tuple(DemEvent(EventMask(n_detectors, bits), p) for bits in range(1, 1 << n_detectors)),
    )


def make_random_sparse_dem(
    n_detectors: int,
    n_events: int,
    max_weight: int,
    p_min: float,
    p_max: float,
    seed: int,
) -> Dem:
    """n_events distinct masks of weight 1..max_weight with p ~ U[p_min, p_max]."""
    if not 1 <= max_weight <= n_detectors:
        raise ArgumentError(f"max_weight must lie in [1, N={n_detectors}], got {max_weight}")
    if not 0.0 < p_min <= p_max < 0.5:
        raise ArgumentError(f"need 0 < p_min <= p_max < 1/2, got [{p_min}, {p_max}]")
    by_weight = [math.comb(n_detectors, w) for w in range(1, max_weight + 1)]
    available = sum(by_weight)
    if not 0 <= n_events <= available:
        raise ArgumentError(
            f"cannot draw {n_events} distinct masks; only {available} have weight 1..{max_weight}"
        )
    rng = derived_generator(seed)
    chosen: dict[int, None] = {}
    if n_events > available // 2:
        # dense request: enumerate every candidate and pick without replacement
        candidates = [
            m for w in range(1, max_weight + 1) for m in _masks_of_weight(n_detectors, w)
        ]
        for i in rng.choice(len(candidates), size=n_events, replace=False):
            chosen[candidates[int(i)]] = None
    else:
        weights = np.array(by_weight, dtype=np.float64) / available
        while len(chosen) < n_events:
            w = int(rng.choice(max_weight, p=weights)) + 1
            picks = rng.choice(n_detectors, size=w, replace=False)
            chosen.setdefault(sum(1 << int(i) for i in picks), None)
    probs = rng.uniform(p_min, p_max, size=n_events)
    return Dem(
        n_detectors,
        tuple(DemEvent(EventMask(n_detectors, bits), float(p)) for bits, p in zip(chosen, probs)),
    )


def _masks_of_weight(n: int, w: int) -> Iterator[int]:
    for combo in combinations(range(n), w):
        yield sum(1 << i for i in combo)

