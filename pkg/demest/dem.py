"""Detector error model data types and the probability/attenuation algebra.

Detector indices are 0-based. In string form the leftmost character of a mask
is detector 0; as an integer, bit i holds detector i.
"""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

from demest.errors import ArgumentError, DimensionError, DomainError

logger = logging.getLogger(__name__)

Attenuation = float  # a = -ln(1 - 2p), nonnegative
DecayFactor = float  # d = 1 - 2p = exp(-a), in (0, 1]


@dataclass(frozen=True)
class EventMask:
    n_detectors: int
    bits: int

    def __post_init__(self) -> None:
        if self.n_detectors < 1:
            raise ArgumentError(f"n_detectors must be >= 1, got {self.n_detectors}")
        if self.bits < 0 or self.bits >> self.n_detectors:
            raise DimensionError(
                f"mask bits {self.bits:#x} do not fit in {self.n_detectors} detectors"
            )

    @classmethod
    def from_string(cls, text: str) -> EventMask:
        text = text.strip()
        if not text or set(text) - {"0", "1"}:
            raise ArgumentError(f"mask string must be non-empty and contain only 0/1, got {text!r}")
        # leftmost character is detector 0, i.e. the lowest integer bit
        return cls(len(text), int(text[::-1], 2))

    @classmethod
    def from_indices(cls, n_detectors: int, indices: Iterable[int]) -> EventMask:
        bits = 0
        for i in indices:
            if not 0 <= i < n_detectors:
                raise DimensionError(f"detector index {i} out of range for N={n_detectors}")
            bits |= 1 << i
        return cls(n_detectors, bits)

    @classmethod
    def zero(cls, n_detectors: int) -> EventMask:
        return cls(n_detectors, 0)

    @property
    def indices(self) -> tuple[int, ...]:
        out = []
        bits = self.bits
        while bits:
            low = bits & -bits
            out.append(low.bit_length() - 1)
            bits ^= low
        return tuple(out)

    @property
    def weight(self) -> int:
        return self.bits.bit_count()

    def is_zero(self) -> bool:
        return self.bits == 0

    def to_string(self) -> str:
        return format(self.bits, f"0{self.n_detectors}b")[::-1]

    def _check(self, other: EventMask) -> None:
        if other.n_detectors != self.n_detectors:
            raise DimensionError(
                f"mask length mismatch: {self.n_detectors} vs {other.n_detectors}"
            )

    def __xor__(self, other: EventMask) -> EventMask:
        self._check(other)
        return EventMask(self.n_detectors, self.bits ^ other.bits)

    def dot(self, other: EventMask) -> int:
        self._check(other)
        return (self.bits & other.bits).bit_count() & 1

    def restrict(self, keep: Sequence[int]) -> EventMask:
        """Mask on len(keep) detectors whose bit k is this mask's bit keep[k]."""
        bits = 0
        for k, i in enumerate(keep):
            if (self.bits >> i) & 1:
                bits |= 1 << k
        return EventMask(len(keep), bits)

    def to_bytes(self) -> bytes:
        return self.bits.to_bytes((self.n_detectors + 7) // 8, "little")

    def __str__(self) -> str:
        return self.to_string()


def mask_dot(y: EventMask, s: EventMask) -> int:
    """Parity of the overlap of y and s (x·y mod 2)."""
    return y.dot(s)


def prob_to_attenuation(p: float) -> Attenuation:
    if not 0.0 <= p < 0.5:
        raise DomainError(f"attenuation is defined for 0 <= p < 1/2, got p={p}")
    return -math.log1p(-2.0 * p)


def attenuation_to_prob(a: Attenuation) -> float:
    if not a >= 0.0:
        raise DomainError(f"attenuation must be >= 0, got {a}")
    return -math.expm1(-a) / 2.0


def prob_to_decay(p: float) -> DecayFactor:
    if not 0.0 <= p < 0.5:
        raise DomainError(f"decay factor must be positive; need 0 <= p < 1/2, got p={p}")
    return 1.0 - 2.0 * p


def attenuation_to_decay(a: Attenuation) -> DecayFactor:
    if not a >= 0.0:
        raise DomainError(f"attenuation must be >= 0, got {a}")
    return math.exp(-a)


def decay_to_attenuation(d: DecayFactor) -> Attenuation:
    if not 0.0 < d <= 1.0:
        raise DomainError(f"decay factor must lie in (0, 1], got {d}")
    return -math.log(d)


def xor_combine(p_a: float, p_b: float) -> float:
    """Probability that exactly one of two independent events occurs."""
    return p_a * (1.0 - p_b) + (1.0 - p_a) * p_b


@dataclass(frozen=True)
class DemEvent:
    mask: EventMask
    probability: float
    std_error: float | None = field(default=None, compare=False)
    warning: str | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.mask.is_zero():
            raise ArgumentError("DEM events must flip at least one detector")
        p = float(self.probability)
        if not 0.0 <= p <= 1.0:
            raise DomainError(f"event probability must lie in [0, 1], got {p}")
        object.__setattr__(self, "probability", p)

    @property
    def attenuation(self) -> Attenuation:
        return prob_to_attenuation(self.probability)

    @property
    def decay_factor(self) -> DecayFactor:
        return prob_to_decay(self.probability)


def _mask_key(mask: EventMask) -> str:
    return mask.to_string()


@dataclass(frozen=True)
class Dem:
    """An immutable DEM. Events are kept sorted by mask string; masks are distinct."""

    n_detectors: int
    events: tuple[DemEvent, ...] = ()

    def __post_init__(self) -> None:
        if self.n_detectors < 1:
            raise ArgumentError(f"n_detectors must be >= 1, got {self.n_detectors}")
        seen: set[int] = set()
        for ev in self.events:
            if ev.mask.n_detectors != self.n_detectors:
                raise DimensionError(
                    f"event {ev.mask} has {ev.mask.n_detectors} detectors, DEM has {self.n_detectors}"
                )
            if ev.mask.bits in seen:
                raise ArgumentError(f"duplicate event mask {ev.mask}; use Dem.from_events to merge")
            seen.add(ev.mask.bits)
        object.__setattr__(
            self, "events", tuple(sorted(self.events, key=lambda e: _mask_key(e.mask)))
        )

    @classmethod
    def from_events(cls, n_detectors: int, events: Iterable[DemEvent]) -> Dem:
        """Build a DEM, merging events with identical masks by exclusive addition."""
        merged: dict[int, DemEvent] = {}
        for ev in events:
            prev = merged.get(ev.mask.bits)
            if prev is None:
                merged[ev.mask.bits] = ev
            else:
                logger.debug("Merging duplicate event %s", ev.mask)
                merged[ev.mask.bits] = DemEvent(
                    ev.mask, xor_combine(prev.probability, ev.probability)
                )
        return cls(n_detectors, tuple(merged.values()))

    @classmethod
    def from_probabilities(cls, n_detectors: int, probs: Mapping[EventMask, float] | Iterable[tuple[EventMask, float]]) -> Dem:
        items = probs.items() if isinstance(probs, Mapping) else probs
        return cls.from_events(n_detectors, (DemEvent(m, p) for m, p in items))

    @classmethod
    def from_attenuations(cls, n_detectors: int, atts: Mapping[EventMask, float] | Iterable[tuple[EventMask, float]]) -> Dem:
        items = atts.items() if isinstance(atts, Mapping) else atts
        return cls.from_events(n_detectors, (DemEvent(m, attenuation_to_prob(a)) for m, a in items))

    @classmethod
    def from_strings(cls, probs: Mapping[str, float]) -> Dem:
        """Convenience constructor, e.g. Dem.from_strings({"10": 0.1, "01": 0.2})."""
        masks = {EventMask.from_string(k): v for k, v in probs.items()}
        if not masks:
            raise ArgumentError("cannot infer n_detectors from an empty mapping")
        n = next(iter(masks)).n_detectors
        return cls.from_probabilities(n, masks)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[DemEvent]:
        return iter(self.events)

    def get(self, mask: EventMask) -> DemEvent | None:
        for ev in self.events:
            if ev.mask == mask:
                return ev
        return None

    def probabilities(self) -> dict[EventMask, float]:
        return {ev.mask: ev.probability for ev in self.events}

    def attenuations(self) -> dict[EventMask, Attenuation]:
        return {ev.mask: ev.attenuation for ev in self.events}

    def total_attenuation(self) -> Attenuation:
        return math.fsum(ev.attenuation for ev in self.events)

    def without_zero_events(self) -> Dem:
        return Dem(self.n_detectors, tuple(ev for ev in self.events if ev.probability > 0.0))


def _check_index_list(indices: Sequence[int], n_detectors: int, what: str) -> None:
    if not indices:
        raise ArgumentError(f"{what} must not be empty")
    for a, b in zip(indices, indices[1:]):
        if b <= a:
            raise ArgumentError(f"{what} must be strictly increasing, got {list(indices)}")
    if indices[0] < 0 or indices[-1] >= n_detectors:
        raise DimensionError(f"{what} {list(indices)} out of range for N={n_detectors}")


def reduce_dem(dem: Dem, keep_indices: Sequence[int]) -> Dem:
    """DEM induced on the kept detectors.

    Events whose restriction is empty are dropped; colliding restrictions are
    merged by exclusive addition, i.e. their attenuations add.
    """
    keep = list(keep_indices)
    _check_index_list(keep, dem.n_detectors, "keep_indices")
    merged: dict[int, float] = {}
    for ev in dem.events:
        r = ev.mask.restrict(keep)
        if r.is_zero():
            continue
        merged[r.bits] = xor_combine(merged.get(r.bits, 0.0), ev.probability)
    return Dem(len(keep), tuple(DemEvent(EventMask(len(keep), b), p) for b, p in merged.items()))


_TERNARY = re.compile(r"^[01xX]+$")


@dataclass(frozen=True)
class EventClass:
    """Events whose masks take fixed values on fixed detectors, e.g. {0,2}=[10]."""

    fixed_indices: tuple[int, ...]
    fixed_values: tuple[int, ...]

    def __post_init__(self) -> None:
        idx = tuple(int(i) for i in self.fixed_indices)
        vals = tuple(int(v) for v in self.fixed_values)
        if not idx:
            raise ArgumentError("an event class needs at least one fixed index")
        if len(idx) != len(vals):
            raise ArgumentError("fixed_indices and fixed_values differ in length")
        if any(b <= a for a, b in zip(idx, idx[1:])) or idx[0] < 0:
            raise ArgumentError(f"fixed_indices must be strictly increasing and >= 0, got {idx}")
        if set(vals) - {0, 1}:
            raise ArgumentError(f"fixed_values must be 0/1, got {vals}")
        object.__setattr__(self, "fixed_indices", idx)
        object.__setattr__(self, "fixed_values", vals)

    @classmethod
    def all_ones(cls, indices: Iterable[int]) -> EventClass:
        idx = tuple(sorted(indices))
        return cls(idx, (1,) * len(idx))

    @classmethod
    def from_ternary(cls, text: str) -> EventClass:
        """Parse a ternary string such as "10xx" (x = aggregated over)."""
        if not _TERNARY.match(text):
            raise ArgumentError(f"ternary class string may only contain 0, 1, x; got {text!r}")
        pairs = [(i, int(c)) for i, c in enumerate(text) if c in "01"]
        if not pairs:
            raise ArgumentError("ternary class string fixes no detector")
        return cls(tuple(i for i, _ in pairs), tuple(v for _, v in pairs))

    @property
    def size(self) -> int:
        return len(self.fixed_indices)

    @property
    def is_estimable(self) -> bool:
        return any(self.fixed_values)

    @property
    def value_bits(self) -> int:
        """fixed_values as an integer, bit j = fixed_values[j]."""
        return sum(v << j for j, v in enumerate(self.fixed_values))

    def check_range(self, n_detectors: int) -> None:
        if self.fixed_indices[-1] >= n_detectors:
            raise DimensionError(
                f"class {self} references detector {self.fixed_indices[-1]} but N={n_detectors}"
            )

    def contains(self, mask: EventMask) -> bool:
        return mask.restrict(self.fixed_indices).bits == self.value_bits

    def to_ternary(self, n_detectors: int) -> str:
        self.check_range(n_detectors)
        chars = ["x"] * n_detectors
        for i, v in zip(self.fixed_indices, self.fixed_values):
            chars[i] = str(v)
        return "".join(chars)

    def __str__(self) -> str:
        idx = ",".join(str(i) for i in self.fixed_indices)
        vals = "".join(str(v) for v in self.fixed_values)
        return f"{{{idx}}}=[{vals}]"


def class_attenuation_true(dem: Dem, cls: EventClass) -> Attenuation:
    """Sum of attenuations of every DEM event in the class."""
    cls.check_range(dem.n_detectors)
    return math.fsum(ev.attenuation for ev in dem.events if cls.contains(ev.mask))
