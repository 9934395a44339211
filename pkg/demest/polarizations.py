"""Sources of polarizations <z_y> for the estimators.

Estimators read polarizations through a source so they run unchanged on
sampled shots (EmpiricalPolarizations) or on the exact polarizations of a
known DEM (ExactPolarizations), which needs no 2^N table.
"""
from __future__ import annotations

import logging
import math
from typing import Protocol, Sequence, Union

import numpy as np

from demest.dem import Dem, EventMask
from demest.errors import DimensionError, EmptyDataError
from demest.histories import DetectorHistories
from demest.statistics import EstimateWithError, polarization_std_error

logger = logging.getLogger(__name__)


class PolarizationSource(Protocol):
    n_detectors: int

    @property
    def n_shots(self) -> float: ...

    def polarization(self, y: EventMask) -> float: ...

    def subset_polarizations(self, indices: Sequence[int]) -> np.ndarray: ...

    def cross_polarizations(self, ys: Sequence[EventMask]) -> np.ndarray: ...


def _subset_masks(n_detectors: int, indices: Sequence[int]) -> list[EventMask]:
    """Mask for every subset u of `indices`, u's bit j selecting indices[j]."""
    out = []
    for u in range(1 << len(indices)):
        bits = 0
        for j, i in enumerate(indices):
            if (u >> j) & 1:
                bits |= 1 << i
        out.append(EventMask(n_detectors, bits))
    return out


class _SourceBase:
    n_detectors: int

    def _check(self, y: EventMask) -> None:
        if y.n_detectors != self.n_detectors:
            raise DimensionError(f"mask has {y.n_detectors} detectors, source has {self.n_detectors}")

    def polarization(self, y: EventMask) -> float:
        raise NotImplementedError

    @property
    def n_shots(self) -> float:
        raise NotImplementedError

    def estimate(self, y: EventMask) -> EstimateWithError:
        z = self.polarization(y)
        return EstimateWithError(z, polarization_std_error(z, self.n_shots))

    def subset_polarizations(self, indices: Sequence[int]) -> np.ndarray:
        return np.array([self.polarization(m) for m in _subset_masks(self.n_detectors, indices)])

    def cross_polarizations(self, ys: Sequence[EventMask]) -> np.ndarray:
        n = len(ys)
        cross = np.ones((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                cross[i, j] = cross[j, i] = self.polarization(ys[i] ^ ys[j])
        return cross


class EmpiricalPolarizations(_SourceBase):
    """Sample polarizations of detector histories, cached per parity mask."""

    def __init__(self, data: DetectorHistories) -> None:
        if data.n_shots == 0:
            raise EmptyDataError("polarizations need at least one shot")
        self.data = data
        self.n_detectors = data.n_detectors
        self._cache: dict[int, float] = {0: 1.0}
        data.columns  # build the packed column view once, before any worker threads

    @property
    def n_shots(self) -> float:
        return float(self.data.n_shots)

    def polarization(self, y: EventMask) -> float:
        cached = self._cache.get(y.bits)
        if cached is not None:
            return cached
        self._check(y)
        z = 1.0 - 2.0 * self.data.odd_count(y) / self.data.n_shots
        self._cache[y.bits] = z
        return z

    def cross_polarizations(self, ys: Sequence[EventMask]) -> np.ndarray:
        for y in ys:
            self._check(y)
        k = self.data.n_shots
        parities = [self.data.parity_bits(y) for y in ys]
        n = len(ys)
        cross = np.ones((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                odd = int(np.bitwise_count(parities[i] ^ parities[j]).sum())
                cross[i, j] = cross[j, i] = 1.0 - 2.0 * odd / k
        return cross

    @property
    def cache_size(self) -> int:
        return len(self._cache)


class ExactPolarizations(_SourceBase):
    """Polarizations of a known DEM: z_y = prod over events with y·s = 1 of (1 - 2 p_s)."""

    def __init__(self, dem: Dem) -> None:
        self.dem = dem
        self.n_detectors = dem.n_detectors
        self._decays = np.array([1.0 - 2.0 * ev.probability for ev in dem.events])
        self._masks = (
            np.array([ev.mask.bits for ev in dem.events], dtype=np.uint64)
            if dem.n_detectors <= 64
            else None
        )
        self._cache: dict[int, float] = {0: 1.0}

    @property
    def n_shots(self) -> float:
        return math.inf

    def polarization(self, y: EventMask) -> float:
        cached = self._cache.get(y.bits)
        if cached is not None:
            return cached
        self._check(y)
        if self._masks is not None:
            odd = np.bitwise_count(self._masks & np.uint64(y.bits)) & 1
            z = float(np.prod(self._decays[odd.astype(bool)]))
        else:
            z = math.prod(
                1.0 - 2.0 * ev.probability for ev in self.dem.events if y.dot(ev.mask)
            )
        self._cache[y.bits] = z
        return z


SourceLike = Union[DetectorHistories, PolarizationSource]


def as_source(obj: SourceLike) -> PolarizationSource:
    if isinstance(obj, DetectorHistories):
        return EmpiricalPolarizations(obj)
    return obj
