"""Polarizations, depolarizations and their error bars."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from demest.config import DIVERGENCE_SIGMAS
from demest.dem import EventMask
from demest.errors import ArgumentError, DimensionError, EmptyDataError
from demest.histories import DetectorHistories
from demest.progress import track
from demest.rng import derived_generator

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EstimateWithError:
    value: float
    std_error: float
    divergent: bool = False
    warning: str | None = None
    divergent_fraction: float | None = None

    def __post_init__(self) -> None:
        se = float(self.std_error)
        if math.isnan(se) or se < 0.0:
            raise ArgumentError(f"std_error must be >= 0 or +inf, got {self.std_error}")
        object.__setattr__(self, "value", float(self.value))
        object.__setattr__(self, "std_error", se)

    @classmethod
    def divergence(cls, warning: str | None = None) -> EstimateWithError:
        return cls(math.nan, math.inf, divergent=True, warning=warning)

    @property
    def z_score(self) -> float:
        if self.std_error == 0.0:
            return math.inf if self.value != 0.0 else 0.0
        return self.value / self.std_error

    def __str__(self) -> str:
        flag = " (divergent)" if self.divergent else ""
        return f"{self.value:.6g} +/- {self.std_error:.3g}{flag}"


def divergence_floor(n_shots: float, sigmas: float = DIVERGENCE_SIGMAS) -> float:
    """Polarizations at or below this are indistinguishable from zero."""
    if math.isinf(n_shots):
        return 0.0
    return sigmas / math.sqrt(n_shots)


def polarization_std_error(z: float, n_shots: float) -> float:
    if math.isinf(n_shots):
        return 0.0
    return math.sqrt(max(0.0, 1.0 - z * z)) / math.sqrt(n_shots)


def _check_data(data: DetectorHistories, y: EventMask) -> None:
    if data.n_shots == 0:
        raise EmptyDataError("polarizations need at least one shot")
    if y.n_detectors != data.n_detectors:
        raise DimensionError(f"mask has {y.n_detectors} detectors, data has {data.n_detectors}")


def parity_values(data: DetectorHistories, y: EventMask) -> np.ndarray:
    """Per-shot parities (-1)^(x·y) as an int8 array."""
    if y.n_detectors != data.n_detectors:
        raise DimensionError(f"mask has {y.n_detectors} detectors, data has {data.n_detectors}")
    packed = data.parity_bits(y).view(np.uint8)
    odd = np.unpackbits(packed, count=data.n_shots, bitorder="little")
    return (1 - 2 * odd.astype(np.int8)).astype(np.int8)


def sample_polarization(data: DetectorHistories, y: EventMask) -> EstimateWithError:
    _check_data(data, y)
    if y.is_zero():
        return EstimateWithError(1.0, 0.0)
    k = data.n_shots
    z = 1.0 - 2.0 * data.odd_count(y) / k
    return EstimateWithError(z, polarization_std_error(z, k))


def implied_floor(z: EstimateWithError, sigmas: float = DIVERGENCE_SIGMAS) -> float:
    """Divergence floor for the shot count implied by a binomial error bar.

    sigma_z = sqrt(1 - z^2) / sqrt(K) gives K, so the floor sigmas / sqrt(K)
    is sigmas * sigma_z / sqrt(1 - z^2). Exact estimates get 0.
    """
    spread = 1.0 - z.value * z.value
    if z.std_error == 0.0 or not math.isfinite(z.std_error) or spread <= 0.0:
        return 0.0
    return sigmas * z.std_error / math.sqrt(spread)


def depolarization(z: EstimateWithError, floor: float | None = None) -> EstimateWithError:
    """omega = -ln z with sigma_omega = sigma_z / z.

    Polarizations at or below `floor`, or whose depolarization error reaches
    1, are flagged divergent. Without an explicit floor the 3-sigma floor for
    the shot count behind `z` applies.
    """
    if floor is None:
        floor = implied_floor(z)
    if z.divergent or z.value <= max(floor, 0.0):
        return EstimateWithError(
            math.inf, math.inf, divergent=True,
            warning=f"polarization {z.value:.3g} is indistinguishable from zero",
        )
    omega = -math.log(z.value)
    se = z.std_error / z.value
    if se >= 1.0:
        return EstimateWithError(omega, se, divergent=True, warning="depolarization error >= 1")
    return EstimateWithError(omega, se)


def polarization_covariance(data: DetectorHistories, ys: Sequence[EventMask]) -> np.ndarray:
    """Single-shot covariance of parities: <z_{y+y'}> - <z_y><z_y'>."""
    if data.n_shots == 0:
        raise EmptyDataError("covariance needs at least one shot")
    for y in ys:
        if y.n_detectors != data.n_detectors:
            raise DimensionError(f"mask {y} does not match N={data.n_detectors}")
    k = data.n_shots
    parities = [data.parity_bits(y) for y in ys]
    z = np.array([1.0 - 2.0 * np.bitwise_count(p).sum() / k for p in parities])
    n = len(ys)
    cross = np.ones((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            odd = np.bitwise_count(parities[i] ^ parities[j]).sum()
            cross[i, j] = cross[j, i] = 1.0 - 2.0 * odd / k
    return cross - np.outer(z, z)


def bootstrap_std_error(
    data: DetectorHistories,
    statistic: Callable[[DetectorHistories], float],
    n_resamples: int,
    seed: int,
    show_progress: bool = False,
) -> float:
    """Standard deviation of `statistic` over shot-level resamples with replacement."""
    if n_resamples < 2:
        raise ArgumentError(f"bootstrap needs at least 2 resamples, got {n_resamples}")
    if data.n_shots == 0:
        raise EmptyDataError("bootstrap needs at least one shot")
    rng = derived_generator(seed)
    k = data.n_shots
    values = np.empty(n_resamples)
    for b in track(range(n_resamples), n_resamples, "Bootstrap", show_progress):
        values[b] = statistic(data.take(rng.integers(0, k, size=k)))
    finite = values[np.isfinite(values)]
    if len(finite) < n_resamples:
        logger.warning("%d of %d bootstrap resamples gave non-finite values", n_resamples - len(finite), n_resamples)
    if len(finite) < 2:
        return math.inf
    return float(np.std(finite, ddof=1))


def is_significant(est: EstimateWithError, z_threshold: float) -> bool:
    if z_threshold <= 0:
        raise ArgumentError(f"z_threshold must be > 0, got {z_threshold}")
    if est.divergent or not math.isfinite(est.value):
        return False
    return est.value > z_threshold * est.std_error
