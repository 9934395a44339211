"""Aggregated class attenuations, p_ij, and Monte Carlo attenuation estimators."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from demest.config import (
    BOOTSTRAP_RESAMPLES,
    DELTA_METHOD_MAX_EXACT,
    DELTA_METHOD_MAX_INDICES,
    DISTRIBUTION_CAP,
    MAX_CLASS_INDICES,
    MC_DIVERGENT_LIMIT,
    MC_SAMPLES,
)
from demest.dem import EventClass, EventMask
from demest.errors import ArgumentError, CapacityError, DimensionError, UnsupportedClassError
from demest.histories import DetectorHistories
from demest.polarizations import EmpiricalPolarizations, PolarizationSource, SourceLike, as_source
from demest.rng import derived_generator, random_bits
from demest.statistics import (
    EstimateWithError,
    bootstrap_std_error,
    divergence_floor,
    polarization_std_error,
)
from demest.workers import map_ordered

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class McConfig:
    n_samples: int = MC_SAMPLES
    seed: int = 0
    exhaustive: bool = False  # enumerate all 2^N parities instead of sampling

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ArgumentError(f"n_samples must be >= 1, got {self.n_samples}")


def _signs(size: int, value_bits: int) -> np.ndarray:
    idx = np.arange(size, dtype=np.uint64)
    return 1.0 - 2.0 * (np.bitwise_count(idx & np.uint64(value_bits)) & 1)


def class_attenuation_from_polarizations(z: np.ndarray, value_bits: int) -> float:
    """a = -(2/2^k) sum_u (-1)^(u·v) omega_u over the 2^k subsets u of the fixed indices."""
    z = np.asarray(z, dtype=np.float64)
    if np.any(z <= 0):
        return math.nan
    omega = -np.log(z)
    return float(-2.0 / len(z) * np.dot(_signs(len(z), value_bits), omega))


def _delta_class_error(z: np.ndarray, value_bits: int, n_shots: float) -> float:
    if math.isinf(n_shots):
        return 0.0
    size = len(z)
    idx = np.arange(size)
    cov = z[idx[:, None] ^ idx[None, :]] - np.outer(z, z)
    g = 2.0 / size * _signs(size, value_bits) / z
    return math.sqrt(max(float(g @ cov @ g), 0.0) / n_shots)


def class_attenuation_estimate(
    data: SourceLike,
    cls: EventClass,
    error_method: str = "delta",
    n_resamples: int = BOOTSTRAP_RESAMPLES,
    seed: int = 0,
) -> EstimateWithError:
    """Aggregated attenuation of every event matching the class.

    Needs at least one fixed value equal to 1. Error bars come from
    covariance propagation ("delta", k <= 12) or a shot bootstrap.
    """
    source = as_source(data)
    if not cls.is_estimable:
        raise UnsupportedClassError(f"class {cls} fixes no detector to 1; no estimator exists")
    cls.check_range(source.n_detectors)
    k = cls.size
    if k > MAX_CLASS_INDICES:
        raise CapacityError(f"class fixes {k} detectors; the cap is {MAX_CLASS_INDICES}")

    z = source.subset_polarizations(cls.fixed_indices)
    floor = divergence_floor(source.n_shots)
    low = np.flatnonzero(z[1:] <= floor) + 1
    if len(low):
        return EstimateWithError.divergence(
            f"{len(low)} of {len(z) - 1} polarizations for {cls} are indistinguishable from zero"
        )
    value = class_attenuation_from_polarizations(z, cls.value_bits)

    if error_method == "delta" and k <= DELTA_METHOD_MAX_INDICES:
        se = _delta_class_error(z, cls.value_bits, source.n_shots)
    elif error_method in ("delta", "bootstrap"):
        se = _bootstrap_class_error(source, cls, n_resamples, seed)
    else:
        raise ArgumentError(f"unknown error_method {error_method!r}")
    return EstimateWithError(value, se)


def _bootstrap_class_error(source: PolarizationSource, cls: EventClass, n_resamples: int, seed: int) -> float:
    if math.isinf(source.n_shots):
        return 0.0
    if not isinstance(source, EmpiricalPolarizations):
        raise ArgumentError("bootstrap errors need detector histories")
    local = source.data.select(cls.fixed_indices)
    everything = tuple(range(cls.size))

    def statistic(d: DetectorHistories) -> float:
        return class_attenuation_from_polarizations(
            EmpiricalPolarizations(d).subset_polarizations(everything), cls.value_bits
        )

    return bootstrap_std_error(local, statistic, n_resamples, seed)


def class_probability_estimate(data: SourceLike, cls: EventClass, **kwargs) -> EstimateWithError:
    """Aggregated probability p = (1 - e^-a)/2 of a class."""
    a = class_attenuation_estimate(data, cls, **kwargs)
    if a.divergent:
        return a
    decay = math.exp(-a.value)
    return EstimateWithError(0.5 * (1.0 - decay), 0.5 * decay * a.std_error, warning=a.warning)


def pij(data: SourceLike, i: int, j: int, clamp: bool = False) -> EstimateWithError:
    """p = 1/2 - 1/2 sqrt(<z_i><z_j> / <z_i z_j>).

    This is the aggregated probability of all events flipping both i and j.
    """
    source = as_source(data)
    if i == j:
        raise ArgumentError("pij needs two distinct detectors")
    lo, hi = sorted((i, j))
    if lo < 0 or hi >= source.n_detectors:
        raise DimensionError(f"detectors ({i}, {j}) out of range for N={source.n_detectors}")
    n = source.n_detectors
    zi = source.polarization(EventMask.from_indices(n, (lo,)))
    zj = source.polarization(EventMask.from_indices(n, (hi,)))
    zij = source.polarization(EventMask.from_indices(n, (lo, hi)))
    if zij <= 0.0 or zi * zj <= 0.0:
        return EstimateWithError.divergence(f"pij({lo},{hi}): non-positive polarization product")
    radicand = zi * zj / zij
    root = math.sqrt(radicand)
    p = 0.5 - 0.5 * root

    a = class_attenuation_estimate(source, EventClass.all_ones((lo, hi)))
    se = 0.5 * root * a.std_error if not a.divergent else math.inf
    warning = None
    if radicand > 1.0:
        warning = f"pij({lo},{hi}) = {p:.3g} < 0: detectors are anti-correlated"
        logger.warning("%s", warning)
        if clamp:
            p = 0.0
    return EstimateWithError(p, se, warning=warning)


def pij_from_bit_means(mean_i: float, mean_j: float, mean_ij: float) -> float:
    """p_ij written with raw bit means <x_i>, <x_j> and <x_i x_j>."""
    zi = 1.0 - 2.0 * mean_i
    zj = 1.0 - 2.0 * mean_j
    zij = 1.0 - 2.0 * mean_i - 2.0 * mean_j + 4.0 * mean_ij
    if zij <= 0.0 or zi * zj <= 0.0:
        raise ArgumentError("bit means give a non-positive polarization product")
    return 0.5 - 0.5 * math.sqrt(zi * zj / zij)


@dataclass
class PijTable:
    n_detectors: int
    singles: dict[int, EstimateWithError] = field(default_factory=dict)
    pairs: dict[tuple[int, int], EstimateWithError] = field(default_factory=dict)

    def to_matrix(self) -> np.ndarray:
        m = np.zeros((self.n_detectors, self.n_detectors))
        for i, est in self.singles.items():
            m[i, i] = est.value
        for (i, j), est in self.pairs.items():
            m[i, j] = m[j, i] = est.value
        return m


def pij_matrix(data: SourceLike, clamp: bool = False, workers: int | None = None) -> PijTable:
    """p_{ij*} for every pair plus p_{i*} = (1 - <z_i>)/2 for every detector."""
    source = as_source(data)
    n = source.n_detectors
    table = PijTable(n)
    for i in range(n):
        z = source.polarization(EventMask.from_indices(n, (i,)))
        table.singles[i] = EstimateWithError(
            0.5 * (1.0 - z), 0.5 * polarization_std_error(z, source.n_shots)
        )
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    for pair, est in zip(pairs, map_ordered(lambda ij: pij(source, *ij, clamp=clamp), pairs, workers)):
        table.pairs[pair] = est
    return table


def _mc_parities(n_detectors: int, cfg: McConfig) -> list[EventMask]:
    if cfg.exhaustive:
        if n_detectors > DISTRIBUTION_CAP:
            raise CapacityError(f"exhaustive enumeration needs N <= {DISTRIBUTION_CAP}")
        return [EventMask(n_detectors, b) for b in range(1 << n_detectors)]
    return [
        EventMask(n_detectors, random_bits(derived_generator(cfg.seed, r), n_detectors))
        for r in range(cfg.n_samples)
    ]


def _mc_terms(z: np.ndarray, signs: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return 2.0 * signs * -np.log(z)


def _mc_estimate(
    source: PolarizationSource,
    signs_for: Callable[[list[EventMask]], np.ndarray],
    cfg: McConfig,
    error_method: str,
    n_resamples: int,
    workers: int | None,
    label: str,
) -> EstimateWithError:
    ys = _mc_parities(source.n_detectors, cfg)
    z = np.array(map_ordered(source.polarization, ys, workers))
    signs = signs_for(ys)
    ok = z > divergence_floor(source.n_shots)
    fraction = 1.0 - float(ok.mean())
    if not ok.any():
        return EstimateWithError(
            math.nan, math.inf, divergent=True,
            warning=f"{label}: every sampled parity diverged", divergent_fraction=1.0,
        )
    terms = _mc_terms(z[ok], signs[ok])
    value = float(terms.mean())

    if error_method == "delta":
        se = _mc_delta_error(source, ys, ok, z, signs, terms, cfg)
    elif error_method == "bootstrap":
        se = _mc_bootstrap_error(source, ys, signs, cfg, n_resamples)
    else:
        raise ArgumentError(f"unknown error_method {error_method!r}")

    warning = None
    divergent = fraction > MC_DIVERGENT_LIMIT
    if fraction > 0.0:
        warning = f"{label}: {fraction:.1%} of sampled parities diverged and were skipped"
        logger.warning("%s", warning)
    return EstimateWithError(value, se, divergent=divergent, warning=warning, divergent_fraction=fraction)


def _mc_delta_error(
    source: PolarizationSource,
    ys: list[EventMask],
    ok: np.ndarray,
    z: np.ndarray,
    signs: np.ndarray,
    terms: np.ndarray,
    cfg: McConfig,
) -> float:
    n_ok = int(ok.sum())
    var = 0.0
    if not cfg.exhaustive:
        var += float(np.var(terms, ddof=1)) / n_ok if n_ok > 1 else math.inf
    if not math.isinf(source.n_shots):
        kept = [y for y, good in zip(ys, ok) if good]
        zk = z[ok]
        if cfg.exhaustive and n_ok == len(ys):
            if source.n_detectors > DELTA_METHOD_MAX_EXACT:
                raise CapacityError(
                    f"exhaustive covariance propagation is limited to N <= {DELTA_METHOD_MAX_EXACT}"
                )
            idx = np.arange(len(ys))
            cross = z[idx[:, None] ^ idx[None, :]]
        else:
            cross = source.cross_polarizations(kept)
        cov = cross - np.outer(zk, zk)
        g = 2.0 * signs[ok] / zk / n_ok
        var += max(float(g @ cov @ g), 0.0) / source.n_shots
    return math.sqrt(var)


def _mc_bootstrap_error(
    source: PolarizationSource,
    ys: list[EventMask],
    signs: np.ndarray,
    cfg: McConfig,
    n_resamples: int,
) -> float:
    if not isinstance(source, EmpiricalPolarizations):
        raise ArgumentError("bootstrap errors need detector histories")
    draw_rng = derived_generator(cfg.seed, 1 << 32)
    r = len(ys)

    def statistic(d: DetectorHistories) -> float:
        resampled = EmpiricalPolarizations(d)
        pick = np.arange(r) if cfg.exhaustive else draw_rng.integers(0, r, size=r)
        z = np.array([resampled.polarization(ys[i]) for i in pick])
        ok = z > divergence_floor(resampled.n_shots)
        if not ok.any():
            return math.nan
        return float(_mc_terms(z[ok], signs[pick][ok]).mean())

    return bootstrap_std_error(source.data, statistic, n_resamples, cfg.seed)


def mc_event_attenuation(
    data: SourceLike,
    s: EventMask,
    cfg: McConfig,
    error_method: str = "delta",
    n_resamples: int = BOOTSTRAP_RESAMPLES,
    workers: int | None = None,
) -> EstimateWithError:
    """a_s = 2 < (-1)^(y·s+1) omega_y >_y over uniformly drawn parities y."""
    source = as_source(data)
    if s.n_detectors != source.n_detectors:
        raise DimensionError(f"event has {s.n_detectors} detectors, data has {source.n_detectors}")

    def signs_for(ys: list[EventMask]) -> np.ndarray:
        return np.array([2.0 * y.dot(s) - 1.0 for y in ys])

    return _mc_estimate(source, signs_for, cfg, error_method, n_resamples, workers, f"a[{s}]")


def mc_total_attenuation(
    data: SourceLike,
    cfg: McConfig,
    error_method: str = "delta",
    n_resamples: int = BOOTSTRAP_RESAMPLES,
    workers: int | None = None,
) -> EstimateWithError:
    """a_0 = 2 <omega_y>_y over uniformly drawn parities y (all-zero included)."""
    source = as_source(data)
    return _mc_estimate(
        source, lambda ys: np.ones(len(ys)), cfg, error_method, n_resamples, workers, "a0"
    )
