"""Walsh–Hadamard machinery and exact inversion for small N.

Chain: distribution --H--> polarizations --(-ln)--> depolarizations
--(-2/2^N H)--> attenuations. The logarithm must sit between the two
transforms; composing the transforms directly does not recover attenuations.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.typing import ArrayLike

from demest.config import (
    BOOTSTRAP_RESAMPLES,
    DEFAULT_Z_THRESHOLD,
    DELTA_METHOD_MAX_EXACT,
    DISTRIBUTION_CAP,
)
from demest.dem import Attenuation, Dem, DemEvent, EventMask, attenuation_to_prob
from demest.errors import ArgumentError, CapacityError, ContractError, EmptyDataError, EstimationError
from demest.histories import DetectorHistories
from demest.rng import derived_generator
from demest.sampling import Distribution
from demest.statistics import EstimateWithError, divergence_floor, is_significant

logger = logging.getLogger(__name__)

_ZERO_TOL = 1e-12


class SpectrumKind(str, Enum):
    POLARIZATION = "polarization"
    DEPOLARIZATION = "depolarization"
    ATTENUATION = "attenuation"


def _n_from_length(length: int) -> int:
    if length < 1 or length & (length - 1):
        raise ArgumentError(f"vector length must be a power of two, got {length}")
    return length.bit_length() - 1


@dataclass(frozen=True, eq=False)
class SpectrumVector:
    kind: SpectrumKind
    entries: np.ndarray

    def __post_init__(self) -> None:
        e = np.array(self.entries, dtype=np.float64)
        _n_from_length(len(e))
        expected = 1.0 if self.kind is SpectrumKind.POLARIZATION else 0.0
        if abs(e[0] - expected) > _ZERO_TOL:
            raise ContractError(f"{self.kind.value} spectrum needs entry[0] = {expected}, got {e[0]}")
        if self.kind is not SpectrumKind.POLARIZATION and not np.all(np.isfinite(e)):
            raise ContractError(f"{self.kind.value} spectrum has non-finite entries")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @property
    def n_detectors(self) -> int:
        return _n_from_length(len(self.entries))

    def __getitem__(self, mask: EventMask | int) -> float:
        index = mask.bits if isinstance(mask, EventMask) else int(mask)
        return float(self.entries[index])


def _butterfly(values: ArrayLike) -> np.ndarray:
    """Unnormalized Walsh–Hadamard transform: out[y] = sum_s (-1)^(y·s) v[s]."""
    a = np.array(values, dtype=np.float64)
    n = len(a)
    _n_from_length(n)
    h = 1
    while h < n:
        view = a.reshape(-1, 2, h)
        top = view[:, 0, :].copy()
        view[:, 0, :] += view[:, 1, :]
        view[:, 1, :] = top - view[:, 1, :]
        h *= 2
    return a


def fwht(values: ArrayLike) -> np.ndarray:
    """Normalized (self-inverse) Walsh–Hadamard transform H v, H = 2^(-N/2) [(-1)^(y·s)]."""
    a = _butterfly(values)
    return a / math.sqrt(len(a))


def hadamard_matrix(n_detectors: int) -> np.ndarray:
    """Dense normalized H for small N."""
    idx = np.arange(1 << n_detectors, dtype=np.uint64)
    parity = np.bitwise_count(idx[:, None] & idx[None, :]) & 1
    return (1.0 - 2.0 * parity) / math.sqrt(1 << n_detectors)


def w_matrix(n_detectors: int) -> np.ndarray:
    """W[y, s] = y·s: which attenuations enter each depolarization."""
    idx = np.arange(1 << n_detectors, dtype=np.uint64)
    return (np.bitwise_count(idx[:, None] & idx[None, :]) & 1).astype(np.float64)


def w_pseudoinverse(n_detectors: int) -> np.ndarray:
    return np.linalg.pinv(w_matrix(n_detectors))


def polarizations_from_distribution(dist: Distribution) -> SpectrumVector:
    z = _butterfly(dist.weights)
    z[0] = 1.0
    return SpectrumVector(SpectrumKind.POLARIZATION, z)


def depolarizations_from_polarizations(z: SpectrumVector, floor: float = 0.0) -> SpectrumVector:
    bad = np.flatnonzero(z.entries <= floor)
    if len(bad):
        n = z.n_detectors
        raise EstimationError(
            "polarizations indistinguishable from zero; use the aggregated or lattice estimators",
            [EventMask(n, int(b)) for b in bad],
        )
    omega = -np.log(z.entries)
    omega[0] = 0.0
    return SpectrumVector(SpectrumKind.DEPOLARIZATION, omega)


def attenuations_from_depolarizations(omega: SpectrumVector) -> SpectrumVector:
    """a_s = -(2/2^N) sum_y (-1)^(y·s) omega_y, with a_0 projected out."""
    if omega.kind is not SpectrumKind.DEPOLARIZATION:
        raise ContractError(f"expected a depolarization spectrum, got {omega.kind.value}")
    a = _butterfly(omega.entries) * (-2.0 / len(omega.entries))
    a[0] = 0.0
    return SpectrumVector(SpectrumKind.ATTENUATION, a)


def depolarizations_from_attenuations(a: SpectrumVector) -> SpectrumVector:
    """omega_y = sum_s (y·s) a_s."""
    if a.kind is not SpectrumKind.ATTENUATION:
        raise ContractError(f"expected an attenuation spectrum, got {a.kind.value}")
    omega = (math.fsum(a.entries) - _butterfly(a.entries)) / 2.0
    omega[0] = 0.0
    return SpectrumVector(SpectrumKind.DEPOLARIZATION, omega)


def decay_factors_from_polarizations(z: SpectrumVector) -> np.ndarray:
    """d_s = prod_y <z_y>^(-(2/2^N)(-1)^(y·s) ), evaluated in log space."""
    a = attenuations_from_depolarizations(depolarizations_from_polarizations(z))
    return np.exp(-a.entries)


def attenuation_spectrum(dem: Dem) -> SpectrumVector:
    a = np.zeros(1 << dem.n_detectors)
    for ev in dem.events:
        a[ev.mask.bits] = ev.attenuation
    return SpectrumVector(SpectrumKind.ATTENUATION, a)


def total_attenuation_exact(omega: SpectrumVector) -> Attenuation:
    """a_0 = 2 <omega_y>_y over all 2^N parities (all-zero included)."""
    if omega.kind is not SpectrumKind.DEPOLARIZATION:
        raise ContractError(f"expected a depolarization spectrum, got {omega.kind.value}")
    return 2.0 * math.fsum(omega.entries) / len(omega.entries)


def _attenuations_from_counts(counts: np.ndarray, n_shots: int) -> np.ndarray:
    z = _butterfly(counts / n_shots)
    z[0] = 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        omega = np.where(z > 0, -np.log(np.where(z > 0, z, 1.0)), np.nan)
    a = _butterfly(omega) * (-2.0 / len(z))
    a[0] = 0.0
    return a


def _bootstrap_attenuation_errors(counts: np.ndarray, n_shots: int, n_resamples: int, seed: int) -> np.ndarray:
    # resampling K shots with replacement is a multinomial draw on the histogram
    rng = derived_generator(seed)
    probs = counts / n_shots
    draws = np.empty((n_resamples, len(counts)))
    for b in range(n_resamples):
        draws[b] = _attenuations_from_counts(rng.multinomial(n_shots, probs), n_shots)
    bad = ~np.all(np.isfinite(draws), axis=1)
    if bad.any():
        logger.warning("%d of %d bootstrap resamples had non-positive polarizations", int(bad.sum()), n_resamples)
    good = draws[~bad]
    if len(good) < 2:
        return np.full(len(counts), math.inf)
    return np.std(good, axis=0, ddof=1)


def _delta_attenuation_errors(z: np.ndarray, n_shots: int) -> np.ndarray:
    size = len(z)
    idx = np.arange(size)
    cov = z[idx[:, None] ^ idx[None, :]] - np.outer(z, z)
    gradient = hadamard_matrix(_n_from_length(size)) * (2.0 / math.sqrt(size)) / z[None, :]
    var = ((gradient @ cov) * gradient).sum(axis=1) / n_shots
    return np.sqrt(np.maximum(var, 0.0))


def estimate_dem_exact(
    data: DetectorHistories,
    z_threshold: float = DEFAULT_Z_THRESHOLD,
    error_method: str = "bootstrap",
    n_resamples: int = BOOTSTRAP_RESAMPLES,
    seed: int = 0,
    cap: int = DISTRIBUTION_CAP,
) -> Dem:
    """Estimate every event of a small-N DEM from shots.

    Keeps only events whose attenuation passes the significance test; each
    kept event carries the standard error of its probability.
    """
    if data.n_shots == 0:
        raise EmptyDataError("exact estimation needs at least one shot")
    if data.n_detectors > cap:
        raise CapacityError(
            f"exact method needs 2^{data.n_detectors} polarizations; cap is N <= {cap}. "
            f"Use the lattice method for large N"
        )
    n = data.n_detectors
    k = data.n_shots
    counts = data.histogram(cap).astype(np.float64)
    z = polarizations_from_distribution(Distribution(n, counts / k))
    floor = divergence_floor(k)
    divergent = np.flatnonzero(z.entries <= floor)
    if len(divergent):
        raise EstimationError(
            f"{len(divergent)} polarization(s) below the divergence floor {floor:.3g}; "
            f"use the aggregated or lattice estimators",
            [EventMask(n, int(b)) for b in divergent],
        )
    a = attenuations_from_depolarizations(depolarizations_from_polarizations(z)).entries

    if error_method == "bootstrap":
        errors = _bootstrap_attenuation_errors(counts, k, n_resamples, seed)
    elif error_method == "delta":
        if n > DELTA_METHOD_MAX_EXACT:
            raise CapacityError(f"covariance propagation is limited to N <= {DELTA_METHOD_MAX_EXACT}")
        errors = _delta_attenuation_errors(z.entries, k)
    else:
        raise ArgumentError(f"unknown error_method {error_method!r}")

    events = []
    for s in range(1, 1 << n):
        est = EstimateWithError(a[s], errors[s])
        if not is_significant(est, z_threshold):
            continue
        events.append(
            DemEvent(
                EventMask(n, s),
                attenuation_to_prob(a[s]),
                std_error=0.5 * math.exp(-a[s]) * float(errors[s]),
            )
        )
    logger.info("Exact estimate: %d of %d candidate events significant at z=%g", len(events), (1 << n) - 1, z_threshold)
    return Dem(n, tuple(events))
