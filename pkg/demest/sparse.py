"""Sparse DEM estimation at large N.

Three routes: solve a chosen set of events against chosen parities, the
closed-form low-weight algorithm (every class of weight <= w_max), and the
class-lattice search that only follows classes whose subclasses are all
significant, followed by event extraction.
"""
from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterator, Mapping, Sequence

import numpy as np

from demest.aggregated import class_attenuation_estimate
from demest.config import (
    ATTENUATION_TOL,
    DEFAULT_Z_THRESHOLD,
    LOW_WEIGHT_MAX_CLASSES,
    NEGATIVE_FLOOR_SIGMAS,
)
from demest.dem import Dem, DemEvent, EventClass, EventMask, attenuation_to_prob
from demest.errors import (
    ArgumentError,
    CapacityError,
    DimensionError,
    EstimationError,
    IdentifiabilityError,
)
from demest.polarizations import PolarizationSource, SourceLike, as_source
from demest.progress import LatticeProgress
from demest.statistics import EstimateWithError, is_significant
from demest.workers import imap_ordered, map_ordered

logger = logging.getLogger(__name__)

IndexSet = tuple[int, ...]


def _check_w_max(n_detectors: int, w_max: int) -> None:
    if not 1 <= w_max <= n_detectors:
        raise ArgumentError(f"w_max must lie in [1, N={n_detectors}], got {w_max}")


def count_low_weight(n_detectors: int, w_max: int) -> int:
    """binom(N + w_max - 1, w_max): the size of the low-weight problem."""
    _check_w_max(n_detectors, w_max)
    return math.comb(n_detectors + w_max - 1, w_max)


def count_low_weight_masks(n_detectors: int, w_max: int) -> int:
    """Exact number of nonzero masks of weight <= w_max."""
    _check_w_max(n_detectors, w_max)
    return sum(math.comb(n_detectors, w) for w in range(1, w_max + 1))


def _significant(est: EstimateWithError, z_threshold: float) -> bool:
    return is_significant(est, z_threshold) and est.value > ATTENUATION_TOL


def _aggregate(source: PolarizationSource, indices: IndexSet, **error_options) -> EstimateWithError:
    return class_attenuation_estimate(source, EventClass.all_ones(indices), **error_options)


def _dependent_columns(w: np.ndarray) -> list[int]:
    """Columns that add nothing to the rank of the columns before them."""
    out = []
    rank = 0
    for k in range(w.shape[1]):
        r = np.linalg.matrix_rank(w[:, : k + 1])
        if r == rank:
            out.append(k)
        rank = r
    return out


def solve_selected_events(
    omegas: Mapping[EventMask, EstimateWithError],
    events: Sequence[EventMask],
    covariance: np.ndarray | None = None,
) -> dict[EventMask, EstimateWithError]:
    """Least-squares solve of omega' = W' a' for the chosen events.

    W'[y, s] = y·s over the supplied parities (rows) and events (columns).
    Errors propagate the depolarization covariance through W'^+; without an
    explicit covariance the depolarizations are taken as independent.
    """
    parities = list(omegas)
    events = list(events)
    if not events:
        raise ArgumentError("no events to solve for")
    if len(events) > len(parities):
        raise ArgumentError(f"{len(events)} events but only {len(parities)} depolarizations")
    n = parities[0].n_detectors
    if any(m.n_detectors != n for m in [*parities, *events]):
        raise DimensionError("parities and events must share the same number of detectors")
    divergent = [y for y in parities if omegas[y].divergent or not math.isfinite(omegas[y].value)]
    if divergent:
        raise EstimationError("divergent depolarizations supplied", divergent)

    seen: set[int] = set()
    duplicates = []
    for s in events:
        if s.bits in seen:
            duplicates.append(s)
        seen.add(s.bits)
    if duplicates:
        raise IdentifiabilityError("duplicate event masks", duplicates)

    w = np.array([[y.dot(s) for s in events] for y in parities], dtype=np.float64)
    invisible = [s for k, s in enumerate(events) if not w[:, k].any()]
    if invisible:
        raise IdentifiabilityError("events invisible to every supplied parity", invisible)
    if np.linalg.matrix_rank(w) < len(events):
        raise IdentifiabilityError(
            "events not separable by the supplied parities",
            [events[k] for k in _dependent_columns(w)],
        )

    omega = np.array([omegas[y].value for y in parities])
    pinv = np.linalg.pinv(w)
    a = pinv @ omega
    if covariance is None:
        cov = np.diag([omegas[y].std_error ** 2 for y in parities])
    else:
        cov = np.asarray(covariance, dtype=np.float64)
        if cov.shape != (len(parities), len(parities)):
            raise DimensionError(f"covariance must be {len(parities)}x{len(parities)}, got {cov.shape}")
    with np.errstate(invalid="ignore"):
        var = ((pinv @ cov) * pinv).sum(axis=1)
    se = np.where(np.isfinite(var), np.sqrt(np.maximum(var, 0.0)), math.inf)
    logger.debug("Solved %d events against %d parities", len(events), len(parities))
    return {s: EstimateWithError(a[k], se[k]) for k, s in enumerate(events)}


def _strict_supersets(base: IndexSet, n_detectors: int, w_max: int) -> Iterator[IndexSet]:
    rest = [i for i in range(n_detectors) if i not in base]
    for extra in range(1, w_max - len(base) + 1):
        for added in combinations(rest, extra):
            yield tuple(sorted(base + added))


def low_weight_attenuations(
    data: SourceLike,
    w_max: int,
    mode: str = "cached",
    max_classes: int = LOW_WEIGHT_MAX_CLASSES,
    workers: int | None = None,
    **error_options,
) -> dict[IndexSet, EstimateWithError]:
    """Attenuation of every event of weight <= w_max.

    Weight-w_max events equal their aggregated class attenuation; lighter
    ones subtract every heavier estimate that contains them. "cached" works
    top-weight-first from a table of aggregated attenuations; "recursive"
    evaluates the same inclusion-exclusion sum on the fly, one event at a
    time. Errors treat the aggregated estimates as independent.
    """
    source = as_source(data)
    n = source.n_detectors
    total = count_low_weight_masks(n, w_max)
    if total > max_classes:
        raise CapacityError(
            f"{total} classes of weight <= {w_max} exceed the cap of {max_classes}; "
            f"use the lattice method"
        )
    logger.info("Low-weight estimate: N=%d, w_max=%d, %d classes (%s)", n, w_max, total, mode)
    if mode == "cached":
        return _low_weight_cached(source, w_max, workers, error_options)
    if mode == "recursive":
        return _low_weight_recursive(source, w_max, workers, error_options)
    raise ArgumentError(f"unknown mode {mode!r}; expected 'cached' or 'recursive'")


def _low_weight_cached(
    source: PolarizationSource, w_max: int, workers: int | None, error_options: dict
) -> dict[IndexSet, EstimateWithError]:
    n = source.n_detectors
    sets = [c for w in range(w_max, 0, -1) for c in combinations(range(n), w)]
    agg = dict(zip(sets, map_ordered(lambda c: _aggregate(source, c, **error_options), sets, workers)))
    out: dict[IndexSet, EstimateWithError] = {}
    for base in sets:
        supersets = list(_strict_supersets(base, n, w_max))
        if agg[base].divergent or any(out[f].divergent for f in supersets):
            out[base] = EstimateWithError.divergence(f"class {base} depends on a divergent estimate")
            continue
        value = agg[base].value - math.fsum(out[f].value for f in supersets)
        var = agg[base].std_error ** 2 + math.fsum(agg[f].std_error ** 2 for f in supersets)
        out[base] = EstimateWithError(value, math.sqrt(var))
    return out


def _low_weight_recursive(
    source: PolarizationSource, w_max: int, workers: int | None, error_options: dict
) -> dict[IndexSet, EstimateWithError]:
    n = source.n_detectors

    def estimate(base: IndexSet) -> EstimateWithError:
        terms: list[float] = []
        variances: list[float] = []
        divergent = False

        def visit(current: IndexSet, next_index: int) -> None:
            nonlocal divergent
            est = _aggregate(source, current, **error_options)
            if est.divergent:
                divergent = True
                return
            sign = -1.0 if (len(current) - len(base)) & 1 else 1.0
            terms.append(sign * est.value)
            variances.append(est.std_error ** 2)
            if len(current) == w_max:
                return
            for k in range(next_index, n):
                if k not in base:
                    visit(tuple(sorted(current + (k,))), k + 1)

        visit(base, 0)
        if divergent:
            return EstimateWithError.divergence(f"class {base} depends on a divergent estimate")
        return EstimateWithError(math.fsum(terms), math.sqrt(math.fsum(variances)))

    sets = [c for w in range(w_max, 0, -1) for c in combinations(range(n), w)]
    return dict(zip(sets, map_ordered(estimate, sets, workers)))


def _format_set(indices: IndexSet) -> str:
    return ",".join(str(i) for i in indices)


@dataclass
class ClassLattice:
    """Significant E* classes by weight, plus the classes pruned as empty."""

    n_detectors: int
    w_max: int
    z_threshold: float
    levels: dict[int, dict[IndexSet, EstimateWithError]] = field(default_factory=dict)
    pruned: dict[IndexSet, str] = field(default_factory=dict)
    evaluations: int = 0

    def stored(self) -> dict[IndexSet, EstimateWithError]:
        out: dict[IndexSet, EstimateWithError] = {}
        for w in sorted(self.levels):
            out.update(self.levels[w])
        return out

    def __contains__(self, indices: IndexSet) -> bool:
        level = self.levels.get(len(indices))
        return level is not None and tuple(indices) in level

    @property
    def n_stored(self) -> int:
        return sum(len(level) for level in self.levels.values())

    def to_text(self) -> str:
        lines = [
            f"# class lattice N={self.n_detectors} w_max={self.w_max} z={self.z_threshold:g} "
            f"evaluations={self.evaluations} stored={self.n_stored} pruned={len(self.pruned)}"
        ]
        for indices, est in sorted(self.stored().items()):
            lines.append(f"{_format_set(indices)} {est.value!r} {est.std_error!r}")
        for indices, note in sorted(self.pruned.items()):
            lines.append(f"# pruned {_format_set(indices)}: {note}")
        return "\n".join(lines) + "\n"


def _next_candidates(lattice: ClassLattice, weight: int) -> list[IndexSet]:
    """Sets of size weight+1 all of whose size-weight subsets are stored."""
    level = lattice.levels.get(weight, {})
    if weight == 1:
        singles = sorted(i for (i,) in level)
        return list(combinations(singles, 2))
    adjacency: dict[int, set[int]] = {}
    for i, j in lattice.levels.get(2, {}):
        adjacency.setdefault(i, set()).add(j)
        adjacency.setdefault(j, set()).add(i)
    out = []
    for base in sorted(level):
        common = set.intersection(*(adjacency.get(i, set()) for i in base))
        for k in sorted(x for x in common if x > base[-1]):
            candidate = base + (k,)
            if all(sub in level for sub in combinations(candidate, weight)):
                out.append(candidate)
    return out


def prune_lattice(
    data: SourceLike,
    w_max: int,
    z_threshold: float = DEFAULT_Z_THRESHOLD,
    workers: int | None = None,
    show_progress: bool = False,
    **error_options,
) -> ClassLattice:
    """Level-wise search of the class lattice.

    Level 1 tests every detector, level 2 every pair of surviving detectors,
    and level w >= 3 only the cliques/hypercliques whose (w-1)-subsets all
    survived. Divergent estimates count as insignificant.
    """
    source = as_source(data)
    n = source.n_detectors
    _check_w_max(n, w_max)
    if z_threshold <= 0:
        raise ArgumentError(f"z_threshold must be > 0, got {z_threshold}")
    lattice = ClassLattice(n, w_max, z_threshold)
    progress = LatticeProgress(w_max, no_progress=not show_progress)
    candidates: list[IndexSet] = [(i,) for i in range(n)]
    try:
        for weight in range(1, w_max + 1):
            if not candidates:
                break
            progress.start_level(weight, len(candidates))
            level: dict[IndexSet, EstimateWithError] = {}
            results = imap_ordered(lambda c: _aggregate(source, c, **error_options), candidates, workers)
            for indices, est in zip(candidates, results):
                keep = _significant(est, z_threshold)
                progress.record_class(weight, keep, est.divergent)
                if keep:
                    level[indices] = est
                elif est.divergent:
                    lattice.pruned[indices] = "divergent"
                else:
                    lattice.pruned[indices] = f"insignificant a={est.value:.3g} se={est.std_error:.3g}"
            lattice.evaluations += len(candidates)
            lattice.levels[weight] = level
            progress.finish_level()
            logger.info("Level %d: %d of %d classes significant", weight, len(level), len(candidates))
            if not level:
                break
            candidates = _next_candidates(lattice, weight) if weight < w_max else []
    finally:
        progress.close()
    cache_size = getattr(source, "cache_size", None)
    if cache_size is not None:
        logger.debug("Polarization cache holds %d parities", cache_size)
    return lattice


def _strict_subsets(indices: IndexSet) -> Iterator[IndexSet]:
    for size in range(1, len(indices)):
        yield from combinations(indices, size)


def extract_events(lattice: ClassLattice, z_threshold: float | None = None) -> Dem:
    """Turn a pruned lattice into DEM events.

    Repeatedly emits the lexicographically first stored class with no stored
    superset, subtracts its attenuation from every stored subset and drops
    subsets that are no longer significant. A subset driven negative by more
    than the noise allows marks the emitted event as a model misfit.
    """
    z = lattice.z_threshold if z_threshold is None else z_threshold
    n = lattice.n_detectors
    values = {c: est.value for c, est in lattice.stored().items()}
    variances = {c: est.std_error ** 2 for c, est in lattice.stored().items()}
    supersets = dict.fromkeys(values, 0)
    for c in values:
        for sub in _strict_subsets(c):
            if sub in supersets:
                supersets[sub] += 1
    heap = [c for c, count in supersets.items() if count == 0]
    heapq.heapify(heap)

    def remove(c: IndexSet) -> None:
        del values[c]
        for sub in _strict_subsets(c):
            if sub in values:
                supersets[sub] -= 1
                if supersets[sub] == 0:
                    heapq.heappush(heap, sub)

    events: list[DemEvent] = []
    while heap:
        c = heapq.heappop(heap)
        if c not in values or supersets[c] != 0:
            continue
        a, var = values[c], variances[c]
        dropped: list[IndexSet] = []
        misfit: list[IndexSet] = []
        for sub in _strict_subsets(c):
            if sub not in values:
                continue
            values[sub] -= a
            variances[sub] += var
            est = EstimateWithError(values[sub], math.sqrt(variances[sub]))
            if _significant(est, z):
                continue
            dropped.append(sub)
            if est.value < -(NEGATIVE_FLOOR_SIGMAS * est.std_error + ATTENUATION_TOL):
                misfit.append(sub)
            elif est.value < -ATTENUATION_TOL:
                logger.warning("Class %s went to %.3g after subtracting %s; floored at 0", sub, est.value, c)
        remove(c)
        for sub in dropped:
            if sub in values:
                remove(sub)

        warning = None
        if misfit:
            warning = "model misfit: subtracting this event left " + "; ".join(
                f"{{{_format_set(m)}}}" for m in misfit
            ) + " negative"
            logger.warning("Event %s: %s", _format_set(c), warning)
        se = math.sqrt(var)
        events.append(
            DemEvent(
                EventMask.from_indices(n, c),
                attenuation_to_prob(a),
                std_error=0.5 * math.exp(-a) * se,
                warning=warning,
            )
        )
    logger.info("Extracted %d events from %d stored classes", len(events), lattice.n_stored)
    return Dem(n, tuple(events))
