"""Subcommand implementations and the exit-code mapping."""
from __future__ import annotations

import logging
import math

from demest.aggregated import McConfig, mc_total_attenuation, pij_matrix
from demest.config import Config
from demest.dem import Dem, DemEvent, EventMask, attenuation_to_prob
from demest.errors import DemError, DimensionError, EstimationError
from demest.formats import read_dem, read_shots, write_dem, write_output, write_shots
from demest.histories import DetectorHistories
from demest.report import compare_dems, write_xlsx
from demest.sampling import make_random_sparse_dem, make_uniform_depolarizing_dem, sample_histories
from demest.sparse import extract_events, low_weight_attenuations, prune_lattice
from demest.statistics import (
    EstimateWithError,
    bootstrap_std_error,
    depolarization,
    divergence_floor,
    is_significant,
    polarization_covariance,
    sample_polarization,
)
from demest.transform import estimate_dem_exact

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_USAGE = 2
EXIT_ESTIMATION = 3


def _error_method(config: Config) -> str:
    if config.errors:
        return config.errors
    return "bootstrap" if config.method == "exact" else "delta"


def _provenance(config: Config, data: DetectorHistories) -> list[str]:
    lines = [
        f"demest {config.command} method={config.method}",
        f"data={config.data_path} N={data.n_detectors} K={data.n_shots}",
        f"significance={config.significance:g} errors={_error_method(config)} "
        f"bootstrap={config.bootstrap} seed={config.seed}",
    ]
    if config.method in ("lowweight", "lattice"):
        lines.append(f"wmax={config.wmax}" + (" recursive" if config.recursive else ""))
    if config.method == "total":
        lines.append(f"mc_samples={config.mc_samples} exhaustive={config.exhaustive}")
    if config.method == "exact":
        lines.append(f"max_detectors={config.max_detectors}")
    return lines


def cmd_gen(config: Config) -> int:
    n = config.n_detectors
    if config.uniform_eps is not None:
        dem = make_uniform_depolarizing_dem(n, config.uniform_eps)
        header = [f"demest gen n={n} uniform_eps={config.uniform_eps!r}"]
    else:
        dem = make_random_sparse_dem(
            n, config.n_events, config.max_weight, config.p_min, config.p_max, config.seed
        )
        header = [
            f"demest gen n={n} events={config.n_events} max_weight={config.max_weight} "
            f"p_min={config.p_min!r} p_max={config.p_max!r} seed={config.seed}"
        ]
    write_dem(dem, config.out, header)
    logger.info("Generated DEM with N=%d and %d events", n, len(dem))
    return EXIT_OK


def cmd_sample(config: Config) -> int:
    dem = read_dem(config.dem_path)
    data = sample_histories(
        dem,
        config.shots,
        config.seed,
        workers=config.threads,
        show_progress=not config.no_progress,
    )
    write_shots(data, config.out, config.shot_format)
    logger.info("Sampled %d shots over %d detectors", data.n_shots, data.n_detectors)
    return EXIT_OK


def _pij_text(table, header: list[str]) -> str:
    lines = [f"# {h}" for h in header]
    lines.append(f"detectors {table.n_detectors}")
    for i, est in sorted(table.singles.items()):
        lines.append(f"p {i} {est.value!r} {est.std_error!r}")
    for (i, j), est in sorted(table.pairs.items()):
        line = f"p {i} {j} {est.value!r} {est.std_error!r}"
        if est.divergent:
            line += "  # divergent"
        elif est.warning:
            line += f"  # {est.warning}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def _total_text(est: EstimateWithError, header: list[str]) -> str:
    lines = [f"# {h}" for h in header]
    lines.append(f"a0={est.value!r}")
    lines.append(f"std_error={est.std_error!r}")
    lines.append(f"divergent={int(est.divergent)}")
    lines.append(f"divergent_fraction={(est.divergent_fraction or 0.0)!r}")
    if math.isfinite(est.value) and est.value >= 0:
        lines.append(f"p_odd={attenuation_to_prob(est.value)!r}")
    return "\n".join(lines) + "\n"


def _total_attenuation(config: Config, data: DetectorHistories) -> EstimateWithError:
    est = mc_total_attenuation(
        data,
        McConfig(config.mc_samples, config.seed, config.exhaustive),
        error_method=_error_method(config),
        n_resamples=config.bootstrap,
        workers=config.threads,
    )
    if not math.isfinite(est.value):
        raise EstimationError("every sampled parity diverged; the total attenuation is out of reach")
    if est.divergent:
        logger.warning("Total attenuation flagged: %s", est.warning)
    return est


def _lowweight_dem(config: Config, data: DetectorHistories) -> Dem:
    estimates = low_weight_attenuations(
        data,
        config.wmax,
        mode="recursive" if config.recursive else "cached",
        workers=config.threads,
        error_method=_error_method(config),
        n_resamples=config.bootstrap,
        seed=config.seed,
    )
    n_divergent = sum(est.divergent for est in estimates.values())
    if n_divergent == len(estimates):
        raise EstimationError("every low-weight class diverged")
    if n_divergent:
        logger.warning("%d of %d low-weight classes diverged and were dropped", n_divergent, len(estimates))
    events = []
    for indices, est in sorted(estimates.items()):
        if not is_significant(est, config.significance):
            continue
        events.append(
            DemEvent(
                EventMask.from_indices(data.n_detectors, indices),
                attenuation_to_prob(est.value),
                std_error=0.5 * math.exp(-est.value) * est.std_error,
            )
        )
    return Dem(data.n_detectors, tuple(events))


def _lattice_dem(config: Config, data: DetectorHistories) -> Dem:
    lattice = prune_lattice(
        data,
        config.wmax,
        config.significance,
        workers=config.threads,
        show_progress=not config.no_progress,
        error_method=_error_method(config),
        n_resamples=config.bootstrap,
        seed=config.seed,
    )
    if config.lattice_report is not None:
        write_output(config.lattice_report, lattice.to_text())
        logger.info("Lattice report written to %s", config.lattice_report)
    singles = [(i,) for i in range(data.n_detectors)]
    if all(lattice.pruned.get(c) == "divergent" for c in singles):
        raise EstimationError(
            "every single-detector class diverged",
            [EventMask.from_indices(data.n_detectors, c) for c in singles],
        )
    return extract_events(lattice)


def cmd_estimate(config: Config) -> int:
    data = read_shots(config.data_path)
    header = _provenance(config, data)
    method = config.method
    logger.info("Estimating with method=%s on K=%d shots, N=%d", method, data.n_shots, data.n_detectors)

    if method == "exact":
        dem = estimate_dem_exact(
            data,
            config.significance,
            error_method=_error_method(config),
            n_resamples=config.bootstrap,
            seed=config.seed,
            cap=config.max_detectors,
        )
    elif method == "pij":
        table = pij_matrix(data, clamp=config.clamp, workers=config.threads)
        write_output(config.out, _pij_text(table, header))
        return EXIT_OK
    elif method == "total":
        write_output(config.out, _total_text(_total_attenuation(config, data), header))
        return EXIT_OK
    elif method == "lowweight":
        dem = _lowweight_dem(config, data)
    elif method == "lattice":
        dem = _lattice_dem(config, data)
    else:
        raise DemError(f"unknown method {method!r}")

    write_dem(dem, config.out, header)
    logger.info("Estimated DEM has %d events", len(dem))
    return EXIT_OK


def cmd_compare(config: Config) -> int:
    truth = read_dem(config.true_path)
    estimate = read_dem(config.est_path)
    report = compare_dems(truth, estimate, config.significance)
    write_output(config.out, report.to_text())
    if config.xlsx is not None:
        write_xlsx(report, config.xlsx)
    if report.exit_code:
        logger.warning("%d missing and %d spurious events", len(report.missing), len(report.spurious))
    return report.exit_code


def _depolarization_of(y: EventMask):
    def statistic(d: DetectorHistories) -> float:
        z = sample_polarization(d, y).value
        return -math.log(z) if z > 0 else math.nan

    return statistic


def cmd_stats(config: Config) -> int:
    data = read_shots(config.data_path)
    masks = [EventMask.from_string(text) for text in config.parities]
    for m in masks:
        if m.n_detectors != data.n_detectors:
            raise DimensionError(f"parity {m} has {m.n_detectors} detectors, data has {data.n_detectors}")
    floor = divergence_floor(data.n_shots)
    lines = [f"# demest stats data={config.data_path} N={data.n_detectors} K={data.n_shots}"]
    for m in masks:
        z = sample_polarization(data, m)
        omega = depolarization(z, floor)
        line = (
            f"parity={m} z={z.value!r} z_se={z.std_error!r} "
            f"omega={omega.value!r} omega_se={omega.std_error!r} divergent={int(omega.divergent)}"
        )
        if config.bootstrap:
            se = bootstrap_std_error(
                data,
                _depolarization_of(m),
                config.bootstrap,
                config.seed,
                show_progress=not config.no_progress,
            )
            line += f" omega_bootstrap_se={se!r}"
        lines.append(line)
    if config.covariance:
        cov = polarization_covariance(data, masks)
        for i in range(len(masks)):
            for j in range(len(masks)):
                lines.append(f"cov {masks[i]} {masks[j]} {cov[i, j]!r}")
    write_output(config.out, "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_total_attenuation(config: Config) -> int:
    data = read_shots(config.data_path)
    est = _total_attenuation(config, data)
    write_output(config.out, _total_text(est, _provenance(config, data)))
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "sample": cmd_sample,
    "estimate": cmd_estimate,
    "compare": cmd_compare,
    "stats": cmd_stats,
    "total-attenuation": cmd_total_attenuation,
}


def run(config: Config) -> int:
    """Run one subcommand and map failures to exit codes."""
    try:
        return COMMANDS[config.command](config)
    except EstimationError as exc:
        logger.error("Estimation failed: %s", exc)
        return EXIT_ESTIMATION
    except DemError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    except OSError as exc:
        logger.error("I/O error: %s", exc)
        return EXIT_USAGE
