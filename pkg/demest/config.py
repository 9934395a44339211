from __future__ import annotations

import argparse
from dataclasses import dataclass, field
from pathlib import Path

DEFAULT_Z_THRESHOLD = 5.0
DIVERGENCE_SIGMAS = 3.0
DISTRIBUTION_CAP = 24
BOOTSTRAP_RESAMPLES = 100
MC_SAMPLES = 256
MC_DIVERGENT_LIMIT = 0.1
MAX_CLASS_INDICES = 20
DELTA_METHOD_MAX_INDICES = 12
DELTA_METHOD_MAX_EXACT = 12
NEGATIVE_FLOOR_SIGMAS = 3.0
LOW_WEIGHT_MAX_CLASSES = 1_000_000
# attenuations at or below this count as zero (exact polarizations have se = 0)
ATTENUATION_TOL = 1e-12
THREADS_ENV_VAR = "DEMEST_THREADS"


@dataclass
class Config:
    command: str
    log_level: str = "INFO"
    threads: int | None = None
    no_progress: bool = False
    seed: int = 0
    out: str = "-"
    # gen
    n_detectors: int | None = None
    n_events: int = 0
    max_weight: int = 2
    p_min: float = 0.001
    p_max: float = 0.01
    uniform_eps: float | None = None
    # sample
    dem_path: Path | None = None
    shots: int = 0
    shot_format: str = "txt"
    # estimate / stats / total-attenuation
    data_path: Path | None = None
    method: str = "exact"
    wmax: int = 2
    significance: float = DEFAULT_Z_THRESHOLD
    mc_samples: int = MC_SAMPLES
    errors: str | None = None  # None: bootstrap for exact, delta elsewhere
    bootstrap: int = BOOTSTRAP_RESAMPLES
    clamp: bool = False
    max_detectors: int = DISTRIBUTION_CAP
    lattice_report: Path | None = None
    recursive: bool = False
    exhaustive: bool = False
    parities: list[str] = field(default_factory=list)
    covariance: bool = False
    # compare
    true_path: Path | None = None
    est_path: Path | None = None
    xlsx: Path | None = None

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "Config":
        def opt(name: str, default=None):
            return getattr(args, name, default)

        def opt_path(name: str) -> Path | None:
            value = getattr(args, name, None)
            return Path(value) if value is not None else None

        return cls(
            command=args.command,
            log_level=args.log_level,
            threads=args.threads,
            no_progress=args.no_progress,
            seed=opt("seed", 0),
            out=opt("out", "-"),
            n_detectors=opt("n"),
            n_events=opt("events", 0),
            max_weight=opt("max_weight", 2),
            p_min=opt("p_min", 0.001),
            p_max=opt("p_max", 0.01),
            uniform_eps=opt("uniform_eps"),
            dem_path=opt_path("dem"),
            shots=opt("shots", 0),
            shot_format=opt("format", "txt"),
            data_path=opt_path("data"),
            method=opt("method", "total" if args.command == "total-attenuation" else "exact"),
            wmax=opt("wmax", 2),
            significance=opt("significance", DEFAULT_Z_THRESHOLD),
            mc_samples=opt("mc_samples", MC_SAMPLES),
            errors=opt("errors"),
            bootstrap=opt("bootstrap", BOOTSTRAP_RESAMPLES),
            clamp=opt("clamp", False),
            max_detectors=opt("max_detectors", DISTRIBUTION_CAP),
            lattice_report=opt_path("lattice_report"),
            recursive=opt("recursive", False),
            exhaustive=opt("exhaustive", False),
            parities=list(opt("parity", None) or []),
            covariance=opt("covariance", False),
            true_path=opt_path("true"),
            est_path=opt_path("est"),
            xlsx=opt_path("xlsx"),
        )
