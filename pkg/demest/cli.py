from __future__ import annotations

import argparse

from demest.config import BOOTSTRAP_RESAMPLES, DEFAULT_Z_THRESHOLD, DISTRIBUTION_CAP, MC_SAMPLES

METHODS = ["exact", "pij", "lowweight", "lattice", "total"]


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging verbosity (default: INFO)",
    )
    common.add_argument(
        "--threads",
        type=int,
        default=None,
        metavar="N",
        help="Worker threads (default: $DEMEST_THREADS, else CPU count); results do not depend on it",
    )
    common.add_argument(
        "--no-progress",
        action="store_true",
        help="Suppress tqdm progress bars",
    )
    return common


def _add_seed_out(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="Random seed (default: 0)")
    p.add_argument("--out", default="-", help='Output file, "-" for stdout (default: -)')


def _add_error_options(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--errors",
        choices=["bootstrap", "delta"],
        default=None,
        help="Error bars by shot bootstrap or covariance propagation "
             "(default: bootstrap for exact, delta otherwise)",
    )
    p.add_argument(
        "--bootstrap",
        type=int,
        default=BOOTSTRAP_RESAMPLES,
        metavar="B",
        help=f"Bootstrap resamples (default: {BOOTSTRAP_RESAMPLES})",
    )


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="demest",
        description="Generate, sample and estimate detector error models from detector histories.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    gen = sub.add_parser("gen", parents=[common], help="Generate a random sparse or uniform-depolarizing DEM")
    gen.add_argument("--n", type=int, required=True, help="Number of detectors N")
    gen.add_argument("--events", type=int, default=0, help="Number of distinct events (default: 0)")
    gen.add_argument("--max-weight", type=int, default=2, help="Maximum event weight (default: 2)")
    gen.add_argument("--p-min", type=float, default=0.001, help="Smallest event probability (default: 0.001)")
    gen.add_argument("--p-max", type=float, default=0.01, help="Largest event probability (default: 0.01)")
    gen.add_argument(
        "--uniform-eps",
        type=float,
        default=None,
        metavar="EPS",
        help="Uniform depolarizing DEM: every nonzero mask with p = EPS/2^N (ignores --events)",
    )
    _add_seed_out(gen)

    sample = sub.add_parser("sample", parents=[common], help="Sample detector histories from a DEM")
    sample.add_argument("--dem", required=True, help="DEM text file")
    sample.add_argument("--shots", type=int, required=True, help="Number of shots K")
    sample.add_argument("--format", choices=["txt", "bin"], default="txt", help="Shot file format (default: txt)")
    _add_seed_out(sample)

    est = sub.add_parser("estimate", parents=[common], help="Estimate a DEM from detector histories")
    est.add_argument("--data", required=True, help="Shot file (text or binary)")
    est.add_argument("--method", choices=METHODS, default="exact", help="Estimator (default: exact)")
    est.add_argument("--wmax", type=int, default=2, help="Maximum class weight for lowweight/lattice (default: 2)")
    est.add_argument(
        "--significance",
        type=float,
        default=DEFAULT_Z_THRESHOLD,
        metavar="Z",
        help=f"Keep estimates above Z std errors (default: {DEFAULT_Z_THRESHOLD:g})",
    )
    est.add_argument(
        "--mc-samples",
        type=int,
        default=MC_SAMPLES,
        metavar="R",
        help=f"Random parities for the total method (default: {MC_SAMPLES})",
    )
    est.add_argument("--clamp", action="store_true", help="Report negative p_ij as 0")
    est.add_argument(
        "--max-detectors",
        type=int,
        default=DISTRIBUTION_CAP,
        metavar="N",
        help=f"Cap on N for the exact method (default: {DISTRIBUTION_CAP})",
    )
    est.add_argument("--lattice-report", default=None, metavar="FILE", help="Dump the pruned class lattice to FILE")
    est.add_argument("--recursive", action="store_true", help="lowweight: evaluate without the class table")
    est.add_argument("--exhaustive", action="store_true", help="total: enumerate all 2^N parities")
    _add_error_options(est)
    _add_seed_out(est)

    cmp_ = sub.add_parser("compare", parents=[common], help="Compare an estimated DEM against the truth")
    cmp_.add_argument("--true", required=True, help="True DEM file")
    cmp_.add_argument("--est", required=True, help="Estimated DEM file")
    cmp_.add_argument(
        "--significance",
        type=float,
        default=DEFAULT_Z_THRESHOLD,
        metavar="Z",
        help=f"Flag rows deviating by more than Z std errors (default: {DEFAULT_Z_THRESHOLD:g})",
    )
    cmp_.add_argument("--xlsx", default=None, metavar="FILE", help="Also write the report as a spreadsheet")
    cmp_.add_argument("--out", default="-", help='key=value report file, "-" for stdout (default: -)')

    stats = sub.add_parser("stats", parents=[common], help="Polarizations and depolarizations of chosen parities")
    stats.add_argument("--data", required=True, help="Shot file (text or binary)")
    stats.add_argument(
        "--parity",
        action="append",
        required=True,
        metavar="MASK",
        help="Parity mask as a 0/1 string, leftmost = detector 0 (repeatable)",
    )
    stats.add_argument("--covariance", action="store_true", help="Also print the parity covariance matrix")
    stats.add_argument(
        "--bootstrap",
        type=int,
        default=0,
        metavar="B",
        help="Add bootstrap std errors of the depolarizations with B resamples (default: off)",
    )
    _add_seed_out(stats)

    total = sub.add_parser("total-attenuation", parents=[common], help="Monte Carlo estimate of the total attenuation")
    total.add_argument("--data", required=True, help="Shot file (text or binary)")
    total.add_argument("--mc-samples", type=int, default=MC_SAMPLES, metavar="R", help=f"Random parities (default: {MC_SAMPLES})")
    total.add_argument("--exhaustive", action="store_true", help="Enumerate all 2^N parities")
    _add_error_options(total)
    _add_seed_out(total)

    return parser


def parse_and_validate(argv: list[str] | None = None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be >= 1")

    if args.command == "gen":
        if args.n < 1:
            parser.error("--n must be >= 1")
        if args.uniform_eps is not None:
            if args.uniform_eps < 0:
                parser.error("--uniform-eps must be >= 0")
        else:
            if args.events < 0:
                parser.error("--events must be >= 0")
            if not (1 <= args.max_weight <= args.n):
                parser.error("--max-weight must be between 1 and --n")
            if not (0 < args.p_min <= args.p_max < 0.5):
                parser.error("need 0 < --p-min <= --p-max < 0.5")

    if args.command == "sample" and args.shots < 0:
        parser.error("--shots must be >= 0")

    if args.command in ("estimate", "compare") and args.significance <= 0:
        parser.error("--significance must be > 0")

    if args.command == "estimate":
        if args.wmax < 1:
            parser.error("--wmax must be >= 1")
        if args.max_detectors < 1:
            parser.error("--max-detectors must be >= 1")

    if args.command in ("estimate", "total-attenuation"):
        if args.mc_samples < 1:
            parser.error("--mc-samples must be >= 1")
        if args.bootstrap < 2:
            parser.error("--bootstrap must be >= 2")

    if args.command == "stats" and (args.bootstrap < 0 or args.bootstrap == 1):
        parser.error("--bootstrap must be 0 (off) or >= 2")

    return args
