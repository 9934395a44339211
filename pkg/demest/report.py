from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import openpyxl
from openpyxl.styles import Alignment, Font, PatternFill

from demest.config import DEFAULT_Z_THRESHOLD
from demest.dem import Dem, DemEvent, EventMask
from demest.errors import DimensionError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CompareRow:
    mask: EventMask
    p_true: float
    p_est: float
    std_error: float | None
    abs_error: float
    flagged: bool  # deviation exceeds z_threshold reported std errors
    warning: str | None = None


@dataclass
class CompareReport:
    """Truth vs estimate, event by event.

    Every event of either DEM lands in exactly one of rows (both),
    missing (truth only) or spurious (estimate only).
    """

    n_detectors: int
    z_threshold: float
    rows: list[CompareRow] = field(default_factory=list)
    missing: list[DemEvent] = field(default_factory=list)
    spurious: list[DemEvent] = field(default_factory=list)
    total_attenuation_true: float = 0.0
    total_attenuation_est: float = 0.0

    @property
    def exit_code(self) -> int:
        return 0 if not self.missing and not self.spurious else 1

    @property
    def max_abs_error(self) -> float:
        return max((r.abs_error for r in self.rows), default=0.0)

    @property
    def n_flagged(self) -> int:
        return sum(r.flagged for r in self.rows)

    def to_text(self) -> str:
        """Line-oriented key=value rendering, stable for diffing."""
        lines = [
            f"n_detectors={self.n_detectors}",
            f"z_threshold={self.z_threshold!r}",
            f"matched={len(self.rows)}",
            f"missing={len(self.missing)}",
            f"spurious={len(self.spurious)}",
            f"flagged={self.n_flagged}",
            f"max_abs_error={self.max_abs_error!r}",
            f"total_attenuation_true={self.total_attenuation_true!r}",
            f"total_attenuation_estimated={self.total_attenuation_est!r}",
        ]
        for r in self.rows:
            se = "" if r.std_error is None else repr(r.std_error)
            lines.append(
                f"row mask={r.mask} p_true={r.p_true!r} p_est={r.p_est!r} "
                f"std_error={se} abs_error={r.abs_error!r} flagged={int(r.flagged)}"
            )
        for ev in self.missing:
            lines.append(f"missing mask={ev.mask} p_true={ev.probability!r}")
        for ev in self.spurious:
            se = "" if ev.std_error is None else repr(ev.std_error)
            lines.append(f"spurious mask={ev.mask} p_est={ev.probability!r} std_error={se}")
        return "\n".join(lines) + "\n"


def _safe_total(dem: Dem) -> float:
    # p >= 1/2 has no finite attenuation
    try:
        return dem.total_attenuation()
    except ValueError:
        return math.inf


def compare_dems(truth: Dem, estimate: Dem, z_threshold: float = DEFAULT_Z_THRESHOLD) -> CompareReport:
    if truth.n_detectors != estimate.n_detectors:
        raise DimensionError(
            f"cannot compare DEMs over N={truth.n_detectors} and N={estimate.n_detectors}"
        )
    report = CompareReport(
        truth.n_detectors,
        z_threshold,
        total_attenuation_true=_safe_total(truth),
        total_attenuation_est=_safe_total(estimate),
    )
    estimated = {ev.mask.bits: ev for ev in estimate.events}
    for ev in truth.events:
        match = estimated.pop(ev.mask.bits, None)
        if match is None:
            report.missing.append(ev)
            continue
        err = abs(match.probability - ev.probability)
        flagged = match.std_error is not None and err > z_threshold * match.std_error
        report.rows.append(
            CompareRow(ev.mask, ev.probability, match.probability, match.std_error, err, flagged, match.warning)
        )
    report.spurious.extend(ev for ev in estimate.events if ev.mask.bits in estimated)
    logger.info(
        "Compare: %d matched, %d missing, %d spurious, max |dp| = %.3g",
        len(report.rows), len(report.missing), len(report.spurious), report.max_abs_error,
    )
    return report


def write_xlsx(report: CompareReport, output_path: Path) -> None:
    """Write the comparison to an xlsx file, one row per event."""
    wb = openpyxl.Workbook()
    ws = wb.active
    ws.title = "Compare"

    ws.append(["#", "Mask", "Status", "p true", "p estimated", "Std error", "Abs error", "Remarks"])
    header_fill = PatternFill(start_color="1F4E79", end_color="1F4E79", fill_type="solid")
    header_font = Font(bold=True, color="FFFFFF")
    for cell in ws[1]:
        cell.font = header_font
        cell.fill = header_fill
        cell.alignment = Alignment(vertical="center")

    entries: list[tuple[str, str, float | None, float | None, float | None, float | None, str]] = []
    for r in report.rows:
        remarks = r.warning or ""
        if r.flagged:
            remarks = f"deviation above {report.z_threshold:g} std errors. {remarks}".strip()
        entries.append((str(r.mask), "matched", r.p_true, r.p_est, r.std_error, r.abs_error, remarks))
    for ev in report.missing:
        entries.append((str(ev.mask), "missing", ev.probability, None, None, None, "not estimated"))
    for ev in report.spurious:
        entries.append((str(ev.mask), "spurious", None, ev.probability, ev.std_error, None, "not in truth"))

    warning_fill = PatternFill(start_color="FFF2CC", end_color="FFF2CC", fill_type="solid")
    for i, entry in enumerate(entries, start=1):
        ws.append([i, *entry])
        if entry[-1]:
            for cell in ws[i + 1]:
                cell.fill = warning_fill

    ws.freeze_panes = "A2"
    widths = {"A": 6, "B": 30, "C": 10, "D": 14, "E": 14, "F": 14, "G": 14, "H": 50}
    for col, width in widths.items():
        ws.column_dimensions[col].width = width
    for row in ws.iter_rows(min_row=2):
        row[7].alignment = Alignment(wrap_text=True, vertical="top")

    summary = wb.create_sheet("Summary")
    for line in report.to_text().splitlines():
        key, _, value = line.partition("=")
        if key in ("row mask", "missing mask", "spurious mask"):
            continue
        summary.append([key, value])
    summary.column_dimensions["A"].width = 30
    summary.column_dimensions["B"].width = 24

    wb.save(output_path)
    logger.info("Compare report written to %s", output_path)
