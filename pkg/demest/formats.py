"""DEM text files, shot files (text and binary) and atomic output."""
from __future__ import annotations

import logging
import os
import re
import struct
import sys
from pathlib import Path
from typing import Iterable

import numpy as np

from demest.dem import Dem, DemEvent, EventMask
from demest.errors import DemError, FormatError
from demest.histories import DetectorHistories

logger = logging.getLogger(__name__)

SHOT_MAGIC = b"DEMH"
SHOT_VERSION = 1
_SHOT_HEADER = struct.Struct("<4sBIQ")

_DETECTORS_LINE = re.compile(r"^detectors\s+(\d+)$")
_ERROR_LINE = re.compile(r"^error\(\s*([^()\s]+)\s*\)((?:\s+D\d+)*)$")
_SE_COMMENT = re.compile(r"\bse=(\S+)")


def write_output(out: str | Path, payload: str | bytes) -> None:
    """Write to stdout for "-", otherwise atomically via a temporary file."""
    if str(out) == "-":
        if isinstance(payload, bytes):
            sys.stdout.buffer.write(payload)
            sys.stdout.buffer.flush()
        else:
            sys.stdout.write(payload)
            sys.stdout.flush()
        return
    path = Path(out)
    tmp = path.with_name(path.name + ".tmp")
    try:
        if isinstance(payload, bytes):
            tmp.write_bytes(payload)
        else:
            tmp.write_text(payload, encoding="utf-8")
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
    logger.debug("Wrote %s (%d bytes)", path, len(payload))


# --- DEM text format --------------------------------------------------------


def dem_to_text(dem: Dem, header: Iterable[str] = ()) -> str:
    """Render a DEM; `header` lines are written as leading # comments."""
    lines = [f"# {h}" for h in header]
    lines.append(f"detectors {dem.n_detectors}")
    for ev in dem.events:
        if ev.warning:
            lines.append(f"# warning: {ev.warning}")
        line = f"error({ev.probability!r})"
        if ev.mask.indices:
            line += " " + " ".join(f"D{i}" for i in ev.mask.indices)
        if ev.std_error is not None:
            line += f"  # se={ev.std_error!r}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def _split_comment(raw: str) -> tuple[str, str]:
    body, sep, comment = raw.partition("#")
    return body.strip(), comment if sep else ""


def dem_from_text(text: str, path: str | None = None) -> Dem:
    n_detectors: int | None = None
    events: list[DemEvent] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body, comment = _split_comment(raw)
        if not body:
            continue
        if n_detectors is None:
            m = _DETECTORS_LINE.match(body)
            if not m:
                raise FormatError("expected 'detectors <N>' before any event", path, lineno)
            n_detectors = int(m.group(1))
            if n_detectors < 1:
                raise FormatError("detector count must be >= 1", path, lineno)
            continue
        m = _ERROR_LINE.match(body)
        if not m:
            raise FormatError(f"cannot parse line {body!r}", path, lineno)
        try:
            p = float(m.group(1))
        except ValueError:
            raise FormatError(f"bad probability {m.group(1)!r}", path, lineno) from None
        indices = [int(tok[1:]) for tok in m.group(2).split()]
        if len(set(indices)) != len(indices):
            raise FormatError("repeated detector index", path, lineno)
        se = None
        found = _SE_COMMENT.search(comment)
        if found:
            try:
                se = float(found.group(1))
            except ValueError:
                raise FormatError(f"bad std error {found.group(1)!r}", path, lineno) from None
        try:
            mask = EventMask.from_indices(n_detectors, sorted(indices))
            events.append(DemEvent(mask, p, std_error=se))
        except DemError as exc:
            raise FormatError(str(exc), path, lineno) from None
    if n_detectors is None:
        raise FormatError("missing 'detectors <N>' header", path)
    masks = [ev.mask.bits for ev in events]
    if len(set(masks)) != len(masks):
        logger.warning("%s: repeated event masks merged by exclusive addition", path or "DEM")
        return Dem.from_events(n_detectors, events)
    return Dem(n_detectors, tuple(events))


def read_dem(path: str | Path) -> Dem:
    path = Path(path)
    dem = dem_from_text(path.read_text(encoding="utf-8"), str(path))
    logger.debug("Read DEM %s: N=%d, %d events", path, dem.n_detectors, len(dem))
    return dem


def write_dem(dem: Dem, out: str | Path, header: Iterable[str] = ()) -> None:
    write_output(out, dem_to_text(dem, header))


# --- shot formats -----------------------------------------------------------


_SHOT_COUNT_LINE = re.compile(r"^#\s*detectors\s+(\d+)\s*$")


def shots_to_text(data: DetectorHistories) -> str:
    """One 0/1 line per shot; an empty set of shots keeps N in a comment line."""
    if data.n_shots == 0:
        return f"# detectors {data.n_detectors}\n"
    return "\n".join(data.to_strings()) + "\n"


def shots_from_text(text: str, path: str | None = None) -> DetectorHistories:
    n_detectors = None
    lines = []
    for raw in text.splitlines():
        ln = raw.strip()
        if not ln:
            continue
        if ln.startswith("#"):
            m = _SHOT_COUNT_LINE.match(ln)
            if m:
                n_detectors = int(m.group(1))
            continue
        lines.append(ln)
    if not lines:
        if n_detectors is None or n_detectors < 1:
            raise FormatError("shot file has no shots; N cannot be inferred", path)
        return DetectorHistories.zeros(n_detectors, 0)
    if n_detectors is not None and any(len(ln) != n_detectors for ln in lines):
        raise FormatError(f"shot lines do not match the declared N={n_detectors}", path)
    try:
        return DetectorHistories.from_strings(lines)
    except DemError as exc:
        raise FormatError(str(exc), path) from None


def shots_to_binary(data: DetectorHistories) -> bytes:
    header = _SHOT_HEADER.pack(SHOT_MAGIC, SHOT_VERSION, data.n_detectors, data.n_shots)
    return header + data.rows.tobytes()


def shots_from_binary(blob: bytes, path: str | None = None) -> DetectorHistories:
    if len(blob) < _SHOT_HEADER.size:
        raise FormatError("truncated shot header", path)
    magic, version, n, k = _SHOT_HEADER.unpack_from(blob)
    if magic != SHOT_MAGIC:
        raise FormatError(f"bad magic {magic!r}", path)
    if version != SHOT_VERSION:
        raise FormatError(f"unsupported shot format version {version}", path)
    if n < 1:
        raise FormatError("detector count must be >= 1", path)
    nb = (n + 7) // 8
    expected = _SHOT_HEADER.size + k * nb
    if len(blob) != expected:
        raise FormatError(f"expected {expected} bytes for N={n}, K={k}; got {len(blob)}", path)
    if k == 0:
        rows = np.zeros((0, nb), dtype=np.uint8)
    else:
        rows = np.frombuffer(blob, dtype=np.uint8, offset=_SHOT_HEADER.size).reshape(k, nb)
    try:
        return DetectorHistories(n, rows)
    except DemError as exc:
        raise FormatError(str(exc), path) from None


def read_shots(path: str | Path) -> DetectorHistories:
    """Read a shot file, detecting the binary format by its magic bytes."""
    path = Path(path)
    blob = path.read_bytes()
    if blob[: len(SHOT_MAGIC)] == SHOT_MAGIC:
        data = shots_from_binary(blob, str(path))
    else:
        try:
            text = blob.decode("ascii")
        except UnicodeDecodeError:
            raise FormatError("neither a binary shot file nor ASCII text", str(path)) from None
        data = shots_from_text(text, str(path))
    logger.info("Read %d shots of %d detectors from %s", data.n_shots, data.n_detectors, path)
    return data


def write_shots(data: DetectorHistories, out: str | Path, fmt: str = "txt") -> None:
    if fmt == "txt":
        write_output(out, shots_to_text(data))
    elif fmt == "bin":
        write_output(out, shots_to_binary(data))
    else:
        raise FormatError(f"unknown shot format {fmt!r}; expected 'txt' or 'bin'")
