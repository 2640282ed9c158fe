"""Detection-event streams, start-stop histograms and CSV / binary export.

Timetags are integer ticks at 1 ns resolution.  A detection record is
(tick, channel, ensemble_id, trial_index); streams are kept as numpy
structured arrays and sorted by tick before any matching, so all outputs
are independent of input order.

Native formats
--------------
CSV: header comments declare the resolution, then one record per line,
``tick,channel,ensemble_id,trial_index``.  Floats elsewhere are written
with ``repr`` so every export/import round-trips bit-exactly.

Binary timetags: 16-byte little-endian records, int64 tick then uint8
channel then 7 padding bytes.  No header; the resolution is 1 ns by
convention and must be supplied on import if it differs.
"""

from __future__ import annotations

import enum
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, MalformedLineError, RegionError

TICK_SECONDS = 1e-9  # native timetag resolution

RECORD_DTYPE = np.dtype([
    ("tick", "<i8"),
    ("channel", "u1"),
    ("ensemble_id", "<i8"),
    ("trial_index", "<i4"),
])

_BINARY_RECORD = struct.Struct("<qB7x")


class Channel(enum.IntEnum):
    WRITE = 0
    READ1 = 1
    READ2 = 2


@dataclass(frozen=True)
class DetectionRecord:
    """One detector click; timestamp in integer ticks of 1 ns."""

    tick: int
    channel: Channel
    ensemble_id: int = 0
    trial_index: int = 0

    @property
    def time(self) -> float:
        return self.tick * TICK_SECONDS


def records_array(records) -> np.ndarray:
    """Normalise record input (structured array or iterable) and time-sort it."""
    if isinstance(records, np.ndarray) and records.dtype == RECORD_DTYPE:
        arr = records
    else:
        rows = [(r.tick, int(r.channel), r.ensemble_id, r.trial_index)
                for r in records]
        arr = np.array(rows, dtype=RECORD_DTYPE) if rows else np.empty(0, RECORD_DTYPE)
    order = np.argsort(arr["tick"], kind="stable")
    return arr[order]


def make_records(ticks, channels, ensemble_ids=None, trial_indices=None) -> np.ndarray:
    arr = np.empty(len(ticks), dtype=RECORD_DTYPE)
    arr["tick"] = np.asarray(ticks, dtype=np.int64)
    arr["channel"] = np.asarray(channels, dtype=np.uint8)
    arr["ensemble_id"] = 0 if ensemble_ids is None else np.asarray(ensemble_ids)
    arr["trial_index"] = 0 if trial_indices is None else np.asarray(trial_indices)
    return arr


# ---------------------------------------------------------------------------
# Histogram
# ---------------------------------------------------------------------------

@dataclass
class Histogram:
    """Start-stop histogram; counts are raw, values() applies normalisation."""

    bin_edges: np.ndarray  # s, len = bins + 1, strictly increasing
    counts: np.ndarray  # raw counts per bin
    normalization: str = "raw"  # or "per-start"
    n_starts: int = 0

    def __post_init__(self):
        self.bin_edges = np.asarray(self.bin_edges, dtype=float)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if len(self.counts) != len(self.bin_edges) - 1:
            raise InvalidParameterError("need len(counts) == len(edges) - 1")
        if np.any(np.diff(self.bin_edges) <= 0):
            raise InvalidParameterError("bin edges must be strictly increasing")
        if self.normalization not in ("raw", "per-start"):
            raise InvalidParameterError(f"unknown normalization {self.normalization!r}")

    def values(self) -> np.ndarray:
        if self.normalization == "per-start":
            if self.n_starts <= 0:
                raise InvalidParameterError("per-start normalisation needs n_starts")
            return self.counts / self.n_starts
        return self.counts.astype(float)


def start_stop_histogram(records, start_channel, stop_channels, bin_width,
                         time_range, normalization="raw") -> Histogram:
    """Histogram of start -> first-subsequent-stop delays.

    For every start click, the first stop click at or after it
    contributes one count if its delay falls inside ``time_range``;
    later stops are ignored for that start (so the histogram mass never
    exceeds the number of starts).
    """
    if bin_width <= 0:
        raise InvalidParameterError("bin_width must be positive")
    lo, hi = float(time_range[0]), float(time_range[1])
    if not (hi > lo >= 0):
        raise InvalidParameterError(f"invalid range {time_range}")
    arr = records_array(records)
    stop_set = {int(c) for c in np.atleast_1d(stop_channels)}
    starts = arr["tick"][arr["channel"] == int(start_channel)]
    if len(starts) == 0:
        raise RegionError("record stream contains no start clicks")
    stop_mask = np.isin(arr["channel"], list(stop_set))
    stops = arr["tick"][stop_mask]

    n_bins = int(np.ceil((hi - lo) / bin_width))
    edges = lo + bin_width * np.arange(n_bins + 1)
    counts = np.zeros(n_bins, dtype=np.int64)
    if len(stops):
        idx = np.searchsorted(stops, starts, side="left")
        valid = idx < len(stops)
        delays = (stops[idx[valid]] - starts[valid]) * TICK_SECONDS
        in_range = (delays >= lo) & (delays < edges[-1])
        bins = np.floor((delays[in_range] - lo) / bin_width).astype(int)
        np.add.at(counts, bins, 1)
    return Histogram(edges, counts, normalization=normalization,
                     n_starts=int(len(starts)))


# ---------------------------------------------------------------------------
# Windowed coincidences
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WindowedCounts:
    """Pair/triple counts from nearest-first start-stop matching.

    These are the coincidence inputs of the counting statistics; total
    trial counts come from the producer of the stream.
    """

    n_starts: int
    n_wr: int
    n_wr1: int
    n_wr2: int
    n_wr1r2: int


def _match_channel(starts, stops, window_ticks):
    """Nearest-first, consume-once matching of stops to starts.

    Candidate pairs (start, stop) with 0 <= stop - start <= window are
    matched in order of ascending delay; each start takes at most one
    stop on this channel and each stop is consumed once.  Returns a
    boolean array flagging matched starts.
    """
    matched_start = np.zeros(len(starts), dtype=bool)
    if len(starts) == 0 or len(stops) == 0:
        return matched_start
    pairs = []
    first = np.searchsorted(stops, starts, side="left")
    for i, (t0, j0) in enumerate(zip(starts, first)):
        j = j0
        while j < len(stops) and stops[j] - t0 <= window_ticks:
            pairs.append((stops[j] - t0, i, j))
            j += 1
    pairs.sort()
    stop_used = np.zeros(len(stops), dtype=bool)
    for _, i, j in pairs:
        if not matched_start[i] and not stop_used[j]:
            matched_start[i] = True
            stop_used[j] = True
    return matched_start


def windowed_coincidences(records, window) -> WindowedCounts:
    """Count write-read pairs and triples within a coincidence window.

    Starts are write clicks, stops are read clicks; each read channel is
    matched independently (nearest-first, consume-once), and a start
    matched on both read channels counts as a triple.
    """
    if window <= 0:
        raise InvalidParameterError("window must be positive")
    arr = records_array(records)
    window_ticks = int(round(window / TICK_SECONDS))
    starts = arr["tick"][arr["channel"] == int(Channel.WRITE)]
    r1 = arr["tick"][arr["channel"] == int(Channel.READ1)]
    r2 = arr["tick"][arr["channel"] == int(Channel.READ2)]
    m1 = _match_channel(starts, r1, window_ticks)
    m2 = _match_channel(starts, r2, window_ticks)
    return WindowedCounts(
        n_starts=int(len(starts)),
        n_wr=int(np.sum(m1 | m2)),
        n_wr1=int(m1.sum()),
        n_wr2=int(m2.sum()),
        n_wr1r2=int(np.sum(m1 & m2)),
    )


# ---------------------------------------------------------------------------
# CSV export / import
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def export_table_csv(path, columns, rows, header_comments=()):
    """Write a generic numeric table; floats use repr for exact round-trips."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for comment in header_comments:
            fh.write(f"# {comment}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _parse_numeric_rows(path, expected_fields):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = None
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = [c.strip() for c in line.split(",")]
                if expected_fields is not None and header != list(expected_fields):
                    raise MalformedLineError(
                        f"unexpected header {header!r}", line=lineno)
                continue
            parts = line.split(",")
            if expected_fields is not None and len(parts) != len(expected_fields):
                raise MalformedLineError(
                    f"expected {len(expected_fields)} fields, got {len(parts)}",
                    line=lineno)
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise MalformedLineError(str(exc), line=lineno) from None
    if header is None:
        raise MalformedLineError("file contains no header", line=1)
    return header, rows


HISTOGRAM_COLUMNS = ("bin_start_s", "bin_stop_s", "count")


def export_histogram_csv(hist: Histogram, path):
    rows = [(hist.bin_edges[i], hist.bin_edges[i + 1], int(hist.counts[i]))
            for i in range(len(hist.counts))]
    export_table_csv(path, HISTOGRAM_COLUMNS, rows, header_comments=(
        f"normalization={hist.normalization}",
        f"n_starts={hist.n_starts}",
    ))


def import_histogram_csv(path) -> Histogram:
    meta = _read_comment_meta(path)
    _, rows = _parse_numeric_rows(path, HISTOGRAM_COLUMNS)
    if not rows:
        raise MalformedLineError("histogram file has no bins", line=2)
    edges = [r[0] for r in rows] + [rows[-1][1]]
    counts = [int(r[2]) for r in rows]
    return Histogram(np.array(edges), np.array(counts),
                     normalization=meta.get("normalization", "raw"),
                     n_starts=int(meta.get("n_starts", 0)))


def _read_comment_meta(path) -> dict:
    meta = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line.startswith("#"):
                break
            body = line[1:].strip()
            if "=" in body:
                k, v = body.split("=", 1)
                meta[k.strip()] = v.strip()
    return meta


RECORD_COLUMNS = ("tick", "channel", "ensemble_id", "trial_index")


def export_records_csv(records, path, resolution=TICK_SECONDS):
    arr = records_array(records)
    rows = [(int(r["tick"]), int(r["channel"]), int(r["ensemble_id"]),
             int(r["trial_index"])) for r in arr]
    export_table_csv(path, RECORD_COLUMNS, rows, header_comments=(
        f"resolution_s={resolution!r}",
    ))


def import_records_csv(path, expected_resolution=TICK_SECONDS) -> np.ndarray:
    meta = _read_comment_meta(path)
    declared = float(meta.get("resolution_s", TICK_SECONDS))
    if abs(declared - expected_resolution) > 1e-18:
        warnings.warn(
            f"timetag resolution mismatch: file declares {declared}, "
            f"expected {expected_resolution}", stacklevel=2)
    _, rows = _parse_numeric_rows(path, RECORD_COLUMNS)
    arr = np.empty(len(rows), dtype=RECORD_DTYPE)
    for i, row in enumerate(rows):
        arr[i] = (int(row[0]), int(row[1]), int(row[2]), int(row[3]))
    return arr


# ---------------------------------------------------------------------------
# Binary timetag format
# ---------------------------------------------------------------------------

def export_timetags_binary(records, path):
    """16-byte records: little-endian int64 tick, uint8 channel, 7 pad bytes."""
    arr = records_array(records)
    with open(path, "wb") as fh:
        for r in arr:
            fh.write(_BINARY_RECORD.pack(int(r["tick"]), int(r["channel"])))


def import_timetags(path, fmt="binary", expected_resolution=TICK_SECONDS) -> np.ndarray:
    """Read a timetag stream; binary records carry no ensemble/trial ids."""
    if fmt == "csv":
        return import_records_csv(path, expected_resolution)
    if fmt != "binary":
        raise InvalidParameterError(f"unknown timetag format {fmt!r}")
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) % _BINARY_RECORD.size:
        raise MalformedLineError(
            f"file size {len(blob)} is not a multiple of "
            f"{_BINARY_RECORD.size}-byte records",
            line=len(blob) // _BINARY_RECORD.size + 1)
    n = len(blob) // _BINARY_RECORD.size
    arr = np.empty(n, dtype=RECORD_DTYPE)
    for i in range(n):
        tick, channel = _BINARY_RECORD.unpack_from(blob, i * _BINARY_RECORD.size)
        arr[i] = (tick, channel, 0, 0)
    return records_array(arr)
