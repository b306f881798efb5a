"""Lifelog file ingestion: heart rate, activity segments, food logs.

Input files use ISO-8601 UTC timestamps throughout (local-time inputs must
carry an offset; everything is normalized to UTC on parse). Heart rate is
nominally one sample per minute. Per-episode sample sets are built by
slicing the heart-rate stream to each eating segment and attaching food-log
entries by timestamp, then screened by the noise filters (abnormally high
start, empty series, low sample coverage).
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone

import numpy as np

REJECT_HIGH_START = "high_start"
REJECT_EMPTY = "empty"
REJECT_LOW_COVERAGE = "low_coverage"

BPM_MIN = 20.0
BPM_MAX = 250.0


class ParseError(ValueError):
    """Malformed input file; message names the offending line."""


class ValidationError(ValueError):
    """Structurally valid input with out-of-range or inconsistent values."""


def parse_instant(text: str) -> datetime:
    """Parse an ISO-8601 timestamp into an aware UTC datetime."""
    raw = text.strip()
    if raw.endswith("Z"):
        raw = raw[:-1] + "+00:00"
    dt = datetime.fromisoformat(raw)
    if dt.tzinfo is None:
        raise ValidationError(f"timestamp {text!r} has no UTC offset")
    return dt.astimezone(timezone.utc)


def format_instant(dt: datetime) -> str:
    """Render an aware datetime as ISO-8601 UTC at second resolution."""
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _epoch(dt: datetime) -> int:
    return int(dt.timestamp())


@dataclass(frozen=True)
class HeartRateSeries:
    """Timestamped bpm samples, strictly increasing in time.

    `t` holds epoch seconds (int64); `bpm` is float64. Both are 1-D and the
    same length.
    """

    t: np.ndarray
    bpm: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    def minutes_from(self, origin: datetime) -> np.ndarray:
        """Sample times as fractional minutes elapsed since `origin`."""
        return (self.t - _epoch(origin)) / 60.0

    def slice_window(self, start: datetime, end: datetime) -> "HeartRateSeries":
        """Samples with start <= time <= end."""
        lo, hi = _epoch(start), _epoch(end)
        mask = (self.t >= lo) & (self.t <= hi)
        return HeartRateSeries(self.t[mask], self.bpm[mask])

    @staticmethod
    def empty() -> "HeartRateSeries":
        return HeartRateSeries(np.empty(0, dtype=np.int64), np.empty(0))


@dataclass(frozen=True)
class ActivitySegment:
    start: datetime
    end: datetime
    label: str
    venue_name: str | None = None
    venue_type: str | None = None
    gps: tuple[float, float] | None = None

    def __post_init__(self):
        if not self.label:
            raise ValidationError("activity segment label must be non-empty")
        if self.start >= self.end:
            raise ValidationError(
                f"activity segment start {format_instant(self.start)} is not "
                f"before end {format_instant(self.end)}"
            )

    @property
    def duration_min(self) -> float:
        return (self.end - self.start).total_seconds() / 60.0


@dataclass(frozen=True)
class FoodLogEntry:
    timestamp: datetime
    food_names: tuple[str, ...]

    def __post_init__(self):
        if not self.food_names:
            raise ValidationError("food log entry must name at least one food")


@dataclass(frozen=True)
class SampleSet:
    """One eating episode: heart-rate slice, segment, attached food logs."""

    id: str
    series: HeartRateSeries
    segment: ActivitySegment
    foods: tuple[FoodLogEntry, ...] = ()
    rejected_reason: str | None = None

    @property
    def accepted(self) -> bool:
        return self.rejected_reason is None


def segment_id(segment: ActivitySegment) -> str:
    """Stable episode id derived from the segment start time."""
    return segment.start.astimezone(timezone.utc).strftime("%Y%m%dT%H%M%S")


# ---------------------------------------------------------------------------
# heart_rate.csv
# ---------------------------------------------------------------------------

def parse_heart_rate(data: bytes | str) -> HeartRateSeries:
    """Parse `timestamp,bpm` CSV into a series.

    Samples are sorted by timestamp; duplicate timestamps keep the value
    appearing last in the file. Raises ParseError (naming the 1-based line)
    for malformed rows and ValidationError for bpm outside (20, 250).
    """
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    if not rows or rows[0] != ["timestamp", "bpm"]:
        raise ParseError("line 1: expected header 'timestamp,bpm'")
    by_time: dict[int, float] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise ParseError(f"line {lineno}: expected 2 fields, got {len(row)}")
        try:
            ts = parse_instant(row[0])
            bpm = float(row[1])
        except (ValueError, ValidationError) as exc:
            raise ParseError(f"line {lineno}: {exc}") from exc
        if not (BPM_MIN < bpm < BPM_MAX):
            raise ValidationError(
                f"line {lineno}: bpm {bpm} outside ({BPM_MIN}, {BPM_MAX})"
            )
        by_time[_epoch(ts)] = bpm
    times = np.array(sorted(by_time), dtype=np.int64)
    values = np.array([by_time[t] for t in times], dtype=float)
    return HeartRateSeries(times, values)


def write_heart_rate(series: HeartRateSeries) -> bytes:
    """Inverse of parse_heart_rate; parse(write(s)) == s and the round trip
    through both is byte-stable."""
    out = io.StringIO()
    out.write("timestamp,bpm\n")
    for t, bpm in zip(series.t, series.bpm):
        dt = datetime.fromtimestamp(int(t), tz=timezone.utc)
        out.write(f"{format_instant(dt)},{float(bpm)!r}\n")
    return out.getvalue().encode("utf-8")


# ---------------------------------------------------------------------------
# activities.json
# ---------------------------------------------------------------------------

def parse_activities(data: bytes | str) -> list[ActivitySegment]:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(raw, list):
        raise ParseError("line 1: expected a JSON array of segments")
    segments = []
    for i, item in enumerate(raw):
        try:
            gps = None
            if "lat" in item and "lon" in item:
                gps = (float(item["lat"]), float(item["lon"]))
            segments.append(
                ActivitySegment(
                    start=parse_instant(item["start"]),
                    end=parse_instant(item["end"]),
                    label=str(item["label"]),
                    venue_name=item.get("venue_name"),
                    venue_type=item.get("venue_type"),
                    gps=gps,
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"segment {i}: {exc}") from exc
    return segments


def write_activities(segments: list[ActivitySegment]) -> bytes:
    items = []
    for seg in segments:
        item: dict = {
            "start": format_instant(seg.start),
            "end": format_instant(seg.end),
            "label": seg.label,
        }
        if seg.venue_name is not None:
            item["venue_name"] = seg.venue_name
        if seg.venue_type is not None:
            item["venue_type"] = seg.venue_type
        if seg.gps is not None:
            item["lat"], item["lon"] = seg.gps
        items.append(item)
    return (json.dumps(items, indent=2, ensure_ascii=False) + "\n").encode("utf-8")


# ---------------------------------------------------------------------------
# food_log.csv
# ---------------------------------------------------------------------------

def parse_food_log(data: bytes | str) -> list[FoodLogEntry]:
    """Parse `timestamp,foods` CSV; foods is a `;`-separated name list."""
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    if not rows or rows[0] != ["timestamp", "foods"]:
        raise ParseError("line 1: expected header 'timestamp,foods'")
    entries = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise ParseError(f"line {lineno}: expected 2 fields, got {len(row)}")
        try:
            ts = parse_instant(row[0])
        except (ValueError, ValidationError) as exc:
            raise ParseError(f"line {lineno}: {exc}") from exc
        names = tuple(n.strip() for n in row[1].split(";") if n.strip())
        if not names:
            raise ParseError(f"line {lineno}: empty food list")
        entries.append(FoodLogEntry(ts, names))
    return entries


def write_food_log(entries: list[FoodLogEntry]) -> bytes:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["timestamp", "foods"])
    for e in entries:
        writer.writerow([format_instant(e.timestamp), ";".join(e.food_names)])
    return out.getvalue().encode("utf-8")


# ---------------------------------------------------------------------------
# Alignment and noise filtering
# ---------------------------------------------------------------------------

EATING_LABEL = "eating"


def _interval_distance_s(ts: datetime, seg: ActivitySegment) -> float:
    """Seconds from a timestamp to a segment interval (0 when inside)."""
    if seg.start <= ts <= seg.end:
        return 0.0
    if ts < seg.start:
        return (seg.start - ts).total_seconds()
    return (ts - seg.end).total_seconds()


def align_foods_to_segments(
    segments: list[ActivitySegment],
    foods: list[FoodLogEntry],
    series: HeartRateSeries | None = None,
    window_min: float = 15.0,
) -> tuple[list[SampleSet], list[FoodLogEntry]]:
    """Build one SampleSet per eating segment with food logs attached.

    A food entry attaches to the eating segment containing its timestamp,
    else to the nearest eating segment within `window_min` minutes
    (equidistant ties go to the earlier segment). Entries with no candidate
    are returned in the unmatched list, never dropped silently. When a
    heart-rate series is given, each sample set gets the slice falling
    inside its segment.
    """
    eating = sorted(
        (s for s in segments if s.label.lower() == EATING_LABEL),
        key=lambda s: s.start,
    )
    for a, b in zip(eating, eating[1:]):
        if b.start < a.end:
            raise ValidationError(
                f"eating segments overlap at {format_instant(b.start)}"
            )
    matched: dict[int, list[FoodLogEntry]] = {i: [] for i in range(len(eating))}
    unmatched: list[FoodLogEntry] = []
    limit_s = window_min * 60.0
    for entry in foods:
        if not eating:
            unmatched.append(entry)
            continue
        dists = [_interval_distance_s(entry.timestamp, seg) for seg in eating]
        best = min(range(len(eating)), key=lambda i: (dists[i], i))
        if dists[best] <= limit_s:
            matched[best].append(entry)
        else:
            unmatched.append(entry)
    sets = []
    for i, seg in enumerate(eating):
        sl = (
            series.slice_window(seg.start, seg.end)
            if series is not None
            else HeartRateSeries.empty()
        )
        sets.append(
            SampleSet(
                id=segment_id(seg),
                series=sl,
                segment=seg,
                foods=tuple(sorted(matched[i], key=lambda e: e.timestamp)),
            )
        )
    return sets, unmatched


def filter_noise(
    sample_set: SampleSet,
    start_threshold_bpm: float = 100.0,
    coverage_min: float = 0.6,
) -> SampleSet:
    """Apply the episode noise filters, setting rejected_reason if any trips.

    Checks, in order: empty series; first sample above the start threshold
    (movement right before or into the meal); sample count below
    coverage_min times the nominal one-per-minute count for the segment.
    """
    series = sample_set.series
    if len(series) == 0:
        return replace(sample_set, rejected_reason=REJECT_EMPTY)
    if series.bpm[0] > start_threshold_bpm:
        return replace(sample_set, rejected_reason=REJECT_HIGH_START)
    expected = sample_set.segment.duration_min
    if len(series) < coverage_min * expected:
        return replace(sample_set, rejected_reason=REJECT_LOW_COVERAGE)
    return replace(sample_set, rejected_reason=None)


def apply_noise_filters(
    sample_sets: list[SampleSet],
    start_threshold_bpm: float = 100.0,
    coverage_min: float = 0.6,
) -> tuple[list[SampleSet], list[SampleSet]]:
    """Split sample sets into (accepted, rejected); together they partition
    the input."""
    accepted, rejected = [], []
    for ss in sample_sets:
        out = filter_noise(ss, start_threshold_bpm, coverage_min)
        (accepted if out.accepted else rejected).append(out)
    return accepted, rejected


def write_rejections(rejected: list[SampleSet]) -> bytes:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["sample_id", "reason"])
    for ss in rejected:
        writer.writerow([ss.id, ss.rejected_reason])
    return out.getvalue().encode("utf-8")


# ---------------------------------------------------------------------------
# Sample-set bundle (intermediate artifact between pipeline stages)
# ---------------------------------------------------------------------------

def write_sample_sets(sample_sets: list[SampleSet]) -> bytes:
    items = []
    for ss in sample_sets:
        seg = ss.segment
        item = {
            "id": ss.id,
            "segment": json.loads(write_activities([seg]).decode("utf-8"))[0],
            "foods": [
                {"timestamp": format_instant(e.timestamp), "foods": list(e.food_names)}
                for e in ss.foods
            ],
            "series": {
                "t": [int(t) for t in ss.series.t],
                "bpm": [float(b) for b in ss.series.bpm],
            },
            "rejected_reason": ss.rejected_reason,
        }
        items.append(item)
    doc = {"sample_sets": items}
    return (json.dumps(doc, indent=2, ensure_ascii=False) + "\n").encode("utf-8")


def parse_sample_sets(data: bytes | str) -> list[SampleSet]:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    doc = json.loads(text)
    sets = []
    for item in doc["sample_sets"]:
        seg = parse_activities(json.dumps([item["segment"]]))[0]
        foods = tuple(
            FoodLogEntry(parse_instant(f["timestamp"]), tuple(f["foods"]))
            for f in item["foods"]
        )
        series = HeartRateSeries(
            np.array(item["series"]["t"], dtype=np.int64),
            np.array(item["series"]["bpm"], dtype=float),
        )
        sets.append(
            SampleSet(
                id=item["id"],
                series=series,
                segment=seg,
                foods=foods,
                rejected_reason=item["rejected_reason"],
            )
        )
    return sets
