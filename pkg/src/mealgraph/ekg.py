"""Event knowledge graphs for enriched daily events.

An enriched event is the activity plus aspect statements in six categories:
temporal, spatial, experiential, structural, informational, causal. Each
aspect yields one (activity, predicate, value) triple. The causal category
is part of the schema but is never populated here, so it always counts as
missing. Absent aspects are recorded as missing rather than fabricated.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta

from .ingest import ActivitySegment, SampleSet, format_instant

CATEGORIES = (
    "temporal",
    "spatial",
    "experiential",
    "structural",
    "informational",
    "causal",
)

# Seed predicate vocabulary; free-text predicates are also accepted.
PREDICATES = ("at", "in-the", "after", "under", "has", "while")


def render_value(value) -> str:
    """Canonical text form of an aspect value, used as the triple object."""
    if isinstance(value, datetime):
        return format_instant(value)
    if isinstance(value, timedelta):
        minutes = value.total_seconds() / 60.0
        return f"{minutes:g}min"
    if isinstance(value, tuple) and len(value) == 2:
        return f"{value[0]:.5f},{value[1]:.5f}"
    if isinstance(value, float):
        return f"{value:g}"
    return str(value)


@dataclass(frozen=True)
class EventAspect:
    category: str
    predicate: str
    value: object

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown aspect category {self.category!r}")
        if not self.predicate:
            raise ValueError("aspect predicate must be non-empty")


@dataclass(frozen=True)
class EventTriple:
    subject: str
    predicate: str
    object: str

    def __str__(self) -> str:
        return f"<{self.subject}><{self.predicate}><{self.object}>"


@dataclass
class EventContext:
    """Optional enrichment inputs gathered from the surrounding lifelog."""

    sub_activities: list[ActivitySegment] = field(default_factory=list)
    stress_level: str | None = None
    calendar_note: str | None = None
    ambient_streams: list[str] = field(default_factory=list)


@dataclass
class EventRecord:
    id: str
    user: str
    activity: ActivitySegment
    aspects: list[EventAspect]
    triples: list[EventTriple]
    heaviness_level: int | None = None

    def present_categories(self) -> set[str]:
        return {a.category for a in self.aspects}

    def missing_categories(self) -> set[str]:
        return set(CATEGORIES) - self.present_categories()


def build_event(
    sample_set: SampleSet,
    heaviness_level: int | None = None,
    context: EventContext | None = None,
    user: str = "user",
) -> EventRecord:
    """Assemble an enriched event from one eating episode.

    Temporal aspects always exist (segment start/end/duration). Spatial
    aspects come from the venue or GPS when present, experiential from the
    heart-rate stream reference plus ambient streams and stress level,
    structural from overlapping sub-activities, and informational from the
    heaviness level, food names, and calendar notes. The causal category is
    never populated.
    """
    ctx = context or EventContext()
    seg = sample_set.segment
    subject = seg.label.capitalize()
    aspects: list[EventAspect] = [
        EventAspect("temporal", "starts", seg.start),
        EventAspect("temporal", "ends", seg.end),
        EventAspect("temporal", "lasts", seg.end - seg.start),
    ]
    if seg.venue_name:
        aspects.append(EventAspect("spatial", "at", seg.venue_name))
    if seg.venue_type:
        aspects.append(EventAspect("spatial", "in-a", seg.venue_type))
    if seg.gps is not None:
        aspects.append(EventAspect("spatial", "located", seg.gps))
    if len(sample_set.series) > 0:
        aspects.append(
            EventAspect("experiential", "recorded", f"heart-rate:{sample_set.id}")
        )
    for stream in ctx.ambient_streams:
        aspects.append(EventAspect("experiential", "recorded", stream))
    if ctx.stress_level:
        aspects.append(EventAspect("experiential", "under", ctx.stress_level))
    for sub in ctx.sub_activities:
        aspects.append(EventAspect("structural", "while", sub.label.capitalize()))
    if heaviness_level is not None:
        aspects.append(
            EventAspect("informational", "has", f"Level-{heaviness_level} food group")
        )
    seen: set[str] = set()
    for entry in sample_set.foods:
        for name in entry.food_names:
            if name not in seen:
                seen.add(name)
                aspects.append(EventAspect("informational", "has", name))
    if ctx.calendar_note:
        aspects.append(EventAspect("informational", "noted", ctx.calendar_note))
    triples = [
        EventTriple(subject, a.predicate, render_value(a.value)) for a in aspects
    ]
    return EventRecord(
        id=sample_set.id,
        user=user,
        activity=seg,
        aspects=aspects,
        triples=triples,
        heaviness_level=heaviness_level,
    )


def missing_aspect_ratio(events: list[EventRecord]) -> dict[str, dict[str, float]]:
    """Percent of each user's events lacking each aspect category, rounded
    to 2 decimals."""
    if not events:
        raise ValueError("missing-aspect ratio needs at least one event")
    by_user: dict[str, list[EventRecord]] = {}
    for ev in events:
        by_user.setdefault(ev.user, []).append(ev)
    table: dict[str, dict[str, float]] = {}
    for user, evs in sorted(by_user.items()):
        row = {}
        for cat in CATEGORIES:
            missing = sum(1 for ev in evs if cat in ev.missing_categories())
            row[cat] = round(100.0 * missing / len(evs), 2)
        table[user] = row
    return table


def write_aspect_report(table: dict[str, dict[str, float]]) -> bytes:
    lines = ["user," + ",".join(CATEGORIES)]
    for user, row in table.items():
        lines.append(user + "," + ",".join(f"{row[c]:.2f}" for c in CATEGORIES))
    return ("\n".join(lines) + "\n").encode("utf-8")


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

FORMAT_TRIPLES_JSON = "triples-json"
FORMAT_EDGE_LIST = "edge-list"


def events_to_rows(events: list[EventRecord]) -> list[dict[str, str]]:
    """Flatten events to triple rows, deterministically sorted by event id,
    category, predicate, then object."""
    rows = []
    for ev in events:
        for aspect, triple in zip(ev.aspects, ev.triples):
            rows.append(
                {
                    "event_id": ev.id,
                    "category": aspect.category,
                    "subject": triple.subject,
                    "predicate": triple.predicate,
                    "object": triple.object,
                }
            )
    rows.sort(
        key=lambda r: (r["event_id"], r["category"], r["predicate"], r["object"])
    )
    return rows


def _escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def _unescape(text: str) -> str:
    out = []
    it = iter(text)
    for ch in it:
        if ch != "\\":
            out.append(ch)
            continue
        nxt = next(it, "")
        out.append({"t": "\t", "n": "\n", "\\": "\\"}.get(nxt, nxt))
    return "".join(out)


_ROW_FIELDS = ("event_id", "category", "subject", "predicate", "object")


def serialize_graph(events_or_rows, fmt: str = FORMAT_TRIPLES_JSON) -> bytes:
    """Serialize events (or pre-flattened triple rows) to bytes.

    Output is deterministic and round-trips through parse_graph: parsing
    and re-serializing yields identical bytes.
    """
    if events_or_rows and isinstance(events_or_rows[0], EventRecord):
        rows = events_to_rows(events_or_rows)
    else:
        rows = sorted(
            events_or_rows,
            key=lambda r: (r["event_id"], r["category"], r["predicate"], r["object"]),
        )
    if fmt == FORMAT_TRIPLES_JSON:
        return (json.dumps(rows, indent=2, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")
    if fmt == FORMAT_EDGE_LIST:
        lines = ["\t".join(_escape(r[f]) for f in _ROW_FIELDS) for r in rows]
        return "".join(line + "\n" for line in lines).encode("utf-8")
    raise ValueError(f"unknown graph format {fmt!r}")


def parse_graph(data: bytes | str, fmt: str = FORMAT_TRIPLES_JSON) -> list[dict[str, str]]:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    if fmt == FORMAT_TRIPLES_JSON:
        return json.loads(text)
    if fmt == FORMAT_EDGE_LIST:
        rows = []
        for line in text.splitlines():
            parts = [_unescape(p) for p in line.split("\t")]
            if len(parts) != len(_ROW_FIELDS):
                raise ValueError(f"bad edge-list line: {line!r}")
            rows.append(dict(zip(_ROW_FIELDS, parts)))
        return rows
    raise ValueError(f"unknown graph format {fmt!r}")
