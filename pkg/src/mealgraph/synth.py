"""Synthetic lifelogs with planted food classes.

Heart-rate responses are triangular bumps (linear rise to baseline+height,
linear decay back) so that the structural features have closed-form values
for cross-checks: a noiseless template plants height and rise/decay widths
exactly (up to sample-grid quantization). Ground-truth class labels go to a
separate truth file that the pipeline never reads; it exists only for
evaluation.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .ingest import (
    ActivitySegment,
    FoodLogEntry,
    HeartRateSeries,
    segment_id,
    write_activities,
    write_food_log,
    write_heart_rate,
)

DEFECT_HIGH_START = "high_start"
DEFECT_EMPTY = "empty"
DEFECT_PARTIAL = "partial"
DEFECT_TYPES = (DEFECT_HIGH_START, DEFECT_EMPTY, DEFECT_PARTIAL)

PARTIAL_KEEP_FRACTION = 0.4  # below the default 0.6 coverage floor


@dataclass(frozen=True)
class FoodClassTemplate:
    """Parametric heart-rate response for one planted food class."""

    name: str
    baseline_bpm: float
    height_bpm: float
    rise_min: float
    decay_min: float
    n_cycles: int = 1
    noise_std_bpm: float = 0.0

    def __post_init__(self):
        if self.height_bpm <= 3.0 * self.noise_std_bpm:
            raise ValueError(
                f"{self.name}: height {self.height_bpm} must exceed "
                f"3x noise std {self.noise_std_bpm} for detectability"
            )
        if self.rise_min <= 0 or self.decay_min <= 0 or self.n_cycles < 1:
            raise ValueError(f"{self.name}: invalid bump geometry")


def gen_hr_response(
    template: FoodClassTemplate,
    duration_min: int,
    seed: int,
    start: datetime | None = None,
) -> HeartRateSeries:
    """One-sample-per-minute series of triangular response bumps plus
    Gaussian noise. Bump starts snap to the minute grid so integer-valued
    rise/decay widths land samples exactly on the apexes."""
    span = template.rise_min + template.decay_min
    if duration_min < template.n_cycles * span:
        raise ValueError(
            f"duration {duration_min}min cannot fit {template.n_cycles} "
            f"cycles of {span}min"
        )
    if start is None:
        start = datetime(2024, 1, 1, 12, 0, tzinfo=timezone.utc)
    rng = np.random.default_rng(seed)
    minutes = np.arange(duration_min, dtype=float)
    values = np.full(duration_min, template.baseline_bpm)
    gap = (duration_min - template.n_cycles * span) / (template.n_cycles + 1)
    for c in range(template.n_cycles):
        bump_start = float(int(gap * (c + 1) + span * c))
        apex = bump_start + template.rise_min
        bump_end = apex + template.decay_min
        up = (minutes >= bump_start) & (minutes <= apex)
        down = (minutes > apex) & (minutes <= bump_end)
        values[up] += template.height_bpm * (minutes[up] - bump_start) / template.rise_min
        values[down] += template.height_bpm * (bump_end - minutes[down]) / template.decay_min
    if template.noise_std_bpm > 0:
        values = values + rng.normal(0.0, template.noise_std_bpm, duration_min)
        values = np.clip(values, 25.0, 245.0)
    t0 = int(start.timestamp())
    t = t0 + (minutes * 60).astype(np.int64)
    return HeartRateSeries(t, values)


def default_classes(noise_std_bpm: float = 0.0) -> list[FoodClassTemplate]:
    """Three classes with well-separated response strengths."""
    return [
        FoodClassTemplate("smoothie", 65.0, 14.0, 6, 9, 1, noise_std_bpm),
        FoodClassTemplate("noodles", 68.0, 28.0, 8, 14, 2, noise_std_bpm),
        FoodClassTemplate("hotpot", 72.0, 44.0, 10, 18, 2, noise_std_bpm),
    ]


@dataclass
class LifelogBundle:
    """Everything gen_lifelog produced, in memory."""

    series: HeartRateSeries
    segments: list[ActivitySegment]
    foods: list[FoodLogEntry]
    truth: list[tuple[str, str, int]]  # (sample_id, class name, heaviness rank)
    defects: dict[str, str]  # sample_id -> defect type

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "heart_rate": out / "heart_rate.csv",
            "activities": out / "activities.json",
            "food_log": out / "food_log.csv",
            "truth": out / "truth.csv",
        }
        paths["heart_rate"].write_bytes(write_heart_rate(self.series))
        paths["activities"].write_bytes(write_activities(self.segments))
        paths["food_log"].write_bytes(write_food_log(self.foods))
        lines = ["sample_id,class,heaviness_rank"]
        lines += [f"{sid},{cls},{rank}" for sid, cls, rank in self.truth]
        paths["truth"].write_text("\n".join(lines) + "\n", encoding="utf-8")
        return paths


MEAL_HOURS = (8.0, 12.5, 19.0)
SEGMENT_MIN = 60


def gen_lifelog(
    classes: list[FoodClassTemplate],
    n_per_class: int,
    noise_mix: float = 0.0,
    seed: int = 0,
) -> LifelogBundle:
    """Generate a full synthetic lifelog with planted class labels.

    Emits one eating segment per meal slot (three per day), a food log
    entry inside each segment, filler non-eating activities, occasional
    overlapping sub-activities, and per-set defects (high start / empty /
    partial coverage) drawn at rate noise_mix.
    """
    if len(classes) < 2:
        raise ValueError("need at least 2 food classes")
    rng = np.random.default_rng(seed)
    base = datetime(2024, 1, 1, 0, 0, tzinfo=timezone.utc)
    by_height = sorted(classes, key=lambda c: c.height_bpm)
    rank = {c.name: i + 1 for i, c in enumerate(by_height)}

    assignment = [c for c in classes for _ in range(n_per_class)]
    rng.shuffle(assignment)

    venues = [
        ("Home", "home"),
        ("Osteria", "restaurant"),
        ("Cafe Luna", "cafe"),
        (None, None),
    ]
    all_t: list[np.ndarray] = []
    all_bpm: list[np.ndarray] = []
    segments: list[ActivitySegment] = []
    foods: list[FoodLogEntry] = []
    truth: list[tuple[str, str, int]] = []
    defects: dict[str, str] = {}

    for i, cls in enumerate(assignment):
        day, meal = divmod(i, len(MEAL_HOURS))
        start = base + timedelta(days=day, hours=MEAL_HOURS[meal])
        end = start + timedelta(minutes=SEGMENT_MIN)
        venue_name, venue_type = venues[int(rng.integers(len(venues)))]
        seg = ActivitySegment(start, end, "eating", venue_name, venue_type)
        sid = segment_id(seg)
        series = gen_hr_response(
            cls, SEGMENT_MIN, seed=int(rng.integers(2**31)), start=start
        )
        if noise_mix > 0 and rng.random() < noise_mix:
            defect = DEFECT_TYPES[int(rng.integers(len(DEFECT_TYPES)))]
            defects[sid] = defect
            if defect == DEFECT_HIGH_START:
                bpm = series.bpm.copy()
                bpm[0] = 120.0 + 30.0 * rng.random()
                series = HeartRateSeries(series.t, bpm)
            elif defect == DEFECT_EMPTY:
                series = HeartRateSeries.empty()
            else:
                keep = int(PARTIAL_KEEP_FRACTION * len(series))
                series = HeartRateSeries(series.t[:keep], series.bpm[:keep])
        if len(series):
            all_t.append(series.t)
            all_bpm.append(series.bpm)
        segments.append(seg)
        log_time = start + timedelta(minutes=float(rng.uniform(2, 10)))
        names = [f"{cls.name} {i:03d}"]
        if rng.random() < 0.3:
            names.append("water")
        foods.append(FoodLogEntry(log_time, tuple(names)))
        truth.append((sid, cls.name, rank[cls.name]))
        if rng.random() < 0.5:
            segments.append(
                ActivitySegment(
                    start + timedelta(minutes=10),
                    start + timedelta(minutes=30),
                    "talking",
                )
            )

    n_days = (len(assignment) + len(MEAL_HOURS) - 1) // len(MEAL_HOURS)
    for day in range(n_days):
        d = base + timedelta(days=day)
        segments.append(
            ActivitySegment(d + timedelta(hours=9.5), d + timedelta(hours=11.5), "working")
        )

    if all_t:
        t = np.concatenate(all_t)
        bpm = np.concatenate(all_bpm)
        order = np.argsort(t, kind="stable")
        series_all = HeartRateSeries(t[order], bpm[order])
    else:
        series_all = HeartRateSeries.empty()
    segments.sort(key=lambda s: (s.start, s.end, s.label))
    return LifelogBundle(series_all, segments, foods, truth, defects)
