"""Heart-rate response cycles and their structural features.

A meal's heart-rate series is median-filtered, segmented into response
cycles (prominent local maxima bounded by the adjacent local minima), and
summarized by a fixed vector of structural descriptors of the main cycle
(the one with the largest peak) plus cross-cycle statistics. Time is
measured in minutes from the segment start, bpm stays in raw units; angles
mix the two on purpose, as slope-like shape descriptors.

Single-cycle episodes have no peak-to-peak gap statistics; those fields are
explicit missing values (None / NaN) and are imputed as 0 only after
column-wise z-scoring, i.e. mean imputation in standardized space.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import find_peaks

DEFAULT_MEDIAN_WINDOW = 5
DEFAULT_PROMINENCE_BPM = 5.0


class NoCycleError(ValueError):
    """The series contains no detectable response cycle; the episode is
    unusable for feature extraction and should be reported upstream."""


@dataclass(frozen=True)
class Cycle:
    """One response cycle: sample indices of its start, peak, and end.

    start_idx <= peak_idx <= end_idx; peak_bpm is the filtered value at
    peak_idx. Adjacent cycles may share a boundary sample (the valley
    between them belongs to both slopes).
    """

    start_idx: int
    peak_idx: int
    end_idx: int
    peak_bpm: float


FEATURE_NAMES = [
    "rise_slope",
    "fall_slope",
    "peak_bpm",
    "peak_mean",
    "peak_std",
    "height",
    "rise_width",
    "fall_width",
    "width",
    "cycle_mean",
    "cycle_std",
    "total_variation",
    "rise_angle",
    "fall_angle",
    "peak_gap_mean",
    "peak_gap_std",
]


@dataclass(frozen=True)
class CycleFeatures:
    """Structural features of the main cycle and the cycle family.

    Units: slopes in bpm/minute, widths and peak gaps in minutes, angles in
    radians, everything else in bpm. peak_gap_* are None for single-cycle
    episodes.
    """

    rise_slope: float
    fall_slope: float
    peak_bpm: float
    peak_mean: float
    peak_std: float
    height: float
    rise_width: float
    fall_width: float
    width: float
    cycle_mean: float
    cycle_std: float
    total_variation: float
    rise_angle: float
    fall_angle: float
    peak_gap_mean: float | None
    peak_gap_std: float | None

    def as_row(self) -> list[float]:
        vals = [getattr(self, name) for name in FEATURE_NAMES]
        return [math.nan if v is None else float(v) for v in vals]


def median_filter(values: np.ndarray, window: int = DEFAULT_MEDIAN_WINDOW) -> np.ndarray:
    """Sliding median with edge replication; output has the input's length."""
    if window < 1 or window % 2 == 0:
        raise ValueError(f"median window must be odd and >= 1, got {window}")
    x = np.asarray(values, dtype=float)
    if window == 1 or len(x) == 0:
        return x.copy()
    half = window // 2
    padded = np.pad(x, half, mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, window)
    return np.median(windows, axis=1)


def _minimum_regions(x: np.ndarray) -> list[tuple[int, int]]:
    """Maximal constant runs that are local minima (strictly below both
    neighbors, with series edges counting as open)."""
    n = len(x)
    regions = []
    i = 0
    while i < n:
        j = i
        while j + 1 < n and x[j + 1] == x[i]:
            j += 1
        left_ok = i == 0 or x[i - 1] > x[i]
        right_ok = j == n - 1 or x[j + 1] > x[j]
        if left_ok and right_ok:
            regions.append((i, j))
        i = j + 1
    return regions


def detect_cycles(
    filtered: np.ndarray, prominence_min: float = DEFAULT_PROMINENCE_BPM
) -> list[Cycle]:
    """Find response cycles in a median-filtered series.

    A cycle is a peak with prominence >= prominence_min whose boundaries are
    the nearest local minima on each side (series ends when there is none).
    Returns cycles in index order; series shorter than 3 samples yield none.
    """
    x = np.asarray(filtered, dtype=float)
    if len(x) < 3:
        return []
    peaks, _ = find_peaks(x, prominence=prominence_min)
    if len(peaks) == 0:
        return []
    regions = _minimum_regions(x)
    lefts = np.array([j for _, j in regions])   # plateau edge nearest a peak on its right
    rights = np.array([i for i, _ in regions])  # plateau edge nearest a peak on its left
    cycles = []
    for p in peaks:
        below = lefts[lefts < p]
        above = rights[rights > p]
        start = int(below[-1]) if len(below) else 0
        end = int(above[0]) if len(above) else len(x) - 1
        cycles.append(Cycle(start, int(p), end, float(x[p])))
    return cycles


def main_cycle(cycles: list[Cycle]) -> Cycle:
    """The cycle with the largest peak; ties go to the earliest peak."""
    if not cycles:
        raise NoCycleError("no response cycle detected")
    return max(cycles, key=lambda c: (c.peak_bpm, -c.peak_idx))


def _slope(t: np.ndarray, y: np.ndarray) -> float:
    """Least-squares slope of y against t; 0 when degenerate."""
    if len(t) < 2 or np.ptp(t) == 0:
        return 0.0
    tc = t - t.mean()
    return float(np.dot(tc, y - y.mean()) / np.dot(tc, tc))


def extract_features(
    minutes: np.ndarray, filtered: np.ndarray, cycles: list[Cycle]
) -> CycleFeatures:
    """Compute the structural feature vector.

    `minutes` is the time axis in minutes from segment start; `filtered` is
    the median-filtered bpm series the cycles were detected on. Standard
    deviations are population (ddof=0). Total variation is the sum of
    absolute consecutive differences over the whole series.
    """
    mc = main_cycle(cycles)
    t = np.asarray(minutes, dtype=float)
    x = np.asarray(filtered, dtype=float)

    up_t, up_x = t[mc.start_idx : mc.peak_idx + 1], x[mc.start_idx : mc.peak_idx + 1]
    down_t, down_x = t[mc.peak_idx : mc.end_idx + 1], x[mc.peak_idx : mc.end_idx + 1]
    height = float(x[mc.peak_idx] - x[mc.start_idx])
    drop = float(x[mc.peak_idx] - x[mc.end_idx])
    rise_width = float(t[mc.peak_idx] - t[mc.start_idx])
    fall_width = float(t[mc.end_idx] - t[mc.peak_idx])

    cyc_x = x[mc.start_idx : mc.end_idx + 1]
    peaks = np.array([c.peak_bpm for c in cycles])
    peak_times = np.array([t[c.peak_idx] for c in cycles])
    gaps = np.diff(peak_times)

    return CycleFeatures(
        rise_slope=_slope(up_t, up_x),
        fall_slope=_slope(down_t, down_x),
        peak_bpm=float(mc.peak_bpm),
        peak_mean=float(peaks.mean()),
        peak_std=float(peaks.std()),
        height=height,
        rise_width=rise_width,
        fall_width=fall_width,
        width=rise_width + fall_width,
        cycle_mean=float(cyc_x.mean()),
        cycle_std=float(cyc_x.std()),
        total_variation=float(np.abs(np.diff(x)).sum()) if len(x) > 1 else 0.0,
        rise_angle=math.atan2(height, rise_width),
        fall_angle=math.atan2(drop, fall_width),
        peak_gap_mean=float(gaps.mean()) if len(gaps) else None,
        peak_gap_std=float(gaps.std()) if len(gaps) else None,
    )


def features_for_sample_set(
    sample_set,
    median_window: int = DEFAULT_MEDIAN_WINDOW,
    prominence_min: float = DEFAULT_PROMINENCE_BPM,
) -> CycleFeatures:
    """Filter, segment, and featurize one accepted sample set.

    Raises NoCycleError when no cycle clears the prominence threshold; the
    caller reports the episode as unusable.
    """
    filtered = median_filter(sample_set.series.bpm, median_window)
    minutes = sample_set.series.minutes_from(sample_set.segment.start)
    cycles = detect_cycles(filtered, prominence_min)
    return extract_features(minutes, filtered, cycles)


# ---------------------------------------------------------------------------
# Feature matrix
# ---------------------------------------------------------------------------

@dataclass
class FeatureMatrix:
    """Episode-by-feature matrix; NaN marks missing values."""

    ids: list[str]
    names: list[str]
    values: np.ndarray  # (n_episodes, n_features)

    @property
    def n(self) -> int:
        return len(self.ids)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def select(self, names: list[str]) -> "FeatureMatrix":
        idx = [self.names.index(n) for n in names]
        return FeatureMatrix(list(self.ids), list(names), self.values[:, idx].copy())

    def zscored(self) -> "FeatureMatrix":
        """Column-wise z-scores over non-missing entries; missing entries
        become 0 afterwards (mean imputation in standardized space).
        Constant columns map to all zeros."""
        Z = np.zeros_like(self.values, dtype=float)
        for j in range(self.values.shape[1]):
            col = self.values[:, j]
            ok = ~np.isnan(col)
            if ok.sum() == 0:
                continue
            mu = col[ok].mean()
            sd = col[ok].std()
            if sd > 0:
                Z[ok, j] = (col[ok] - mu) / sd
        return FeatureMatrix(list(self.ids), list(self.names), Z)


def build_feature_matrix(ids: list[str], feats: list[CycleFeatures]) -> FeatureMatrix:
    values = np.array([f.as_row() for f in feats], dtype=float)
    if len(feats) == 0:
        values = values.reshape(0, len(FEATURE_NAMES))
    return FeatureMatrix(list(ids), list(FEATURE_NAMES), values)


def write_feature_matrix(fm: FeatureMatrix) -> bytes:
    """CSV export: sample_id column plus one column per feature; missing
    values serialize as empty fields."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["sample_id"] + fm.names)
    for i, sid in enumerate(fm.ids):
        row = [sid]
        for v in fm.values[i]:
            row.append("" if math.isnan(v) else repr(float(v)))
        writer.writerow(row)
    return out.getvalue().encode("utf-8")


def parse_feature_matrix(data: bytes | str) -> FeatureMatrix:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][:1] != ["sample_id"]:
        raise ValueError("expected feature CSV with a sample_id column")
    names = rows[0][1:]
    ids, vals = [], []
    for row in rows[1:]:
        if not row:
            continue
        ids.append(row[0])
        vals.append([math.nan if cell == "" else float(cell) for cell in row[1:]])
    values = np.array(vals, dtype=float) if vals else np.empty((0, len(names)))
    return FeatureMatrix(ids, names, values)
