"""Flat key-value pipeline configuration (TOML file + flag overrides)."""
from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

try:  # stdlib from 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .graphcluster import MODE_LITERAL, MODE_NJW, ClusterConfig

OUT_DIR_ENV = "MEALGRAPH_OUT"


class ConfigError(ValueError):
    """Invalid or out-of-range configuration value."""


@dataclass(frozen=True)
class PipelineConfig:
    # inputs / outputs
    heart_rate: str = "heart_rate.csv"
    activities: str = "activities.json"
    food_log: str = "food_log.csv"
    out_dir: str = "out"
    # signal shaping
    median_window: int = 5
    prominence_bpm: float = 5.0
    # noise filters
    start_threshold_bpm: float = 100.0
    coverage_min: float = 0.6
    match_window_min: float = 15.0
    # graph + clustering
    knn_k: int = 0  # 0 -> auto
    weighted_graph: bool = False
    spectral_mode: str = MODE_NJW
    k_min: int = 2
    k_max: int = 10
    restarts: int = 10
    clusterer: str = "spectral"
    # feature selection
    subset_min: int = 2
    subset_max: int = 5
    # reproducibility / reporting
    seed: int = 0
    baselines: bool = False
    svg: bool = False

    def cluster_config(self) -> ClusterConfig:
        return ClusterConfig(
            knn_k=self.knn_k,
            weighted=self.weighted_graph,
            mode=self.spectral_mode,
            k_min=self.k_min,
            k_max=self.k_max,
            restarts=self.restarts,
        )

    def validate(self) -> "PipelineConfig":
        if self.median_window < 1 or self.median_window % 2 == 0:
            raise ConfigError(f"median_window must be odd and >= 1, got {self.median_window}")
        if self.prominence_bpm <= 0:
            raise ConfigError("prominence_bpm must be positive")
        if not 0.0 <= self.coverage_min <= 1.0:
            raise ConfigError("coverage_min must lie in [0, 1]")
        if self.match_window_min < 0:
            raise ConfigError("match_window_min must be non-negative")
        if self.knn_k < 0:
            raise ConfigError("knn_k must be 0 (auto) or positive")
        if self.spectral_mode not in (MODE_NJW, MODE_LITERAL):
            raise ConfigError(f"spectral_mode must be njw or literal, got {self.spectral_mode!r}")
        if not 2 <= self.k_min <= self.k_max:
            raise ConfigError("need 2 <= k_min <= k_max")
        if not 1 <= self.subset_min <= self.subset_max:
            raise ConfigError("need 1 <= subset_min <= subset_max")
        if self.restarts < 1:
            raise ConfigError("restarts must be >= 1")
        if self.clusterer not in ("spectral", "gn", "kmeans"):
            raise ConfigError(f"unknown clusterer {self.clusterer!r}")
        return self


_BOOL_FIELDS = {"weighted_graph", "baselines", "svg"}


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> PipelineConfig:
    """Build a validated config from an optional TOML file plus overrides.

    Precedence: defaults < file < MEALGRAPH_OUT env var < explicit overrides.
    """
    values: dict = {}
    known = {f.name: f.type for f in fields(PipelineConfig)}
    if path is not None:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
        for key, val in raw.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = val
    env_out = os.environ.get(OUT_DIR_ENV)
    if env_out:
        values["out_dir"] = env_out
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    cfg = PipelineConfig(**_coerce(values))
    return cfg.validate()


def _coerce(values: dict) -> dict:
    out = {}
    proto = PipelineConfig()
    for key, val in values.items():
        current = getattr(proto, key)
        if isinstance(current, bool) or key in _BOOL_FIELDS:
            out[key] = bool(val)
        elif isinstance(current, int):
            out[key] = int(val)
        elif isinstance(current, float):
            out[key] = float(val)
        else:
            out[key] = str(val)
    return out
