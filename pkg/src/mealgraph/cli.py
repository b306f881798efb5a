"""Command-line front door: pipeline stages, reports, synthetic corpora.

Commands communicate only through files in the output directory. Every run
writes a manifest (config, input and output content hashes) so identical
manifests imply byte-identical artifacts. All writes are atomic
(temp file then rename) and inputs are validated before anything is
written, so a failing command leaves no partial output.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import cycles, ekg, featsel, graphcluster, ingest, synth
from .config import OUT_DIR_ENV, PipelineConfig, load_config

COMMANDS = (
    "ingest",
    "features",
    "select",
    "sweep",
    "cluster",
    "baseline",
    "levels",
    "ekg",
    "report",
    "synth",
    "pipeline",
)


class MissingInputError(FileNotFoundError):
    pass


class EmptyInputError(ValueError):
    pass


def _require(paths: dict[str, Path]) -> None:
    for name, p in paths.items():
        if not Path(p).is_file():
            raise MissingInputError(f"{name} not found at {p}")


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def _emit(
    cfg: PipelineConfig,
    command: str,
    inputs: dict[str, Path],
    outputs: dict[str, bytes],
) -> None:
    out_dir = Path(cfg.out_dir)
    manifest = {
        "command": command,
        "config": asdict(cfg),
        "inputs": {name: _sha256(Path(p).read_bytes()) for name, p in inputs.items()},
        "outputs": {name: _sha256(data) for name, data in outputs.items()},
    }
    mbytes = (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8")
    for name, data in outputs.items():
        _atomic_write(out_dir / name, data)
    _atomic_write(out_dir / f"manifest-{command}.json", mbytes)


def _csv_bytes(header: list[str], rows: list[list]) -> bytes:
    import csv
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue().encode("utf-8")


def _read_csv(path: Path) -> list[list[str]]:
    import csv
    import io

    rows = list(csv.reader(io.StringIO(path.read_text(encoding="utf-8"))))
    return [r for r in rows if r]


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def cmd_ingest(cfg: PipelineConfig) -> None:
    inputs = {
        "heart_rate": Path(cfg.heart_rate),
        "activities": Path(cfg.activities),
        "food_log": Path(cfg.food_log),
    }
    _require(inputs)
    series = ingest.parse_heart_rate(inputs["heart_rate"].read_bytes())
    segments = ingest.parse_activities(inputs["activities"].read_bytes())
    foods = ingest.parse_food_log(inputs["food_log"].read_bytes())
    sets, unmatched = ingest.align_foods_to_segments(
        segments, foods, series=series, window_min=cfg.match_window_min
    )
    accepted, rejected = ingest.apply_noise_filters(
        sets, cfg.start_threshold_bpm, cfg.coverage_min
    )
    ordered = sorted(accepted + rejected, key=lambda s: s.id)
    outputs = {
        "samplesets.json": ingest.write_sample_sets(ordered),
        "rejections.csv": ingest.write_rejections(sorted(rejected, key=lambda s: s.id)),
        "unmatched.csv": ingest.write_food_log(unmatched),
    }
    _emit(cfg, "ingest", inputs, outputs)


def cmd_features(cfg: PipelineConfig) -> None:
    out_dir = Path(cfg.out_dir)
    inputs = {"samplesets": out_dir / "samplesets.json"}
    _require(inputs)
    sets = ingest.parse_sample_sets(inputs["samplesets"].read_bytes())
    ids, feats, unusable = [], [], []
    for ss in sets:
        if not ss.accepted:
            continue
        try:
            feats.append(
                cycles.features_for_sample_set(ss, cfg.median_window, cfg.prominence_bpm)
            )
            ids.append(ss.id)
        except cycles.NoCycleError:
            unusable.append([ss.id, "no_cycle"])
    fm = cycles.build_feature_matrix(ids, feats)
    outputs = {
        "features.csv": cycles.write_feature_matrix(fm),
        "unusable.csv": _csv_bytes(["sample_id", "reason"], unusable),
    }
    _emit(cfg, "features", inputs, outputs)


def cmd_select(cfg: PipelineConfig) -> None:
    out_dir = Path(cfg.out_dir)
    inputs = {"features": out_dir / "features.csv"}
    _require(inputs)
    fm = cycles.parse_feature_matrix(inputs["features"].read_bytes())
    scores = featsel.select_subset(
        fm,
        sizes=range(cfg.subset_min, cfg.subset_max + 1),
        cfg=cfg.cluster_config(),
        seed=cfg.seed,
    )
    _emit(cfg, "select", inputs, {"subset_scores.csv": featsel.write_subset_scores(scores)})


def _selected_features(out_dir: Path) -> list[str]:
    scores = featsel.parse_subset_scores((out_dir / "subset_scores.csv").read_bytes())
    if not scores:
        raise EmptyInputError("subset_scores.csv has no ranked subsets")
    return list(scores[0].features)


def _subset_points(cfg: PipelineConfig, out_dir: Path):
    """Z-scored feature subspace used by graph stages: (fm, subset, points)."""
    fm = cycles.parse_feature_matrix((out_dir / "features.csv").read_bytes())
    if fm.n == 0:
        raise EmptyInputError("features.csv has no episodes")
    subset = _selected_features(out_dir)
    pts = fm.zscored().select(subset).values
    return fm, subset, pts


def _knn_for(cfg: PipelineConfig, n: int) -> int:
    return cfg.knn_k if cfg.knn_k > 0 else graphcluster.default_knn_k(n)


def cmd_sweep(cfg: PipelineConfig) -> None:
    out_dir = Path(cfg.out_dir)
    inputs = {"features": out_dir / "features.csv", "subsets": out_dir / "subset_scores.csv"}
    _require(inputs)
    fm, _, pts = _subset_points(cfg, out_dir)
    graph = graphcluster.build_knn_graph(pts, _knn_for(cfg, fm.n), cfg.weighted_graph)
    sweep = graphcluster.sweep_k(
        graph,
        range(cfg.k_min, min(cfg.k_max, fm.n - 1) + 1),
        seed=cfg.seed,
        restarts=cfg.restarts,
        mode=cfg.spectral_mode,
    )
    rows = [[k, repr(q)] for k, q in sweep.rows]
    _emit(cfg, "sweep", inputs, {"sweep.csv": _csv_bytes(["K", "Q"], rows)})


def _sweep_k_opt(out_dir: Path) -> int:
    rows = _read_csv(out_dir / "sweep.csv")[1:]
    if not rows:
        raise EmptyInputError("sweep.csv has no rows")
    best_k, best_q = None, -math.inf
    for k_str, q_str in rows:
        k, q = int(k_str), float(q_str)
        if q > best_q:
            best_k, best_q = k, q
    return best_k


def _clusters_csv(ids: list[str], labels: np.ndarray, levels: dict[int, int]) -> bytes:
    rows = [[sid, int(lab), levels[int(lab)]] for sid, lab in zip(ids, labels)]
    return _csv_bytes(["sample_id", "label", "level"], rows)


def cmd_cluster(cfg: PipelineConfig) -> None:
    out_dir = Path(cfg.out_dir)
    inputs = {"features": out_dir / "features.csv", "subsets": out_dir / "subset_scores.csv"}
    if cfg.clusterer == "spectral":
        inputs["sweep"] = out_dir / "sweep.csv"
    _require(inputs)
    fm, _, pts = _subset_points(cfg, out_dir)
    graph = graphcluster.build_knn_graph(pts, _knn_for(cfg, fm.n), cfg.weighted_graph)
    if cfg.clusterer == "spectral":
        clustering = graphcluster.spectral_cluster(
            graph, _sweep_k_opt(out_dir), cfg.seed, cfg.restarts, cfg.spectral_mode
        )
    elif cfg.clusterer == "gn":
        clustering = graphcluster.girvan_newman(graph, q_max=True, seed=cfg.seed)
    else:
        clustering, _ = graphcluster.kmeans_elbow(
            pts, min(cfg.k_max, fm.n), cfg.seed, cfg.restarts, graph
        )
    levels = graphcluster.assign_heaviness_levels(clustering.labels, fm)
    _emit(cfg, "cluster", inputs, {
        "clusters.csv": _clusters_csv(fm.ids, clustering.labels, levels),
    })


def cmd_baseline(cfg: PipelineConfig) -> None:
    out_dir = Path(cfg.out_dir)
    inputs = {"features": out_dir / "features.csv", "subsets": out_dir / "subset_scores.csv"}
    _require(inputs)
    fm, _, pts = _subset_points(cfg, out_dir)
    graph = graphcluster.build_knn_graph(pts, _knn_for(cfg, fm.n), cfg.weighted_graph)
    gn = graphcluster.girvan_newman(graph, q_max=True, seed=cfg.seed)
    km, curve = graphcluster.kmeans_elbow(
        pts, min(cfg.k_max, fm.n), cfg.seed, cfg.restarts, graph
    )
    outputs = {
        "clusters_gn.csv": _clusters_csv(
            fm.ids, gn.labels, graphcluster.assign_heaviness_levels(gn.labels, fm)
        ),
        "clusters_kmeans.csv": _clusters_csv(
            fm.ids, km.labels, graphcluster.assign_heaviness_levels(km.labels, fm)
        ),
        "kmeans_distortions.csv": _csv_bytes(
            ["K", "distortion"], [[k + 1, repr(d)] for k, d in enumerate(curve)]
        ),
    }
    _emit(cfg, "baseline", inputs, outputs)


def _read_clusters(path: Path) -> tuple[list[str], dict[str, int], dict[str, int]]:
    rows = _read_csv(path)[1:]
    if not rows:
        raise EmptyInputError(f"{path.name} has no clustered episodes")
    ids = [r[0] for r in rows]
    labels = {r[0]: int(r[1]) for r in rows}
    levels = {r[0]: int(r[2]) for r in rows}
    return ids, labels, levels


def cmd_levels(cfg: PipelineConfig) -> None:
    out_dir = Path(cfg.out_dir)
    inputs = {"features": out_dir / "features.csv", "clusters": out_dir / "clusters.csv"}
    _require(inputs)
    fm = cycles.parse_feature_matrix(inputs["features"].read_bytes())
    ids, label_by_id, _ = _read_clusters(inputs["clusters"])
    labels = np.array([label_by_id[sid] for sid in fm.ids])
    levels = graphcluster.assign_heaviness_levels(labels, fm)
    rows = []
    for lab in sorted(levels, key=lambda c: levels[c]):
        members = labels == lab
        rows.append([
            levels[lab],
            int(lab),
            int(members.sum()),
            repr(float(np.nanmean(fm.column("cycle_mean")[members]))),
            repr(float(np.nanmean(fm.column("peak_bpm")[members]))),
        ])
    _emit(cfg, "levels", inputs, {
        "levels.csv": _csv_bytes(["level", "label", "n", "cycle_mean", "peak_bpm"], rows),
    })


def cmd_ekg(cfg: PipelineConfig) -> None:
    out_dir = Path(cfg.out_dir)
    inputs = {
        "samplesets": out_dir / "samplesets.json",
        "activities": Path(cfg.activities),
        "clusters": out_dir / "clusters.csv",
    }
    _require(inputs)
    sets = ingest.parse_sample_sets(inputs["samplesets"].read_bytes())
    segments = ingest.parse_activities(inputs["activities"].read_bytes())
    _, _, level_by_id = _read_clusters(inputs["clusters"])
    context_by_id: dict[str, dict] = {}
    if cfg.context:
        context_by_id = json.loads(Path(cfg.context).read_text(encoding="utf-8"))
    events = []
    for ss in sorted(sets, key=lambda s: s.id):
        subs = [
            seg
            for seg in segments
            if seg.label.lower() != ingest.EATING_LABEL
            and seg.start < ss.segment.end
            and seg.end > ss.segment.start
        ]
        raw = context_by_id.get(ss.id, {})
        ctx = ekg.EventContext(
            sub_activities=subs,
            stress_level=raw.get("stress_level"),
            calendar_note=raw.get("calendar_note"),
            ambient_streams=list(raw.get("ambient_streams", [])),
        )
        events.append(ekg.build_event(ss, level_by_id.get(ss.id), ctx))
    outputs = {
        "events.json": ekg.serialize_graph(events, ekg.FORMAT_TRIPLES_JSON),
        "aspect_report.csv": ekg.write_aspect_report(ekg.missing_aspect_ratio(events)),
    }
    _emit(cfg, "ekg", inputs, outputs)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def _heat_color(v: float) -> str:
    """Diverging blue-white-red map for z-scores clipped to [-3, 3]."""
    t = (max(-3.0, min(3.0, v)) + 3.0) / 6.0
    lo, mid, hi = (59, 76, 192), (255, 255, 255), (180, 4, 38)
    if t < 0.5:
        a, b, u = lo, mid, t / 0.5
    else:
        a, b, u = mid, hi, (t - 0.5) / 0.5
    rgb = tuple(round(a[i] + (b[i] - a[i]) * u) for i in range(3))
    return f"rgb({rgb[0]},{rgb[1]},{rgb[2]})"


def _heatmap_svg(row_names: list[str], col_names: list[str], Z: np.ndarray) -> bytes:
    cell, left, top = 14, 260, 110
    width = left + cell * len(col_names) + 20
    height = top + cell * len(row_names) + 20
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="monospace" font-size="10">'
    ]
    for j, name in enumerate(col_names):
        x = left + j * cell + cell // 2
        parts.append(
            f'<text x="{x}" y="{top - 6}" transform="rotate(-60 {x} {top - 6})">{name}</text>'
        )
    for i, name in enumerate(row_names):
        y = top + i * cell
        parts.append(f'<text x="4" y="{y + cell - 4}">{name[:38]}</text>')
        for j in range(len(col_names)):
            parts.append(
                f'<rect x="{left + j * cell}" y="{y}" width="{cell}" height="{cell}" '
                f'fill="{_heat_color(float(Z[i, j]))}" stroke="#ccc" stroke-width="0.5"/>'
            )
    parts.append("</svg>")
    return ("\n".join(parts) + "\n").encode("utf-8")


def cmd_report(cfg: PipelineConfig) -> None:
    out_dir = Path(cfg.out_dir)
    inputs = {
        "features": out_dir / "features.csv",
        "subsets": out_dir / "subset_scores.csv",
        "clusters": out_dir / "clusters.csv",
        "samplesets": out_dir / "samplesets.json",
    }
    _require(inputs)
    fm = cycles.parse_feature_matrix(inputs["features"].read_bytes())
    subset = _selected_features(out_dir)
    ids, label_by_id, level_by_id = _read_clusters(inputs["clusters"])
    sets = {ss.id: ss for ss in ingest.parse_sample_sets(inputs["samplesets"].read_bytes())}
    foods_by_id = {
        sid: ", ".join(
            name for entry in sets[sid].foods for name in entry.food_names
        ) if sid in sets else ""
        for sid in fm.ids
    }
    Zfm = fm.zscored().select(subset)
    labels = np.array([label_by_id[sid] for sid in fm.ids])
    order = sorted(range(fm.n), key=lambda i: (level_by_id[fm.ids[i]], fm.ids[i]))

    heat_rows = []
    for i in order:
        sid = fm.ids[i]
        heat_rows.append(
            [sid, foods_by_id[sid]]
            + [repr(float(v)) for v in Zfm.values[i]]
            + [int(labels[i])]
        )
    outputs = {
        "heatmap.csv": _csv_bytes(["sample_id", "foods"] + subset + ["cluster"], heat_rows),
        "level_table.csv": _level_table(Zfm.values, labels, level_by_id, fm.ids, foods_by_id),
    }
    if cfg.svg:
        row_names = [f"{fm.ids[i]} {foods_by_id[fm.ids[i]]}" for i in order]
        outputs["heatmap.svg"] = _heatmap_svg(
            row_names, subset, Zfm.values[order]
        )
    _emit(cfg, "report", inputs, outputs)


def _level_table(
    Z: np.ndarray,
    labels: np.ndarray,
    level_by_id: dict[str, int],
    ids: list[str],
    foods_by_id: dict[str, str],
    top: int = 5,
) -> bytes:
    """Representative foods per heaviness level, best silhouette first."""
    uniq = np.unique(labels)
    if len(uniq) >= 2:
        per_point, _ = featsel.silhouette(Z, labels)
    else:
        per_point = np.zeros(len(ids))
    level_of_label = {int(labels[i]): level_by_id[ids[i]] for i in range(len(ids))}
    by_level: dict[int, list[str]] = {}
    for lab in uniq:
        members = [i for i in range(len(ids)) if labels[i] == lab]
        members.sort(key=lambda i: (-per_point[i], ids[i]))
        by_level[level_of_label[int(lab)]] = [
            foods_by_id[ids[i]] for i in members[:top]
        ]
    levels_sorted = sorted(by_level)
    header = [f"Level {lv}" for lv in levels_sorted]
    rows = []
    for r in range(max(len(v) for v in by_level.values())):
        rows.append([
            by_level[lv][r] if r < len(by_level[lv]) else "" for lv in levels_sorted
        ])
    return _csv_bytes(header, rows)


# ---------------------------------------------------------------------------
# Synth + pipeline
# ---------------------------------------------------------------------------

def cmd_synth(cfg: PipelineConfig, args: argparse.Namespace) -> None:
    classes = synth.default_classes(args.noise_std)
    if args.classes != len(classes):
        heights = np.linspace(14.0, 14.0 + 15.0 * (args.classes - 1), args.classes)
        classes = [
            synth.FoodClassTemplate(
                f"class{i + 1}", 65.0 + 2 * i, float(h), 6 + i, 9 + i, 1 + i % 2,
                args.noise_std,
            )
            for i, h in enumerate(heights)
        ]
    bundle = synth.gen_lifelog(classes, args.per_class, args.noise_mix, cfg.seed)
    out_dir = Path(cfg.out_dir)
    bundle.write(out_dir)
    manifest_inputs: dict[str, Path] = {}
    outputs = {
        name: (out_dir / name).read_bytes()
        for name in ("heart_rate.csv", "activities.json", "food_log.csv", "truth.csv")
    }
    _emit(cfg, "synth", manifest_inputs, outputs)


PIPELINE_STAGES = ("ingest", "features", "select", "sweep", "cluster", "levels", "ekg", "report")


def cmd_pipeline(cfg: PipelineConfig) -> None:
    for stage in PIPELINE_STAGES:
        STAGES[stage](cfg)
        if stage == "cluster" and cfg.baselines:
            cmd_baseline(cfg)


STAGES = {
    "ingest": cmd_ingest,
    "features": cmd_features,
    "select": cmd_select,
    "sweep": cmd_sweep,
    "cluster": cmd_cluster,
    "baseline": cmd_baseline,
    "levels": cmd_levels,
    "ekg": cmd_ekg,
    "report": cmd_report,
    "pipeline": cmd_pipeline,
}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mealgraph",
        description="Eating-event enrichment: heart-rate cycle features, "
        "spectral self-labeling, event knowledge graphs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", help="flat TOML config file")
    common.add_argument("--out", "-o", dest="out_dir",
                        help=f"output directory (or ${OUT_DIR_ENV})")
    common.add_argument("--seed", type=int)
    common.add_argument("--heart-rate", dest="heart_rate")
    common.add_argument("--activities", dest="activities")
    common.add_argument("--food-log", dest="food_log")
    common.add_argument("--context", dest="context")
    common.add_argument("--median-window", type=int, dest="median_window")
    common.add_argument("--prominence", type=float, dest="prominence_bpm")
    common.add_argument("--start-threshold", type=float, dest="start_threshold_bpm")
    common.add_argument("--coverage-min", type=float, dest="coverage_min")
    common.add_argument("--match-window", type=float, dest="match_window_min")
    common.add_argument("--knn-k", type=int, dest="knn_k")
    common.add_argument("--weighted", action="store_const", const=True, dest="weighted_graph")
    common.add_argument("--mode", choices=["njw", "literal"], dest="spectral_mode")
    common.add_argument("--k-min", type=int, dest="k_min")
    common.add_argument("--k-max", type=int, dest="k_max")
    common.add_argument("--restarts", type=int)
    common.add_argument("--clusterer", choices=["spectral", "gn", "kmeans"])
    common.add_argument("--subset-min", type=int, dest="subset_min")
    common.add_argument("--subset-max", type=int, dest="subset_max")
    common.add_argument("--baselines", action="store_const", const=True)
    common.add_argument("--svg", action="store_const", const=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "synth":
            p.add_argument("--classes", type=int, default=3)
            p.add_argument("--per-class", type=int, default=20, dest="per_class")
            p.add_argument("--noise-std", type=float, default=0.0, dest="noise_std")
            p.add_argument("--noise-mix", type=float, default=0.0, dest="noise_mix")
    return parser


_OVERRIDE_KEYS = (
    "out_dir", "seed", "heart_rate", "activities", "food_log", "context",
    "median_window", "prominence_bpm", "start_threshold_bpm", "coverage_min",
    "match_window_min", "knn_k", "weighted_graph", "spectral_mode", "k_min",
    "k_max", "restarts", "clusterer", "subset_min", "subset_max", "baselines",
    "svg",
)


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        overrides = {k: getattr(args, k, None) for k in _OVERRIDE_KEYS}
        cfg = load_config(args.config, overrides)
        if args.command == "synth":
            cmd_synth(cfg, args)
        else:
            STAGES[args.command](cfg)
    except Exception as exc:  # single-line machine-parsable failure
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
