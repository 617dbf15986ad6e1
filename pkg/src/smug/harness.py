"""Batch evaluation and hyperparameter sweeps over a directory of inputs.

``run_experiment`` writes three files to the output directory:

``records.csv``
    one row per (item, method) with columns ``REPORT_COLUMNS``.
``summary.csv``
    per method: item count, LSC quartiles, Win% and mean sparsity.
``summary.json``
    the same aggregates plus run settings and the metric conventions used.

Rows are sorted by item id and method order, so two runs over the same inputs
produce identical CSV files. Solver wall time is only written when
``record_timing`` is set because it differs between runs.
"""

from __future__ import annotations

import csv
import io
import json
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .attribution import default_output_index, first_layer_attribution, top_k_positive
from .encoding import build_partial_encoding
from .evaluation import (
    AREA_FLOOR,
    DEFAULT_THRESHOLDS,
    LscRecord,
    box_record,
    fixed_boxes,
    lsc_for_map,
    optbox,
    quartiles,
    sparsity,
    win_rate,
)
from .model_io import load_annotations, load_model, load_tensor
from .pipeline import ExplainConfig, explain, ig_input_map, solve_problem

METHODS = ("smug", "smug-base", "ig-input", "groundtruth", "centerbox", "maxbox", "optbox")
REPORT_COLUMNS = [
    "item_id", "method", "lsc", "a", "c", "threshold", "sparsity", "mask_bits", "solver_status", "solver_ms",
]
SWEEP_COLUMNS = ["item_id", "k", "gamma", "selected", "variables", "mask_bits", "solver_status", "nodes", "solver_ms"]
# OptBox games the metric, so it is reported but left out of Win%.
WIN_EXCLUDED = ("optbox",)

CONVENTIONS = {
    "log_base": "natural",
    "area_floor": AREA_FLOOR,
    "zero_confidence": "score +inf (loses every comparison)",
    "centerbox": "sides scaled by 1/sqrt(2), rounded half up, offset floor((size - side) / 2)",
    "threshold_sweep": "max_score * j / n for j = 1..n, mask = score >= threshold",
    "resize": "bilinear, half-pixel centers, edge clamped",
    "groundtruth": "first annotation row per item, no merging",
    "win_rate_excludes": list(WIN_EXCLUDED),
}


@dataclass
class ExperimentConfig:
    model_path: str
    inputs: list[str]
    out_dir: str
    annotation_path: str | None = None
    methods: tuple[str, ...] = METHODS
    k: int = 3000
    gamma: float = 0.0
    grid_size: int = 4
    ig_steps: int = 64
    budget_ms: float | None = None
    n_thresholds: int = DEFAULT_THRESHOLDS
    solver_cmd: str | None = None
    workers: int = 1
    record_timing: bool = False
    optbox_grid: int = 10

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.n_thresholds < 1:
            raise ValueError("threshold count must be >= 1")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; choose from {METHODS}")

    def explain_config(self) -> ExplainConfig:
        return ExplainConfig(self.k, self.gamma, self.grid_size, self.ig_steps, self.budget_ms, self.solver_cmd)


@dataclass
class Row:
    item_id: str
    method: str
    record: LscRecord | None = None
    sparsity: float | None = None
    mask_bits: int | None = None
    solver_status: str = ""
    solver_ms: float | None = None
    error: str = ""


@dataclass
class ItemResult:
    item_id: str
    rows: list[Row] = field(default_factory=list)
    failed: bool = False


def item_id_for(path) -> str:
    name = Path(path).name
    return name[: -len(".tnsr")] if name.endswith(".tnsr") else Path(path).stem


def _evaluate_item(cfg: ExperimentConfig, path: str, annotation) -> ItemResult:
    item = item_id_for(path)
    result = ItemResult(item)
    try:
        net = load_model(cfg.model_path)
        image = load_tensor(path).astype(np.float64)
    except Exception as exc:  # noqa: BLE001 - recorded per item
        result.failed = True
        result.rows = [Row(item, m, error=f"load: {exc}") for m in cfg.methods]
        return result
    label = annotation.label if annotation is not None else default_output_index(net, image)
    is_image = image.ndim == 3
    explanation = None
    boxes = None
    for method in cfg.methods:
        row = Row(item, method)
        try:
            if method in ("smug", "smug-base"):
                if explanation is None:
                    explanation = explain(net, image, label, cfg.explain_config())
                e = explanation
                if e.smug is None:
                    raise RuntimeError(e.status)
                smap = e.smug if method == "smug" else e.base
                if is_image:
                    row.record = lsc_for_map(net, image, label, smap.scores, cfg.n_thresholds, method)
                row.sparsity = sparsity(smap.scores)
                if method == "smug":
                    row.solver_status = e.status
                    row.mask_bits = e.solution.objective if e.solution.objective is not None else None
                    if cfg.record_timing:
                        row.solver_ms = e.solver_ms
                else:
                    row.mask_bits = e.problem.n_vars
            elif method == "ig-input":
                smap = ig_input_map(net, image, label, cfg.ig_steps)
                row.sparsity = sparsity(smap)
                if is_image:
                    row.record = lsc_for_map(net, image, label, smap, cfg.n_thresholds, method)
            elif not is_image:
                row.solver_status = "n/a: box methods need an (H, W, C) image"
            elif method == "groundtruth":
                if annotation is None or annotation.box is None:
                    raise RuntimeError("no annotation box for this item")
                row.record = box_record(net, image, label, annotation.box, method)
                row.sparsity = row.record.a
            elif method in ("centerbox", "maxbox"):
                if boxes is None:
                    boxes = fixed_boxes(net, image, label)
                row.record = boxes[method]
                row.sparsity = row.record.a
            elif method == "optbox":
                row.record = optbox(net, image, label, cfg.optbox_grid)
                row.sparsity = row.record.a
        except Exception as exc:  # noqa: BLE001 - per-item failures never abort the run
            row.error = f"{type(exc).__name__}: {exc}"
            result.failed = True
        result.rows.append(row)
    return result


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(v)


def _records_csv(results: list[ItemResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for res in results:
        for row in res.rows:
            rec = row.record
            status = row.solver_status
            if row.error:
                status = f"error: {row.error}"
            elif rec is not None and rec.flag:
                status = f"{status};{rec.flag}" if status else rec.flag
            w.writerow(
                [
                    row.item_id,
                    row.method,
                    _fmt(rec.score if rec else None),
                    _fmt(rec.a if rec else None),
                    _fmt(rec.c if rec else None),
                    _fmt(rec.threshold if rec else None),
                    _fmt(row.sparsity),
                    _fmt(row.mask_bits),
                    status,
                    _fmt(row.solver_ms),
                ]
            )
    return buf.getvalue()


def aggregate(results: list[ItemResult], methods) -> dict:
    scores: dict[str, dict[str, float]] = {}
    per_method: dict[str, list[Row]] = {m: [] for m in methods}
    sparsities: dict[str, list[float]] = {m: [] for m in methods}
    for res in results:
        for row in res.rows:
            if row.sparsity is not None:
                sparsities[row.method].append(row.sparsity)
            if row.record is None:
                continue
            per_method[row.method].append(row)
            if row.method not in WIN_EXCLUDED:
                scores.setdefault(res.item_id, {})[row.method] = row.record.score
    wins = win_rate(scores)
    summary = {}
    for m in methods:
        rows = per_method[m]
        finite = [r.record.score for r in rows if math.isfinite(r.record.score)]
        q25, med, q75 = quartiles(finite)
        sp = sparsities[m]
        summary[m] = {
            "items": len(rows),
            "infinite_scores": len(rows) - len(finite),
            "lsc_q25": q25,
            "lsc_median": med,
            "lsc_q75": q75,
            "win_pct": wins.get(m),
            "mean_sparsity": float(np.mean(sp)) if sp else None,
        }
    return summary


def _summary_csv(summary: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["items", "infinite_scores", "lsc_q25", "lsc_median", "lsc_q75", "win_pct", "mean_sparsity"]
    w.writerow(["method"] + cols)
    for m, agg in summary.items():
        w.writerow([m] + [_fmt(agg[c]) for c in cols])
    return buf.getvalue()


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def _run_items(cfg: ExperimentConfig, jobs):
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(_evaluate_item, *zip(*jobs)))
    return [_evaluate_item(*job) for job in jobs]


def run_experiment(cfg: ExperimentConfig) -> tuple[dict, bool]:
    """Evaluate every input; returns (summary, any per-item failure)."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    annotations = {}
    if cfg.annotation_path:
        for rec in load_annotations(cfg.annotation_path):
            annotations.setdefault(rec.item_id, rec)
    paths = sorted(cfg.inputs, key=item_id_for)
    jobs = [(cfg, str(p), annotations.get(item_id_for(p))) for p in paths]
    try:
        results = _run_items(cfg, jobs)
    except Exception:  # noqa: BLE001 - a crashed worker pool falls back to serial
        traceback.print_exc()
        results = [_evaluate_item(*job) for job in jobs]
    results.sort(key=lambda r: r.item_id)

    summary = aggregate(results, cfg.methods)
    (out / "records.csv").write_text(_records_csv(results), encoding="utf-8")
    (out / "summary.csv").write_text(_summary_csv(summary), encoding="utf-8")
    settings = {k: v for k, v in asdict(cfg).items() if k not in ("inputs", "out_dir", "workers")}
    doc = {
        "settings": settings,
        "conventions": CONVENTIONS,
        "items": [r.item_id for r in results],
        "failed_items": [r.item_id for r in results if r.failed],
        "methods": summary,
    }
    (out / "summary.json").write_text(
        json.dumps(_json_safe(doc), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return summary, any(r.failed for r in results)


def run_sweep(cfg: ExperimentConfig, ks, gammas) -> bool:
    """Minimal-mask size and solver effort over a k x gamma grid; writes sweep.csv."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    net = load_model(cfg.model_path)
    annotations = {}
    if cfg.annotation_path:
        for rec in load_annotations(cfg.annotation_path):
            annotations.setdefault(rec.item_id, rec)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    failed = False
    for path in sorted(cfg.inputs, key=item_id_for):
        item = item_id_for(path)
        try:
            x = load_tensor(path).astype(np.float64)
            ann = annotations.get(item)
            attr = first_layer_attribution(net, x, ann.label if ann else None, cfg.ig_steps)
        except Exception as exc:  # noqa: BLE001
            w.writerow([item, "", "", "", "", "", f"error: {exc}", "", ""])
            failed = True
            continue
        for k in ks:
            sel = top_k_positive(attr, k)
            for gamma in gammas:
                try:
                    problem = build_partial_encoding(net, x, sel, gamma, cfg.grid_size)
                    c = ExplainConfig(k, gamma, cfg.grid_size, cfg.ig_steps, cfg.budget_ms, cfg.solver_cmd)
                    sol = solve_problem(problem, c)
                    ms = sol.stats.get("wall_ms") if cfg.record_timing else None
                    w.writerow([item, k, _fmt(float(gamma)), len(sel), problem.n_vars,
                                _fmt(sol.objective), sol.status.value, _fmt(sol.stats.get("nodes")), _fmt(ms)])
                except Exception as exc:  # noqa: BLE001
                    w.writerow([item, k, _fmt(float(gamma)), len(sel), "", "", f"error: {exc}", "", ""])
                    failed = True
    (out / "sweep.csv").write_text(buf.getvalue(), encoding="utf-8")
    return failed
