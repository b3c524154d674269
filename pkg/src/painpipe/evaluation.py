"""Cross-validation protocol, metrics, and report/plot emitters.

MAE and MSE are computed on class indices (predicted vs true pain class);
accuracy is a percentage. The aggregate over folds is the unweighted mean
of the per-fold values; per-fold frame counts are kept in the report so a
frame-weighted pooling can be recomputed from the emitted file if wanted.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Protocol, Sequence
from xml.sax.saxutils import escape

import numpy as np

from painpipe.dataset import ClassWeightTable, DatasetIndex, Fold, FoldPlan

REPORT_FORMAT_VERSION = 1

_HEADLINE = ("mae", "mse", "accuracy")


class CrossValidationError(RuntimeError):
    """A fold failed; the whole report is aborted rather than left partial."""


@dataclass(frozen=True)
class MetricValues:
    mae: float
    mse: float
    accuracy: float

    def as_dict(self) -> dict[str, float]:
        return {"mae": self.mae, "mse": self.mse, "accuracy": self.accuracy}


@dataclass(frozen=True)
class FoldResult:
    fold_id: int
    mae: float
    mse: float
    accuracy: float
    n_test_frames: int
    test_subjects: tuple[str, ...] = ()
    per_class: Optional[dict[int, dict[str, float]]] = None


@dataclass(frozen=True)
class MetricsReport:
    model_name: str
    per_fold: tuple[FoldResult, ...]
    aggregate: MetricValues

    @staticmethod
    def from_folds(model_name: str, per_fold: Sequence[FoldResult]) -> "MetricsReport":
        if not per_fold:
            raise ValueError("a fold-based report needs at least one fold")
        agg = MetricValues(
            mae=float(np.mean([f.mae for f in per_fold])),
            mse=float(np.mean([f.mse for f in per_fold])),
            accuracy=float(np.mean([f.accuracy for f in per_fold])),
        )
        return MetricsReport(model_name=model_name, per_fold=tuple(per_fold), aggregate=agg)

    @staticmethod
    def from_aggregate(model_name: str, mae: float, mse: float, accuracy: float) -> "MetricsReport":
        """Report carrying only aggregate values (e.g. published numbers)."""
        return MetricsReport(
            model_name=model_name,
            per_fold=(),
            aggregate=MetricValues(mae=float(mae), mse=float(mse), accuracy=float(accuracy)),
        )

    def to_dict(self) -> dict:
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "model": self.model_name,
            "per_fold": [
                {
                    "fold_id": f.fold_id,
                    "mae": f.mae,
                    "mse": f.mse,
                    "accuracy": f.accuracy,
                    "n_test_frames": f.n_test_frames,
                    "test_subjects": list(f.test_subjects),
                    "per_class": {str(c): v for c, v in f.per_class.items()} if f.per_class else None,
                }
                for f in self.per_fold
            ],
            "aggregate": self.aggregate.as_dict(),
        }

    @staticmethod
    def from_dict(payload: dict) -> "MetricsReport":
        folds = tuple(
            FoldResult(
                fold_id=int(f["fold_id"]),
                mae=float(f["mae"]),
                mse=float(f["mse"]),
                accuracy=float(f["accuracy"]),
                n_test_frames=int(f["n_test_frames"]),
                test_subjects=tuple(f.get("test_subjects", ())),
                per_class={int(c): v for c, v in f["per_class"].items()} if f.get("per_class") else None,
            )
            for f in payload["per_fold"]
        )
        agg = payload["aggregate"]
        return MetricsReport(
            model_name=payload["model"],
            per_fold=folds,
            aggregate=MetricValues(mae=float(agg["mae"]), mse=float(agg["mse"]), accuracy=float(agg["accuracy"])),
        )


def compute_metrics(
    predictions: Sequence[int] | np.ndarray,
    targets: Sequence[int] | np.ndarray,
    class_weights: Optional[ClassWeightTable] = None,
) -> MetricValues:
    """MAE, MSE, and accuracy (percent) over paired class indices.

    With a weight table, every sample's contribution is scaled by the
    weight of its true class and the totals divided by the sum of applied
    weights.
    """
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"predictions and targets differ in shape: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValueError("cannot compute metrics over zero samples")
    err = np.abs(p - t)
    hit = (p == t).astype(np.float64)
    if class_weights is None:
        return MetricValues(mae=float(err.mean()), mse=float((err**2).mean()), accuracy=float(100.0 * hit.mean()))
    table = class_weights.as_array()
    sample_w = table[t.astype(np.int64)]
    denom = sample_w.sum()
    if denom <= 0:
        raise ValueError("weighted metrics need a positive total weight over the targets")
    return MetricValues(
        mae=float((sample_w * err).sum() / denom),
        mse=float((sample_w * err**2).sum() / denom),
        accuracy=float(100.0 * (sample_w * hit).sum() / denom),
    )


def per_class_prf(predictions: np.ndarray, targets: np.ndarray, n_classes: int) -> dict[int, dict[str, float]]:
    """Per-class precision/recall/F1; side outputs for the JSON report."""
    out: dict[int, dict[str, float]] = {}
    p = np.asarray(predictions)
    t = np.asarray(targets)
    for c in range(n_classes):
        tp = int(np.sum((p == c) & (t == c)))
        fp = int(np.sum((p == c) & (t != c)))
        fn = int(np.sum((p != c) & (t == c)))
        support = tp + fn
        if support == 0 and fp == 0:
            continue
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / support if support else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        out[c] = {"precision": precision, "recall": recall, "f1": f1, "support": float(support)}
    return out


class Predictor(Protocol):
    """Anything that maps dataset records to predicted class indices."""

    def predict_classes(self, index: DatasetIndex) -> np.ndarray: ...


def _default_trainer(data, fold, spec, config, fold_id, preprocess_config=None, log_fn=None) -> Predictor:
    from painpipe.training import NetworkPredictor, train_fold

    checkpoint = train_fold(
        data,
        fold,
        spec,
        config,
        preprocess_config=preprocess_config,
        fold_id=fold_id,
        log_fn=log_fn,
    )
    return NetworkPredictor(checkpoint, preprocess_config=preprocess_config)


def derive_seed(base: int, *parts) -> int:
    """Stable per-fold (or per-stage) seed derivation from a base seed."""
    import hashlib

    text = ":".join(str(p) for p in (base, *parts))
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], "little")


def run_cross_validation(
    data: DatasetIndex,
    plan: FoldPlan,
    spec,
    config,
    preprocess_config=None,
    trainer=None,
    log_fn=None,
) -> MetricsReport:
    """Train and test every fold of the plan and aggregate the metrics.

    Per-fold seeds are derived from config.seed and the fold id, so one
    top-level seed reproduces the whole run. Any fold failure aborts the
    report; a partial aggregate would be misleading.
    """
    plan_subjects = frozenset().union(*(f.test for f in plan.folds))
    if plan_subjects != data.subjects:
        missing = sorted(data.subjects - plan_subjects)
        extra = sorted(plan_subjects - data.subjects)
        raise ValueError(f"fold plan does not cover the dataset subjects (missing {missing}, extra {extra})")

    results = []
    for fold_id, fold in enumerate(plan.folds):
        fold_config = replace(config, seed=derive_seed(config.seed, "fold", fold_id))
        try:
            if trainer is None:
                predictor = _default_trainer(
                    data, fold, spec, fold_config, fold_id, preprocess_config=preprocess_config, log_fn=log_fn
                )
            else:
                predictor = trainer(data, fold, spec, fold_config, fold_id)
            test_index = data.subset(fold.test)
            predictions = np.asarray(predictor.predict_classes(test_index), dtype=np.int64)
            targets = test_index.labels()
            metrics = compute_metrics(predictions, targets)
        except Exception as exc:
            raise CrossValidationError(f"fold {fold_id} failed: {exc}") from exc
        results.append(
            FoldResult(
                fold_id=fold_id,
                mae=metrics.mae,
                mse=metrics.mse,
                accuracy=metrics.accuracy,
                n_test_frames=len(test_index),
                test_subjects=tuple(sorted(fold.test)),
                per_class=per_class_prf(predictions, targets, data.n_classes),
            )
        )
    return MetricsReport.from_folds(model_name=spec.name, per_fold=results)


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except Exception:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit_report(report: MetricsReport, format: str, path: Path | str) -> Path:
    """Write the report as JSON (lossless round-trip) or CSV.

    The CSV carries one row per fold plus an AGGREGATE row whose values
    are the column means of the fold rows.
    """
    path = Path(path)
    if format == "json":
        _atomic_write_text(path, json.dumps(report.to_dict(), indent=2) + "\n")
    elif format == "csv":
        rows = [["model", "fold", "mae", "mse", "accuracy"]]
        for f in report.per_fold:
            rows.append([report.model_name, str(f.fold_id), repr(f.mae), repr(f.mse), repr(f.accuracy)])
        agg = report.aggregate
        rows.append([report.model_name, "AGGREGATE", repr(agg.mae), repr(agg.mse), repr(agg.accuracy)])
        import io

        buffer = io.StringIO()
        csv.writer(buffer).writerows(rows)
        _atomic_write_text(path, buffer.getvalue())
    else:
        raise ValueError(f"unknown report format {format!r}; expected 'json' or 'csv'")
    return path


def load_report(path: Path | str) -> MetricsReport:
    return MetricsReport.from_dict(json.loads(Path(path).read_text()))


_BAR_COLORS = ("#4C72B0", "#DD8452", "#55A868", "#C44E52", "#8172B3", "#937860")


def emit_comparison_plot(reports: Sequence[MetricsReport], path: Path | str) -> Path:
    """Grouped bar chart (one group per metric, one bar per model) as SVG.

    Bars are labeled with their aggregate values to 4 decimals; the labels
    are plain SVG text nodes so downstream tooling can read them back.
    """
    if not reports:
        raise ValueError("need at least one report to plot")
    path = Path(path)
    models = [r.model_name for r in reports]
    groups = [("MAE", "mae"), ("MSE", "mse"), ("Accuracy", "accuracy")]
    values = {key: [getattr(r.aggregate, key) for r in reports] for _, key in groups}
    v_max = max(max(vs) for vs in values.values())
    v_max = v_max if v_max > 0 else 1.0

    bar_w = 64
    bar_gap = 10
    group_gap = 56
    margin_left = 64
    margin_right = 24
    margin_top = 56
    margin_bottom = 72
    plot_h = 300
    group_w = len(models) * (bar_w + bar_gap) - bar_gap
    width = margin_left + len(groups) * group_w + (len(groups) - 1) * group_gap + margin_right
    height = margin_top + plot_h + margin_bottom
    baseline = margin_top + plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text class="title" x="{width / 2:.1f}" y="24" text-anchor="middle" font-size="16">'
        "Cross-validation comparison</text>",
        f'<line x1="{margin_left - 8}" y1="{baseline}" x2="{width - margin_right}" y2="{baseline}" '
        'stroke="#444" stroke-width="1"/>',
    ]
    for g, (label, key) in enumerate(groups):
        gx = margin_left + g * (group_w + group_gap)
        parts.append(f'<g class="group" data-metric="{label}">')
        for i, model in enumerate(models):
            value = values[key][i]
            bar_h = plot_h * value / (1.12 * v_max)
            x = gx + i * (bar_w + bar_gap)
            y = baseline - bar_h
            color = _BAR_COLORS[i % len(_BAR_COLORS)]
            parts.append(
                f'<rect class="bar" data-model="{escape(model)}" x="{x:.1f}" y="{y:.1f}" '
                f'width="{bar_w}" height="{bar_h:.1f}" fill="{color}"/>'
            )
            parts.append(
                f'<text class="bar-label" x="{x + bar_w / 2:.1f}" y="{y - 5:.1f}" '
                f'text-anchor="middle" font-size="11">{value:.4f}</text>'
            )
        parts.append("</g>")
        parts.append(
            f'<text class="group-label" x="{gx + group_w / 2:.1f}" y="{baseline + 22}" '
            f'text-anchor="middle" font-size="13">{label}</text>'
        )
    legend_y = baseline + 46
    legend_x = margin_left
    for i, model in enumerate(models):
        color = _BAR_COLORS[i % len(_BAR_COLORS)]
        parts.append(f'<rect x="{legend_x}" y="{legend_y - 10}" width="12" height="12" fill="{color}"/>')
        parts.append(
            f'<text class="legend-label" x="{legend_x + 18}" y="{legend_y}" font-size="12">{escape(model)}</text>'
        )
        legend_x += 18 + 9 * max(6, len(model)) + 24
    parts.append("</svg>")
    _atomic_write_text(path, "\n".join(parts) + "\n")
    return path
