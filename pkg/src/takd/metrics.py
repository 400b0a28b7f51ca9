"""Evaluation suite: RMSE, MAE, Pearson r, regression calibration error,
Welch t-tests, and CSV export of metric rows and estimation curves.

Metrics are computed in the [0, 1] normalized space; pass a normalization
record to report in bodyweight units instead.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np
from scipy.stats import t as t_dist

METRIC_COLUMNS = ("method", "teacher", "preset", "strategy", "subject", "speed",
                  "seed", "rmse", "mae", "r", "ece_l", "ece_r", "ece_avg")


def regression_metrics(pred: np.ndarray, truth: np.ndarray) -> tuple[float, float, float]:
    """(rmse, mae, pearson r) over all elements; r is NaN for constant truth."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    err = pred - truth
    rmse = float(np.sqrt(np.mean(err * err)))
    mae = float(np.mean(np.abs(err)))
    p = pred.reshape(-1)
    g = truth.reshape(-1)
    sp, sg = p.std(), g.std()
    if sg == 0.0 or sp == 0.0:
        return rmse, mae, float("nan")
    r = float(np.mean((p - p.mean()) * (g - g.mean())) / (sp * sg))
    return rmse, mae, r


def ece_regression(pred: np.ndarray, truth: np.ndarray, bins: int = 15) -> np.ndarray:
    """Per-channel calibration error: bin samples by predicted value over [0, 1],
    sum (n_b/N) * |mean(pred_b) - mean(truth_b)|."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("empty input")
    if pred.ndim == 2:  # (channels, T) convenience
        pred, truth = pred[None], truth[None]
    n_channels = pred.shape[1]
    out = np.zeros(n_channels)
    for c in range(n_channels):
        p = pred[:, c].reshape(-1)
        g = truth[:, c].reshape(-1)
        ids = np.clip((p * bins).astype(int), 0, bins - 1)
        n = p.size
        ece = 0.0
        for b in range(bins):
            inside = ids == b
            n_b = int(inside.sum())
            if n_b == 0:
                continue
            ece += (n_b / n) * abs(p[inside].mean() - g[inside].mean())
        out[c] = ece
    return out


def welch_ttest(a, b) -> tuple[float, float]:
    """Two-sided Welch t-test with Welch-Satterthwaite degrees of freedom."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least two observations")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if va == 0.0 and vb == 0.0:
        raise ValueError("both samples are degenerate (zero variance)")
    se2 = va / a.size + vb / b.size
    t_stat = float((a.mean() - b.mean()) / math.sqrt(se2))
    dof = se2 ** 2 / ((va / a.size) ** 2 / (a.size - 1) + (vb / b.size) ** 2 / (b.size - 1))
    p = float(2.0 * t_dist.sf(abs(t_stat), dof))
    return t_stat, p


def bodyweight_percent(values01: np.ndarray, grf_min: float, grf_max: float) -> np.ndarray:
    """Invert the [0, 1] force normalization back to percent of bodyweight."""
    return (np.asarray(values01, dtype=np.float64) * (grf_max - grf_min) + grf_min) * 100.0


def metric_row(pred: np.ndarray, truth: np.ndarray, *, method: str, teacher: str = "",
               preset: str = "", strategy: str = "", subject: str = "", speed: str = "",
               seed: int = 0, bins: int = 15, norm=None) -> dict:
    """One metrics.csv row for a (pred, truth) pair of (N, 2, T) arrays.

    With a normalization record, rmse/mae are reported in percent-bodyweight
    units (r is affine-invariant); the calibration error bins over predicted
    value in [0, 1], so it always stays in the normalized space.
    """
    ece = ece_regression(np.clip(pred, 0.0, 1.0), np.clip(truth, 0.0, 1.0), bins=bins)
    if norm is not None:
        pred = bodyweight_percent(pred, norm.grf_min, norm.grf_max)
        truth = bodyweight_percent(truth, norm.grf_min, norm.grf_max)
    rmse, mae, r = regression_metrics(pred, truth)
    return {
        "method": method, "teacher": teacher, "preset": preset, "strategy": strategy,
        "subject": subject, "speed": speed, "seed": seed,
        "rmse": rmse, "mae": mae, "r": r,
        "ece_l": float(ece[0]), "ece_r": float(ece[1]),
        "ece_avg": float(ece.mean()),
    }


def aggregate_rows(rows: list, group_keys=("method",)) -> list:
    """Mean and std of rmse/mae/r per group of rows."""
    groups: dict = {}
    for row in rows:
        key = tuple(row[k] for k in group_keys)
        groups.setdefault(key, []).append(row)
    out = []
    for key, members in sorted(groups.items()):
        entry = dict(zip(group_keys, key))
        entry["n"] = len(members)
        for metric in ("rmse", "mae", "r"):
            vals = np.array([m[metric] for m in members], dtype=np.float64)
            vals = vals[np.isfinite(vals)]
            entry[f"{metric}_mean"] = float(vals.mean()) if vals.size else float("nan")
            entry[f"{metric}_std"] = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        out.append(entry)
    return out


def _fmt(value) -> str:
    if isinstance(value, float):
        return "" if math.isnan(value) else f"{value:.10g}"
    return str(value)


def export_report(rows: list, curves: dict, out_dir) -> Path:
    """Write metrics.csv plus per-sample curve files under curves/."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in METRIC_COLUMNS])
    if curves:
        curve_dir = out / "curves"
        curve_dir.mkdir(exist_ok=True)
        for name, (truth, pred) in curves.items():
            truth = np.asarray(truth)
            pred = np.asarray(pred)
            if truth.shape != pred.shape or truth.ndim != 2 or truth.shape[0] != 2:
                raise ValueError(f"curve {name!r} must pair (2, T) arrays")
            with open(curve_dir / f"{name}.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["time", "gt_left", "gt_right", "pred_left", "pred_right"])
                for i in range(truth.shape[1]):
                    writer.writerow([i, _fmt(float(truth[0, i])), _fmt(float(truth[1, i])),
                                     _fmt(float(pred[0, i])), _fmt(float(pred[1, i]))])
    return out


def load_metric_rows(path) -> list:
    """Parse a metrics.csv emitted by export_report."""
    rows = []
    with open(path, newline="") as fh:
        for raw in csv.DictReader(fh):
            row = dict(raw)
            for key in ("rmse", "mae", "r", "ece_l", "ece_r", "ece_avg"):
                row[key] = float(row[key]) if row[key] != "" else float("nan")
            row["seed"] = int(row["seed"])
            rows.append(row)
    return rows
