"""Run artifacts: schema-checked JSON metrics, per-frame decision log and per-task curves."""

import csv
import json
import math
import os

import jsonschema

_num = {"type": "number"}
_rate = {"type": "number", "minimum": 0, "maximum": 1}
_opt_rate = {"type": ["number", "null"], "minimum": 0, "maximum": 1}
_count = {"type": "integer", "minimum": 0}

METRICS_SCHEMA = {
    "type": "object",
    "required": ["schema", "mode", "seed", "config", "query_predicate", "aggregate",
                 "per_task", "per_class_task", "updates", "bound_reports", "add_head_events"],
    "properties": {
        "schema": {"const": "streamal.metrics/1"},
        "mode": {"enum": ["full", "mean", "vanilla"]},
        "seed": {"type": "integer"},
        "config": {"type": "object"},
        "query_predicate": {"type": "string"},
        "aggregate": {
            "type": "object",
            "required": ["precision", "ece", "auc", "queries", "queries_to_target", "success_rate",
                         "add_heads", "train_seconds_max", "train_seconds_total", "wall_seconds"],
            "properties": {"precision": _opt_rate, "ece": _opt_rate, "auc": _opt_rate,
                           "queries": _count, "queries_to_target": {"type": ["number", "null"], "minimum": 0},
                           "success_rate": _rate, "add_heads": _count,
                           "train_seconds_max": _num, "train_seconds_total": _num, "wall_seconds": _num},
        },
        "per_task": {"type": "array", "items": {
            "type": "object",
            "required": ["task", "precision", "accuracy", "ece", "auc", "precision_before", "queries",
                         "queries_to_target", "success_rate", "train_seconds"],
            "properties": {"task": _count, "precision": _rate, "accuracy": _rate, "ece": _opt_rate,
                           "auc": _opt_rate, "precision_before": _rate, "queries": _count,
                           "queries_to_target": _count, "success_rate": _rate, "train_seconds": _num},
        }},
        "per_class_task": {"type": "array", "items": {
            "type": "object",
            "required": ["task", "class_id", "precision", "queries", "reached_confidence", "train_seconds"],
            "properties": {"task": _count, "class_id": _count, "precision": _rate, "queries": _count,
                           "reached_confidence": {"type": "boolean"}, "train_seconds": _num},
        }},
        "updates": {"type": "array", "items": {
            "type": "object", "required": ["task", "class_id", "n", "seconds", "bound"]}},
        "bound_reports": {"type": "array", "items": {
            "type": "object", "required": ["emp_risk", "kl", "bound", "tau", "alpha", "beta", "n"],
            "properties": {"emp_risk": _rate, "kl": {"type": "number", "minimum": 0}}}},
        "add_head_events": {"type": "array", "items": {
            "type": "object", "required": ["task", "class_id"]}},
    },
}

FRAME_COLUMNS = ["k", "class_id", "raw_p", "filtered_p", "norm_entropy", "queried",
                 "task_id", "true_class", "attempt", "unknown"]
CURVE_COLUMNS = ["task", "precision", "ece", "auc", "queries", "queries_to_target"]
TIMING_KEYS = ("seconds", "train_seconds", "train_seconds_max", "train_seconds_total", "wall_seconds")


def validate(metrics):
    """Raise ``jsonschema.ValidationError`` unless ``metrics`` follows the documented schema."""
    jsonschema.validate(metrics, METRICS_SCHEMA)


def _clean(value):
    # JSON has no NaN; frames of a classifier with no trained heads carry NaN
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


def strip_timing(obj):
    """Copy of a metrics object without wall-clock fields, for determinism checks."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k not in TIMING_KEYS}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


def write_report(metrics, out_dir):
    """Write ``metrics.json``, ``frames.csv`` and ``curves.csv``; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    body = _clean({k: v for k, v in metrics.items() if k != "frames"})
    validate(body)
    paths = {"metrics": os.path.join(out_dir, "metrics.json"),
             "frames": os.path.join(out_dir, "frames.csv"),
             "curves": os.path.join(out_dir, "curves.csv")}
    with open(paths["metrics"], "w", encoding="utf-8") as fh:
        json.dump(body, fh, indent=2, sort_keys=True)
    with open(paths["frames"], "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, FRAME_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in metrics.get("frames", []):
            writer.writerow({k: row[k] for k in FRAME_COLUMNS})
    with open(paths["curves"], "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, CURVE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in body["per_task"]:
            writer.writerow({k: row[k] for k in CURVE_COLUMNS})
    return paths


def load_report(path):
    with open(path, encoding="utf-8") as fh:
        body = json.load(fh)
    validate(body)
    return body


def comparison_table(runs):
    """Mean aggregate per mode over seeds; ``runs`` is a list of metrics objects."""
    modes = {}
    for run in runs:
        modes.setdefault(run["mode"], []).append(run["aggregate"])
    keys = ("precision", "ece", "auc", "queries", "queries_to_target", "success_rate", "train_seconds_max")
    table = {}
    for mode, aggs in modes.items():
        row = {"runs": len(aggs)}
        for key in keys:
            vals = [a[key] for a in aggs if a[key] is not None]
            row[key] = sum(vals) / len(vals) if vals else None
        table[mode] = row
    return table


def format_table(table):
    cols = ("precision", "ece", "auc", "queries", "queries_to_target", "success_rate")
    lines = ["mode     runs " + " ".join(f"{c:>17}" for c in cols)]
    for mode in ("vanilla", "mean", "full"):
        if mode in table:
            row = table[mode]
            cells = " ".join(f"{'-' if row[c] is None else format(row[c], '.4f'):>17}" for c in cols)
            lines.append(f"{mode:<8} {row['runs']:>4} {cells}")
    return "\n".join(lines)


__all__ = ["METRICS_SCHEMA", "validate", "write_report", "load_report", "strip_timing",
           "comparison_table", "format_table", "FRAME_COLUMNS", "CURVE_COLUMNS"]
