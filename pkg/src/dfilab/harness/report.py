"""Long-format metric reports: CSV plus a JSON twin.

Each row is ``(experiment_id, method, seed, metric, value)``. Aggregates are
appended per (experiment_id, method, metric) with ``seed`` set to ``mean`` or
``std`` (sample standard deviation, ``nan`` for a single seed).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

HEADER = ("experiment_id", "method", "seed", "metric", "value")
AGGREGATE_SEEDS = ("mean", "std")


class ReportSchemaError(ValueError):
    pass


@dataclass(frozen=True)
class MetricRow:
    experiment_id: str
    method: str
    seed: int
    metric: str
    value: float

    def sort_key(self):
        return (self.experiment_id, self.method, self.seed, self.metric)


def _as_row(r) -> MetricRow:
    if isinstance(r, MetricRow):
        return r
    if isinstance(r, dict):
        if set(r) != set(HEADER):
            raise ReportSchemaError(f"row keys {sorted(r)} do not match {list(HEADER)}")
        return MetricRow(str(r["experiment_id"]), str(r["method"]), int(r["seed"]), str(r["metric"]), float(r["value"]))
    if isinstance(r, (tuple, list)):
        if len(r) != len(HEADER):
            raise ReportSchemaError(f"row has {len(r)} fields, expected {len(HEADER)}")
        return _as_row(dict(zip(HEADER, r)))
    raise ReportSchemaError(f"unsupported row type {type(r).__name__}")


def aggregate(rows) -> list[tuple[str, str, str, str, float]]:
    """Mean and sample std per (experiment_id, method, metric), in sorted key order."""
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        groups.setdefault((r.experiment_id, r.method, r.metric), []).append(r.value)
    out = []
    for (exp, method, metric), values in sorted(groups.items()):
        v = np.asarray(values, dtype=np.float64)
        std = float(np.std(v, ddof=1)) if len(v) > 1 else math.nan
        out.append((exp, method, "mean", metric, float(np.mean(v))))
        out.append((exp, method, "std", metric, std))
    return out


def _fmt(value: float) -> str:
    return repr(float(value))


def render_csv(rows, provenance: dict | None = None) -> str:
    rows = sorted((_as_row(r) for r in rows), key=MetricRow.sort_key)
    buf = io.StringIO()
    if provenance:
        for key in sorted(provenance):
            buf.write(f"# {key}={json.dumps(provenance[key], sort_keys=True, separators=(',', ':'))}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for r in rows:
        w.writerow((r.experiment_id, r.method, r.seed, r.metric, _fmt(r.value)))
    for exp, method, seed, metric, value in aggregate(rows):
        w.writerow((exp, method, seed, metric, _fmt(value)))
    return buf.getvalue()


def _json_value(v: float):
    return None if math.isnan(v) else v


def render_json(rows, provenance: dict | None = None, errors=None) -> str:
    rows = sorted((_as_row(r) for r in rows), key=MetricRow.sort_key)
    doc = {
        "provenance": provenance or {},
        "rows": [dict(zip(HEADER, (r.experiment_id, r.method, r.seed, r.metric, r.value))) for r in rows],
        "aggregates": [
            {"experiment_id": e, "method": m, "seed": s, "metric": k, "value": _json_value(v)}
            for e, m, s, k, v in aggregate(rows)
        ],
        "errors": list(errors or []),
    }
    return json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n"


def write_report(rows, path_stem, provenance: dict | None = None, errors=None) -> tuple[Path, Path]:
    """Write ``<stem>.csv`` and ``<stem>.json``; returns both paths."""
    rows = [_as_row(r) for r in rows]
    stem = Path(path_stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = stem.with_suffix(".csv"), stem.with_suffix(".json")
    csv_path.write_text(render_csv(rows, provenance))
    json_path.write_text(render_json(rows, provenance, errors))
    return csv_path, json_path


def parse_csv(text: str) -> tuple[list[MetricRow], list[tuple[str, str, str, str, float]]]:
    """Inverse of ``render_csv``: (per-seed rows, aggregate rows)."""
    lines = [line for line in text.splitlines() if not line.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader, None)
    if tuple(header or ()) != HEADER:
        raise ReportSchemaError(f"unexpected CSV header {header}")
    rows, aggs = [], []
    for rec in reader:
        if len(rec) != len(HEADER):
            raise ReportSchemaError(f"malformed CSV row {rec}")
        exp, method, seed, metric, value = rec
        if seed in AGGREGATE_SEEDS:
            aggs.append((exp, method, seed, metric, float(value)))
        else:
            rows.append(MetricRow(exp, method, int(seed), metric, float(value)))
    return rows, aggs


def read_report(path) -> tuple[list[MetricRow], list[tuple[str, str, str, str, float]]]:
    return parse_csv(Path(path).read_text())


@dataclass
class ExperimentReport:
    """Per-(method, seed) metric rows with per-method aggregates."""

    rows: list[MetricRow] = field(default_factory=list)
    errors: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self.rows = sorted((_as_row(r) for r in self.rows), key=MetricRow.sort_key)

    def runs(self) -> list[tuple[str, str, int]]:
        """Distinct (experiment_id, method, seed) triples."""
        return sorted({(r.experiment_id, r.method, r.seed) for r in self.rows})

    def groups(self) -> list[tuple[str, str]]:
        return sorted({(r.experiment_id, r.method) for r in self.rows})

    def aggregates(self) -> dict[tuple[str, str], dict[str, tuple[float, float]]]:
        """(experiment_id, method) -> metric -> (mean, std)."""
        out: dict = {}
        table = {(e, m, s, k): v for e, m, s, k, v in aggregate(self.rows)}
        for e, m, s, k in table:
            if s == "mean":
                out.setdefault((e, m), {})[k] = (table[(e, m, "mean", k)], table[(e, m, "std", k)])
        return out

    def value(self, method: str, seed: int, metric: str, experiment_id: str | None = None) -> float:
        for r in self.rows:
            if r.method == method and r.seed == seed and r.metric == metric:
                if experiment_id is None or r.experiment_id == experiment_id:
                    return r.value
        raise KeyError((experiment_id, method, seed, metric))

    def write(self, path_stem, provenance: dict | None = None) -> tuple[Path, Path]:
        return write_report(self.rows, path_stem, provenance, self.errors)
