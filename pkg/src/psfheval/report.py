"""Tables, delimited/JSON output, and report assembly.

All floating output is fixed at 6 decimals (4 for angles and tau values) and
unbounded values serialize as the literal string "inf". Writers embed no
timestamps, so regenerating a report from identical inputs is byte-stable.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import figures
from .cohorts import GroupComparison, mann_whitney_u, stratify
from .ingest import CaseMeta, StructureSelector
from .metrics import MetricRecord
from .ranking import (
    MetricTable,
    StabilityReport,
    compute_ranking,
    holm_adjust,
    overall_rank,
    rank_values,
    significance_map,
)

INF = float("inf")


@dataclass(frozen=True)
class BoxStats:
    """Five-number box summary; whisker ends are attained data points within fences."""

    min: float
    q1: float
    median: float
    q3: float
    max: float
    outliers: tuple[float, ...]
    n_unbounded: int = 0


@dataclass(frozen=True)
class BiometryRow:
    """One case/team AoP comparison; status is "ok" or the undefined reason."""

    case_id: str
    team: str
    aop_gt: float | None
    aop_pred: float | None
    delta_aop: float | None
    status: str


def box_stats(values) -> BoxStats:
    """Quartiles by linear interpolation, 1.5 IQR whiskers, outliers beyond.

    Unbounded values are counted separately; at least one finite value is
    required.
    """
    vals = np.asarray(values, dtype=float)
    if vals.size == 0:
        raise ValueError("box statistics of an empty sample")
    finite = vals[np.isfinite(vals)]
    n_unbounded = int(vals.size - finite.size)
    if finite.size == 0:
        raise ValueError("box statistics need at least one finite value")
    q1, med, q3 = (float(q) for q in np.percentile(finite, [25.0, 50.0, 75.0]))
    iqr = q3 - q1
    lo_fence = q1 - 1.5 * iqr
    hi_fence = q3 + 1.5 * iqr
    inside = finite[(finite >= lo_fence) & (finite <= hi_fence)]
    outliers = np.sort(finite[(finite < lo_fence) | (finite > hi_fence)])
    return BoxStats(
        min=float(inside.min()),
        q1=q1,
        median=med,
        q3=q3,
        max=float(inside.max()),
        outliers=tuple(float(v) for v in outliers),
        n_unbounded=n_unbounded,
    )


# --- value formatting -----------------------------------------------------

def fmt_value(x, decimals: int = 6) -> str:
    """Fixed-decimal text for CSV cells; infinities become the literal "inf"."""
    if x is None:
        return ""
    x = float(x)
    if math.isinf(x):
        return "inf"
    return f"{x:.{decimals}f}"


def json_value(x, decimals: int = 6):
    """JSON-safe number rounded to `decimals`; infinities become "inf"."""
    x = float(x)
    if math.isinf(x):
        return "inf"
    return round(x, decimals)


def _box_dict(b: BoxStats) -> dict:
    return {
        "min": json_value(b.min),
        "q1": json_value(b.q1),
        "median": json_value(b.median),
        "q3": json_value(b.q3),
        "max": json_value(b.max),
        "outliers": [json_value(v) for v in b.outliers],
        "n_unbounded": b.n_unbounded,
    }


def write_json(payload: dict, path) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --- per-case metric table -------------------------------------------------

_PER_CASE_COLUMNS = (
    "case_id", "team", "structure", "dsc", "hd", "asd",
    "split", "institution", "scanner", "aop_stratum",
)


def write_per_case_csv(records, path) -> None:
    """Per-case CSV sorted by (case_id, team, structure)."""
    recs = sorted(records, key=lambda r: (r.case_id, r.team, r.structure.value))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_PER_CASE_COLUMNS)
        for r in recs:
            writer.writerow([
                r.case_id,
                r.team,
                r.structure.value,
                fmt_value(r.dsc),
                fmt_value(r.hd),
                fmt_value(r.asd),
                r.meta.split,
                r.meta.institution,
                r.meta.scanner,
                r.meta.aop_stratum or "unknown",
            ])


def read_per_case_csv(path) -> list[MetricRecord]:
    """Inverse of write_per_case_csv (spacing is already folded into the values)."""
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != _PER_CASE_COLUMNS:
            raise ValueError(f"unexpected per-case CSV header in {path}")
        for row in reader:
            stratum = row["aop_stratum"]
            meta = CaseMeta(
                case_id=row["case_id"],
                split=row["split"],
                institution=row["institution"],
                scanner=row["scanner"],
                aop_stratum=None if stratum == "unknown" else stratum,
            )
            records.append(
                MetricRecord(
                    case_id=row["case_id"],
                    team=row["team"],
                    structure=StructureSelector(row["structure"]),
                    dsc=float(row["dsc"]),
                    hd=float(row["hd"]),
                    asd=float(row["asd"]),
                    meta=meta,
                )
            )
    return records


def write_biometry_csv(rows, path) -> None:
    """AoP comparison CSV, degrees at 4 decimals, sorted by (case_id, team)."""
    ordered = sorted(rows, key=lambda r: (r.case_id, r.team))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["case_id", "team", "aop_gt", "aop_pred", "delta_aop", "status"])
        for r in ordered:
            writer.writerow([
                r.case_id,
                r.team,
                fmt_value(r.aop_gt, 4),
                fmt_value(r.aop_pred, 4),
                fmt_value(r.delta_aop, 4),
                r.status,
            ])


def read_biometry_csv(path) -> list[BiometryRow]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.append(
                BiometryRow(
                    case_id=row["case_id"],
                    team=row["team"],
                    aop_gt=float(row["aop_gt"]) if row["aop_gt"] else None,
                    aop_pred=float(row["aop_pred"]) if row["aop_pred"] else None,
                    delta_aop=float(row["delta_aop"]) if row["delta_aop"] else None,
                    status=row["status"],
                )
            )
    return rows


# --- leaderboard and stability payloads -------------------------------------

def _scheme_aggregates(table: MetricTable, task_index: int, scheme: str, alpha: float) -> np.ndarray:
    col = table.values[:, :, task_index]
    task = table.tasks[task_index]
    if scheme == "MeanThenRank":
        return col.mean(axis=0)
    if scheme == "MedianThenRank":
        return np.median(col, axis=0)
    if scheme in ("RankThenMean", "RankThenMedian"):
        per_case = np.vstack([rank_values(col[ci], task.higher_is_better) for ci in range(col.shape[0])])
        return per_case.mean(axis=0) if scheme == "RankThenMean" else np.median(per_case, axis=0)
    sig = significance_map(table, task, alpha)
    return sig.sum(axis=1).astype(float)


def leaderboard_payload(table: MetricTable, scheme: str, alpha: float = 0.05) -> dict:
    """Per-task rankings under `scheme` plus the overall RankThenMean ranking."""
    tasks_payload = {}
    for ti, task in enumerate(table.tasks):
        ranks = compute_ranking(table, task, scheme, alpha=alpha)
        aggregates = _scheme_aggregates(table, ti, scheme, alpha)
        order = [table.teams[i] for i in np.lexsort((np.array(table.teams, dtype=object), ranks))]
        tasks_payload[task.id] = {
            "ranks": {team: json_value(r) for team, r in zip(table.teams, ranks)},
            "aggregate": {team: json_value(v) for team, v in zip(table.teams, aggregates)},
            "order": order,
        }
    overall = overall_rank(table)
    overall_order = [table.teams[i] for i in np.lexsort((np.array(table.teams, dtype=object), overall))]
    return {
        "scheme": scheme,
        "alpha": json_value(alpha),
        "teams": list(table.teams),
        "cases": len(table.cases),
        "tasks": tasks_payload,
        "overall": {
            "scheme": "RankThenMean",
            "ranks": {team: json_value(r) for team, r in zip(table.teams, overall)},
            "order": overall_order,
        },
    }


def stability_payload(report: StabilityReport) -> dict:
    """Rank-frequency matrices, percentile intervals, and tau distributions."""
    tasks_payload = {}
    for ti, task_id in enumerate(report.task_ids):
        per_team_freq = {}
        for ki, team in enumerate(report.teams):
            per_team_freq[team] = [
                [json_value(rank), int(count)] for rank, count in report.frequencies[ti][ki]
            ]
        tasks_payload[task_id] = {
            "full_ranks": {t: json_value(report.full_ranks[ki, ti]) for ki, t in enumerate(report.teams)},
            "frequencies": per_team_freq,
            "median_rank": {t: json_value(report.median_rank[ki, ti]) for ki, t in enumerate(report.teams)},
            "interval": {
                t: [json_value(report.interval_low[ki, ti]), json_value(report.interval_high[ki, ti])]
                for ki, t in enumerate(report.teams)
            },
            "tau": [json_value(v, 4) for v in report.tau[ti]],
            "tau_median": json_value(report.tau_median[ti], 4),
        }
    return {
        "scheme": report.scheme,
        "replicates": report.n_replicates,
        "teams": list(report.teams),
        "tasks": tasks_payload,
    }


def stability_from_payload(payload: dict) -> StabilityReport:
    """Rebuild a StabilityReport from its JSON payload (tasks in payload order)."""
    teams = tuple(payload["teams"])
    task_ids = tuple(sorted(payload["tasks"]))
    b = int(payload["replicates"])
    n_teams, n_tasks = len(teams), len(task_ids)
    frequencies = []
    median_rank = np.empty((n_teams, n_tasks))
    interval_low = np.empty((n_teams, n_tasks))
    interval_high = np.empty((n_teams, n_tasks))
    tau = np.empty((n_tasks, b))
    tau_median = np.empty(n_tasks)
    full_ranks = np.empty((n_teams, n_tasks))
    for ti, task_id in enumerate(task_ids):
        section = payload["tasks"][task_id]
        frequencies.append(
            tuple(
                tuple((float(rank), int(count)) for rank, count in section["frequencies"][team])
                for team in teams
            )
        )
        for ki, team in enumerate(teams):
            median_rank[ki, ti] = section["median_rank"][team]
            interval_low[ki, ti], interval_high[ki, ti] = section["interval"][team]
            full_ranks[ki, ti] = section["full_ranks"][team]
        tau[ti] = section["tau"]
        tau_median[ti] = section["tau_median"]
    return StabilityReport(
        teams=teams,
        task_ids=task_ids,
        n_replicates=b,
        scheme=payload["scheme"],
        frequencies=tuple(frequencies),
        median_rank=median_rank,
        interval_low=interval_low,
        interval_high=interval_high,
        tau=tau,
        tau_median=tau_median,
        full_ranks=full_ranks,
    )


def significance_payload(table: MetricTable, alpha: float = 0.05) -> dict:
    """Per-task incidence matrices of Holm-adjusted one-sided test results."""
    payload = {"alpha": json_value(alpha), "teams": list(table.teams), "tasks": {}}
    for task in table.tasks:
        matrix = significance_map(table, task, alpha)
        payload["tasks"][task.id] = [[bool(c) for c in row] for row in matrix]
    return payload


def cohort_payload(records, key: str, alpha: float = 0.05) -> dict:
    """Per-stratum box summaries and pairwise Mann-Whitney tests per task."""
    strata = stratify(records, key)
    by_value: dict[str, dict[str, list[float]]] = {}
    for stratum in strata:
        per_task: dict[str, list[float]] = {}
        for r in stratum.records:
            for metric in ("dsc", "hd", "asd"):
                per_task.setdefault(f"{metric.upper()}_{r.structure.value}", []).append(getattr(r, metric))
        by_value[stratum.value] = per_task
    task_ids = sorted({t for per_task in by_value.values() for t in per_task})
    labels = [s.value for s in strata]
    tasks_payload = {}
    for task_id in task_ids:
        boxes = {}
        for label in labels:
            vals = by_value[label].get(task_id, [])
            if vals and np.isfinite(vals).any():
                boxes[label] = _box_dict(box_stats(vals))
        pairs = [
            (labels[i], labels[j])
            for i in range(len(labels))
            for j in range(i + 1, len(labels))
            if labels[i] in boxes and labels[j] in boxes
        ]
        results = [
            mann_whitney_u(
                [v for v in by_value[a][task_id] if math.isfinite(v)],
                [v for v in by_value[b][task_id] if math.isfinite(v)],
            )
            for a, b in pairs
        ]
        adjusted = holm_adjust([r.p_two_sided for r in results]) if results else []
        tasks_payload[task_id] = {
            "box": boxes,
            "pairwise": [
                {
                    "a": a,
                    "b": b,
                    "u": json_value(res.u),
                    "p_one_sided": json_value(res.p_one_sided),
                    "p_two_sided": json_value(res.p_two_sided),
                    "p_holm": json_value(adj),
                    "exact": res.exact,
                }
                for (a, b), res, adj in zip(pairs, results, adjusted)
            ],
        }
    return {
        "key": key,
        "strata": {s.value: {"n_records": len(s.records)} for s in strata},
        "tasks": tasks_payload,
    }


def group_comparison_payload(comparison: GroupComparison) -> dict:
    return {
        "task": comparison.task_id,
        "groups": {
            label: {
                "n": int(comparison.values[label].size),
                "box": _box_dict(box_stats(comparison.values[label]))
                if np.isfinite(comparison.values[label]).any()
                else None,
            }
            for label in comparison.groups
        },
        "pairwise": [
            {
                "a": a,
                "b": b,
                "u": json_value(res.u),
                "p_one_sided": json_value(res.p_one_sided),
                "p_two_sided": json_value(res.p_two_sided),
                "p_holm": json_value(adj),
                "exact": res.exact,
            }
            for a, b, res, adj in comparison.pairwise
        ],
    }


# --- report assembly --------------------------------------------------------

def _team_task_boxes(records) -> dict:
    """task_id -> team -> BoxStats over per-case values."""
    pooled: dict[str, dict[str, list[float]]] = {}
    for r in records:
        for metric in ("dsc", "hd", "asd"):
            task_id = f"{metric.upper()}_{r.structure.value}"
            pooled.setdefault(task_id, {}).setdefault(r.team, []).append(getattr(r, metric))
    out: dict[str, dict[str, BoxStats]] = {}
    for task_id, by_team in pooled.items():
        out[task_id] = {
            team: box_stats(vals) for team, vals in by_team.items() if np.isfinite(vals).any()
        }
    return out


def emit_report(
    out_dir,
    *,
    records=None,
    table: MetricTable | None = None,
    stability: StabilityReport | None = None,
    biometry_rows=None,
    scheme: str = "RankThenMean",
    alpha: float = 0.05,
    formats: tuple[str, ...] = ("csv", "json", "svg"),
) -> list[Path]:
    """Write tables and figures for whatever result sections are present.

    Every number rendered into a figure also appears in one of the emitted
    tables. Returns the written paths; raises on an empty team set.
    """
    records = list(records) if records is not None else None
    teams = set()
    if records:
        teams |= {r.team for r in records}
    if biometry_rows:
        teams |= {r.team for r in biometry_rows}
    if stability is not None:
        teams |= set(stability.teams)
    if not teams:
        raise ValueError("nothing to report: empty team set")
    if records and table is None:
        table = MetricTable.from_records(records)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fig_dir = out / "figures"
    written: list[Path] = []

    def record(path: Path) -> None:
        written.append(path)

    if records is not None and "csv" in formats:
        path = out / "per_case_metrics.csv"
        write_per_case_csv(records, path)
        record(path)
    if biometry_rows is not None and "csv" in formats:
        path = out / "biometry.csv"
        write_biometry_csv(biometry_rows, path)
        record(path)

    boxes = _team_task_boxes(records) if records is not None else {}
    delta_boxes: dict[str, BoxStats] = {}
    if biometry_rows:
        per_team = {}
        for row in biometry_rows:
            if row.delta_aop is not None:
                per_team.setdefault(row.team, []).append(row.delta_aop)
        delta_boxes = {team: box_stats(vals) for team, vals in sorted(per_team.items())}

    if "json" in formats:
        if table is not None:
            path = out / "leaderboard.json"
            write_json(leaderboard_payload(table, scheme, alpha), path)
            record(path)
            if len(table.teams) >= 2:
                path = out / "significance.json"
                write_json(significance_payload(table, alpha), path)
                record(path)
        if stability is not None:
            path = out / "stability.json"
            write_json(stability_payload(stability), path)
            record(path)
        if boxes or delta_boxes:
            payload = {
                "tasks": {
                    task_id: {team: _box_dict(b) for team, b in sorted(by_team.items())}
                    for task_id, by_team in sorted(boxes.items())
                },
            }
            if delta_boxes:
                payload["delta_aop"] = {team: _box_dict(b) for team, b in delta_boxes.items()}
            path = out / "box_stats.json"
            write_json(payload, path)
            record(path)

    if "svg" in formats:
        fig_dir.mkdir(parents=True, exist_ok=True)
        if boxes:
            for metric in ("DSC", "HD", "ASD"):
                path = fig_dir / f"boxes_{metric}.svg"
                figures.metric_box_figure(metric, boxes, path)
                record(path)
        if table is not None and len(table.teams) >= 2:
            for task in table.tasks:
                matrix = significance_map(table, task, alpha)
                path = fig_dir / f"significance_{task.id}.svg"
                figures.significance_figure(task.id, list(table.teams), matrix, path)
                record(path)
        if stability is not None:
            for ti, task_id in enumerate(stability.task_ids):
                path = fig_dir / f"blob_{task_id}.svg"
                figures.blob_figure(stability, ti, path)
                record(path)
            path = fig_dir / "tau_distribution.svg"
            figures.tau_figure(stability, path)
            record(path)
        if delta_boxes:
            path = fig_dir / "delta_aop.svg"
            figures.delta_box_figure(delta_boxes, path)
            record(path)

    if not written:
        raise ValueError("nothing to report: no sections were produced")
    return written
