import json
import math

import pytest

from psfheval.ingest import CaseMeta, StructureSelector
from psfheval.metrics import MetricRecord
from psfheval.ranking import MetricTable, bootstrap_rankings, rank_matrix, stability_summary
from psfheval.report import (
    BiometryRow,
    box_stats,
    emit_report,
    fmt_value,
    json_value,
    leaderboard_payload,
    read_biometry_csv,
    read_per_case_csv,
    stability_from_payload,
    stability_payload,
    write_biometry_csv,
    write_per_case_csv,
)

INF = float("inf")


def test_box_stats_plain():
    b = box_stats([1.0, 2.0, 3.0, 4.0, 5.0])
    assert (b.min, b.q1, b.median, b.q3, b.max) == (1.0, 2.0, 3.0, 4.0, 5.0)
    assert b.outliers == ()
    assert b.n_unbounded == 0


def test_box_stats_constant():
    b = box_stats([7.0] * 6)
    assert b.min == b.q1 == b.median == b.q3 == b.max == 7.0
    assert b.outliers == ()


def test_box_stats_outlier():
    b = box_stats([1.0, 2.0, 3.0, 4.0, 100.0])
    assert b.outliers == (100.0,)
    assert b.max == 4.0  # upper whisker is the most extreme point inside the fence
    assert b.q3 == 4.0


def test_box_stats_counts_unbounded_separately():
    b = box_stats([1.0, 2.0, INF, INF])
    assert b.n_unbounded == 2
    assert b.max == 2.0


def test_box_stats_rejects_empty():
    with pytest.raises(ValueError):
        box_stats([])
    with pytest.raises(ValueError):
        box_stats([INF])


def test_value_formatting():
    assert fmt_value(0.123456789) == "0.123457"
    assert fmt_value(INF) == "inf"
    assert fmt_value(1.0, 4) == "1.0000"
    assert fmt_value(None) == ""
    assert json_value(INF) == "inf"
    assert json_value(0.1234567) == 0.123457


def _records():
    records = []
    for case in ("c1", "c2", "c3"):
        for team in ("alpha", "beta"):
            meta = CaseMeta(case_id=case, split="Test2", institution="SMU",
                            scanner="EsaoteMyLab", aop_stratum="Below120")
            for structure in StructureSelector:
                quality = 0.9 if team == "alpha" else 0.7
                records.append(MetricRecord(
                    case_id=case, team=team, structure=structure,
                    dsc=quality, hd=1.0 - quality if team == "alpha" else INF,
                    asd=0.5, meta=meta,
                ))
    return records


def test_per_case_csv_roundtrip(tmp_path):
    records = _records()
    path = tmp_path / "per_case.csv"
    write_per_case_csv(records, path)
    text = path.read_text(encoding="utf-8")
    assert "inf" in text
    assert "\t" not in text
    back = read_per_case_csv(path)
    assert len(back) == len(records)
    assert {r.team for r in back} == {"alpha", "beta"}
    assert any(math.isinf(r.hd) for r in back)
    # sorted by case, team, structure
    keys = [(r.case_id, r.team, r.structure.value) for r in back]
    assert keys == sorted(keys)


def test_biometry_csv_roundtrip(tmp_path):
    rows = [
        BiometryRow("c1", "alpha", 101.2345678, 103.5, 2.2654, "ok"),
        BiometryRow("c1", "beta", 101.2345678, None, None, "ΔAoP undefined (prediction lacks FH)"),
    ]
    path = tmp_path / "bio.csv"
    write_biometry_csv(rows, path)
    back = read_biometry_csv(path)
    assert back[0].aop_gt == pytest.approx(101.2346)
    assert back[1].aop_pred is None
    assert back[1].status.endswith("lacks FH)")


def test_leaderboard_payload_shape():
    table = MetricTable.from_records(_records())
    payload = leaderboard_payload(table, "RankThenMean", 0.05)
    assert payload["scheme"] == "RankThenMean"
    assert set(payload["tasks"]) == {t.id for t in table.tasks}
    section = payload["tasks"]["DSC_PSFH"]
    assert section["order"] == ["alpha", "beta"]
    assert section["ranks"]["alpha"] == 1.0
    assert payload["overall"]["order"][0] == "alpha"
    # under RankThen* schemes the aggregate is the mean per-case rank
    assert payload["tasks"]["HD_PSFH"]["aggregate"]["beta"] == 2.0
    by_mean = leaderboard_payload(table, "MeanThenRank", 0.05)
    assert by_mean["tasks"]["HD_PSFH"]["aggregate"]["beta"] == "inf"


def test_stability_payload_roundtrip():
    table = MetricTable.from_records(_records())
    boots = bootstrap_rankings(table, "RankThenMean", b=8, seed=5)
    full = rank_matrix(table, "RankThenMean")
    report = stability_summary(full, boots, table.teams, [t.id for t in table.tasks],
                               scheme="RankThenMean")
    payload = stability_payload(report)
    assert payload["replicates"] == 8
    rebuilt = stability_from_payload(payload)
    assert rebuilt.teams == report.teams
    assert rebuilt.n_replicates == 8
    assert set(rebuilt.task_ids) == set(report.task_ids)
    ti = rebuilt.task_ids.index("DSC_PSFH")
    ti0 = report.task_ids.index("DSC_PSFH")
    assert rebuilt.frequencies[ti] == report.frequencies[ti0]
    for team_freqs in rebuilt.frequencies[ti]:
        assert sum(count for _, count in team_freqs) == 8


def test_emit_report_requires_content(tmp_path):
    with pytest.raises(ValueError, match="nothing to report"):
        emit_report(tmp_path, records=[])


def test_emit_report_single_team(tmp_path):
    records = [r for r in _records() if r.team == "alpha"]
    written = emit_report(tmp_path, records=records, scheme="RankThenMean")
    names = {p.name for p in written}
    assert "per_case_metrics.csv" in names
    assert "leaderboard.json" in names
    lb = json.loads((tmp_path / "leaderboard.json").read_text())
    assert lb["teams"] == ["alpha"]
    assert lb["tasks"]["DSC_PSFH"]["ranks"]["alpha"] == 1.0


def test_emit_report_full_and_stable_bytes(tmp_path):
    records = _records()
    table = MetricTable.from_records(records)
    boots = bootstrap_rankings(table, "RankThenMean", b=6, seed=2)
    full = rank_matrix(table, "RankThenMean")
    stability = stability_summary(full, boots, table.teams, [t.id for t in table.tasks])
    rows = [BiometryRow("c1", "alpha", 100.0, 101.0, 1.0, "ok"),
            BiometryRow("c1", "beta", 100.0, 99.0, 1.0, "ok"),
            BiometryRow("c2", "alpha", 110.0, 112.5, 2.5, "ok"),
            BiometryRow("c2", "beta", 110.0, 105.0, 5.0, "ok")]

    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    for out in (out_a, out_b):
        written = emit_report(out, records=records, stability=stability,
                              biometry_rows=rows, scheme="RankThenMean")
        assert (out / "figures" / "boxes_DSC.svg").exists()
        assert (out / "figures" / "tau_distribution.svg").exists()
        assert (out / "figures" / "delta_aop.svg").exists()
        assert (out / "figures" / "blob_DSC_PSFH.svg").exists()
        assert (out / "figures" / "significance_HD_PS.svg").exists()
    for rel in ("per_case_metrics.csv", "leaderboard.json", "stability.json",
                "box_stats.json", "significance.json", "figures/boxes_DSC.svg",
                "figures/blob_DSC_PSFH.svg", "figures/tau_distribution.svg"):
        assert (out_a / rel).read_bytes() == (out_b / rel).read_bytes(), rel


def test_every_figure_number_has_a_table(tmp_path):
    records = _records()
    emit_report(tmp_path, records=records, scheme="RankThenMean")
    boxes = json.loads((tmp_path / "box_stats.json").read_text())
    assert "DSC_PSFH" in boxes["tasks"]
    assert set(boxes["tasks"]["DSC_PSFH"]) == {"alpha", "beta"}
    for stats in boxes["tasks"]["HD_PSFH"].values():
        assert {"min", "q1", "median", "q3", "max", "outliers", "n_unbounded"} <= set(stats)
