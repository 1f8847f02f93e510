"""Command-line interface.

Verbs: evaluate, biometry, rank, bootstrap, cohort, synth, report. Global
options can also come from a TOML config file (flags win). Exit codes: 0 ok,
1 usage error, 2 data error, 3 undefined-statistic condition under
--strict-undefined.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import report as report_mod
from .biometry import compute_aop
from .cohorts import compare_groups, derive_aop_stratum
from .errors import DataError, UndefinedStatisticError
from .ingest import (
    CaseMeta,
    LabelMask,
    ManifestEntry,
    StructureSelector,
    load_mask,
    read_manifest,
    select_structure,
)
from .metrics import evaluate_case
from .ranking import (
    SCHEMES,
    MetricTable,
    bootstrap_rankings,
    rank_matrix,
    stability_summary,
)
from .report import BiometryRow
from .synth import gen_challenge

log = logging.getLogger("psfheval")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_UNDEFINED = 3

_CONFIG_KEYS = ("out_dir", "jobs", "alpha", "scheme", "hd_on_surface", "seed", "strict_undefined")


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="psfheval", description="Segmentation metrics, AoP biometry, and rankings for PS/FH masks")
    parser.add_argument("--config", type=Path, help="TOML config mirroring the global flags (flags win)")
    parser.add_argument("--out-dir", type=Path, default=None, help="output directory (default: .)")
    parser.add_argument("--jobs", type=int, default=None, help="parallel workers (default: 1)")
    parser.add_argument("--alpha", type=float, default=None, help="significance level (default: 0.05)")
    parser.add_argument("--scheme", choices=SCHEMES, default=None, help="ranking scheme (default: RankThenMean)")
    parser.add_argument("--hd-on-surface", action="store_true", default=None,
                        help="compute HD over boundary pixels instead of full foregrounds")
    parser.add_argument("--seed", type=int, default=None, help="seed for bootstrap/synthesis (default: 0)")
    parser.add_argument("--strict-undefined", action="store_true", default=None,
                        help="treat undefined statistics as fatal (exit 3)")
    parser.add_argument("-v", "--verbose", action="store_true", help="info-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evaluate", help="manifest + predictions dir -> per-case metric CSV")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--pred-dir", type=Path, required=True)
    p.add_argument("--teams", help="comma-separated team names (default: subdirectories of pred dir)")

    p = sub.add_parser("biometry", help="manifest + predictions dir -> AoP difference CSV")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--pred-dir", type=Path, required=True)
    p.add_argument("--teams")

    p = sub.add_parser("rank", help="per-case CSV -> leaderboard JSON")
    p.add_argument("--per-case", type=Path, required=True)

    p = sub.add_parser("bootstrap", help="per-case CSV -> bootstrap stability JSON")
    p.add_argument("--per-case", type=Path, required=True)
    p.add_argument("--samples", type=int, default=1000)

    p = sub.add_parser("cohort", help="per-case CSV -> stratified summaries")
    p.add_argument("--per-case", type=Path, required=True)
    p.add_argument("--by", help="metadata key: split, institution, scanner, aop_stratum")
    p.add_argument("--groups", type=Path, help="team attribute CSV for design-group comparisons")
    p.add_argument("--attr", help="attribute column of --groups to group teams by")
    p.add_argument("--task", default="DSC_PSFH", help="task for --groups comparisons")

    p = sub.add_parser("synth", help="generate a synthetic challenge with known AoP")
    p.add_argument("--cases", type=int, default=50)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--no-preds", action="store_true", help="skip mock-team predictions")

    p = sub.add_parser("report", help="assemble figures and tables from prior outputs")
    p.add_argument("--in-dir", type=Path, help="directory holding per_case_metrics.csv etc. (default: out dir)")

    return parser


def _merge_config(args: argparse.Namespace) -> argparse.Namespace:
    defaults = {
        "out_dir": Path("."),
        "jobs": 1,
        "alpha": 0.05,
        "scheme": "RankThenMean",
        "hd_on_surface": False,
        "seed": 0,
        "strict_undefined": False,
    }
    config = {}
    if args.config is not None:
        try:
            with open(args.config, "rb") as fh:
                config = tomllib.load(fh)
        except FileNotFoundError:
            raise DataError(f"config file not found: {args.config}") from None
        except tomllib.TOMLDecodeError as exc:
            raise DataError(f"config file {args.config} is not valid TOML: {exc}") from exc
        unknown = set(config) - set(_CONFIG_KEYS)
        if unknown:
            raise DataError(f"config file {args.config}: unknown keys {sorted(unknown)}")
    for key, fallback in defaults.items():
        if getattr(args, key, None) is None:
            value = config.get(key, fallback)
            if key == "out_dir":
                value = Path(value)
            setattr(args, key, value)
    if args.scheme not in SCHEMES:
        raise DataError(f"unknown scheme {args.scheme!r}")
    return args


def _team_names(args) -> list[str]:
    if args.teams:
        return [t.strip() for t in args.teams.split(",") if t.strip()]
    if not args.pred_dir.is_dir():
        raise DataError(f"prediction directory not found: {args.pred_dir}")
    teams = sorted(p.name for p in args.pred_dir.iterdir() if p.is_dir())
    if not teams:
        raise DataError(f"no team subdirectories under {args.pred_dir}")
    return teams


def _pred_path(pred_dir: Path, team: str, case_id: str) -> Path | None:
    for ext in (".png", ".bmp"):
        candidate = pred_dir / team / f"{case_id}{ext}"
        if candidate.exists():
            return candidate
    return None


def _empty_like(gt: LabelMask) -> LabelMask:
    import numpy as np

    return LabelMask(np.zeros((gt.height, gt.width), dtype=np.uint8))


def _gt_aop(gt: LabelMask):
    ps = select_structure(gt, StructureSelector.PS)
    fh = select_structure(gt, StructureSelector.FH)
    if ps.count == 0 or fh.count == 0:
        return None
    try:
        return compute_aop(ps, fh).aop
    except UndefinedStatisticError:
        return None


def _resolve_stratum(entry: ManifestEntry, gt: LabelMask) -> CaseMeta:
    meta = entry.meta
    aop = _gt_aop(gt)
    derived = derive_aop_stratum(aop) if aop is not None else None
    if meta.aop_stratum is None:
        if derived is None:
            return meta
        return CaseMeta(meta.case_id, meta.split, meta.institution, meta.scanner,
                        derived, meta.spacing, meta.extra)
    if derived is not None and derived != meta.aop_stratum:
        log.warning("case %s: manifest aop_stratum %s disagrees with ground-truth AoP (%s); keeping manifest",
                    meta.case_id, meta.aop_stratum, derived)
    return meta


def _evaluate_one(task) -> tuple[list, list]:
    entry, pred_paths, hd_on_surface, want_biometry = task
    gt = load_mask(entry.gt_path)
    meta = _resolve_stratum(entry, gt)
    records = []
    bio_rows = []
    for team, path in sorted(pred_paths.items()):
        if path is None:
            log.warning("case %s: no prediction from %s; scoring an empty mask", meta.case_id, team)
            pred = _empty_like(gt)
        else:
            pred = load_mask(path)
        records.extend(evaluate_case(gt, pred, meta, team, hd_on_surface=hd_on_surface))
        if want_biometry:
            bio_rows.append(_biometry_row(gt, pred, meta.case_id, team))
    return records, bio_rows


def _biometry_row(gt: LabelMask, pred: LabelMask, case_id: str, team: str) -> BiometryRow:
    def aop_of(mask, side):
        ps = select_structure(mask, StructureSelector.PS)
        fh = select_structure(mask, StructureSelector.FH)
        if ps.count == 0:
            raise UndefinedStatisticError(f"ΔAoP undefined ({side} lacks PS)")
        if fh.count == 0:
            raise UndefinedStatisticError(f"ΔAoP undefined ({side} lacks FH)")
        return compute_aop(ps, fh).aop

    aop_gt = aop_pred = delta = None
    try:
        aop_gt = aop_of(gt, "ground truth")
        aop_pred = aop_of(pred, "prediction")
        delta = abs(aop_gt - aop_pred)
        status = "ok"
    except UndefinedStatisticError as exc:
        status = str(exc)
    return BiometryRow(case_id=case_id, team=team, aop_gt=aop_gt, aop_pred=aop_pred,
                       delta_aop=delta, status=status)


def _run_cases(entries, pred_dir: Path, teams, *, hd_on_surface: bool, jobs: int,
               want_biometry: bool) -> tuple[list, list]:
    tasks = []
    for entry in entries:
        pred_paths = {team: _pred_path(pred_dir, team, entry.meta.case_id) for team in teams}
        tasks.append((entry, pred_paths, hd_on_surface, want_biometry))
    records: list = []
    bio_rows: list = []
    if jobs <= 1:
        results = map(_evaluate_one, tasks)
    else:
        pool = ProcessPoolExecutor(max_workers=jobs)
        results = pool.map(_evaluate_one, tasks)
    for recs, rows in results:
        records.extend(recs)
        bio_rows.extend(rows)
    if jobs > 1:
        pool.shutdown()
    records.sort(key=lambda r: (r.case_id, r.team, r.structure.value))
    bio_rows.sort(key=lambda r: (r.case_id, r.team))
    return records, bio_rows


def _cmd_evaluate(args) -> int:
    entries = read_manifest(args.manifest)
    teams = _team_names(args)
    records, _ = _run_cases(entries, args.pred_dir, teams, hd_on_surface=args.hd_on_surface,
                            jobs=args.jobs, want_biometry=False)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    out = args.out_dir / "per_case_metrics.csv"
    report_mod.write_per_case_csv(records, out)
    print(f"wrote {out} ({len(records)} records)")
    return EXIT_OK


def _cmd_biometry(args) -> int:
    entries = read_manifest(args.manifest)
    teams = _team_names(args)
    _, rows = _run_cases(entries, args.pred_dir, teams, hd_on_surface=args.hd_on_surface,
                         jobs=args.jobs, want_biometry=True)
    undefined = [r for r in rows if r.status != "ok"]
    if undefined and args.strict_undefined:
        log.error("%d undefined AoP rows (first: %s)", len(undefined), undefined[0].status)
        return EXIT_UNDEFINED
    args.out_dir.mkdir(parents=True, exist_ok=True)
    out = args.out_dir / "biometry.csv"
    report_mod.write_biometry_csv(rows, out)
    print(f"wrote {out} ({len(rows)} rows, {len(undefined)} undefined)")
    return EXIT_OK


def _cmd_rank(args) -> int:
    records = report_mod.read_per_case_csv(args.per_case)
    table = MetricTable.from_records(records)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    out = args.out_dir / "leaderboard.json"
    report_mod.write_json(report_mod.leaderboard_payload(table, args.scheme, args.alpha), out)
    print(f"wrote {out}")
    return EXIT_OK


def _cmd_bootstrap(args) -> int:
    records = report_mod.read_per_case_csv(args.per_case)
    table = MetricTable.from_records(records)
    boots = bootstrap_rankings(table, args.scheme, b=args.samples, seed=args.seed,
                               alpha=args.alpha, jobs=args.jobs)
    full = rank_matrix(table, args.scheme, alpha=args.alpha)
    stab = stability_summary(full, boots, table.teams, [t.id for t in table.tasks],
                             scheme=args.scheme)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    out = args.out_dir / "stability.json"
    report_mod.write_json(report_mod.stability_payload(stab), out)
    print(f"wrote {out}")
    return EXIT_OK


def _read_group_table(path: Path, attr: str) -> dict:
    import csv as _csv

    with open(path, newline="", encoding="utf-8") as fh:
        reader = _csv.DictReader(fh)
        if reader.fieldnames is None or "team" not in reader.fieldnames:
            raise DataError(f"group table {path} needs a 'team' column")
        if attr not in reader.fieldnames:
            raise DataError(f"group table {path} has no column {attr!r}")
        return {row["team"]: row[attr] for row in reader}


def _cmd_cohort(args) -> int:
    if not args.by and not args.groups:
        raise DataError("cohort needs --by KEY or --groups CSV with --attr")
    records = report_mod.read_per_case_csv(args.per_case)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    if args.by:
        out = args.out_dir / f"cohort_{args.by}.json"
        report_mod.write_json(report_mod.cohort_payload(records, args.by, args.alpha), out)
        print(f"wrote {out}")
    if args.groups:
        if not args.attr:
            raise DataError("--groups requires --attr COLUMN")
        grouping = _read_group_table(args.groups, args.attr)
        comparison = compare_groups(records, grouping, args.task)
        out = args.out_dir / f"groups_{args.attr}_{args.task}.json"
        report_mod.write_json(report_mod.group_comparison_payload(comparison), out)
        print(f"wrote {out}")
    return EXIT_OK


def _cmd_synth(args) -> int:
    manifest = gen_challenge(args.out_dir, n_cases=args.cases, seed=args.seed,
                             size=args.size, with_predictions=not args.no_preds)
    print(f"wrote {manifest}")
    return EXIT_OK


def _cmd_report(args) -> int:
    in_dir = args.in_dir if args.in_dir is not None else args.out_dir
    per_case = in_dir / "per_case_metrics.csv"
    if not per_case.exists():
        raise DataError(f"no per-case CSV at {per_case}; run evaluate first")
    records = report_mod.read_per_case_csv(per_case)
    table = MetricTable.from_records(records)
    biometry_path = in_dir / "biometry.csv"
    bio_rows = report_mod.read_biometry_csv(biometry_path) if biometry_path.exists() else None

    stability = None
    stability_path = in_dir / "stability.json"
    if stability_path.exists():
        import json as _json

        payload = _json.loads(stability_path.read_text(encoding="utf-8"))
        stability = report_mod.stability_from_payload(payload)
    written = report_mod.emit_report(
        args.out_dir,
        records=records,
        table=table,
        stability=stability,
        biometry_rows=bio_rows,
        scheme=args.scheme,
        alpha=args.alpha,
    )
    print(f"wrote {len(written)} files under {args.out_dir}")
    return EXIT_OK


_COMMANDS = {
    "evaluate": _cmd_evaluate,
    "biometry": _cmd_biometry,
    "rank": _cmd_rank,
    "bootstrap": _cmd_bootstrap,
    "cohort": _cmd_cohort,
    "synth": _cmd_synth,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _merge_config(args)
        return _COMMANDS[args.command](args)
    except DataError as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except UndefinedStatisticError as exc:
        log.error("%s", exc)
        return EXIT_UNDEFINED if args.strict_undefined else EXIT_DATA
    except (ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
