"""Leaderboard construction: five ranking schemes, significance maps, bootstrap.

The value cube is cases x teams x tasks, where a task is one (metric,
structure) pair with a direction. Fractional (average) ranks are used
everywhere; unbounded values tie at the worst rank regardless of direction,
absorb means, and act as a largest element in medians.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import TestUndefinedError
from .metrics import MetricRecord

log = logging.getLogger(__name__)

SCHEMES = ("MeanThenRank", "MedianThenRank", "RankThenMean", "RankThenMedian", "TestBased")

_METRICS = ("DSC", "HD", "ASD")
_STRUCTURES = ("PSFH", "FH", "PS")


@dataclass(frozen=True)
class Task:
    """One ranking dimension: a metric evaluated on one structure."""

    metric: str
    structure: str

    @property
    def id(self) -> str:
        return f"{self.metric}_{self.structure}"

    @property
    def higher_is_better(self) -> bool:
        return self.metric == "DSC"


ALL_TASKS: tuple[Task, ...] = tuple(
    Task(metric, structure) for metric in _METRICS for structure in _STRUCTURES
)


@dataclass(frozen=True)
class MetricTable:
    """The cases x teams x tasks value cube consumed by every ranking scheme."""

    cases: tuple[str, ...]
    teams: tuple[str, ...]
    tasks: tuple[Task, ...]
    values: np.ndarray  # (n_cases, n_teams, n_tasks), float64, +inf allowed

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=float)
        expected = (len(self.cases), len(self.teams), len(self.tasks))
        if arr.shape != expected:
            raise ValueError(f"value cube shape {arr.shape} does not match {expected}")
        if np.isnan(arr).any():
            raise ValueError("value cube contains NaN; every cell must be populated")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @classmethod
    def from_records(cls, records) -> "MetricTable":
        recs: list[MetricRecord] = list(records)
        if not recs:
            raise ValueError("no metric records given")
        cases = tuple(sorted({r.case_id for r in recs}))
        teams = tuple(sorted({r.team for r in recs}))
        case_idx = {c: i for i, c in enumerate(cases)}
        team_idx = {t: i for i, t in enumerate(teams)}
        task_idx = {t.id: i for i, t in enumerate(ALL_TASKS)}
        values = np.full((len(cases), len(teams), len(ALL_TASKS)), np.nan)
        for r in recs:
            ci, ki = case_idx[r.case_id], team_idx[r.team]
            structure = r.structure.value
            values[ci, ki, task_idx[f"DSC_{structure}"]] = r.dsc
            values[ci, ki, task_idx[f"HD_{structure}"]] = r.hd
            values[ci, ki, task_idx[f"ASD_{structure}"]] = r.asd
        if np.isnan(values).any():
            missing = int(np.isnan(values).sum())
            raise ValueError(f"metric cube is incomplete: {missing} (case, team, task) cells unset")
        return cls(cases=cases, teams=teams, tasks=ALL_TASKS, values=values)

    def task_index(self, task) -> int:
        task_id = task.id if isinstance(task, Task) else str(task)
        for i, t in enumerate(self.tasks):
            if t.id == task_id:
                return i
        raise KeyError(f"unknown task {task_id!r}")


def rank_values(values, higher_is_better: bool) -> np.ndarray:
    """Fractional ranks with rank 1 best; exact ties averaged; unbounded ties worst."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("cannot rank an empty team list")
    key = -v if higher_is_better else v.copy()
    key[~np.isfinite(v)] = np.inf
    return rankdata(key, method="average")


def _direction_keys(values: np.ndarray, tasks) -> np.ndarray:
    """Per-task sort keys along the last axis: smaller is better, unbounded worst."""
    keys = np.array(values, dtype=float, copy=True)
    for ti, task in enumerate(tasks):
        if task.higher_is_better:
            keys[..., ti] = -keys[..., ti]
    keys[~np.isfinite(values)] = np.inf
    return keys


def _rank_matrix(values: np.ndarray, tasks, scheme: str, *, alpha: float = 0.05,
                 exact_threshold: int = 25) -> np.ndarray:
    """Ranks of shape (n_teams, n_tasks) for one scheme over a raw value cube."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if scheme == "MeanThenRank":
        agg = values.mean(axis=0)
        return rankdata(_direction_keys(agg, tasks), method="average", axis=0)
    if scheme == "MedianThenRank":
        agg = np.median(values, axis=0)
        return rankdata(_direction_keys(agg, tasks), method="average", axis=0)
    if scheme in ("RankThenMean", "RankThenMedian"):
        per_case = rankdata(_direction_keys(values, tasks), method="average", axis=1)
        agg = per_case.mean(axis=0) if scheme == "RankThenMean" else np.median(per_case, axis=0)
        return rankdata(agg, method="average", axis=0)
    ranks = np.empty((values.shape[1], len(tasks)))
    for ti, task in enumerate(tasks):
        sig = _significance_matrix(values[:, :, ti], task, alpha=alpha,
                                   exact_threshold=exact_threshold)
        ranks[:, ti] = rank_values(sig.sum(axis=1).astype(float), higher_is_better=True)
    return ranks


def compute_ranking(table: MetricTable, task, scheme: str, *, alpha: float = 0.05) -> np.ndarray:
    """Per-team ranks for one task under one scheme, aligned with table.teams."""
    ti = table.task_index(task)
    sub = table.values[:, :, [ti]]
    return _rank_matrix(sub, (table.tasks[ti],), scheme, alpha=alpha)[:, 0]


def rank_matrix(table: MetricTable, scheme: str, *, alpha: float = 0.05, tasks=None) -> np.ndarray:
    """Ranks of shape (n_teams, n_tasks) over the table's tasks (or a subset)."""
    idx = [table.task_index(t) for t in tasks] if tasks is not None else list(range(len(table.tasks)))
    sub_tasks = tuple(table.tasks[i] for i in idx)
    return _rank_matrix(table.values[:, :, idx], sub_tasks, scheme, alpha=alpha)


def aggregate_then_rank(table: MetricTable, task, agg: str = "mean") -> np.ndarray:
    """MeanThenRank / MedianThenRank: aggregate values over cases, then rank."""
    scheme = {"mean": "MeanThenRank", "median": "MedianThenRank"}[agg]
    return compute_ranking(table, task, scheme)


def rank_then_aggregate(table: MetricTable, task, agg: str = "mean") -> np.ndarray:
    """RankThenMean / RankThenMedian: rank per case, aggregate ranks, rank those."""
    scheme = {"mean": "RankThenMean", "median": "RankThenMedian"}[agg]
    return compute_ranking(table, task, scheme)


def wilcoxon_signed_rank(paired_diffs, *, zero_method: str = "wilcox",
                         exact_threshold: int = 25) -> float:
    """One-sided signed-rank p-value for the alternative "differences are positive".

    Zeros are dropped before ranking (classic handling; ``zero_method="pratt"``
    ranks them and drops only their contribution). The null distribution is
    exact, via the distribution of the positive-rank sum over all sign
    assignments, when the nonzero count is at most `exact_threshold`; beyond
    that a normal approximation with tie and 0.5 continuity corrections is used.
    """
    d = np.asarray(paired_diffs, dtype=float)
    if np.isnan(d).any():
        raise ValueError("paired differences contain NaN")
    if zero_method not in ("wilcox", "pratt"):
        raise ValueError(f"unknown zero_method {zero_method!r}")
    n_zero = int((d == 0).sum())
    if zero_method == "wilcox":
        d = d[d != 0]
        n_zero = 0
    if d.size == 0 or (d != 0).sum() == 0:
        raise TestUndefinedError("test undefined (no information): all differences are zero")
    ranks = rankdata(np.abs(d), method="average")
    w_plus = float(ranks[d > 0].sum())
    nonzero_ranks = ranks[d != 0]
    n = nonzero_ranks.size

    if n <= exact_threshold:
        return _signed_rank_exact_tail(nonzero_ranks, w_plus)

    if zero_method == "pratt":
        total = n + n_zero
        mean = (total * (total + 1) - n_zero * (n_zero + 1)) / 4.0
        var = (total * (total + 1) * (2 * total + 1)
               - n_zero * (n_zero + 1) * (2 * n_zero + 1)) / 24.0
    else:
        mean = n * (n + 1) / 4.0
        var = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(nonzero_ranks, return_counts=True)
    var -= float((tie_counts**3 - tie_counts).sum()) / 48.0
    z = (w_plus - mean - 0.5) / math.sqrt(var)
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def _signed_rank_exact_tail(ranks: np.ndarray, w_plus: float) -> float:
    """P(W+ >= observed) by exact enumeration of sign assignments (integer DP on 2r)."""
    twice = np.rint(2.0 * ranks).astype(np.int64)
    total = int(twice.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in twice:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: counts.size - r]
        counts = counts + shifted
    w2 = int(round(2.0 * w_plus))
    return float(counts[w2:].sum()) / float(2 ** len(twice))


def holm_adjust(pvalues) -> np.ndarray:
    """Step-down Holm adjustment, preserving input order."""
    p = np.asarray(pvalues, dtype=float)
    if p.ndim != 1:
        raise ValueError("pvalues must be one-dimensional")
    if p.size and (np.nanmin(p) < 0 or np.nanmax(p) > 1):
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    scaled = p[order] * (m - np.arange(m))
    adjusted = np.minimum(1.0, np.maximum.accumulate(scaled))
    out = np.empty(m)
    out[order] = adjusted
    return out


def _pair_diffs(a: np.ndarray, b: np.ndarray, higher_is_better: bool) -> np.ndarray:
    """Per-case differences oriented so positive means "first team better"."""
    d = (a - b) if higher_is_better else (b - a)
    return np.where(a == b, 0.0, d)


def _significance_matrix(column: np.ndarray, task: Task, *, alpha: float = 0.05,
                         adjust: bool = True, exact_threshold: int = 25) -> np.ndarray:
    k = column.shape[1]
    pvals = np.ones((k, k))
    defined = np.zeros((k, k), dtype=bool)
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            d = _pair_diffs(column[:, i], column[:, j], task.higher_is_better)
            try:
                pvals[i, j] = wilcoxon_signed_rank(d, exact_threshold=exact_threshold)
                defined[i, j] = True
            except TestUndefinedError:
                log.info("pairwise test undefined for teams %d vs %d on %s", i, j, task.id)
    off = ~np.eye(k, dtype=bool)
    family = pvals[off]
    if adjust:
        family = holm_adjust(family)
    significant = np.zeros((k, k), dtype=bool)
    significant[off] = family < alpha
    return significant & defined


def significance_map(table: MetricTable, task, alpha: float = 0.05, *,
                     adjust: bool = True, exact_threshold: int = 25) -> np.ndarray:
    """Team x team incidence matrix: cell (i, j) true iff i significantly beats j.

    One-sided signed-rank tests over per-case task values, Holm-adjusted over
    the family of all k(k-1) ordered pairs; undefined tests are non-significant.
    """
    if len(table.teams) < 2:
        raise ValueError("significance map needs at least 2 teams")
    ti = table.task_index(task)
    return _significance_matrix(table.values[:, :, ti], table.tasks[ti], alpha=alpha,
                                adjust=adjust, exact_threshold=exact_threshold)


def test_based_rank(table: MetricTable, task, alpha: float = 0.05, *,
                    adjust: bool = True) -> np.ndarray:
    """Rank teams by their count of significant pairwise superiorities."""
    sig = significance_map(table, task, alpha, adjust=adjust)
    return rank_values(sig.sum(axis=1).astype(float), higher_is_better=True)


def overall_rank(table: MetricTable, tasks=None) -> np.ndarray:
    """Mean of all per-case per-task ranks per team, then ranked (RankThenMean)."""
    idx = [table.task_index(t) for t in tasks] if tasks is not None else range(len(table.tasks))
    idx = list(idx)
    if not idx:
        raise ValueError("task subset must be nonempty")
    sub = table.values[:, :, idx]
    sub_tasks = [table.tasks[i] for i in idx]
    per_case = rankdata(_direction_keys(sub, sub_tasks), method="average", axis=1)
    means = per_case.mean(axis=(0, 2))
    return rank_values(means, higher_is_better=False)


def _replicate_rng(seed: int, replicate: int) -> np.random.Generator:
    """Counter-based generator keyed on (seed, replicate): order-independent."""
    key = np.array([seed, replicate], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _bootstrap_chunk(args) -> list[tuple[int, np.ndarray]]:
    values, tasks, scheme, alpha, seed, reps = args
    out = []
    n_cases = values.shape[0]
    for rep in reps:
        idx = _replicate_rng(seed, rep).integers(0, n_cases, size=n_cases)
        out.append((rep, _rank_matrix(values[idx], tasks, scheme, alpha=alpha)))
    return out


def bootstrap_rankings(table: MetricTable, scheme: str, b: int = 1000, seed: int = 0, *,
                       tasks=None, alpha: float = 0.05, jobs: int = 1) -> np.ndarray:
    """Rankings over `b` case-resampled replicates, shape (b, n_teams, n_tasks).

    Each replicate resamples cases with replacement to the original count using
    a generator keyed on (seed, replicate index), so the output is bit-identical
    for a fixed seed regardless of parallelism.
    """
    if b < 1:
        raise ValueError("need at least one bootstrap replicate")
    idx = [table.task_index(t) for t in tasks] if tasks is not None else range(len(table.tasks))
    idx = list(idx)
    values = table.values[:, :, idx]
    sub_tasks = tuple(table.tasks[i] for i in idx)
    out = np.empty((b, len(table.teams), len(idx)))
    if jobs <= 1:
        for rep, ranks in _bootstrap_chunk((values, sub_tasks, scheme, alpha, seed, range(b))):
            out[rep] = ranks
        return out
    chunks = [
        (values, sub_tasks, scheme, alpha, seed, range(start, b, jobs))
        for start in range(min(jobs, b))
    ]
    with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
        for result in pool.map(_bootstrap_chunk, chunks):
            for rep, ranks in result:
                out[rep] = ranks
    return out


def kendall_tau(a, b) -> float:
    """Tie-corrected rank correlation (tau-b) between two team rankings."""
    ra = np.asarray(a, dtype=float)
    rb = np.asarray(b, dtype=float)
    if ra.shape != rb.shape or ra.ndim != 1:
        raise ValueError("rankings must be one-dimensional and aligned")
    n = ra.size
    if n < 2:
        raise ValueError("kendall tau needs at least two teams")
    iu = np.triu_indices(n, 1)
    da = np.sign(ra[:, None] - ra[None, :])[iu]
    db = np.sign(rb[:, None] - rb[None, :])[iu]
    concordance = float((da * db).sum())
    n0 = n * (n - 1) / 2.0
    ties_a = float((da == 0).sum())
    ties_b = float((db == 0).sum())
    denom = math.sqrt((n0 - ties_a) * (n0 - ties_b))
    if denom == 0.0:
        # fully tied ranking(s): tau-b is 0/0; report perfect agreement only on identity
        return 1.0 if np.array_equal(ra, rb) else 0.0
    return concordance / denom


@dataclass(frozen=True)
class StabilityReport:
    """Bootstrap rank-frequency matrices, percentile intervals, and tau values."""

    teams: tuple[str, ...]
    task_ids: tuple[str, ...]
    n_replicates: int
    scheme: str
    # per task, per team: sorted tuple of (achieved rank, count) with counts summing to B
    frequencies: tuple
    median_rank: np.ndarray      # (n_teams, n_tasks)
    interval_low: np.ndarray     # (n_teams, n_tasks), 2.5th percentile, nearest rank
    interval_high: np.ndarray    # (n_teams, n_tasks), 97.5th percentile, nearest rank
    tau: np.ndarray              # (n_tasks, n_replicates)
    tau_median: np.ndarray       # (n_tasks,)
    full_ranks: np.ndarray       # (n_teams, n_tasks) ranking on the full table


def stability_summary(full_ranks: np.ndarray, boots: np.ndarray, teams, task_ids,
                      scheme: str = "RankThenMean") -> StabilityReport:
    """Summarize bootstrap rankings against the full-data ranking."""
    boots = np.asarray(boots, dtype=float)
    if boots.ndim != 3 or boots.shape[0] < 1:
        raise ValueError("boots must be a nonempty (B, n_teams, n_tasks) array")
    b, n_teams, n_tasks = boots.shape
    lo = math.ceil(0.025 * b) - 1
    hi = math.ceil(0.975 * b) - 1
    sorted_boots = np.sort(boots, axis=0)
    frequencies = tuple(
        tuple(
            tuple(zip(*np.unique(boots[:, ki, ti], return_counts=True)))
            for ki in range(n_teams)
        )
        for ti in range(n_tasks)
    )
    tau = np.empty((n_tasks, b))
    for ti in range(n_tasks):
        for rep in range(b):
            tau[ti, rep] = kendall_tau(full_ranks[:, ti], boots[rep, :, ti])
    return StabilityReport(
        teams=tuple(teams),
        task_ids=tuple(task_ids),
        n_replicates=b,
        scheme=scheme,
        frequencies=frequencies,
        median_rank=np.median(boots, axis=0),
        interval_low=sorted_boots[max(lo, 0)],
        interval_high=sorted_boots[max(hi, 0)],
        tau=tau,
        tau_median=np.median(tau, axis=1),
        full_ranks=np.asarray(full_ranks, dtype=float),
    )
