"""Cohort stratification and nonparametric group comparisons.

Records are partitioned by acquisition metadata (split, institution, scanner,
AoP stratum, or a custom tag) and groups are compared with the Mann-Whitney
U-test: exact by enumeration for small pooled samples, normal approximation
with tie and continuity corrections otherwise.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .metrics import MetricRecord
from .ranking import holm_adjust

AOP_THRESHOLD_DEG = 120.0

_META_KEYS = ("split", "institution", "scanner", "aop_stratum")


@dataclass(frozen=True)
class Stratum:
    """All records sharing one value of one metadata key."""

    key: str
    value: str
    records: tuple[MetricRecord, ...]


@dataclass(frozen=True)
class MannWhitneyResult:
    u: float
    p_one_sided: float
    p_two_sided: float
    exact: bool


def derive_aop_stratum(aop_deg: float) -> str:
    """Stratum label from a ground-truth AoP value (threshold at 120 degrees)."""
    return "AtLeast120" if aop_deg >= AOP_THRESHOLD_DEG else "Below120"


def _meta_value(record: MetricRecord, key: str) -> str:
    if key in _META_KEYS:
        value = getattr(record.meta, key)
    else:
        value = record.meta.extra.get(key)
    return "unknown" if value in (None, "") else str(value)


def stratify(records, key: str) -> list[Stratum]:
    """Partition records by one metadata key; unknown values form their own stratum.

    Strata come back in lexicographic label order and conserve the record count.
    """
    groups: dict[str, list[MetricRecord]] = {}
    for record in records:
        groups.setdefault(_meta_value(record, key), []).append(record)
    return [Stratum(key=key, value=v, records=tuple(groups[v])) for v in sorted(groups)]


def mann_whitney_u(a, b, *, exact_threshold: int = 20) -> MannWhitneyResult:
    """Mann-Whitney U with average ranks for ties.

    U is reported for the first sample (number of (a, b) pairs with a > b,
    counting ties one half). The exact path enumerates all assignments of the
    pooled ranks to the first sample, which handles ties, and is used when the
    pooled size is at most `exact_threshold`.
    """
    x = np.asarray(a, dtype=float)
    y = np.asarray(b, dtype=float)
    if x.size == 0 or y.size == 0:
        raise ValueError("both samples must be nonempty")
    n1, n2 = x.size, y.size
    pooled = np.concatenate([x, y])
    ranks = rankdata(pooled, method="average")
    r1 = float(ranks[:n1].sum())
    u1 = r1 - n1 * (n1 + 1) / 2.0

    if n1 + n2 <= exact_threshold:
        p_low, p_high = _mwu_exact_tails(ranks, n1, r1)
        one_sided = min(p_low, p_high)
        return MannWhitneyResult(u=u1, p_one_sided=one_sided,
                                 p_two_sided=min(1.0, 2.0 * one_sided), exact=True)

    n = n1 + n2
    mean = n1 * n2 / 2.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = float((tie_counts**3 - tie_counts).sum()) / (n * (n - 1))
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        # every pooled value identical: no evidence either way
        return MannWhitneyResult(u=u1, p_one_sided=0.5, p_two_sided=1.0, exact=False)
    sd = math.sqrt(var)
    p_high = 0.5 * math.erfc(((u1 - mean - 0.5) / sd) / math.sqrt(2.0))
    p_low = 0.5 * math.erfc(((mean - u1 - 0.5) / sd) / math.sqrt(2.0))
    one_sided = min(p_low, p_high)
    return MannWhitneyResult(u=u1, p_one_sided=one_sided,
                             p_two_sided=min(1.0, 2.0 * one_sided), exact=False)


def _mwu_exact_tails(ranks: np.ndarray, n1: int, r1: float) -> tuple[float, float]:
    """Exact lower/upper tail probabilities of the rank sum via subset-count DP."""
    twice = np.rint(2.0 * ranks).astype(np.int64)
    total = int(twice.sum())
    n = len(twice)
    # counts[s][v] = subsets of size s with doubled-rank sum v
    counts = np.zeros((n1 + 1, total + 1), dtype=np.int64)
    counts[0, 0] = 1
    for r in twice:
        for s in range(min(n1, n), 0, -1):
            counts[s, r:] += counts[s - 1, : counts.shape[1] - r]
    dist = counts[n1]
    total_ways = float(dist.sum())
    observed = int(round(2.0 * r1))
    p_low = float(dist[: observed + 1].sum()) / total_ways
    p_high = float(dist[observed:].sum()) / total_ways
    return p_low, p_high


@dataclass(frozen=True)
class GroupComparison:
    """Pooled per-case values per group plus pairwise test results."""

    task_id: str
    groups: tuple[str, ...]
    values: dict        # group label -> np.ndarray of pooled per-case values
    pairwise: tuple     # ((group_a, group_b, MannWhitneyResult, holm_adjusted_two_sided), ...)


def compare_groups(records, grouping: dict, task_id: str) -> GroupComparison:
    """Compare groups of teams on one task's pooled per-case values.

    `grouping` maps team name to group label; teams absent from it are ignored.
    Pairwise Mann-Whitney two-sided p-values are Holm-adjusted over all
    unordered group pairs.
    """
    metric, structure = task_id.split("_", 1)
    field = metric.lower()
    pooled: dict[str, list[float]] = {}
    for record in records:
        if record.structure.value != structure or record.team not in grouping:
            continue
        pooled.setdefault(grouping[record.team], []).append(getattr(record, field))
    labels = tuple(sorted(pooled))
    if len(labels) < 2:
        raise ValueError(f"need at least 2 nonempty groups, got {len(labels)}")
    values = {label: np.asarray(pooled[label], dtype=float) for label in labels}
    pairs = list(itertools.combinations(labels, 2))
    results = [mann_whitney_u(values[ga], values[gb]) for ga, gb in pairs]
    adjusted = holm_adjust([r.p_two_sided for r in results])
    pairwise = tuple(
        (ga, gb, res, float(adj)) for (ga, gb), res, adj in zip(pairs, results, adjusted)
    )
    return GroupComparison(task_id=task_id, groups=labels, values=values, pairwise=pairwise)
