"""Evaluation engine for PS/FH segmentation masks.

Computes overlap and surface-distance metrics, ellipse-based Angle of
Progression biometry, multi-scheme leaderboards with bootstrap rank-stability
analysis, and cohort statistics over ground-truth/prediction mask pairs. A
synthetic-case generator supplies independent oracles for every computation.
"""

from .biometry import (
    AoPResult,
    Ellipse,
    aop_from_ellipses,
    compute_aop,
    delta_aop,
    fit_ellipse,
    fit_mask_ellipse,
    long_axis_endpoints,
    tangents_from_external_point,
)
from .cohorts import (
    GroupComparison,
    MannWhitneyResult,
    Stratum,
    compare_groups,
    derive_aop_stratum,
    mann_whitney_u,
    stratify,
)
from .errors import (
    AopUndefinedError,
    DataError,
    DimensionMismatchError,
    ManifestError,
    PaletteError,
    StructureOverlapError,
    TestUndefinedError,
    UndefinedStatisticError,
    UnfittableRegionError,
)
from .ingest import (
    BinaryMask,
    CaseMeta,
    LabelMask,
    ManifestEntry,
    StructureSelector,
    load_mask,
    read_manifest,
    save_mask,
    select_structure,
    validate_pair,
)
from .metrics import (
    MetricRecord,
    SurfacePointSet,
    asd,
    dice,
    directed_max_min,
    evaluate_case,
    extract_surface,
    hausdorff,
)
from .ranking import (
    ALL_TASKS,
    SCHEMES,
    MetricTable,
    StabilityReport,
    Task,
    aggregate_then_rank,
    bootstrap_rankings,
    compute_ranking,
    holm_adjust,
    kendall_tau,
    overall_rank,
    rank_matrix,
    rank_then_aggregate,
    rank_values,
    significance_map,
    stability_summary,
    test_based_rank,
    wilcoxon_signed_rank,
)
from .report import BiometryRow, BoxStats, box_stats, emit_report
from .synth import (
    SceneSpec,
    gen_case,
    gen_challenge,
    oracle_metrics,
    oracle_tangent,
    perturb,
    sample_ellipse,
    sample_scene,
)

__version__ = "0.1.0"
