"""Per-case overlap and surface-distance metrics.

DSC = 2|A∩B| / (|A|+|B|); HD is the max of the two directed max-min Euclidean
distances over the full foreground pixel sets; ASD is the symmetric mean of the
per-boundary-point nearest distances between the two extracted surfaces.

Missing-prediction policy: when exactly one of the two foregrounds is empty the
record is (DSC, HD, ASD) = (0, inf, inf); when both are empty it is (1, 0, 0).

The efficient path uses an exact Euclidean distance transform per mask and
reads distances off the grid; an independent brute-force oracle lives in
``synth.oracle_metrics``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import DimensionMismatchError
from .ingest import (
    BinaryMask,
    CaseMeta,
    LabelMask,
    StructureSelector,
    select_structure,
    validate_pair,
)

INF = float("inf")

STRUCTURES = (StructureSelector.PS, StructureSelector.FH, StructureSelector.PSFH)


@dataclass(frozen=True)
class SurfacePointSet:
    """Boundary pixels of a foreground: pixels with a 4-neighbor outside it."""

    points: np.ndarray  # (n, 2) int64, columns (x, y)


@dataclass(frozen=True)
class MetricRecord:
    """One (case, team, structure) evaluation plus its cohort metadata."""

    case_id: str
    team: str
    structure: StructureSelector
    dsc: float
    hd: float
    asd: float
    meta: CaseMeta


def _check_dims(a: BinaryMask, b: BinaryMask) -> None:
    if a.mask.shape != b.mask.shape:
        raise DimensionMismatchError(
            f"mask dimensions differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )


def dice(gt: BinaryMask, pred: BinaryMask) -> float:
    """Overlap coefficient in [0, 1]; 1 when both empty, 0 when exactly one is."""
    _check_dims(gt, pred)
    n_gt = gt.count
    n_pred = pred.count
    if n_gt == 0 and n_pred == 0:
        return 1.0
    if n_gt == 0 or n_pred == 0:
        return 0.0
    inter = int(np.logical_and(gt.mask, pred.mask).sum())
    return 2.0 * inter / (n_gt + n_pred)


def _boundary(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with at least one 4-neighbor in background or off-image."""
    if not mask.any():
        return np.zeros_like(mask)
    padded = np.pad(mask, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return mask & ~interior


def extract_surface(mask: BinaryMask) -> SurfacePointSet:
    """Boundary pixel set of the foreground; empty foreground gives an empty set."""
    boundary = _boundary(mask.mask)
    ys, xs = np.nonzero(boundary)
    return SurfacePointSet(np.column_stack([xs, ys]).astype(np.int64))


def directed_max_min(a_points, b_points) -> float:
    """max over a in A of the Euclidean distance to the nearest point of B."""
    a = np.asarray(a_points, dtype=float).reshape(-1, 2)
    b = np.asarray(b_points, dtype=float).reshape(-1, 2)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("directed distance undefined for an empty point set")
    dists, _ = cKDTree(b).query(a, k=1)
    return float(np.max(dists))


def _distance_to(target: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance from every pixel to the nearest True pixel of target."""
    return ndimage.distance_transform_edt(~target)


def hausdorff(gt: BinaryMask, pred: BinaryMask, *, on_surface: bool = False, spacing: float = 1.0) -> float:
    """Symmetric Hausdorff distance in pixel units (times spacing).

    Computed over the full foreground pixel sets by default; `on_surface`
    restricts both sets to their extracted boundaries.
    """
    _check_dims(gt, pred)
    a = gt.mask
    b = pred.mask
    if not a.any() and not b.any():
        return 0.0
    if not a.any() or not b.any():
        return INF
    if on_surface:
        a = _boundary(a)
        b = _boundary(b)
    h_ab = float(_distance_to(b)[a].max())
    h_ba = float(_distance_to(a)[b].max())
    return max(h_ab, h_ba) * spacing


def asd(gt: BinaryMask, pred: BinaryMask, *, spacing: float = 1.0) -> float:
    """Average Surface Distance: symmetric mean of directed boundary averages."""
    _check_dims(gt, pred)
    s1 = _boundary(gt.mask)
    s2 = _boundary(pred.mask)
    if not s1.any() and not s2.any():
        return 0.0
    if not s1.any() or not s2.any():
        return INF
    d12 = float(_distance_to(s2)[s1].mean())
    d21 = float(_distance_to(s1)[s2].mean())
    return 0.5 * (d12 + d21) * spacing


def evaluate_case(
    gt: LabelMask,
    pred: LabelMask,
    meta: CaseMeta,
    team: str,
    *,
    hd_on_surface: bool = False,
) -> list[MetricRecord]:
    """Evaluate one ground-truth/prediction pair for PS, FH, and PSFH."""
    validate_pair(gt, pred)
    records = []
    for sel in STRUCTURES:
        g = select_structure(gt, sel)
        p = select_structure(pred, sel)
        records.append(
            MetricRecord(
                case_id=meta.case_id,
                team=team,
                structure=sel,
                dsc=dice(g, p),
                hd=hausdorff(g, p, on_surface=hd_on_surface, spacing=meta.spacing),
                asd=asd(g, p, spacing=meta.spacing),
                meta=meta,
            )
        )
    return records
