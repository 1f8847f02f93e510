"""Synthetic scenes with analytically known AoP, perturbations, and oracles.

Scenes are a PS ellipse plus an FH ellipse rasterized at pixel centers (a pixel
is foreground iff its center satisfies the ellipse inequality). The analytic
AoP comes from the exact ellipse parameters through the same max-tangent-angle
rule as the mask pipeline, with no raster involved. Brute-force metric and
tangency oracles provide independent code paths for differential testing.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .biometry import AoPResult, Ellipse, aop_from_ellipses, long_axis_endpoints
from .ingest import BinaryMask, LabelMask, StructureSelector

log = logging.getLogger(__name__)

LABEL_OF = {StructureSelector.PS: 1, StructureSelector.FH: 2}


@dataclass(frozen=True)
class SceneSpec:
    """Exact geometry of one synthetic case; PS rasterizes to label 1, FH to 2."""

    width: int
    height: int
    ps: Ellipse
    fh: Ellipse

    def scaled(self, factor: float) -> "SceneSpec":
        """Same scene with every length multiplied; the analytic AoP is unchanged."""

        def scale(e: Ellipse) -> Ellipse:
            return Ellipse(e.cx * factor, e.cy * factor, e.semi_major * factor,
                           e.semi_minor * factor, e.theta)

        return SceneSpec(
            width=int(round(self.width * factor)),
            height=int(round(self.height * factor)),
            ps=scale(self.ps),
            fh=scale(self.fh),
        )


def _ellipse_extents(e: Ellipse) -> tuple[float, float]:
    """Axis-aligned half-extents of the ellipse's bounding box."""
    ct, st = math.cos(e.theta), math.sin(e.theta)
    ex = math.hypot(e.semi_major * ct, e.semi_minor * st)
    ey = math.hypot(e.semi_major * st, e.semi_minor * ct)
    return ex, ey


def rasterize_ellipse(e: Ellipse, width: int, height: int) -> BinaryMask:
    """Pixels whose centers lie inside or on the ellipse."""
    yy, xx = np.mgrid[0:height, 0:width]
    return BinaryMask(e.implicit(xx, yy) <= 0.0)


def analytic_aop(spec: SceneSpec) -> AoPResult:
    """AoP of the exact scene geometry (no raster, no fitting)."""
    return aop_from_ellipses(spec.ps, spec.fh)


def gen_case(spec: SceneSpec) -> tuple[LabelMask, float]:
    """Rasterize a scene and return it with its analytic AoP in degrees.

    Rejects scenes whose ellipses leave the frame, overlap, or put the inferior
    PS endpoint inside the FH ellipse.
    """
    for name, e in (("PS", spec.ps), ("FH", spec.fh)):
        ex, ey = _ellipse_extents(e)
        if not (e.cx - ex >= 1 and e.cx + ex <= spec.width - 2
                and e.cy - ey >= 1 and e.cy + ey <= spec.height - 2):
            raise ValueError(f"{name} ellipse does not fit inside the {spec.width}x{spec.height} frame")
    _, p_inf = long_axis_endpoints(spec.ps)
    if not spec.fh.implicit(p_inf[0], p_inf[1]) > 0:
        raise ValueError("inferior PS endpoint lies inside the FH ellipse")
    ps = rasterize_ellipse(spec.ps, spec.width, spec.height)
    fh = rasterize_ellipse(spec.fh, spec.width, spec.height)
    if np.logical_and(ps.mask, fh.mask).any():
        raise ValueError("PS and FH rasters overlap")
    labels = np.zeros((spec.height, spec.width), dtype=np.uint8)
    labels[ps.mask] = LABEL_OF[StructureSelector.PS]
    labels[fh.mask] = LABEL_OF[StructureSelector.FH]
    result = analytic_aop(spec)
    if not 0.0 < result.aop < 180.0:
        raise ValueError(f"scene has degenerate analytic AoP {result.aop}")
    return LabelMask(labels), result.aop


def translate(mask: LabelMask, dx: int, dy: int) -> LabelMask:
    """Shift all foreground by whole pixels; pixels leaving the frame are dropped."""
    labels = mask.labels
    h, w = labels.shape
    ys, xs = np.nonzero(labels)
    nx, ny = xs + int(dx), ys + int(dy)
    keep = (nx >= 0) & (nx < w) & (ny >= 0) & (ny < h)
    if not keep.all():
        log.warning("translate(%d, %d) clamped %d pixels at the frame edge",
                    dx, dy, int((~keep).sum()))
    out = np.zeros_like(labels)
    out[ny[keep], nx[keep]] = labels[ys[keep], xs[keep]]
    return LabelMask(out)


def _dilate_once(m: np.ndarray) -> np.ndarray:
    out = m.copy()
    out[1:, :] |= m[:-1, :]
    out[:-1, :] |= m[1:, :]
    out[:, 1:] |= m[:, :-1]
    out[:, :-1] |= m[:, 1:]
    return out


def _erode_once(m: np.ndarray) -> np.ndarray:
    padded = np.pad(m, 1, constant_values=False)
    return (padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]) & m


def dilate(mask: LabelMask, k: int) -> LabelMask:
    """Grow each structure by k 4-connected steps; refuses to merge structures."""
    grown = {}
    for label in LABEL_OF.values():
        m = mask.labels == label
        for _ in range(k):
            m = _dilate_once(m)
        grown[label] = m
    if np.logical_and(grown[1], grown[2]).any():
        raise ValueError(f"dilate({k}) would merge the PS and FH structures")
    out = np.zeros_like(mask.labels)
    for label, m in grown.items():
        out[m] = label
    return LabelMask(out)


def erode(mask: LabelMask, k: int) -> LabelMask:
    """Shrink each structure by k 4-connected steps (frame border erodes too)."""
    out = np.zeros_like(mask.labels)
    for label in LABEL_OF.values():
        m = mask.labels == label
        for _ in range(k):
            m = _erode_once(m)
        out[m] = label
    return LabelMask(out)


def drop_structure(mask: LabelMask, structure: StructureSelector) -> LabelMask:
    """Remove every pixel of one structure (PSFH drops both)."""
    out = np.array(mask.labels)
    if structure in (StructureSelector.PS, StructureSelector.PSFH):
        out[out == LABEL_OF[StructureSelector.PS]] = 0
    if structure in (StructureSelector.FH, StructureSelector.PSFH):
        out[out == LABEL_OF[StructureSelector.FH]] = 0
    return LabelMask(out)


def perturb(mask: LabelMask, op: str, **kwargs) -> LabelMask:
    """Dispatch a deterministic edit: translate(dx, dy), dilate(k), erode(k), drop(structure)."""
    if op == "translate":
        return translate(mask, kwargs["dx"], kwargs["dy"])
    if op == "dilate":
        return dilate(mask, kwargs["k"])
    if op == "erode":
        return erode(mask, kwargs["k"])
    if op == "drop":
        return drop_structure(mask, kwargs["structure"])
    raise ValueError(f"unknown perturbation {op!r}")


# --- brute-force oracles -------------------------------------------------

def _min_dists(a_pts: np.ndarray, b_pts: np.ndarray) -> np.ndarray:
    """For each point of A, its distance to the nearest point of B, O(|A||B|)."""
    a = np.asarray(a_pts, dtype=float).reshape(-1, 2)
    b = np.asarray(b_pts, dtype=float).reshape(-1, 2)
    out = np.empty(a.shape[0])
    chunk = max(1, int(4e6) // max(1, b.shape[0]))
    for start in range(0, a.shape[0], chunk):
        block = a[start : start + chunk]
        d2 = ((block[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
        out[start : start + chunk] = np.sqrt(d2.min(axis=1))
    return out


def _oracle_surface(points: set) -> set:
    """Boundary by per-pixel 4-neighbor set membership (off-grid counts outside)."""
    return {
        (x, y)
        for (x, y) in points
        if (x - 1, y) not in points
        or (x + 1, y) not in points
        or (x, y - 1) not in points
        or (x, y + 1) not in points
    }


def oracle_metrics(gt: BinaryMask, pred: BinaryMask, *, hd_on_surface: bool = False,
                   spacing: float = 1.0) -> tuple[float, float, float]:
    """(dsc, hd, asd) by brute force, independent of the distance-transform path."""
    set_a = {(int(x), int(y)) for x, y in gt.points()}
    set_b = {(int(x), int(y)) for x, y in pred.points()}
    if not set_a and not set_b:
        return 1.0, 0.0, 0.0
    if not set_a or not set_b:
        return 0.0, float("inf"), float("inf")
    dsc = 2.0 * len(set_a & set_b) / (len(set_a) + len(set_b))

    surf_a = _oracle_surface(set_a)
    surf_b = _oracle_surface(set_b)
    hd_a, hd_b = (surf_a, surf_b) if hd_on_surface else (set_a, set_b)
    pts_ha = np.array(sorted(hd_a), dtype=float)
    pts_hb = np.array(sorted(hd_b), dtype=float)
    hd = max(_min_dists(pts_ha, pts_hb).max(), _min_dists(pts_hb, pts_ha).max())

    pts_sa = np.array(sorted(surf_a), dtype=float)
    pts_sb = np.array(sorted(surf_b), dtype=float)
    asd = 0.5 * (_min_dists(pts_sa, pts_sb).mean() + _min_dists(pts_sb, pts_sa).mean())
    return dsc, float(hd) * spacing, float(asd) * spacing


def oracle_tangent(contour_points, p) -> tuple[np.ndarray, np.ndarray]:
    """Tangent points by polar-angle sweep: the contour points of extreme bearing.

    All contour points lie on one closed side of each line p-T. Requires p
    outside the contour's hull and at least 16 contour points.
    """
    pts = np.asarray(contour_points, dtype=float).reshape(-1, 2)
    if pts.shape[0] < 16:
        raise ValueError(f"tangent sweep needs at least 16 contour points, got {pts.shape[0]}")
    p = np.asarray(p, dtype=float)
    vecs = pts - p
    ref = pts.mean(axis=0) - p
    ref_angle = math.atan2(ref[1], ref[0])
    rel = (np.arctan2(vecs[:, 1], vecs[:, 0]) - ref_angle + math.pi) % (2 * math.pi) - math.pi
    if rel.max() - rel.min() >= math.pi:
        raise ValueError("point lies inside the contour hull; tangent sweep undefined")
    return pts[int(np.argmin(rel))], pts[int(np.argmax(rel))]


# --- seeded samplers ------------------------------------------------------

def case_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based per-case generator so sampled cases are order-independent."""
    return np.random.Generator(np.random.Philox(key=np.array([seed, index], dtype=np.uint64)))


def sample_ellipse(rng: np.random.Generator, *, size: int = 256,
                   a_range: tuple[float, float] = (10.0, 60.0), b_min: float = 5.0) -> Ellipse:
    """Random ellipse fully inside a size x size frame."""
    a = rng.uniform(*a_range)
    b = rng.uniform(b_min, a)
    theta = rng.uniform(0.0, math.pi)
    margin = a + 3.0
    cx = rng.uniform(margin, size - margin)
    cy = rng.uniform(margin, size - margin)
    return Ellipse(cx=cx, cy=cy, semi_major=a, semi_minor=b, theta=theta)


def sample_scene(rng: np.random.Generator, aop_deg: float, *, size: int = 256) -> SceneSpec:
    """Scene whose analytic AoP equals `aop_deg` (the descent parameter).

    The FH is a circle, so the target follows from plain trigonometry:
    AoP = phi + asin(r/d), with phi the angle of the FH center off the PS axis
    extension. Feasible targets at this geometry are roughly (24, 173) degrees;
    outside that the structures would collide or leave the frame.
    """
    scale = size / 256.0
    b_ps = rng.uniform(6.0, 9.0) * scale
    a_ps = rng.uniform(18.0, 26.0) * scale
    theta_ps = math.radians(rng.uniform(-20.0, 20.0))
    clearance = 4.0 * scale

    h_deg = rng.uniform(12.0, 26.0)
    phi_deg = aop_deg - h_deg
    if phi_deg < 18.0:
        h_deg = aop_deg - 18.0
        phi_deg = 18.0
    if phi_deg >= 178.0:
        raise ValueError(f"target AoP {aop_deg} is not constructible")
    h = math.radians(h_deg)
    phi = math.radians(phi_deg)

    d = rng.uniform(42.0, 60.0) * scale
    if phi_deg > 90.0:
        needed = (b_ps + clearance) / (math.sin(phi) - math.sin(h))
        if needed > d:
            d = needed * 1.05
    r = d * math.sin(h)

    # geometry relative to P_inf at the origin, axis pointing along theta_ps
    u = np.array([math.cos(theta_ps), math.sin(theta_ps)])
    ps_center = -a_ps * u
    fh_angle = theta_ps + phi
    fh_center = d * np.array([math.cos(fh_angle), math.sin(fh_angle)])

    ps = Ellipse(ps_center[0], ps_center[1], a_ps, b_ps, theta_ps)
    fh = Ellipse(fh_center[0], fh_center[1], r, r, 0.0)
    ex_ps, ey_ps = _ellipse_extents(ps)
    lo_x = min(ps.cx - ex_ps, fh.cx - r)
    hi_x = max(ps.cx + ex_ps, fh.cx + r)
    lo_y = min(ps.cy - ey_ps, fh.cy - r)
    hi_y = max(ps.cy + ey_ps, fh.cy + r)
    margin = 4.0 * scale
    if hi_x - lo_x > size - 2 * margin or hi_y - lo_y > size - 2 * margin:
        raise ValueError(f"scene for AoP {aop_deg} does not fit a {size}px frame")
    shift_x = margin - lo_x + (size - 2 * margin - (hi_x - lo_x)) / 2.0
    shift_y = margin - lo_y + (size - 2 * margin - (hi_y - lo_y)) / 2.0

    def placed(e: Ellipse) -> Ellipse:
        return Ellipse(e.cx + shift_x, e.cy + shift_y, e.semi_major, e.semi_minor, e.theta)

    return SceneSpec(width=size, height=size, ps=placed(ps), fh=placed(fh))


TEAM_PROFILES = ("echo", "drift", "smudge")


def apply_team_profile(mask: LabelMask, team: str, case_index: int) -> LabelMask:
    """Deterministic mock-team prediction from a ground-truth mask.

    echo copies the truth; drift translates it; smudge dilates it and loses the
    FH structure on every tenth case (exercising the missing-prediction path).
    """
    if team == "echo":
        return mask
    if team == "drift":
        return translate(mask, 2, 1)
    if team == "smudge":
        out = dilate(mask, 1)
        if case_index % 10 == 0:
            out = drop_structure(out, StructureSelector.FH)
        return out
    raise ValueError(f"unknown team profile {team!r}")


def gen_challenge(out_dir, n_cases: int = 50, seed: int = 0, *, size: int = 256,
                  with_predictions: bool = True, teams=TEAM_PROFILES) -> Path:
    """Write a synthetic challenge: ground-truth masks, manifest, mock predictions.

    Targets sweep the clinically plausible AoP range so both AoP strata are
    populated; institution/scanner pairs follow the real cohort pairing. Every
    case is sampled from a counter-based generator keyed on (seed, case index).
    Returns the manifest path.
    """
    from .ingest import save_mask, write_manifest

    out = Path(out_dir)
    gt_dir = out / "gt"
    gt_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    masks = {}
    lo, hi = 55.0, 168.0
    for i in range(n_cases):
        rng = case_rng(seed, i)
        target = lo + (hi - lo) * (i / max(n_cases - 1, 1)) + rng.uniform(-2.0, 2.0)
        target = float(np.clip(target, lo, hi))
        spec = sample_scene(rng, target, size=size)
        mask, aop = gen_case(spec)
        case_id = f"case{i:04d}"
        masks[case_id] = mask
        save_mask(mask, gt_dir / f"{case_id}.png")
        smu = i % 10 < 7
        rows.append({
            "case_id": case_id,
            "gt_path": f"gt/{case_id}.png",
            "split": "Test2",
            "institution": "SMU" if smu else "JNU",
            "scanner": "EsaoteMyLab" if smu else "ObEye",
            "aop_stratum": "AtLeast120" if aop >= 120.0 else "Below120",
            "aop_deg": f"{aop:.4f}",
        })
    manifest_path = out / "manifest.csv"
    write_manifest(manifest_path, rows)
    if with_predictions:
        for team in teams:
            team_dir = out / "preds" / team
            team_dir.mkdir(parents=True, exist_ok=True)
            for i, (case_id, mask) in enumerate(sorted(masks.items())):
                save_mask(apply_team_profile(mask, team, i), team_dir / f"{case_id}.png")
    return manifest_path


def random_mask(rng: np.random.Generator, size: int = 64, p_empty: float = 0.03) -> BinaryMask:
    """Random blobby foreground (union of discs); occasionally empty."""
    if rng.random() < p_empty:
        return BinaryMask(np.zeros((size, size), dtype=bool))
    yy, xx = np.mgrid[0:size, 0:size]
    m = np.zeros((size, size), dtype=bool)
    for _ in range(int(rng.integers(1, 5))):
        cx = rng.uniform(4, size - 4)
        cy = rng.uniform(4, size - 4)
        r = rng.uniform(2.0, size / 4.0)
        m |= (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
    return BinaryMask(m)
