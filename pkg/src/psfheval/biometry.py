"""Ellipse fitting and Angle-of-Progression biometry.

The AoP of a mask pair is the angle between two lines: the long axis of the PS
ellipse, and the ray from its inferior endpoint tangent to the FH ellipse.
Mask regions are fitted along their raster boundary, preferring an ellipse that
reproduces the raster exactly and falling back to a direct least-squares conic
fit on subpixel boundary midpoints. Of the two tangent rays the larger
candidate angle is reported; in the y-down image frame that is the ray touching
the leading skull contour.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import (
    AopUndefinedError,
    StructureOverlapError,
    UndefinedStatisticError,
    UnfittableRegionError,
)
from .ingest import BinaryMask, LabelMask, StructureSelector, select_structure


@dataclass(frozen=True)
class Ellipse:
    """Center/axes/orientation form; semi_major >= semi_minor > 0, theta in [0, pi)."""

    cx: float
    cy: float
    semi_major: float
    semi_minor: float
    theta: float

    def __post_init__(self) -> None:
        if not (self.semi_major >= self.semi_minor > 0):
            raise ValueError(
                f"ellipse axes must satisfy a >= b > 0, got a={self.semi_major}, b={self.semi_minor}"
            )
        object.__setattr__(self, "theta", float(self.theta) % math.pi)

    def implicit(self, x, y):
        """Value of ((x')/a)^2 + ((y')/b)^2 - 1 in the ellipse frame (<0 inside)."""
        ct, st = math.cos(self.theta), math.sin(self.theta)
        dx = np.asarray(x, dtype=float) - self.cx
        dy = np.asarray(y, dtype=float) - self.cy
        u = (dx * ct + dy * st) / self.semi_major
        v = (-dx * st + dy * ct) / self.semi_minor
        return u * u + v * v - 1.0

    def point_at(self, t: float) -> np.ndarray:
        """Parametric boundary point at angle t."""
        ct, st = math.cos(self.theta), math.sin(self.theta)
        u = self.semi_major * math.cos(t)
        v = self.semi_minor * math.sin(t)
        return np.array([self.cx + u * ct - v * st, self.cy + u * st + v * ct])


@dataclass(frozen=True)
class AoPResult:
    """AoP in degrees plus the geometry it was read from."""

    aop: float
    ps_axis: tuple[np.ndarray, np.ndarray]  # (P_sup, P_inf)
    tangent_point: np.ndarray
    candidate_angles: tuple[float, float]


def fit_ellipse(points) -> Ellipse:
    """Direct least-squares conic fit constrained to an ellipse.

    Solves the discriminant-constrained generalized eigenproblem on centered
    coordinates (the numerically stable split into quadratic and linear parts)
    and converts the winning conic to center/axes/orientation form. Exact on
    noise-free samples of a true ellipse up to numerical tolerance.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if pts.shape[0] < 5:
        raise UnfittableRegionError(f"ellipse fit needs at least 5 points, got {pts.shape[0]}")
    mean = pts.mean(axis=0)
    u = pts[:, 0] - mean[0]
    v = pts[:, 1] - mean[1]

    d1 = np.column_stack([u * u, u * v, v * v])
    d2 = np.column_stack([u, v, np.ones_like(u)])
    s1 = d1.T @ d1
    s2 = d1.T @ d2
    s3 = d2.T @ d2
    try:
        t = -np.linalg.solve(s3, s2.T)
    except np.linalg.LinAlgError:
        raise UnfittableRegionError("unfittable region: degenerate point configuration") from None
    m = s1 + s2 @ t
    # premultiply by the inverse of the constraint matrix [[0,0,2],[0,-1,0],[2,0,0]]
    m = np.vstack([m[2] / 2.0, -m[1], m[0] / 2.0])
    try:
        eigval, eigvec = np.linalg.eig(m)
    except np.linalg.LinAlgError:
        raise UnfittableRegionError("unfittable region: eigen decomposition failed") from None
    cond = 4.0 * eigvec[0] * eigvec[2] - eigvec[1] ** 2
    candidates = np.flatnonzero(np.isreal(eigval) & (np.real(cond) > 0))
    if candidates.size == 0:
        raise UnfittableRegionError("unfittable region: no ellipse satisfies the fit")
    a1 = np.real(eigvec[:, candidates[0]])
    coeffs = np.concatenate([a1, t @ a1])
    ellipse = _conic_to_ellipse(coeffs)
    return Ellipse(
        cx=ellipse.cx + mean[0],
        cy=ellipse.cy + mean[1],
        semi_major=ellipse.semi_major,
        semi_minor=ellipse.semi_minor,
        theta=ellipse.theta,
    )


def _conic_to_ellipse(coeffs: np.ndarray) -> Ellipse:
    """Convert Ax^2+Bxy+Cy^2+Dx+Ey+F=0 to center/axes/orientation form."""
    a, b, c, d, e, f = (float(x) for x in coeffs)
    disc = b * b - 4.0 * a * c
    if not disc < 0:
        raise UnfittableRegionError("unfittable region: fitted conic is not an ellipse")
    aq = np.array([[a, b / 2.0, d / 2.0], [b / 2.0, c, e / 2.0], [d / 2.0, e / 2.0, f]])
    a33 = aq[:2, :2]
    center = np.linalg.solve(a33, [-d / 2.0, -e / 2.0])
    evals, evecs = np.linalg.eigh(a33)
    with np.errstate(invalid="ignore", divide="ignore"):
        axes_sq = -np.linalg.det(aq) / (np.linalg.det(a33) * evals)
    if not np.all(axes_sq > 0):
        raise UnfittableRegionError("unfittable region: fitted conic has no real axes")
    axes = np.sqrt(axes_sq)
    major = int(np.argmax(axes))
    theta = math.atan2(evecs[1, major], evecs[0, major])
    return Ellipse(
        cx=float(center[0]),
        cy=float(center[1]),
        semi_major=float(axes[major]),
        semi_minor=float(axes[1 - major]),
        theta=theta,
    )


def _edge_midpoints(mask: BinaryMask) -> np.ndarray:
    """Subpixel boundary estimate: midpoints of pixel edges crossed by the contour.

    For every boundary foreground pixel and each of its background 4-neighbors,
    the contour crosses the shared pixel edge; its midpoint is an unbiased
    half-pixel estimate of the crossing.
    """
    m = mask.mask
    padded = np.pad(m, 1, constant_values=False)
    points = []
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        neighbor = padded[1 + dy : m.shape[0] + 1 + dy, 1 + dx : m.shape[1] + 1 + dx]
        ys, xs = np.nonzero(m & ~neighbor)
        points.append(np.column_stack([xs + dx * 0.5, ys + dy * 0.5]))
    return np.vstack(points)


def _raster_band(mask: BinaryMask) -> tuple[np.ndarray, np.ndarray]:
    """Boundary foreground pixels and their adjacent background pixels."""
    m = mask.mask
    padded = np.pad(m, 1, constant_values=False)
    nb_any = padded[:-2, 1:-1] | padded[2:, 1:-1] | padded[1:-1, :-2] | padded[1:-1, 2:]
    nb_all = padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    fys, fxs = np.nonzero(m & ~nb_all)
    bys, bxs = np.nonzero(~m & nb_any)
    fg = np.column_stack([fxs, fys]).astype(float)
    bg = np.column_stack([bxs, bys]).astype(float)
    return fg, bg


def _max_margin_ellipse(fg: np.ndarray, bg: np.ndarray) -> Ellipse | None:
    """Ellipse consistent with the raster, if one exists.

    Finds the conic separating boundary foreground pixel centers from adjacent
    background pixel centers with maximum margin (a linear program under the
    trace normalization A + C = 1). Returns None when no separating ellipse
    exists, e.g. for hand-drawn regions that are not exactly elliptic.
    """
    if fg.shape[0] < 5 or bg.shape[0] < 5:
        return None
    allpts = np.vstack([fg, bg])
    mu = allpts.mean(axis=0)
    s = max(float(allpts.std()), 1.0)

    def design(p: np.ndarray) -> np.ndarray:
        u = (p[:, 0] - mu[0]) / s
        v = (p[:, 1] - mu[1]) / s
        return np.column_stack([u * u, u * v, v * v, u, v, np.ones_like(u)])

    mf, mb = design(fg), design(bg)
    # variables: 6 conic coefficients plus the margin t, maximized
    a_ub = np.vstack(
        [np.hstack([mf, np.ones((mf.shape[0], 1))]), np.hstack([-mb, np.ones((mb.shape[0], 1))])]
    )
    b_ub = np.zeros(a_ub.shape[0])
    a_eq = np.zeros((1, 7))
    a_eq[0, 0] = a_eq[0, 2] = 1.0
    result = linprog(
        np.array([0, 0, 0, 0, 0, 0, -1.0]),
        A_ub=a_ub,
        b_ub=b_ub,
        A_eq=a_eq,
        b_eq=[1.0],
        bounds=[(None, None)] * 6 + [(0, None)],
        method="highs",
    )
    if not result.success or result.x[6] <= 1e-12:
        return None
    try:
        scaled = _conic_to_ellipse(result.x[:6])
    except UnfittableRegionError:
        return None
    return Ellipse(
        cx=scaled.cx * s + mu[0],
        cy=scaled.cy * s + mu[1],
        semi_major=scaled.semi_major * s,
        semi_minor=scaled.semi_minor * s,
        theta=scaled.theta,
    )


def fit_mask_ellipse(mask: BinaryMask) -> Ellipse:
    """Ellipse of a rasterized region.

    Prefers the maximum-margin conic that classifies every boundary-band pixel
    center exactly as the raster does (the unbiased estimate for clean raster
    regions); falls back to the direct least-squares fit on subpixel boundary
    midpoints when no separating ellipse exists.
    """
    ellipse = _max_margin_ellipse(*_raster_band(mask))
    if ellipse is not None:
        return ellipse
    return fit_ellipse(_edge_midpoints(mask))


def long_axis_endpoints(e: Ellipse) -> tuple[np.ndarray, np.ndarray]:
    """Endpoints of the major axis as (P_sup, P_inf).

    P_inf is the endpoint with the larger x; an exact x tie is broken toward
    the larger y (inferior is right/down in the image frame).
    """
    direction = np.array([math.cos(e.theta), math.sin(e.theta)])
    p1 = np.array([e.cx, e.cy]) + e.semi_major * direction
    p2 = np.array([e.cx, e.cy]) - e.semi_major * direction
    if (p1[0], p1[1]) >= (p2[0], p2[1]):
        return p2, p1
    return p1, p2


def tangents_from_external_point(e: Ellipse, p) -> tuple[np.ndarray, np.ndarray]:
    """The two points of e where a line through the external point p touches it.

    Computed in the frame where e is the unit circle (the image of the
    pole-polar chord under that affine map); each returned point satisfies the
    ellipse equation exactly up to floating error.
    """
    p = np.asarray(p, dtype=float)
    ct, st = math.cos(e.theta), math.sin(e.theta)
    dx, dy = p[0] - e.cx, p[1] - e.cy
    qx = (dx * ct + dy * st) / e.semi_major
    qy = (-dx * st + dy * ct) / e.semi_minor
    r2 = qx * qx + qy * qy
    if r2 <= 1.0:
        raise StructureOverlapError(
            "tangent undefined (structures overlap): point lies inside or on the ellipse"
        )
    alpha = 1.0 / r2
    beta = math.sqrt(r2 - 1.0) / r2
    tangents = []
    for sign in (1.0, -1.0):
        tx = alpha * qx - sign * beta * qy
        ty = alpha * qy + sign * beta * qx
        ux = e.semi_major * tx
        uy = e.semi_minor * ty
        tangents.append(np.array([e.cx + ux * ct - uy * st, e.cy + ux * st + uy * ct]))
    return tangents[0], tangents[1]


def _ray_angle_deg(d: np.ndarray, t: np.ndarray) -> float:
    """Unsigned angle in degrees between two direction vectors, in [0, 180]."""
    cross = d[0] * t[1] - d[1] * t[0]
    dot = d[0] * t[0] + d[1] * t[1]
    return math.degrees(math.atan2(abs(cross), dot))


def aop_from_ellipses(ps: Ellipse, fh: Ellipse) -> AoPResult:
    """AoP from exact ellipse geometry: max tangent angle off the PS axis extension."""
    p_sup, p_inf = long_axis_endpoints(ps)
    t1, t2 = tangents_from_external_point(fh, p_inf)
    d = p_inf - p_sup
    angles = (_ray_angle_deg(d, t1 - p_inf), _ray_angle_deg(d, t2 - p_inf))
    best = int(np.argmax(angles))
    return AoPResult(
        aop=float(max(angles)),
        ps_axis=(p_sup, p_inf),
        tangent_point=(t1, t2)[best],
        candidate_angles=(float(angles[0]), float(angles[1])),
    )


def compute_aop(ps: BinaryMask, fh: BinaryMask) -> AoPResult:
    """AoP from two binary masks: fit ellipses to their boundaries, then measure."""
    if ps.count == 0:
        raise AopUndefinedError("AoP undefined (empty PS foreground)")
    if fh.count == 0:
        raise AopUndefinedError("AoP undefined (empty FH foreground)")
    ps_ellipse = fit_mask_ellipse(ps)
    fh_ellipse = fit_mask_ellipse(fh)
    return aop_from_ellipses(ps_ellipse, fh_ellipse)


def delta_aop(gt: LabelMask, pred: LabelMask) -> float:
    """|AoP(gt) - AoP(pred)| in degrees, both sides through the same pipeline."""
    results = {}
    for side, mask in (("ground truth", gt), ("prediction", pred)):
        ps = select_structure(mask, StructureSelector.PS)
        fh = select_structure(mask, StructureSelector.FH)
        if ps.count == 0:
            raise AopUndefinedError(f"ΔAoP undefined ({side} lacks PS)")
        if fh.count == 0:
            raise AopUndefinedError(f"ΔAoP undefined ({side} lacks FH)")
        try:
            results[side] = compute_aop(ps, fh)
        except UndefinedStatisticError as exc:
            raise type(exc)(f"ΔAoP undefined ({side}): {exc}") from exc
    return abs(results["ground truth"].aop - results["prediction"].aop)
