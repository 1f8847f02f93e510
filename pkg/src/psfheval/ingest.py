"""Mask decoding, cohort metadata, and ground-truth/prediction pairing.

Masks are label grids over {0 = background, 1 = PS, 2 = FH}. Image files are
accepted either as 3-color RGB (red = PS, green = FH, black = background) or as
single-channel index maps whose raw values are the labels. The image coordinate
convention used everywhere downstream is x = column increasing rightward,
y = row increasing downward.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError, DimensionMismatchError, ManifestError, PaletteError

BACKGROUND = 0
LABEL_PS = 1
LABEL_FH = 2

# color -> label map for 3-color mask files
DEFAULT_PALETTE: dict[tuple[int, int, int], int] = {
    (0, 0, 0): BACKGROUND,
    (255, 0, 0): LABEL_PS,
    (0, 255, 0): LABEL_FH,
}

SPLITS = ("Train", "Test1", "Test2")
INSTITUTIONS = ("SMU", "JNU")
SCANNERS = ("EsaoteMyLab", "ObEye")
AOP_STRATA = ("Below120", "AtLeast120")


class StructureSelector(Enum):
    """Which structure a binary view selects; PSFH is the union of PS and FH."""

    PS = "PS"
    FH = "FH"
    PSFH = "PSFH"


@dataclass(frozen=True)
class LabelMask:
    """A height x width grid of labels in {0, 1, 2}, immutable after construction."""

    labels: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.labels)
        if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
            raise DataError(f"label grid must be 2-D and nonempty, got shape {arr.shape}")
        if not np.isin(arr, (0, 1, 2)).all():
            bad = sorted(set(np.unique(arr)) - {0, 1, 2})
            raise DataError(f"label grid contains values outside {{0,1,2}}: {bad}")
        arr = np.ascontiguousarray(arr, dtype=np.uint8)
        arr.flags.writeable = False
        object.__setattr__(self, "labels", arr)

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True)
class BinaryMask:
    """A boolean foreground grid sharing the LabelMask coordinate convention."""

    mask: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.mask)
        if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
            raise DataError(f"binary mask must be 2-D and nonempty, got shape {arr.shape}")
        arr = np.ascontiguousarray(arr, dtype=bool)
        arr.flags.writeable = False
        object.__setattr__(self, "mask", arr)

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    def points(self) -> np.ndarray:
        """Foreground pixel coordinates as an (n, 2) array of (x, y) columns."""
        ys, xs = np.nonzero(self.mask)
        return np.column_stack([xs, ys]).astype(np.int64)


@dataclass(frozen=True)
class CaseMeta:
    """Cohort metadata attached to one case; supplied by the manifest, not inferred."""

    case_id: str
    split: str
    institution: str
    scanner: str
    aop_stratum: str | None = None
    spacing: float = 1.0
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ManifestEntry:
    meta: CaseMeta
    gt_path: Path


def load_mask(path, palette=None, tolerance: int = 0) -> LabelMask:
    """Decode a BMP/PNG mask file into a LabelMask.

    RGB(A) images are mapped through `palette` (default red/green/black) with an
    optional per-channel absolute tolerance for anti-aliased encodings.
    Single-channel images are treated as index maps whose raw values are labels.
    A pixel matching no palette entry raises PaletteError naming the color and
    its (x, y) coordinates.
    """
    palette = dict(DEFAULT_PALETTE if palette is None else palette)
    if any(label not in (0, 1, 2) for label in palette.values()):
        raise ValueError("palette may only map colors to labels 0, 1, or 2")
    p = Path(path)
    try:
        with Image.open(p) as img:
            img.load()
            mode = img.mode
            if mode in ("L", "I", "I;16"):
                arr = np.asarray(img)
                return _decode_index_map(arr, p)
            rgb = np.asarray(img.convert("RGB"))
    except FileNotFoundError:
        raise DataError(f"mask file not found: {p}") from None
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"cannot decode mask file {p}: {exc}") from exc
    return _decode_rgb(rgb, palette, tolerance, p)


def _decode_index_map(arr: np.ndarray, path: Path) -> LabelMask:
    bad = ~np.isin(arr, (0, 1, 2))
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise PaletteError(
            f"{path}: index value {int(arr[y, x])} at (x={x}, y={y}) is not a label in {{0,1,2}}"
        )
    return LabelMask(arr)


def _decode_rgb(rgb: np.ndarray, palette, tolerance: int, path: Path) -> LabelMask:
    h, w = rgb.shape[:2]
    labels = np.zeros((h, w), dtype=np.uint8)
    matched = np.zeros((h, w), dtype=bool)
    signed = rgb.astype(np.int16)
    for color, label in palette.items():
        diff = np.abs(signed - np.asarray(color, dtype=np.int16))
        hit = (diff <= tolerance).all(axis=-1) & ~matched
        labels[hit] = label
        matched |= hit
    if not matched.all():
        y, x = np.argwhere(~matched)[0]
        color = tuple(int(c) for c in rgb[y, x])
        raise PaletteError(f"{path}: color {color} at (x={x}, y={y}) matches no palette entry")
    return LabelMask(labels)


def mask_to_rgb(mask: LabelMask, palette=None) -> np.ndarray:
    """Render a LabelMask back to RGB through the inverse palette (round-trip lossless)."""
    palette = DEFAULT_PALETTE if palette is None else palette
    inverse = {label: color for color, label in palette.items()}
    out = np.zeros((mask.height, mask.width, 3), dtype=np.uint8)
    for label, color in inverse.items():
        out[mask.labels == label] = color
    return out


def save_mask(mask: LabelMask, path, palette=None) -> None:
    """Write a LabelMask as an RGB image; format follows the file suffix (PNG/BMP)."""
    Image.fromarray(mask_to_rgb(mask, palette)).save(Path(path))


def select_structure(mask: LabelMask, sel: StructureSelector) -> BinaryMask:
    """Binary view of one structure; PSFH selects the union of labels 1 and 2."""
    if sel is StructureSelector.PS:
        fg = mask.labels == LABEL_PS
    elif sel is StructureSelector.FH:
        fg = mask.labels == LABEL_FH
    else:
        fg = mask.labels != BACKGROUND
    return BinaryMask(fg)


def validate_pair(gt: LabelMask, pred: LabelMask) -> None:
    """Hard error on any dimension mismatch; masks are never resampled."""
    if (gt.height, gt.width) != (pred.height, pred.width):
        raise DimensionMismatchError(
            f"mask dimensions differ: ground truth {gt.width}x{gt.height} "
            f"vs prediction {pred.width}x{pred.height}"
        )


_REQUIRED_COLUMNS = ("case_id", "gt_path", "split", "institution", "scanner")
_OPTIONAL_COLUMNS = ("aop_stratum", "spacing", "aop_deg")


def read_manifest(path) -> list[ManifestEntry]:
    """Parse a case manifest CSV.

    Required columns, in order: case_id, gt_path, split, institution, scanner.
    Recognized optional columns: aop_stratum, spacing, aop_deg. Rows are split
    on raw commas; a path containing a comma is rejected rather than unquoted.
    gt_path is resolved relative to the manifest's directory.
    """
    p = Path(path)
    try:
        lines = p.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise ManifestError(f"manifest not found: {p}") from None
    except UnicodeDecodeError as exc:
        raise ManifestError(f"manifest {p} is not valid UTF-8: {exc}") from exc
    rows = [line.split(",") for line in lines if line.strip()]
    if not rows:
        raise ManifestError(f"manifest {p} is empty")
    header = [cell.strip() for cell in rows[0]]
    if tuple(header[: len(_REQUIRED_COLUMNS)]) != _REQUIRED_COLUMNS:
        raise ManifestError(
            f"manifest {p} header must start with {','.join(_REQUIRED_COLUMNS)}; got {','.join(header)}"
        )
    for col in header[len(_REQUIRED_COLUMNS) :]:
        if col not in _OPTIONAL_COLUMNS:
            raise ManifestError(f"manifest {p}: unrecognized column {col!r}")
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ManifestError(
                f"manifest {p} line {lineno}: expected {len(header)} fields, got {len(row)}"
                " (paths containing commas are not supported)"
            )
        cells = dict(zip(header, (cell.strip() for cell in row)))
        case_id = cells["case_id"]
        if not case_id:
            raise ManifestError(f"manifest {p} line {lineno}: empty case_id")
        if case_id in seen:
            raise ManifestError(f"manifest {p} line {lineno}: duplicate case_id {case_id!r}")
        seen.add(case_id)
        if cells["split"] not in SPLITS:
            raise ManifestError(
                f"manifest {p} line {lineno}: split must be one of {SPLITS}, got {cells['split']!r}"
            )
        if cells["institution"] not in INSTITUTIONS:
            raise ManifestError(
                f"manifest {p} line {lineno}: institution must be one of {INSTITUTIONS},"
                f" got {cells['institution']!r}"
            )
        if cells["scanner"] not in SCANNERS:
            raise ManifestError(
                f"manifest {p} line {lineno}: scanner must be one of {SCANNERS},"
                f" got {cells['scanner']!r}"
            )
        stratum = cells.get("aop_stratum", "") or None
        if stratum is not None and stratum not in AOP_STRATA:
            raise ManifestError(
                f"manifest {p} line {lineno}: aop_stratum must be one of {AOP_STRATA},"
                f" got {stratum!r}"
            )
        spacing = 1.0
        if cells.get("spacing"):
            try:
                spacing = float(cells["spacing"])
            except ValueError:
                raise ManifestError(
                    f"manifest {p} line {lineno}: spacing is not a number: {cells['spacing']!r}"
                ) from None
            if not spacing > 0:
                raise ManifestError(f"manifest {p} line {lineno}: spacing must be positive")
        extra = {}
        if cells.get("aop_deg"):
            extra["aop_deg"] = cells["aop_deg"]
        meta = CaseMeta(
            case_id=case_id,
            split=cells["split"],
            institution=cells["institution"],
            scanner=cells["scanner"],
            aop_stratum=stratum,
            spacing=spacing,
            extra=extra,
        )
        entries.append(ManifestEntry(meta=meta, gt_path=(p.parent / cells["gt_path"])))
    return entries


def write_manifest(path, rows: list[dict]) -> None:
    """Write a manifest CSV; rows are dicts keyed by column name."""
    columns = list(_REQUIRED_COLUMNS)
    for opt in _OPTIONAL_COLUMNS:
        if any(opt in row for row in rows):
            columns.append(opt)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([row.get(col, "") for col in columns])
