import numpy as np
import pytest

from psfheval.ingest import BinaryMask, CaseMeta, LabelMask


def binary_from_rows(rows) -> BinaryMask:
    """BinaryMask from an iterable of strings, '#' marking foreground."""
    grid = np.array([[c == "#" for c in row] for row in rows], dtype=bool)
    return BinaryMask(grid)


def labels_from_rows(rows) -> LabelMask:
    """LabelMask from strings of digits."""
    grid = np.array([[int(c) for c in row] for row in rows], dtype=np.uint8)
    return LabelMask(grid)


def square_mask(size: int, x0: int, y0: int, side: int) -> BinaryMask:
    grid = np.zeros((size, size), dtype=bool)
    grid[y0 : y0 + side, x0 : x0 + side] = True
    return BinaryMask(grid)


@pytest.fixture
def meta():
    return CaseMeta(case_id="c1", split="Test2", institution="SMU", scanner="EsaoteMyLab")
