"""Per-cell temperature statistics and hotspot flagging on rectified panels."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridTooFine, InputError, NoValidCells
from .imagery import temperature_at
from .rectify import RectifiedPanel


@dataclass(frozen=True)
class CellGrid:
    rows: int
    cols: int
    mean_c: np.ndarray  # (rows, cols); NaN where a cell has no valid pixel
    max_c: np.ndarray
    valid_fraction: np.ndarray


@dataclass(frozen=True)
class HotspotReport:
    reference_c: float
    flagged: list[tuple[int, int, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"reference_c": self.reference_c,
                "flagged": [{"row": r, "col": c, "delta_c": d} for r, c, d in self.flagged]}


def cell_bounds(n_pixels: int, n_cells: int) -> list[tuple[int, int]]:
    """Integer partition of ``range(n_pixels)``; the last cell takes the remainder."""
    size = n_pixels // n_cells
    edges = [i * size for i in range(n_cells)] + [n_pixels]
    return list(zip(edges[:-1], edges[1:]))


def cell_stats(panel: RectifiedPanel, rows: int = 10, cols: int = 6) -> CellGrid:
    img = panel.image
    if rows < 1 or cols < 1:
        raise InputError("cell grid needs rows, cols >= 1")
    if img.height < rows or img.width < cols:
        raise GridTooFine(f"{img.width}x{img.height} panel cannot hold {cols}x{rows} cells")
    if panel.calib is None:
        raise InputError("cell statistics need a temperature calibration")
    temps = temperature_at(panel.calib, img.samples)
    mean_c = np.full((rows, cols), np.nan)
    max_c = np.full((rows, cols), np.nan)
    frac = np.zeros((rows, cols))
    for i, (y0, y1) in enumerate(cell_bounds(img.height, rows)):
        for j, (x0, x1) in enumerate(cell_bounds(img.width, cols)):
            ok = img.valid[y0:y1, x0:x1]
            frac[i, j] = ok.sum() / ok.size
            if ok.any():
                t = temps[y0:y1, x0:x1][ok]
                mean_c[i, j] = t.mean()
                max_c[i, j] = t.max()
    return CellGrid(rows, cols, mean_c, max_c, frac)


def flag_hotspots(cells: CellGrid, delta_threshold_c: float = 4.0,
                  min_valid_fraction: float = 0.5) -> HotspotReport:
    """Flag cells warmer than the panel's median cell by more than the threshold.

    Only cells with enough valid coverage take part, both in the median
    (lower middle value for even counts) and in flagging.
    """
    if delta_threshold_c <= 0:
        raise InputError("delta_threshold_c must be > 0")
    if not 0 <= min_valid_fraction <= 1:
        raise InputError("min_valid_fraction must lie in [0, 1]")
    eligible = (cells.valid_fraction >= min_valid_fraction) & (cells.valid_fraction > 0)
    if not eligible.any():
        raise NoValidCells("no cell meets the coverage requirement")
    means = np.sort(cells.mean_c[eligible])
    reference = float(means[(means.size - 1) // 2])
    flagged = []
    for r, c in zip(*np.nonzero(eligible)):
        delta = float(cells.mean_c[r, c]) - reference
        if delta > delta_threshold_c:
            flagged.append((int(r), int(c), delta))
    return HotspotReport(reference, flagged)
