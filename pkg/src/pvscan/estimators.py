"""scikit-learn style wrappers so detectors plug into pipelines and searches.

Neither estimator learns anything from data: ``fit`` validates the
hyper-parameters and returns ``self``.  Their value is the estimator protocol
itself (``get_params``/``set_params``/``clone``), which lets, for example,
``GridSearchCV`` tune Hough parameters against labelled images through
``GridLineDetector.score``.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import PipelineConfig
from .evalharness import GroundTruth, aggregate, match_lines
from .hotspot import cell_stats, flag_hotspots
from .houghgrid import GridModel
from .imagery import GrayImage
from .pipeline import detect_grid
from .rectify import RectifiedPanel


def check_image(x) -> GrayImage:
    """Accept a GrayImage or a 2-D integer array (uint8 / uint16)."""
    if isinstance(x, GrayImage):
        return x
    arr = np.asarray(x)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale image, got shape {arr.shape}")
    if arr.dtype == np.uint16:
        return GrayImage(arr, 16)
    if arr.dtype.kind in "ui" or (arr.dtype.kind == "f" and np.all(arr == np.round(arr))):
        return GrayImage(arr, 8 if arr.max(initial=0) <= 255 else 16)
    raise ValueError(f"unsupported image dtype {arr.dtype}")


def check_images(X) -> list[GrayImage]:
    if isinstance(X, (GrayImage, np.ndarray)) and np.ndim(getattr(X, "samples", X)) == 2:
        X = [X]
    return [check_image(x) for x in X]


class GridLineDetector(BaseEstimator):
    """Blur, Canny, Hough, grouping and grid fitting as one estimator.

    ``predict`` returns one :class:`GridModel` per image.  ``score`` is the
    F1 of line precision and recall against ground-truth segments.
    """

    def __init__(self, blur_sigma=1.4, canny_low=50.0, canny_high=150.0, rho_step=1.0,
                 theta_step_deg=1.0, vote_threshold=60, group_theta_tol_deg=2.0,
                 group_rho_tol=10.0, split_angle_deg=20.0, eps_tp=5.0, eps_err=15.0,
                 eval_theta_tol_deg=5.0):
        self.blur_sigma = blur_sigma
        self.canny_low = canny_low
        self.canny_high = canny_high
        self.rho_step = rho_step
        self.theta_step_deg = theta_step_deg
        self.vote_threshold = vote_threshold
        self.group_theta_tol_deg = group_theta_tol_deg
        self.group_rho_tol = group_rho_tol
        self.split_angle_deg = split_angle_deg
        self.eps_tp = eps_tp
        self.eps_err = eps_err
        self.eval_theta_tol_deg = eval_theta_tol_deg

    def fit(self, X=None, y=None):
        self.config_ = PipelineConfig().updated(**self.get_params())
        return self

    def predict(self, X) -> list[GridModel]:
        check_is_fitted(self, "config_")
        return [detect_grid(img, self.config_)[3] for img in check_images(X)]

    def score(self, X, y: Sequence[GroundTruth]) -> float:
        grids = self.predict(X)
        if len(grids) != len(y):
            raise ValueError(f"{len(grids)} images but {len(y)} label sets")
        cfg = self.config_
        report = aggregate(
            match_lines(g.lines, gt.lines, cfg.eps_tp, cfg.eps_err, cfg.eval_theta_tol)
            for g, gt in zip(grids, y))
        p, r = report.precision or 0.0, report.recall or 0.0
        return 0.0 if p + r == 0 else 2 * p * r / (p + r)


class HotspotFlagger(BaseEstimator):
    """Flag hotspot cells on rectified panels; ``predict`` returns HotspotReports."""

    def __init__(self, cell_rows=10, cell_cols=6, hotspot_delta_c=4.0, min_valid_fraction=0.5):
        self.cell_rows = cell_rows
        self.cell_cols = cell_cols
        self.hotspot_delta_c = hotspot_delta_c
        self.min_valid_fraction = min_valid_fraction

    def fit(self, X=None, y=None):
        if self.hotspot_delta_c <= 0 or not 0 <= self.min_valid_fraction <= 1:
            raise ValueError("hotspot_delta_c must be > 0 and min_valid_fraction in [0, 1]")
        if self.cell_rows < 1 or self.cell_cols < 1:
            raise ValueError("cell grid needs at least one row and column")
        self.fitted_ = True
        return self

    def predict(self, X: Sequence[RectifiedPanel]):
        check_is_fitted(self, "fitted_")
        if isinstance(X, RectifiedPanel):
            X = [X]
        return [flag_hotspots(cell_stats(p, self.cell_rows, self.cell_cols),
                              self.hotspot_delta_c, self.min_valid_fraction) for p in X]

    def transform(self, X: Sequence[RectifiedPanel]) -> np.ndarray:
        """Per-cell mean temperatures, one flattened row per panel."""
        check_is_fitted(self, "fitted_")
        if isinstance(X, RectifiedPanel):
            X = [X]
        return np.stack([cell_stats(p, self.cell_rows, self.cell_cols).mean_c.ravel() for p in X])
