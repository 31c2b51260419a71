"""Thermal inspection of photovoltaic arrays: grid-line detection, panel
rectification, hotspot flagging, and a labelled evaluation harness."""

__version__ = "0.1.0"

from .config import PipelineConfig, load_config
from .edgedetect import EdgeMap, canny, gaussian_blur
from .errors import InputError, PVScanError
from .evalharness import (GroundTruth, MetricsReport, compute_metrics, match_lines,
                          render_table)
from .hotspot import CellGrid, HotspotReport, cell_stats, flag_hotspots
from .houghgrid import (GridModel, HoughAccumulator, LineRT, PanelQuad, fit_grid,
                        group_lines, hough_accumulate, hough_lines)
from .imagery import (GrayImage, TempCalibration, contrast_stretch, load_pgm, read_pgm,
                      save_pgm, temperature_at, write_pgm)
from .pipeline import detect_grid, run_image
from .rectify import Homography, homography_from_points, warp_panel
from .synthgen import SceneSpec, random_scene_spec, render_scene

__all__ = [
    "CellGrid", "EdgeMap", "GrayImage", "GridModel", "GroundTruth", "Homography",
    "HotspotReport", "HoughAccumulator", "InputError", "LineRT", "MetricsReport",
    "PVScanError", "PanelQuad", "PipelineConfig", "SceneSpec", "TempCalibration",
    "canny", "cell_stats", "compute_metrics", "contrast_stretch", "detect_grid",
    "fit_grid", "flag_hotspots", "gaussian_blur", "group_lines", "homography_from_points",
    "hough_accumulate", "hough_lines", "load_config", "load_pgm", "match_lines",
    "random_scene_spec", "read_pgm", "render_scene", "render_table", "run_image",
    "save_pgm", "temperature_at", "warp_panel", "write_pgm",
]
