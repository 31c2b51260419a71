"""End-to-end detection on one image and the detections document it produces.

Stage order: mask overlay -> blur -> Canny -> Hough -> grouping -> grid ->
prominent panel -> rectify -> contrast stretch -> hotspot flagging.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .edgedetect import EdgeMap, canny
from .errors import InputError, NoValidCells
from .evalharness import GroundTruth, MatchOutcome, match_keypoints, match_lines, match_panels
from .hotspot import HotspotReport, cell_stats, flag_hotspots
from .houghgrid import (GridModel, HoughAccumulator, LineRT, PanelQuad, find_peaks, fit_grid,
                        group_lines, hough_accumulate, prominent_panel_index)
from .imagery import GrayImage, Sidecar, TempCalibration, contrast_stretch, mask_overlay
from .rectify import RectifiedPanel, warp_panel

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass
class Detection:
    image_name: str
    calib: TempCalibration
    config: PipelineConfig
    edges: EdgeMap | None = None
    accumulator: HoughAccumulator | None = None
    proposals: list[LineRT] = field(default_factory=list)
    grid: GridModel = field(default_factory=GridModel)
    prominent: int | None = None
    rectified: RectifiedPanel | None = None
    hotspots: HotspotReport | None = None
    warnings: list[str] = field(default_factory=list)

    def to_document(self) -> dict:
        lines = ([dict(ln.to_dict(), family="a") for ln in self.grid.family_a]
                 + [dict(ln.to_dict(), family="b") for ln in self.grid.family_b])
        return {
            "schema_version": SCHEMA_VERSION,
            "image": self.image_name,
            "config_fingerprint": self.config.fingerprint(),
            "calibration": self.calib.to_dict(),
            "lines": lines,
            "corners": [{"x": x, "y": y} for x, y in self.grid.corners],
            "panels": [p.to_list() for p in self.grid.panels],
            "prominent_panel": self.prominent,
            "hotspots": self.hotspots.to_dict() if self.hotspots is not None else None,
            "warnings": list(self.warnings),
        }


def dump_document(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def detect_grid(img: GrayImage, config: PipelineConfig) -> tuple[EdgeMap, HoughAccumulator,
                                                                   list[LineRT], GridModel]:
    """Edges, accumulator, raw proposals and fitted grid for an (already masked) image."""
    scale = 257.0 if img.bit_depth == 16 else 1.0
    edges = canny(img, config.canny_low * scale, config.canny_high * scale, config.blur_sigma)
    acc = hough_accumulate(edges, config.rho_step, config.theta_step)
    proposals = find_peaks(acc, config.vote_threshold)
    grouped = group_lines(proposals, config.group_theta_tol, config.group_rho_tol)
    grid = fit_grid(grouped, config.split_angle, img.width, img.height)
    return edges, acc, proposals, grid


def inspect_panel(img: GrayImage, quad: PanelQuad, calib: TempCalibration,
                  config: PipelineConfig) -> tuple[RectifiedPanel, HotspotReport]:
    """Rectify one panel, stretch its contrast and flag hotspot cells.

    Raises NoValidCells when too little of the panel is usable.
    """
    panel = warp_panel(img, quad, config.rect_width, config.rect_height, calib)
    stretched = contrast_stretch(panel.image, config.stretch_lo_pct, config.stretch_hi_pct, calib)
    panel = RectifiedPanel(stretched.image, stretched.calib, quad)
    cells = cell_stats(panel, config.cell_rows, config.cell_cols)
    report = flag_hotspots(cells, config.hotspot_delta_c, config.min_valid_fraction)
    return panel, report


def run_image(img: GrayImage, sidecar: Sidecar, config: PipelineConfig,
              image_name: str) -> Detection:
    det = Detection(image_name, sidecar.calib, config)
    masked = mask_overlay(img, sidecar.overlay_masks)
    if not masked.valid.any():
        det.warnings.append("all pixels are masked; nothing to detect")
        log.warning("%s: all pixels are masked", image_name)
        return det

    det.edges, det.accumulator, det.proposals, det.grid = detect_grid(masked, config)
    if not det.grid.panels:
        det.warnings.append("no panel quadrilaterals found")
        return det

    det.prominent = prominent_panel_index(det.grid, masked)
    quad = det.grid.panels[det.prominent]
    if not quad.is_simple():
        det.warnings.append("prominent panel is degenerate; skipping rectification")
        return det
    try:
        det.rectified, det.hotspots = inspect_panel(masked, quad, sidecar.calib, config)
    except NoValidCells:
        det.warnings.append("prominent panel has no cells with enough valid pixels")
    except InputError as exc:
        det.warnings.append(f"rectification failed: {exc}")
    return det


def lines_from_document(doc: dict) -> list[LineRT]:
    return [LineRT.from_dict(d) for d in doc.get("lines", [])]


@dataclass(frozen=True)
class ImageEvaluation:
    image: str
    outcome: MatchOutcome
    keypoints_total: int
    keypoints_found: int
    panels_total: int
    panels_found: int


def evaluate_document(doc: dict, truth: GroundTruth, config: PipelineConfig) -> ImageEvaluation:
    outcome = match_lines(lines_from_document(doc), truth.lines, config.eps_tp,
                          config.eps_err, config.eval_theta_tol)
    corners = [(c["x"], c["y"]) for c in doc.get("corners", [])]
    kp = match_keypoints(corners, truth.keypoints, radius=5.0)
    pn = match_panels(doc.get("panels", []), truth.panels, min_iou=0.5)
    return ImageEvaluation(truth.image, outcome, len(truth.keypoints), kp, len(truth.panels), pn)


def accumulator_image(acc: HoughAccumulator) -> GrayImage:
    """Accumulator votes scaled to 0..255 for debugging (theta down, rho across)."""
    v = acc.votes.astype(np.float64)
    top = v.max()
    scaled = np.floor(v / top * 255 + 0.5) if top > 0 else v
    return GrayImage(scaled)
