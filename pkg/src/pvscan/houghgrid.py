"""Hough line detection and grid fitting for PV array images.

Lines use the normal form ``x*cos(theta) + y*sin(theta) = rho`` with the
origin at the top-left pixel centre, ``x`` to the right and ``y`` down, and
``theta`` in ``[0, pi)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .edgedetect import EdgeMap
from .errors import InputError, NoPanels, Parallel
from .imagery import GrayImage

_CHUNK = 8192


@dataclass(frozen=True)
class LineRT:
    rho: float
    theta: float
    votes: float = 0

    def to_dict(self) -> dict:
        return {"rho": self.rho, "theta": self.theta, "votes": self.votes}

    @classmethod
    def from_dict(cls, d) -> "LineRT":
        return cls(float(d["rho"]), float(d["theta"]), d.get("votes", 0))

    def distance(self, x, y):
        """Signed perpendicular distance of point(s) from the line."""
        return x * math.cos(self.theta) + y * math.sin(self.theta) - self.rho


def angular_distance(t1: float, t2: float) -> float:
    """Distance between two line directions, modulo pi."""
    d = abs(t1 - t2) % math.pi
    return min(d, math.pi - d)


def _align(ref: LineRT, line: LineRT) -> tuple[float, float]:
    """Express ``line`` as (rho, theta) on the same side of the wrap as ``ref``."""
    if abs(line.theta - ref.theta) > math.pi / 2:
        shift = -math.pi if line.theta > ref.theta else math.pi
        return -line.rho, line.theta + shift
    return line.rho, line.theta


def _normalize(rho: float, theta: float) -> tuple[float, float]:
    while theta < 0:
        theta += math.pi
        rho = -rho
    while theta >= math.pi:
        theta -= math.pi
        rho = -rho
    return rho, theta


# -- accumulator -------------------------------------------------------------

@dataclass(frozen=True)
class HoughAccumulator:
    """Vote counts indexed ``[theta_index, rho_index]``.

    ``residual`` holds, per bin, the summed distance (in bins) between each
    voter's exact rho and the bin centre; it only breaks ties between bins of
    equal vote count.
    """

    rho_step: float
    theta_step: float
    rho_offset: int
    votes: np.ndarray
    residual: np.ndarray

    @property
    def theta_bins(self) -> int:
        return self.votes.shape[0]

    @property
    def rho_bins(self) -> int:
        return self.votes.shape[1]

    def theta_at(self, k: int) -> float:
        return float(k) * self.theta_step

    def rho_at(self, j: int) -> float:
        return float(j - self.rho_offset) * self.rho_step


def theta_centers(theta_step: float) -> list[float]:
    n = max(1, int(round(math.pi / theta_step)))
    return [k * theta_step for k in range(n) if k * theta_step < math.pi]


def hough_accumulate(edges: EdgeMap, rho_step: float = 1.0,
                     theta_step: float = math.pi / 180) -> HoughAccumulator:
    if rho_step <= 0 or theta_step <= 0:
        raise InputError("rho_step and theta_step must be positive")
    thetas = theta_centers(theta_step)
    cos_t = np.array([math.cos(t) for t in thetas])
    sin_t = np.array([math.sin(t) for t in thetas])
    diag = math.hypot(edges.width, edges.height)
    offset = math.ceil(diag / rho_step)
    n_theta, n_rho = len(thetas), 2 * offset + 1

    votes = np.zeros(n_theta * n_rho, dtype=np.int64)
    resid = np.zeros(n_theta * n_rho, dtype=np.float64)
    ys, xs = np.nonzero(edges.edges)
    t_index = np.arange(n_theta) * n_rho
    for start in range(0, xs.size, _CHUNK):
        x = xs[start:start + _CHUNK, None].astype(np.float64)
        y = ys[start:start + _CHUNK, None].astype(np.float64)
        scaled = (x * cos_t + y * sin_t) / rho_step
        nearest = np.floor(scaled + 0.5)
        flat = (nearest.astype(np.int64) + offset + t_index).ravel()
        votes += np.bincount(flat, minlength=votes.size)
        resid += np.bincount(flat, weights=np.abs(scaled - nearest).ravel(), minlength=resid.size)
    return HoughAccumulator(rho_step, theta_step, offset,
                            votes.reshape(n_theta, n_rho), resid.reshape(n_theta, n_rho))


def _wrap_pad(a: np.ndarray, fill) -> np.ndarray:
    """Pad by one bin on every side; theta wraps onto the mirrored rho axis."""
    out = np.full((a.shape[0] + 2, a.shape[1] + 2), fill, dtype=a.dtype)
    out[1:-1, 1:-1] = a
    out[0, 1:-1] = a[-1, ::-1]
    out[-1, 1:-1] = a[0, ::-1]
    return out


def find_peaks(acc: HoughAccumulator, vote_threshold: int) -> list[LineRT]:
    """Bins that beat all eight neighbours (theta wraps around).

    Bins are ranked by votes, then lower residual, then smaller
    (theta index, rho index).
    """
    v, r = acc.votes, acc.residual
    nt, nr = v.shape
    tidx = np.broadcast_to(np.arange(nt)[:, None], v.shape)
    ridx = np.broadcast_to(np.arange(nr)[None, :], v.shape)
    pv, pr = _wrap_pad(v, -1), _wrap_pad(r, np.inf)
    pt, pj = _wrap_pad(np.ascontiguousarray(tidx), nt), _wrap_pad(np.ascontiguousarray(ridx), nr)

    peak = v >= max(1, vote_threshold)
    for dt in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if dt == 0 and dj == 0:
                continue
            sl = (slice(1 + dt, 1 + dt + nt), slice(1 + dj, 1 + dj + nr))
            nv, nres, nti, nri = pv[sl], pr[sl], pt[sl], pj[sl]
            same_bin = (nti == tidx) & (nri == ridx)
            beats = (v > nv) | ((v == nv) & (
                (r < nres) | ((r == nres) & ((tidx < nti) | ((tidx == nti) & (ridx < nri))))))
            peak &= beats | same_bin
    ts, js = np.nonzero(peak)
    lines = [LineRT(acc.rho_at(j), acc.theta_at(t), int(v[t, j])) for t, j in zip(ts, js)]
    lines.sort(key=lambda ln: -ln.votes)
    return lines


def hough_lines(edges: EdgeMap, rho_step: float = 1.0, theta_step: float = math.pi / 180,
                vote_threshold: int = 60) -> list[LineRT]:
    """Detect lines as accumulator peaks.  An empty edge map yields ``[]``."""
    if vote_threshold < 1:
        raise InputError("vote_threshold must be >= 1")
    acc = hough_accumulate(edges, rho_step, theta_step)
    return find_peaks(acc, vote_threshold)


# -- grouping ------------------------------------------------------------------

def _similar(a: LineRT, b: LineRT, theta_tol: float, rho_tol: float) -> bool:
    if angular_distance(a.theta, b.theta) > theta_tol:
        return False
    rho_b, _ = _align(a, b)
    return abs(a.rho - rho_b) <= rho_tol


def _group_once(lines: Sequence[LineRT], theta_tol: float, rho_tol: float) -> list[LineRT]:
    n = len(lines)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if _similar(lines[i], lines[j], theta_tol, rho_tol):
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)

    clusters: dict[int, list[int]] = {}
    for i in range(n):
        clusters.setdefault(find(i), []).append(i)

    out = []
    for members in clusters.values():
        if len(members) == 1:
            out.append(lines[members[0]])
            continue
        group = [lines[i] for i in members]
        ref = max(group, key=lambda ln: ln.votes)  # first max wins
        total = sum(ln.votes for ln in group)
        weights = [ln.votes / total if total > 0 else 1.0 / len(group) for ln in group]
        rho = theta = 0.0
        for w, ln in zip(weights, group):
            r, t = _align(ref, ln)
            rho += w * r
            theta += w * t
        rho, theta = _normalize(rho, theta)
        out.append(LineRT(rho, theta, total))
    return out


def group_lines(lines: Iterable[LineRT], theta_tol: float = math.radians(2),
                rho_tol: float = 10.0) -> list[LineRT]:
    """Merge similar proposals into vote-weighted averages.

    Single-linkage clustering is repeated until no two outputs are similar,
    which makes the operation idempotent.  Output is sorted by descending
    votes.
    """
    if theta_tol <= 0 or rho_tol <= 0:
        raise InputError("grouping tolerances must be positive")
    current = list(lines)
    while True:
        merged = _group_once(current, theta_tol, rho_tol)
        if len(merged) == len(current):
            current = merged
            break
        current = merged
    return sorted(current, key=lambda ln: (-ln.votes, ln.theta, ln.rho))


# -- grid ----------------------------------------------------------------------

def line_intersection(a: LineRT, b: LineRT) -> tuple[float, float]:
    ca, sa = math.cos(a.theta), math.sin(a.theta)
    cb, sb = math.cos(b.theta), math.sin(b.theta)
    det = ca * sb - sa * cb
    if abs(det) < 1e-9:
        raise Parallel(f"lines at theta={a.theta:.6f} and {b.theta:.6f} are parallel")
    return (a.rho * sb - b.rho * sa) / det, (ca * b.rho - cb * a.rho) / det


def _segments_cross(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(p3, p4, p1), orient(p3, p4, p2)
    d3, d4 = orient(p1, p2, p3), orient(p1, p2, p4)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


@dataclass(frozen=True)
class PanelQuad:
    """Quadrilateral ordered top-left, top-right, bottom-right, bottom-left."""

    corners: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if len(self.corners) != 4:
            raise InputError("a panel quad needs exactly 4 corners")
        object.__setattr__(self, "corners", tuple((float(x), float(y)) for x, y in self.corners))

    @classmethod
    def from_points(cls, points) -> "PanelQuad":
        """Order arbitrary corners: start at min(x + y), then clockwise on screen."""
        pts = [(float(x), float(y)) for x, y in points]
        cx = sum(p[0] for p in pts) / 4
        cy = sum(p[1] for p in pts) / 4
        pts.sort(key=lambda p: math.atan2(p[1] - cy, p[0] - cx))
        start = min(range(4), key=lambda i: (pts[i][0] + pts[i][1], i))
        return cls(tuple(pts[start:] + pts[:start]))

    @property
    def signed_area(self) -> float:
        s = 0.0
        for i in range(4):
            x0, y0 = self.corners[i]
            x1, y1 = self.corners[(i + 1) % 4]
            s += x0 * y1 - x1 * y0
        return s / 2

    @property
    def area(self) -> float:
        return abs(self.signed_area)

    @property
    def centroid(self) -> tuple[float, float]:
        return (sum(p[0] for p in self.corners) / 4, sum(p[1] for p in self.corners) / 4)

    def is_simple(self) -> bool:
        c = self.corners
        return (self.area > 0 and not _segments_cross(c[0], c[1], c[2], c[3])
                and not _segments_cross(c[1], c[2], c[3], c[0]))

    def inside(self, width: int, height: int) -> bool:
        return all(0 <= x <= width - 1 and 0 <= y <= height - 1 for x, y in self.corners)

    def to_list(self) -> list[list[float]]:
        return [[x, y] for x, y in self.corners]


@dataclass(frozen=True)
class GridModel:
    family_a: list[LineRT] = field(default_factory=list)  # near-vertical, left to right
    family_b: list[LineRT] = field(default_factory=list)  # near-horizontal, top to bottom
    corners: list[tuple[float, float]] = field(default_factory=list)
    panels: list[PanelQuad] = field(default_factory=list)

    @property
    def lines(self) -> list[LineRT]:
        return list(self.family_a) + list(self.family_b)


def _canonical_rho(line: LineRT) -> float:
    # near-vertical lines close to theta = pi are flipped to theta ~ 0
    if line.theta > 3 * math.pi / 4:
        return -line.rho
    return line.rho


def fit_grid(lines: Iterable[LineRT], split_angle: float = math.radians(20),
             width: int | None = None, height: int | None = None) -> GridModel:
    """Split lines into two near-orthogonal families and intersect them.

    Corners are kept when they fall inside the image box enlarged 1.1x about
    its centre (all corners are kept when no image size is given).  Panels
    come from consecutive line pairs, row-major from the top-left.
    """
    if not 0 < split_angle < math.pi / 4:
        raise InputError("split_angle must lie in (0, pi/4)")
    lines = list(lines)
    fam_a = [ln for ln in lines if angular_distance(ln.theta, 0.0) <= split_angle]
    fam_b = [ln for ln in lines if angular_distance(ln.theta, math.pi / 2) <= split_angle]
    fam_a.sort(key=lambda ln: (_canonical_rho(ln), ln.theta))
    fam_b.sort(key=lambda ln: (ln.rho, ln.theta))

    pts = [[line_intersection(a, b) for a in fam_a] for b in fam_b]
    corners = []
    for row in pts:
        for x, y in row:
            if width is None or height is None or (
                    -0.05 * width <= x <= 1.05 * width and -0.05 * height <= y <= 1.05 * height):
                corners.append((x, y))
    panels = []
    for j in range(len(fam_b) - 1):
        for i in range(len(fam_a) - 1):
            quad = (pts[j][i], pts[j][i + 1], pts[j + 1][i + 1], pts[j + 1][i])
            panels.append(PanelQuad.from_points(quad))
    return GridModel(fam_a, fam_b, corners, panels)


def prominent_panel_index(grid: GridModel, img: GrayImage) -> int:
    """Index of the largest panel fully inside the image.

    Ties, and grids without any fully-inside panel, go to the panel whose
    centroid is nearest the image centre.
    """
    if not grid.panels:
        raise NoPanels("grid has no panels")
    cx, cy = (img.width - 1) / 2, (img.height - 1) / 2

    def centre_dist(i):
        px, py = grid.panels[i].centroid
        return math.hypot(px - cx, py - cy)

    inside = [i for i, p in enumerate(grid.panels)
              if p.inside(img.width, img.height) and p.is_simple()]
    if not inside:
        return min(range(len(grid.panels)), key=lambda i: (centre_dist(i), i))
    best = max(grid.panels[i].area for i in inside)
    tied = [i for i in inside if math.isclose(grid.panels[i].area, best, rel_tol=1e-9)]
    return min(tied, key=lambda i: (centre_dist(i), i))


def select_prominent_panel(grid: GridModel, img: GrayImage) -> PanelQuad:
    return grid.panels[prominent_panel_index(grid, img)]
