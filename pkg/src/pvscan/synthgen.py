"""Deterministic synthetic thermal scenes of a PV array with exact labels.

The array's outer quadrilateral is subdivided projectively (through the
homography of the unit square), so every grid line stays straight under
perspective.  Noise comes from numpy's PCG64 generator seeded with
``SceneSpec.seed``; the generator id is written into the sidecar.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import DegenerateQuad, InvalidSpec
from .evalharness import GroundTruth, dump_labels
from .houghgrid import PanelQuad
from .imagery import GrayImage, MaskRegion, TempCalibration, dump_sidecar, save_pgm
from .rectify import homography_from_points

PRNG_ID = "numpy.random.PCG64"
_UNIT_SQUARE = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]


@dataclass(frozen=True)
class SceneSpec:
    name: str = "scene"
    img_w: int = 480
    img_h: int = 320
    grid_rows: int = 2
    grid_cols: int = 3
    corners: tuple = ((40.0, 30.0), (440.0, 30.0), (440.0, 290.0), (40.0, 290.0))  # TL, TR, BR, BL
    panel_temp_c: float = 35.0
    frame_temp_c: float = 25.0
    background_temp_c: float = 20.0
    frame_width: float = 3.0
    noise_sigma: float = 0.0
    hotspots: tuple = ()  # (panel_index, cell_row, cell_col, delta_c)
    cell_rows: int = 10
    cell_cols: int = 6
    scale_bar: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "corners", tuple((float(x), float(y)) for x, y in self.corners))
        object.__setattr__(self, "hotspots", tuple(
            (int(p), int(r), int(c), float(d)) for p, r, c, d in self.hotspots))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["corners"] = [list(p) for p in self.corners]
        d["hotspots"] = [list(h) for h in self.hotspots]
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "SceneSpec":
        if not isinstance(doc, dict):
            raise InvalidSpec("scene spec must be a JSON object")
        unknown = set(doc) - {f.name for f in fields(cls)}
        if unknown:
            raise InvalidSpec(f"unknown scene spec keys: {sorted(unknown)}")
        try:
            return cls(**doc)
        except (TypeError, ValueError) as exc:
            raise InvalidSpec(f"bad scene spec: {exc}") from None


class Scene(NamedTuple):
    image: GrayImage
    calib: TempCalibration
    truth: GroundTruth


def _is_convex(pts) -> bool:
    signs = []
    for i in range(4):
        (x0, y0), (x1, y1), (x2, y2) = pts[i], pts[(i + 1) % 4], pts[(i + 2) % 4]
        signs.append((x1 - x0) * (y2 - y1) - (y1 - y0) * (x2 - x1))
    return all(s > 0 for s in signs) or all(s < 0 for s in signs)


def validate(spec: SceneSpec) -> None:
    if spec.img_w < 8 or spec.img_h < 8:
        raise InvalidSpec("image must be at least 8x8")
    if spec.grid_rows < 1 or spec.grid_cols < 1:
        raise InvalidSpec("grid needs at least one row and one column")
    if spec.frame_width < 2:
        raise InvalidSpec("frame_width must be >= 2 px")
    if spec.noise_sigma < 0:
        raise InvalidSpec("noise_sigma must be >= 0")
    if spec.cell_rows < 1 or spec.cell_cols < 1:
        raise InvalidSpec("cell grid needs at least one row and one column")
    if not 0 <= spec.seed < 2 ** 64:
        raise InvalidSpec("seed must be an unsigned 64-bit integer")
    if len(spec.corners) != 4:
        raise InvalidSpec("corners must list 4 points (TL, TR, BR, BL)")
    for x, y in spec.corners:
        if not (0 <= x <= spec.img_w - 1 and 0 <= y <= spec.img_h - 1):
            raise InvalidSpec(f"corner ({x}, {y}) lies outside the image")
    if not PanelQuad(spec.corners).is_simple():
        raise InvalidSpec("corners form a self-intersecting or degenerate quadrilateral")
    if not _is_convex(spec.corners):
        raise InvalidSpec("corners must form a convex quadrilateral")
    n_panels = spec.grid_rows * spec.grid_cols
    for p, r, c, _ in spec.hotspots:
        if not (0 <= p < n_panels and 0 <= r < spec.cell_rows and 0 <= c < spec.cell_cols):
            raise InvalidSpec(f"hotspot ({p}, {r}, {c}) outside the panel/cell grid")


def _line_through(p0, p1) -> tuple[float, float, float]:
    """Unit normal (a, b) and offset c with a*x + b*y = c."""
    dx, dy = p1[0] - p0[0], p1[1] - p0[1]
    n = math.hypot(dx, dy)
    a, b = -dy / n, dx / n
    return a, b, a * p0[0] + b * p0[1]


def scene_geometry(spec: SceneSpec):
    """Homography of the unit square onto the array plus the labelled geometry."""
    try:
        h = homography_from_points(_UNIT_SQUARE, spec.corners)
    except DegenerateQuad as exc:
        raise InvalidSpec(str(exc)) from None
    rows, cols = spec.grid_rows, spec.grid_cols

    def at(u, v):
        x, y = h.apply(u, v)
        return float(x), float(y)

    segments = []
    for i in range(cols + 1):
        segments.append(at(i / cols, 0.0) + at(i / cols, 1.0))
    for j in range(rows + 1):
        segments.append(at(0.0, j / rows) + at(1.0, j / rows))
    keypoints = [at(i / cols, j / rows) for j in range(rows + 1) for i in range(cols + 1)]
    panels = [[at(c / cols, r / rows), at((c + 1) / cols, r / rows),
               at((c + 1) / cols, (r + 1) / rows), at(c / cols, (r + 1) / rows)]
              for r in range(rows) for c in range(cols)]
    return h, segments, keypoints, panels


def overlay_masks(spec: SceneSpec) -> list[MaskRegion]:
    if not spec.scale_bar:
        return []
    x, y, w, hgt = _scale_bar_box(spec)
    return [MaskRegion(x - 2, y - 2, w + 4, hgt + 4)]


def _scale_bar_box(spec: SceneSpec) -> tuple[int, int, int, int]:
    return spec.img_w - 24, 20, 16, spec.img_h - 40


def temperature_map(spec: SceneSpec) -> np.ndarray:
    """Noise-free scene temperatures in degrees Celsius, shape (img_h, img_w)."""
    validate(spec)
    h, segments, _, _ = scene_geometry(spec)
    g = h.inverse()
    ys, xs = np.mgrid[0:spec.img_h, 0:spec.img_w].astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        u, v = g.apply(xs, ys)
    hw = spec.frame_width / 2.0

    min_dist = np.full(xs.shape, np.inf)
    for x1, y1, x2, y2 in segments:
        a, b, c = _line_through((x1, y1), (x2, y2))
        min_dist = np.minimum(min_dist, np.abs(a * xs + b * ys - c))

    # signed distance to each outer edge, positive towards the array interior
    cx = sum(p[0] for p in spec.corners) / 4
    cy = sum(p[1] for p in spec.corners) / 4
    inside_expanded = np.ones(xs.shape, dtype=bool)
    for k in range(4):
        a, b, c = _line_through(spec.corners[k], spec.corners[(k + 1) % 4])
        sign = 1.0 if a * cx + b * cy - c > 0 else -1.0
        inside_expanded &= sign * (a * xs + b * ys - c) >= -hw
    inside = inside_expanded & (u >= 0) & (u <= 1) & (v >= 0) & (v <= 1)
    frame = inside_expanded & (min_dist <= hw)
    panel = inside & ~frame

    temps = np.full(xs.shape, spec.background_temp_c, dtype=np.float64)
    temps[panel] = spec.panel_temp_c
    temps[frame] = spec.frame_temp_c
    if spec.hotspots:
        pu = np.where(panel, u * spec.grid_cols, -1.0)
        pv = np.where(panel, v * spec.grid_rows, -1.0)
        pc = np.minimum(np.floor(pu), spec.grid_cols - 1)
        pr = np.minimum(np.floor(pv), spec.grid_rows - 1)
        cc = np.minimum(np.floor((pu - pc) * spec.cell_cols), spec.cell_cols - 1)
        cr = np.minimum(np.floor((pv - pr) * spec.cell_rows), spec.cell_rows - 1)
        for p, r, c, delta in spec.hotspots:
            sel = panel & (pr == p // spec.grid_cols) & (pc == p % spec.grid_cols) & (cr == r) & (cc == c)
            temps[sel] += delta
    return temps


def render_scene(spec: SceneSpec) -> Scene:
    """Render the scene to an 8-bit image with its calibration and labels."""
    temps = temperature_map(spec)
    t_low, t_high = float(temps.min()), float(temps.max())
    if t_high == t_low:
        raise InvalidSpec("scene has a single temperature; nothing to render")
    calib = TempCalibration(t_high_c=t_high, t_low_c=t_low, p_high=255.0, p_low=0.0)

    level = (temps - t_low) / (t_high - t_low) * 255.0
    if spec.noise_sigma > 0:
        rng = np.random.Generator(np.random.PCG64(spec.seed))
        level = level + rng.normal(0.0, spec.noise_sigma, size=level.shape)
    pixels = np.clip(np.floor(level + 0.5), 0, 255)
    if spec.scale_bar:
        x, y, w, hgt = _scale_bar_box(spec)
        ramp = np.linspace(255.0, 0.0, hgt)
        pixels[y:y + hgt, x:x + w] = np.floor(ramp + 0.5)[:, None]

    _, segments, keypoints, panels = scene_geometry(spec)
    truth = GroundTruth(image=spec.name, lines=segments, keypoints=keypoints, panels=panels)
    return Scene(GrayImage(pixels), calib, truth)


def scene_files(spec: SceneSpec) -> dict[str, bytes]:
    """File name -> bytes for the image, calibration sidecar and label document."""
    scene = render_scene(spec)
    sidecar = dump_sidecar(scene.calib, overlay_masks(spec), prng=PRNG_ID, seed=spec.seed)
    return {
        f"{spec.name}.pgm": save_pgm(scene.image),
        f"{spec.name}.calib": sidecar.encode("utf-8"),
        f"{spec.name}.labels.json": dump_labels(scene.truth).encode("utf-8"),
    }


def write_scene(spec: SceneSpec, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, blob in scene_files(spec).items():
        path = out / name
        path.write_bytes(blob)
        written.append(path)
    return written


def load_specs(text: str) -> list[SceneSpec]:
    """Parse a spec file holding one scene object or a list of them."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidSpec(f"scene spec is not valid JSON: {exc}") from None
    docs = doc if isinstance(doc, list) else [doc]
    return [SceneSpec.from_dict(d) for d in docs]


def _edge_angles(corners) -> list[float]:
    """Deviation of each outer edge from the nearest image axis, degrees."""
    out = []
    for k in range(4):
        (x0, y0), (x1, y1) = corners[k], corners[(k + 1) % 4]
        ang = math.degrees(math.atan2(y1 - y0, x1 - x0)) % 90.0
        out.append(min(ang, 90.0 - ang))
    return out


def random_scene_spec(seed: int, *, grid_rows: int | None = None, grid_cols: int | None = None,
                      max_skew_deg: float = 15.0, noise_sigma: float | None = None,
                      max_hotspots: int = 2, img_w: int = 480, img_h: int = 320,
                      name: str | None = None) -> SceneSpec:
    """Random but reproducible scene: perspective-skewed grid, noise, hotspots.

    Outer edges deviate from the image axes by at most ``max_skew_deg``.
    Frames run 10-13 C below the panels and the background a further 3-6 C
    below, so the panel/frame step keeps roughly 40% of the display range
    even with a hotspot present.
    """
    rng = np.random.default_rng(seed)
    rows = grid_rows if grid_rows is not None else int(rng.integers(2, 5))
    cols = grid_cols if grid_cols is not None else int(rng.integers(2, 7))
    sigma = noise_sigma if noise_sigma is not None else float(rng.uniform(0.0, 2.0))
    for _ in range(1000):
        w = rng.uniform(0.6, 0.82) * img_w
        h = rng.uniform(0.6, 0.82) * img_h
        cx = img_w / 2 + rng.uniform(-0.05, 0.05) * img_w
        cy = img_h / 2 + rng.uniform(-0.05, 0.05) * img_h
        base = [(cx - w / 2, cy - h / 2), (cx + w / 2, cy - h / 2),
                (cx + w / 2, cy + h / 2), (cx - w / 2, cy + h / 2)]
        jitter = 0.14 * min(w, h)
        corners = [(x + rng.uniform(-jitter, jitter), y + rng.uniform(-jitter, jitter))
                   for x, y in base]
        if max(_edge_angles(corners)) > max_skew_deg:
            continue
        if all(4 <= x <= img_w - 5 and 4 <= y <= img_h - 5 for x, y in corners) and _is_convex(corners):
            break
    else:
        raise InvalidSpec("could not place a skewed array inside the image")
    hotspots = []
    for _ in range(int(rng.integers(0, max_hotspots + 1))):
        hotspots.append((int(rng.integers(0, rows * cols)), int(rng.integers(0, 10)),
                         int(rng.integers(0, 6)), float(rng.uniform(5.0, 9.0))))
    panel_t = float(rng.uniform(32.0, 40.0))
    frame_t = panel_t - float(rng.uniform(10.0, 13.0))
    return SceneSpec(
        name=name or f"scene_{seed:04d}", img_w=img_w, img_h=img_h, grid_rows=rows,
        grid_cols=cols, corners=tuple(corners), noise_sigma=sigma,
        hotspots=tuple(hotspots), seed=int(seed),
        panel_temp_c=panel_t, frame_temp_c=frame_t,
        background_temp_c=frame_t - float(rng.uniform(3.0, 6.0)),
    )
