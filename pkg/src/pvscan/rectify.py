"""Four-point homography estimation and perspective rectification of panels."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateQuad, InputError
from .houghgrid import PanelQuad
from .imagery import GrayImage, TempCalibration

_SNAP = 1e-9


@dataclass(frozen=True, eq=False)
class Homography:
    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=np.float64)
        if m.shape != (3, 3):
            raise InputError("homography must be 3x3")
        if not np.isfinite(m).all():
            raise DegenerateQuad("homography has non-finite entries")
        # Scale so m[2][2] == 1; when the origin lies on the vanishing line
        # m[2][2] is 0 and the largest entry is scaled to +1 instead.
        if m[2, 2] != 0:
            m = m / m[2, 2]
        else:
            big = np.abs(m).max()
            if big == 0:
                raise DegenerateQuad("homography is the zero matrix")
            m = m / m.flat[np.argmax(np.abs(m))]
        m.flags.writeable = False
        object.__setattr__(self, "m", m)

    def apply(self, x, y):
        """Map point(s); returns (x', y') arrays or floats."""
        m = self.m
        w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
        return (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / w, (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / w

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.m))


def solve_gauss(a: np.ndarray, b: np.ndarray, tiny: float = 1e-12) -> np.ndarray:
    """Solve ``a x = b`` by Gaussian elimination with partial pivoting."""
    a = np.array(a, dtype=np.float64)
    b = np.array(b, dtype=np.float64)
    n = a.shape[0]
    scale = max(np.abs(a).max(), 1.0)
    for col in range(n):
        piv = col + int(np.argmax(np.abs(a[col:, col])))
        if abs(a[piv, col]) < tiny * scale:
            raise DegenerateQuad("singular system")
        if piv != col:
            a[[col, piv]] = a[[piv, col]]
            b[[col, piv]] = b[[piv, col]]
        f = a[col + 1:, col] / a[col, col]
        a[col + 1:, col:] -= f[:, None] * a[col, col:]
        b[col + 1:] -= f * b[col]
    x = np.zeros(n)
    for row in range(n - 1, -1, -1):
        x[row] = (b[row] - a[row, row + 1:] @ x[row + 1:]) / a[row, row]
    return x


def _similarity_normalizer(pts: np.ndarray) -> np.ndarray:
    """Translate to the centroid and scale to mean distance sqrt(2)."""
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    s = math.sqrt(2) / d
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def _check_general_position(pts: np.ndarray) -> None:
    span = np.ptp(pts, axis=0).max()
    if span <= 0:
        raise DegenerateQuad("all corners coincide")
    for i in range(4):
        a, b, c = (pts[j] for j in range(4) if j != i)
        twice_area = abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
        if twice_area <= 1e-9 * span * span:
            raise DegenerateQuad("three corners are collinear")


def _solve_conditioned(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    ts, td = _similarity_normalizer(src), _similarity_normalizer(dst)
    s = (ts @ np.c_[src, np.ones(4)].T).T[:, :2]
    d = (td @ np.c_[dst, np.ones(4)].T).T[:, :2]

    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(s, d)):
        a[2 * i] = [x, y, 1, 0, 0, 0, -x * u, -y * u]
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -x * v, -y * v]
        b[2 * i], b[2 * i + 1] = u, v
    h = solve_gauss(a, b)
    hn = np.append(h, 1.0).reshape(3, 3)
    return np.linalg.inv(td) @ hn @ ts


def homography_from_points(src: Sequence, dst: Sequence) -> Homography:
    """Exact homography taking four ``src`` points onto four ``dst`` points.

    Both point sets are conditioned with a similarity transform before the
    8x8 system (with m[2][2] fixed to 1) is solved.  One correction pass then
    maps the first estimate's images of ``src`` onto ``dst``, which recovers
    full precision for sliver-shaped quads.
    """
    src = np.asarray(src, dtype=np.float64).reshape(4, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(4, 2)
    _check_general_position(src)
    _check_general_position(dst)
    m = _solve_conditioned(src, dst)
    m = m / np.abs(m).max()
    w = m[2, 0] * src[:, 0] + m[2, 1] * src[:, 1] + m[2, 2]
    mapped = np.c_[(m[0, 0] * src[:, 0] + m[0, 1] * src[:, 1] + m[0, 2]) / w,
                   (m[1, 0] * src[:, 0] + m[1, 1] * src[:, 1] + m[1, 2]) / w]
    if np.isfinite(mapped).all():
        m = _solve_conditioned(mapped, dst) @ m
    if abs(np.linalg.det(m / np.abs(m).max())) < 1e-14:
        raise DegenerateQuad("homography is singular")
    return Homography(m)


def rect_targets(rect_w: int, rect_h: int) -> list[tuple[float, float]]:
    return [(0.0, 0.0), (rect_w - 1.0, 0.0), (rect_w - 1.0, rect_h - 1.0), (0.0, rect_h - 1.0)]


def homography_from_quad(quad: PanelQuad, rect_w: int, rect_h: int) -> Homography:
    """Homography sending the quad's TL, TR, BR, BL onto the target rectangle corners."""
    if rect_w < 2 or rect_h < 2:
        raise InputError("rectified size must be at least 2x2")
    if quad.area <= 0:
        raise DegenerateQuad("quad has zero area")
    return homography_from_points(quad.corners, rect_targets(rect_w, rect_h))


@dataclass(frozen=True)
class RectifiedPanel:
    image: GrayImage
    calib: TempCalibration
    source: PanelQuad


def _snap(a: np.ndarray) -> np.ndarray:
    r = np.round(a)
    return np.where(np.abs(a - r) < _SNAP, r, a)


def bilinear_sample(img: GrayImage, sx: np.ndarray, sy: np.ndarray):
    """Sample ``img`` at float coordinates.

    Returns (values, ok) where ``ok`` is False wherever a neighbour that
    carries non-zero weight is out of bounds or invalid.
    """
    sx, sy = _snap(sx), _snap(sy)
    finite = np.isfinite(sx) & np.isfinite(sy)
    sx = np.where(finite, sx, -1.0)
    sy = np.where(finite, sy, -1.0)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx, fy = sx - x0, sy - y0
    h, w = img.height, img.width
    data = img.samples.astype(np.float64)

    ok = finite.copy()
    value = np.zeros(sx.shape)
    for dx, dy, wt in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)),
                       (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
        xi, yi = x0 + dx, y0 + dy
        used = wt > 0
        inb = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        xc, yc = np.clip(xi, 0, w - 1), np.clip(yi, 0, h - 1)
        good = inb & img.valid[yc, xc]
        ok &= ~used | good
        value += np.where(used & good, wt * data[yc, xc], 0.0)
    return value, ok


def warp_panel(img: GrayImage, quad: PanelQuad, rect_w: int = 120, rect_h: int = 200,
               calib: TempCalibration | None = None) -> RectifiedPanel:
    """Inverse-map every target pixel into ``img`` and sample bilinearly.

    Target pixels whose footprint touches an invalid or out-of-image source
    pixel are marked invalid (and set to 0).
    """
    hinv = homography_from_quad(quad, rect_w, rect_h).inverse()
    r, c = np.mgrid[0:rect_h, 0:rect_w].astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        sx, sy = hinv.apply(c, r)
    value, ok = bilinear_sample(img, sx, sy)
    out = np.where(ok, np.clip(np.floor(value + 0.5), 0, img.pmax), 0)
    return RectifiedPanel(GrayImage(out, img.bit_depth, ok), calib, quad)
