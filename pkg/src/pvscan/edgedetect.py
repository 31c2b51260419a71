"""Masked Gaussian smoothing and Canny edge detection."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import BadThresholds, NonPositiveSigma
from .imagery import GrayImage

# Offsets (dx, dy) of the "forward" neighbour along each quantized gradient
# direction: 0, 45, 90 and 135 degrees, with y growing downwards.
_NMS_OFFSETS = ((1, 0), (1, 1), (0, 1), (-1, 1))


@dataclass(frozen=True)
class GradientField:
    gx: np.ndarray
    gy: np.ndarray
    magnitude: np.ndarray
    direction: np.ndarray  # radians in [0, pi)


@dataclass(frozen=True)
class EdgeMap:
    edges: np.ndarray  # bool, shape (height, width)

    @property
    def width(self) -> int:
        return self.edges.shape[1]

    @property
    def height(self) -> int:
        return self.edges.shape[0]

    def count(self) -> int:
        return int(self.edges.sum())

    def to_image(self) -> GrayImage:
        return GrayImage(self.edges.astype(np.uint8) * 255)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Sampled 1-D Gaussian of radius ceil(3 sigma), normalized to unit sum."""
    if not sigma > 0:
        raise NonPositiveSigma(f"sigma must be > 0, got {sigma}")
    radius = math.ceil(3 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur_float(img: GrayImage, sigma: float) -> np.ndarray:
    """Normalized (mask-aware) separable convolution, unquantized.

    Invalid and out-of-image pixels carry zero weight; the remaining weights
    are renormalized per output pixel.  Where no valid pixel is in reach the
    original sample is returned.
    """
    k = gaussian_kernel(sigma)
    weight = img.valid.astype(np.float64)
    data = img.samples.astype(np.float64) * weight

    def sep(a):
        a = ndimage.correlate1d(a, k, axis=1, mode="constant", cval=0.0)
        return ndimage.correlate1d(a, k, axis=0, mode="constant", cval=0.0)

    num, den = sep(data), sep(weight)
    out = img.samples.astype(np.float64)
    reach = den > 1e-12
    out[reach] = num[reach] / den[reach]
    return out


def gaussian_blur(img: GrayImage, sigma: float) -> GrayImage:
    """Gaussian blur re-quantized to the input bit depth.

    Samples at invalid pixels are left as they were.
    """
    smooth = gaussian_blur_float(img, sigma)
    q = np.clip(np.floor(smooth + 0.5), 0, img.pmax)
    q = np.where(img.valid, q, img.samples)
    return GrayImage(q, img.bit_depth, img.valid)


def sobel(img: GrayImage) -> GradientField:
    """Standard (unnormalized) 3x3 Sobel gradients.

    Only pixels whose whole 3x3 neighbourhood is valid and inside the image
    get a gradient; everything else is zero.
    """
    p = img.samples.astype(np.float64)
    h, w = p.shape
    gx = np.zeros_like(p)
    gy = np.zeros_like(p)
    if h >= 3 and w >= 3:
        gx[1:-1, 1:-1] = ((p[:-2, 2:] + 2 * p[1:-1, 2:] + p[2:, 2:])
                          - (p[:-2, :-2] + 2 * p[1:-1, :-2] + p[2:, :-2]))
        gy[1:-1, 1:-1] = ((p[2:, :-2] + 2 * p[2:, 1:-1] + p[2:, 2:])
                          - (p[:-2, :-2] + 2 * p[:-2, 1:-1] + p[:-2, 2:]))
    full = ndimage.binary_erosion(img.valid, structure=np.ones((3, 3), bool),
                                  border_value=0)
    gx[~full] = 0.0
    gy[~full] = 0.0
    mag = np.hypot(gx, gy)
    direction = np.mod(np.arctan2(gy, gx), np.pi)
    direction[direction >= np.pi] = 0.0
    return GradientField(gx, gy, mag, direction)


def _shift(a: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """out[y, x] = a[y + dy, x + dx], zero outside."""
    h, w = a.shape
    out = np.zeros_like(a)
    ys = slice(max(0, -dy), min(h, h - dy))
    xs = slice(max(0, -dx), min(w, w - dx))
    ys_src = slice(max(0, dy), min(h, h + dy))
    xs_src = slice(max(0, dx), min(w, w + dx))
    out[ys, xs] = a[ys_src, xs_src]
    return out


def quantize_direction(direction: np.ndarray) -> np.ndarray:
    """Map angles in [0, pi) to bins 0..3 (0, 45, 90, 135 degrees)."""
    return (np.floor((direction + np.pi / 8) / (np.pi / 4)).astype(np.int64)) % 4


def non_max_suppression(grad: GradientField) -> np.ndarray:
    """Thin ridges of gradient magnitude along the quantized direction.

    A pixel survives when its magnitude is strictly above the backward
    neighbour and at least the forward one, so flat two-pixel ridges keep
    exactly one pixel.
    """
    mag = grad.magnitude
    bins = quantize_direction(grad.direction)
    keep = np.zeros(mag.shape, dtype=bool)
    for b, (dx, dy) in enumerate(_NMS_OFFSETS):
        fwd = _shift(mag, dx, dy)
        bwd = _shift(mag, -dx, -dy)
        keep |= (bins == b) & (mag >= fwd) & (mag > bwd)
    return keep & (mag > 0)


def hysteresis(mag: np.ndarray, candidates: np.ndarray, low: float, high: float) -> np.ndarray:
    weak = candidates & (mag >= low)
    strong = candidates & (mag >= high)
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return np.zeros(mag.shape, dtype=bool)
    seeded = np.zeros(n + 1, dtype=bool)
    seeded[np.unique(labels[strong])] = True
    seeded[0] = False
    return seeded[labels]


def canny(img: GrayImage, low: float = 50.0, high: float = 150.0,
          sigma: float = 1.4) -> EdgeMap:
    """Canny edge map; thresholds are in Sobel-magnitude units of ``img``."""
    if low <= 0 or low > high:
        raise BadThresholds(f"need 0 < low <= high, got low={low}, high={high}")
    blurred = gaussian_blur(img, sigma)
    grad = sobel(blurred)
    thin = non_max_suppression(grad)
    edges = hysteresis(grad.magnitude, thin, low, high) & img.valid
    return EdgeMap(edges)
