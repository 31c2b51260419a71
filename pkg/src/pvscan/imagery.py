"""Grayscale images, PGM I/O, overlay masking and temperature calibration.

Images are held as 2-D numpy arrays indexed ``[row, col]`` (row-major), paired
with a boolean validity mask of the same shape.  Pixels masked off (camera
overlay, out-of-bounds samples after warping) keep their sample values but are
ignored by every statistic and detector downstream.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import InputError, MalformedHeader, TruncatedData, UnsupportedFormat

_WHITESPACE = b" \t\n\r\v\f"


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Single-channel image with per-pixel validity.

    ``samples`` has shape ``(height, width)`` and dtype uint8 (8-bit) or
    uint16 (16-bit).  ``valid`` defaults to all-true.
    """

    samples: np.ndarray
    bit_depth: int = 8
    valid: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.bit_depth not in (8, 16):
            raise InputError(f"bit_depth must be 8 or 16, got {self.bit_depth}")
        samples = np.asarray(self.samples)
        if samples.ndim != 2 or samples.shape[0] < 1 or samples.shape[1] < 1:
            raise InputError(f"samples must be a non-empty 2-D array, got shape {samples.shape}")
        if samples.size and (samples.min() < 0 or samples.max() > self.pmax):
            raise InputError(f"samples outside [0, {self.pmax}]")
        dtype = np.uint8 if self.bit_depth == 8 else np.uint16
        samples = samples.astype(dtype, copy=True)
        samples.flags.writeable = False
        if self.valid is None:
            valid = np.ones(samples.shape, dtype=bool)
        else:
            valid = np.array(self.valid, dtype=bool, copy=True)
            if valid.shape != samples.shape:
                raise InputError(f"valid mask shape {valid.shape} != samples shape {samples.shape}")
        valid.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "valid", valid)

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def pmax(self) -> int:
        return (1 << self.bit_depth) - 1

    def with_valid(self, valid: np.ndarray) -> "GrayImage":
        return GrayImage(self.samples, self.bit_depth, valid)

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return (
            self.bit_depth == other.bit_depth
            and np.array_equal(self.samples, other.samples)
            and np.array_equal(self.valid, other.valid)
        )

    __hash__ = None


@dataclass(frozen=True)
class TempCalibration:
    """Affine map between intensity and degrees Celsius."""

    t_high_c: float
    t_low_c: float
    p_high: float
    p_low: float

    def __post_init__(self):
        if self.p_high == self.p_low:
            raise InputError("calibration anchors p_high and p_low must differ")
        if self.t_high_c < self.t_low_c:
            raise InputError("calibration requires t_high_c >= t_low_c")

    @property
    def quantum_c(self) -> float:
        """Temperature spanned by one intensity step."""
        return abs((self.t_high_c - self.t_low_c) / (self.p_high - self.p_low))

    def to_dict(self) -> dict:
        return {"t_high_c": self.t_high_c, "t_low_c": self.t_low_c,
                "p_high": self.p_high, "p_low": self.p_low}


@dataclass(frozen=True)
class MaskRegion:
    x: int
    y: int
    w: int
    h: int


def temperature_at(calib: TempCalibration, p):
    """Temperature in degrees Celsius for intensity ``p`` (scalar or array).

    Extrapolates linearly outside the two anchors.
    """
    slope = (calib.t_high_c - calib.t_low_c) / (calib.p_high - calib.p_low)
    if np.ndim(p):
        return calib.t_low_c + (np.asarray(p, dtype=float) - calib.p_low) * slope
    return calib.t_low_c + (float(p) - calib.p_low) * slope


# -- PGM ---------------------------------------------------------------------

def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping comments.

    Returns the tokens and the offset of the single whitespace byte that
    terminates the last token.
    """
    tokens = []
    i, n = 0, len(data)
    while len(tokens) < count:
        while i < n and data[i] in _WHITESPACE:
            i += 1
        if i >= n:
            raise MalformedHeader("unexpected end of header")
        if data[i] == ord("#"):
            while i < n and data[i] not in b"\r\n":
                i += 1
            continue
        start = i
        while i < n and data[i] not in _WHITESPACE and data[i] != ord("#"):
            i += 1
        tokens.append(data[start:i])
    if i >= n or data[i] not in _WHITESPACE:
        raise MalformedHeader("header must end with a single whitespace byte")
    return tokens, i


def load_pgm(data: bytes) -> GrayImage:
    """Decode a binary (P5) PGM byte string."""
    if len(data) < 2 or data[:2] != b"P5":
        raise UnsupportedFormat(f"expected P5 magic, got {data[:2]!r}")
    tokens, end = _header_tokens(data, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise MalformedHeader(f"non-integer header field: {exc}") from None
    if width < 1 or height < 1:
        raise MalformedHeader(f"bad dimensions {width}x{height}")
    if not 1 <= maxval <= 65535:
        raise MalformedHeader(f"maxval {maxval} outside 1..65535")

    bit_depth, dtype = (8, np.uint8) if maxval <= 255 else (16, ">u2")
    nbytes = width * height * (1 if bit_depth == 8 else 2)
    raw = data[end + 1:end + 1 + nbytes]
    if len(raw) < nbytes:
        raise TruncatedData(f"expected {nbytes} sample bytes, found {len(raw)}")
    samples = np.frombuffer(raw, dtype=dtype).reshape(height, width)
    if samples.max() > maxval:
        raise MalformedHeader(f"sample exceeds declared maxval {maxval}")
    return GrayImage(samples, bit_depth)


def save_pgm(img: GrayImage) -> bytes:
    """Encode as canonical P5 bytes (maxval 255 or 65535).

    The validity mask is not representable in PGM and is dropped.
    """
    header = f"P5\n{img.width} {img.height}\n{img.pmax}\n".encode("ascii")
    if img.bit_depth == 8:
        body = img.samples.astype(np.uint8).tobytes()
    else:
        body = img.samples.astype(">u2").tobytes()
    return header + body


def read_pgm(path) -> GrayImage:
    return load_pgm(Path(path).read_bytes())


def write_pgm(path, img: GrayImage) -> None:
    Path(path).write_bytes(save_pgm(img))


# -- masking, statistics, stretching -------------------------------------------

def mask_overlay(img: GrayImage, regions: Iterable[MaskRegion]) -> GrayImage:
    """Mark pixels inside any region invalid; samples are untouched."""
    valid = img.valid.copy()
    for r in regions:
        x0, y0 = max(r.x, 0), max(r.y, 0)
        x1, y1 = min(r.x + r.w, img.width), min(r.y + r.h, img.height)
        if x1 > x0 and y1 > y0:
            valid[y0:y1, x0:x1] = False
    return img.with_valid(valid)


def nearest_rank_percentile(values: np.ndarray, pct: float):
    """Nearest-rank percentile of a 1-D sample (``pct`` in [0, 100])."""
    if values.size == 0:
        raise InputError("percentile of an empty sample")
    ordered = np.sort(values, kind="stable")
    rank = max(1, math.ceil(pct / 100.0 * ordered.size))
    return ordered[min(rank, ordered.size) - 1]


class StretchResult(NamedTuple):
    image: GrayImage
    calib: TempCalibration
    degenerate: bool


def contrast_stretch(img: GrayImage, lo_pct: float, hi_pct: float,
                     calib: TempCalibration) -> StretchResult:
    """Stretch valid intensities between two percentiles onto the full range.

    The returned calibration is re-anchored so that every stretched intensity
    still maps to (nearly) the same temperature.  A constant image, or one
    whose two percentiles coincide, comes back untouched with
    ``degenerate=True``.
    """
    if not 0 <= lo_pct < hi_pct <= 100:
        raise InputError(f"need 0 <= lo_pct < hi_pct <= 100, got {lo_pct}, {hi_pct}")
    vals = img.samples[img.valid]
    if vals.size == 0:
        return StretchResult(img, calib, True)
    a = int(nearest_rank_percentile(vals, lo_pct))
    b = int(nearest_rank_percentile(vals, hi_pct))
    if a == b:
        return StretchResult(img, calib, True)

    pmax = img.pmax
    scaled = (img.samples.astype(np.float64) - a) * pmax / (b - a)
    out = np.floor(np.clip(scaled, 0, pmax) + 0.5)
    t_a, t_b = temperature_at(calib, a), temperature_at(calib, b)
    if calib.p_high > calib.p_low:
        new_calib = TempCalibration(t_high_c=t_b, t_low_c=t_a, p_high=pmax, p_low=0)
    else:
        # inverted palette: intensity falls as temperature rises
        new_calib = TempCalibration(t_high_c=t_a, t_low_c=t_b, p_high=0, p_low=pmax)
    return StretchResult(GrayImage(out, img.bit_depth, img.valid), new_calib, False)


# -- calibration sidecar -------------------------------------------------------

@dataclass(frozen=True)
class Sidecar:
    calib: TempCalibration
    overlay_masks: tuple[MaskRegion, ...] = ()
    extra: dict = field(default_factory=dict)


def parse_sidecar(text: str) -> Sidecar:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"calibration sidecar is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise InputError("calibration sidecar must be a JSON object")
    try:
        calib = TempCalibration(float(doc["t_high_c"]), float(doc["t_low_c"]),
                                float(doc["p_high"]), float(doc["p_low"]))
        masks = tuple(MaskRegion(int(m["x"]), int(m["y"]), int(m["w"]), int(m["h"]))
                      for m in doc.get("overlay_masks", []))
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"calibration sidecar missing or bad field: {exc}") from None
    known = {"t_high_c", "t_low_c", "p_high", "p_low", "overlay_masks"}
    extra = {k: v for k, v in doc.items() if k not in known}
    return Sidecar(calib, masks, extra)


def dump_sidecar(calib: TempCalibration, overlay_masks: Sequence[MaskRegion] = (),
                 **extra) -> str:
    doc = calib.to_dict()
    doc["overlay_masks"] = [{"x": m.x, "y": m.y, "w": m.w, "h": m.h} for m in overlay_masks]
    doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def read_sidecar(path) -> Sidecar:
    return parse_sidecar(Path(path).read_text(encoding="utf-8"))
