"""Ground-truth labels, prediction-to-truth matching and grid-line metrics."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from shapely.geometry import Polygon

from .errors import BadTolerances, InconsistentCounts, InputError
from .houghgrid import LineRT, angular_distance

TP, ERR, FN = "TP", "Err", "FN"
MATCHED, ABSORBED, FP = "matched", "absorbed", "FP"

CSV_FIELDS = ("tp", "err", "fp", "fn", "total", "recall", "error_rate", "precision", "miss_rate")


@dataclass(frozen=True)
class GroundTruth:
    image: str
    lines: list[tuple[float, float, float, float]] = field(default_factory=list)
    keypoints: list[tuple[float, float]] = field(default_factory=list)
    panels: list[list[tuple[float, float]]] = field(default_factory=list)

    def __post_init__(self):
        for x1, y1, x2, y2 in self.lines:
            if x1 == x2 and y1 == y2:
                raise InputError(f"{self.image}: degenerate segment at ({x1}, {y1})")

    def to_dict(self) -> dict:
        return {
            "image": self.image,
            "lines": [{"x1": a, "y1": b, "x2": c, "y2": d} for a, b, c, d in self.lines],
            "keypoints": [{"x": x, "y": y} for x, y in self.keypoints],
            "panels": [[[x, y] for x, y in poly] for poly in self.panels],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GroundTruth":
        try:
            return cls(
                image=str(doc["image"]),
                lines=[(float(s["x1"]), float(s["y1"]), float(s["x2"]), float(s["y2"]))
                       for s in doc.get("lines", [])],
                keypoints=[(float(k["x"]), float(k["y"])) for k in doc.get("keypoints", [])],
                panels=[[(float(x), float(y)) for x, y in poly] for poly in doc.get("panels", [])],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed label document: {exc}") from None


def parse_labels(text: str) -> GroundTruth:
    try:
        return GroundTruth.from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise InputError(f"label file is not valid JSON: {exc}") from None


def read_labels(path) -> GroundTruth:
    return parse_labels(Path(path).read_text(encoding="utf-8"))


def dump_labels(gt: GroundTruth) -> str:
    return json.dumps(gt.to_dict(), indent=2) + "\n"


# -- matching ------------------------------------------------------------------

@dataclass(frozen=True)
class MatchOutcome:
    truth: list[tuple[str, float | None]]  # (classification, best error px)
    preds: list[str]
    assignment: list[int | None] = field(default_factory=list)  # truth index per prediction

    def _count(self, seq, label):
        return sum(1 for s in seq if s == label)

    @property
    def tp(self) -> int:
        return self._count((c for c, _ in self.truth), TP)

    @property
    def err(self) -> int:
        return self._count((c for c, _ in self.truth), ERR)

    @property
    def fn(self) -> int:
        return self._count((c for c, _ in self.truth), FN)

    @property
    def fp(self) -> int:
        return self._count(self.preds, FP)

    @property
    def matched(self) -> int:
        return self._count(self.preds, MATCHED)

    @property
    def absorbed(self) -> int:
        return self._count(self.preds, ABSORBED)


def segment_direction(seg) -> float:
    x1, y1, x2, y2 = seg
    return math.atan2(y2 - y1, x2 - x1) % math.pi


def line_segment_error(line: LineRT, seg) -> float:
    """Largest perpendicular distance from the segment's endpoints to the line."""
    x1, y1, x2, y2 = seg
    return max(abs(line.distance(x1, y1)), abs(line.distance(x2, y2)))


def match_lines(preds: Sequence[LineRT], truth: Sequence, eps_tp: float = 5.0,
                eps_err: float = 15.0, theta_tol: float = math.radians(5)) -> MatchOutcome:
    """Greedy per-prediction assignment with multi-proposal collapse.

    Each prediction goes to the closest compatible truth segment.  A truth
    with several assigned predictions counts once; the best one is
    ``matched`` and the rest are ``absorbed`` rather than false positives.
    """
    if not 0 < eps_tp < eps_err or theta_tol <= 0:
        raise BadTolerances(f"need 0 < eps_tp < eps_err and theta_tol > 0 "
                            f"(got {eps_tp}, {eps_err}, {theta_tol})")
    seg_dirs = [segment_direction(s) for s in truth]
    assignment: list[int | None] = []
    errors: list[float | None] = []
    for p in preds:
        p_dir = (p.theta + math.pi / 2) % math.pi
        best, best_e = None, math.inf
        for k, seg in enumerate(truth):
            if angular_distance(p_dir, seg_dirs[k]) > theta_tol:
                continue
            e = line_segment_error(p, seg)
            if e <= eps_err and e < best_e:
                best, best_e = k, e
        assignment.append(best)
        errors.append(best_e if best is not None else None)

    status = [FP] * len(preds)
    truth_out = []
    for k in range(len(truth)):
        mine = [i for i, a in enumerate(assignment) if a == k]
        if not mine:
            truth_out.append((FN, None))
            continue
        best_i = min(mine, key=lambda i: (errors[i], i))
        for i in mine:
            status[i] = ABSORBED
        status[best_i] = MATCHED
        e = errors[best_i]
        truth_out.append((TP if e <= eps_tp else ERR, e))
    return MatchOutcome(truth_out, status, assignment)


# -- metrics -------------------------------------------------------------------

def _ratio(num: float, den: float):
    return num / den if den else None


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    err: int
    fp: int
    fn: int
    total_truth: int
    recall: float | None
    error_rate: float
    precision: float | None
    miss_rate: float | None
    error_rate_alt: float | None  # err / tp, the formula as printed in the table header

    def as_row(self) -> dict:
        return {"tp": self.tp, "err": self.err, "fp": self.fp, "fn": self.fn,
                "total": self.total_truth, "recall": self.recall,
                "error_rate": self.error_rate, "precision": self.precision,
                "miss_rate": self.miss_rate}


def compute_metrics(tp: int, err: int, fp: int, fn: int, total_truth: int) -> MetricsReport:
    if min(tp, err, fp, fn, total_truth) < 0:
        raise InconsistentCounts("counts must be non-negative")
    if tp + err + fn != total_truth:
        raise InconsistentCounts(f"tp + err + fn = {tp + err + fn} != total {total_truth}")
    return MetricsReport(
        tp, err, fp, fn, total_truth,
        recall=_ratio(tp, total_truth),
        error_rate=_ratio(err, tp + err) or 0.0,
        precision=_ratio(tp, tp + fp),
        miss_rate=_ratio(fn, total_truth),
        error_rate_alt=_ratio(err, tp),
    )


def aggregate(outcomes: Iterable[MatchOutcome]) -> MetricsReport:
    tp = err = fp = fn = 0
    for o in outcomes:
        tp, err, fp, fn = tp + o.tp, err + o.err, fp + o.fp, fn + o.fn
    return compute_metrics(tp, err, fp, fn, tp + err + fn)


def format_pct(x: float | None) -> str:
    """Percentage to three significant figures ("61.3%"); None renders as "n/a"."""
    if x is None:
        return "n/a"
    v = 100.0 * x
    if v == 0:
        return "0%"
    digits = max(0, 2 - int(math.floor(math.log10(abs(v)))))
    return f"{v:.{digits}f}%"


def render_table(m: MetricsReport) -> str:
    n = m.total_truth
    rows = [
        ("True Positive", m.tp, f"TP/{n}", format_pct(m.recall), "Recall"),
        ("Exceeds Error", m.err, "Err/(TP+Err)", format_pct(m.error_rate), "Error Rate"),
        ("False Positive", m.fp, "TP/(TP+FP)", format_pct(m.precision), "Precision"),
        ("False Negative", m.fn, f"FN/{n}", format_pct(m.miss_rate), "Miss Rate"),
    ]
    head = f"{'Detection Result':<18}{'Predicted':>10}  {'Equation':<14}{'Metric':>8}"
    lines = ["PV ARRAY GRID LINE DETECTION", head, "-" * len(head)]
    for name, count, eq, pct, label in rows:
        lines.append(f"{name:<18}{count:>10}  {eq:<14}{pct:>8}  {label}")
    lines.append(f"error_rate_alt (Err/TP): {format_pct(m.error_rate_alt)}")
    return "\n".join(lines)


def metrics_csv(m: MetricsReport) -> str:
    row = m.as_row()
    vals = ["" if row[k] is None else repr(row[k]) if isinstance(row[k], float) else str(row[k])
            for k in CSV_FIELDS]
    return ",".join(CSV_FIELDS) + "\n" + ",".join(vals) + "\n"


def parse_metrics_csv(text: str) -> MetricsReport:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 2:
        raise InputError("metrics CSV needs a header and a data row")
    row = dict(zip(lines[0].split(","), lines[1].split(",")))
    try:
        return compute_metrics(int(row["tp"]), int(row["err"]), int(row["fp"]),
                               int(row["fn"]), int(row["total"]))
    except (KeyError, ValueError) as exc:
        raise InputError(f"malformed metrics CSV: {exc}") from None


# -- keypoints and panels (informational) -------------------------------------------

def match_keypoints(preds: Sequence, truth: Sequence, radius: float = 5.0) -> int:
    """Number of truth keypoints matched one-to-one within ``radius`` (greedy by distance)."""
    pairs = []
    for i, (px, py) in enumerate(preds):
        for k, (tx, ty) in enumerate(truth):
            d = math.hypot(px - tx, py - ty)
            if d <= radius:
                pairs.append((d, k, i))
    pairs.sort()
    used_p, used_t = set(), set()
    for _, k, i in pairs:
        if k not in used_t and i not in used_p:
            used_t.add(k)
            used_p.add(i)
    return len(used_t)


def polygon_iou(a: Sequence, b: Sequence) -> float:
    pa, pb = Polygon(a), Polygon(b)
    if not pa.is_valid:
        pa = pa.buffer(0)
    if not pb.is_valid:
        pb = pb.buffer(0)
    union = pa.union(pb).area
    return pa.intersection(pb).area / union if union > 0 else 0.0


def match_panels(preds: Sequence, truth: Sequence, min_iou: float = 0.5) -> int:
    """Number of truth panels matched one-to-one at IoU >= ``min_iou``."""
    pairs = []
    for i, p in enumerate(preds):
        for k, t in enumerate(truth):
            iou = polygon_iou(p, t)
            if iou >= min_iou:
                pairs.append((-iou, k, i))
    pairs.sort()
    used_p, used_t = set(), set()
    for _, k, i in pairs:
        if k not in used_t and i not in used_p:
            used_t.add(k)
            used_p.add(i)
    return len(used_t)
