"""``pvscan`` command line: detect, rectify, hotspot, eval, synth, report.

Exit codes: 0 success, 1 internal error, 2 invalid input or configuration.
"""
from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import NamedTuple

from . import __version__
from .config import PipelineConfig, field_names, field_type, load_config_dict
from .errors import InputError, UnmatchedImage
from .evalharness import (GroundTruth, aggregate, compute_metrics, metrics_csv, parse_metrics_csv,
                          read_labels, render_table)
from .houghgrid import PanelQuad
from .imagery import mask_overlay, read_pgm, read_sidecar, save_pgm, dump_sidecar
from .pipeline import (accumulator_image, dump_document, evaluate_document, inspect_panel,
                       run_image)
from .rectify import warp_panel
from .synthgen import load_specs, scene_files

log = logging.getLogger("pvscan")

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT = 0, 1, 2
DETECTIONS_SUFFIX = ".detections.json"
LABELS_SUFFIX = ".labels.json"


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- configuration -------------------------------------------------------------

def _add_config_flags(p: argparse.ArgumentParser, skip=()) -> None:
    g = p.add_argument_group("pipeline parameters (override --config / $PVSCAN_CONFIG)")
    g.add_argument("--config", help="JSON config file")
    for name in field_names():
        if name in skip:
            continue
        g.add_argument("--" + name.replace("_", "-"), dest=name, type=field_type(name),
                       default=None, metavar="N")


def resolve_config(args) -> PipelineConfig:
    """Flags win over the config file, which wins over built-in defaults."""
    path = getattr(args, "config", None) or os.environ.get("PVSCAN_CONFIG")
    doc = load_config_dict(path) if path else {}
    doc.update({n: getattr(args, n) for n in field_names() if getattr(args, n, None) is not None})
    return PipelineConfig.from_dict(doc)


# -- detect --------------------------------------------------------------------

def _detect_one(image_path: Path, calib_suffix: str, cfg: PipelineConfig, out_dir: Path,
                debug_dir: Path | None):
    sidecar_path = image_path.with_suffix(calib_suffix)
    if not sidecar_path.exists():
        raise InputError(f"missing calibration sidecar: {sidecar_path}")
    img = read_pgm(image_path)
    sidecar = read_sidecar(sidecar_path)
    det = run_image(img, sidecar, cfg, image_path.stem)
    doc = det.to_document()
    _atomic_write(out_dir / f"{image_path.stem}{DETECTIONS_SUFFIX}", dump_document(doc).encode())
    if debug_dir is not None:
        stem = image_path.stem
        if det.edges is not None:
            _atomic_write(debug_dir / f"{stem}.edges.pgm", save_pgm(det.edges.to_image()))
        if det.accumulator is not None:
            _atomic_write(debug_dir / f"{stem}.accumulator.pgm",
                          save_pgm(accumulator_image(det.accumulator)))
        if det.rectified is not None:
            _atomic_write(debug_dir / f"{stem}.rectified.pgm", save_pgm(det.rectified.image))
    return doc


class DetectFailure(NamedTuple):
    path: Path
    code: int
    message: str


def run_detect(paths, config: PipelineConfig, out_dir, calib_suffix: str = ".calib",
               debug_dir=None, jobs: int = 1):
    """Run detection on each image; returns (documents by image path, failures).

    Images are processed concurrently up to ``jobs``; each document is
    written atomically as ``<stem>.detections.json`` in ``out_dir``.
    """
    out_dir = Path(out_dir)
    debug_dir = Path(debug_dir) if debug_dir else None

    def job(path):
        try:
            return _detect_one(path, calib_suffix, config, out_dir, debug_dir)
        except (InputError, OSError) as exc:
            return DetectFailure(path, EXIT_INPUT, str(exc))
        except Exception as exc:  # noqa: BLE001 - reported per file
            log.exception("internal error while processing %s", path)
            return DetectFailure(path, EXIT_INTERNAL, f"internal error: {exc}")

    paths = [Path(p) for p in paths]
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(pool.map(job, paths))
    docs = {p: r for p, r in zip(paths, results) if not isinstance(r, DetectFailure)}
    failures = [r for r in results if isinstance(r, DetectFailure)]
    return docs, failures


def cmd_detect(args) -> int:
    cfg = resolve_config(args)
    paths = sorted({Path(p) for pattern in args.input for p in glob.glob(pattern)})
    if not paths:
        print(f"error: no input matches {args.input}", file=sys.stderr)
        return EXIT_INPUT
    docs, failures = run_detect(paths, cfg, args.out, args.calib_suffix, args.debug_dir,
                                args.jobs)
    for path, doc in sorted(docs.items()):
        for w in doc["warnings"]:
            print(f"warning: {path.name}: {w}", file=sys.stderr)
    for f in failures:
        print(f"error: {f.path}: {f.message}", file=sys.stderr)
    print(f"processed {len(docs)}/{len(paths)} image(s) into {args.out}", file=sys.stderr)
    if docs:
        return EXIT_OK
    return EXIT_INTERNAL if any(f.code == EXIT_INTERNAL for f in failures) else EXIT_INPUT


# -- rectify / hotspot -----------------------------------------------------------

def _load_for_panel(args):
    doc = json.loads(Path(args.detections).read_text(encoding="utf-8"))
    image_path = Path(args.image)
    calib_path = Path(args.calib) if args.calib else image_path.with_suffix(args.calib_suffix)
    if not calib_path.exists():
        raise InputError(f"missing calibration sidecar: {calib_path}")
    img = read_pgm(image_path)
    sidecar = read_sidecar(calib_path)
    index = args.panel if args.panel is not None else doc.get("prominent_panel")
    panels = doc.get("panels", [])
    if index is None or not 0 <= index < len(panels):
        raise InputError(f"detections document has no panel {index!r}")
    quad = PanelQuad(tuple(tuple(p) for p in panels[index]))
    return doc, mask_overlay(img, sidecar.overlay_masks), sidecar, index, quad


def cmd_rectify(args) -> int:
    cfg = resolve_config(args)
    doc, img, sidecar, index, quad = _load_for_panel(args)
    panel = warp_panel(img, quad, cfg.rect_width, cfg.rect_height, sidecar.calib)
    stem = f"{doc.get('image', Path(args.image).stem)}.panel{index}"
    out = Path(args.out)
    _atomic_write(out / f"{stem}.pgm", save_pgm(panel.image))
    _atomic_write(out / f"{stem}.calib", dump_sidecar(panel.calib).encode())
    print(f"wrote {out / (stem + '.pgm')}", file=sys.stderr)
    return EXIT_OK


def cmd_hotspot(args) -> int:
    cfg = resolve_config(args)
    doc, img, sidecar, index, quad = _load_for_panel(args)
    _, report = inspect_panel(img, quad, sidecar.calib, cfg)
    result = dict(report.to_dict(), image=doc.get("image"), panel=index,
                  config_fingerprint=cfg.fingerprint())
    text = json.dumps(result, indent=2, sort_keys=True) + "\n"
    if args.out:
        _atomic_write(Path(args.out), text.encode())
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- eval / report -----------------------------------------------------------------

def load_truths(truth_dir) -> dict[str, GroundTruth]:
    truths = {}
    for path in sorted(Path(truth_dir).glob(f"*{LABELS_SUFFIX}")):
        gt = read_labels(path)
        truths[gt.image] = gt
    return truths


def load_predictions(pred_dir) -> dict[str, dict]:
    docs = {}
    for path in sorted(Path(pred_dir).glob(f"*{DETECTIONS_SUFFIX}")):
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: not valid JSON: {exc}") from None
        docs[doc.get("image", path.name[:-len(DETECTIONS_SUFFIX)])] = doc
    return docs


def run_eval(preds: dict[str, dict], truths: dict[str, GroundTruth], cfg: PipelineConfig):
    """Per-image evaluations plus the corpus-level metrics computed on summed counts.

    Truth images without a prediction document count as empty predictions.
    """
    stray = sorted(set(preds) - set(truths))
    if stray:
        raise UnmatchedImage(f"no ground truth for predicted image(s): {', '.join(stray)}")
    per_image = [evaluate_document(preds.get(name, {"lines": []}), truths[name], cfg)
                 for name in sorted(truths)]
    return aggregate(e.outcome for e in per_image), per_image


def cmd_eval(args) -> int:
    if args.theta_tol is not None:
        args.eval_theta_tol_deg = args.theta_tol
    cfg = resolve_config(args)
    metrics, per_image = run_eval(load_predictions(args.pred), load_truths(args.truth), cfg)
    for e in per_image:
        o = e.outcome
        print(f"{e.image}: TP={o.tp} Err={o.err} FP={o.fp} FN={o.fn} absorbed={o.absorbed} "
              f"keypoints={e.keypoints_found}/{e.keypoints_total} "
              f"panels={e.panels_found}/{e.panels_total}")
    print(render_table(metrics))
    _atomic_write(Path(args.out), metrics_csv(metrics).encode())
    return EXIT_OK


def cmd_report(args) -> int:
    if args.metrics:
        metrics = parse_metrics_csv(Path(args.metrics).read_text(encoding="utf-8"))
    else:
        counts = (args.tp, args.err, args.fp, args.fn)
        if any(c is None for c in counts):
            raise InputError("report needs --metrics or all of --tp --err --fp --fn")
        tp, err, fp, fn = counts
        metrics = compute_metrics(tp, err, fp, fn, tp + err + fn)
    print(render_table(metrics))
    return EXIT_OK


# -- synth -------------------------------------------------------------------------

def run_synth(spec_file, out_dir) -> list[Path]:
    """Render every scene in ``spec_file`` into ``out_dir``; returns the written paths."""
    specs = load_specs(Path(spec_file).read_text(encoding="utf-8"))
    files = {}
    for spec in specs:
        files.update(scene_files(spec))  # render all first so a bad spec writes nothing
    out = Path(out_dir)
    for name, blob in files.items():
        _atomic_write(out / name, blob)
    return [out / name for name in files]


def cmd_synth(args) -> int:
    written = run_synth(args.spec, args.out)
    print(f"wrote {len(written)} file(s) to {args.out}", file=sys.stderr)
    return EXIT_OK


# -- entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pvscan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="detect grid lines, panels and hotspots")
    p.add_argument("--input", action="append", required=True, help="image glob (repeatable)")
    p.add_argument("--calib-suffix", default=".calib")
    p.add_argument("--out", required=True, help="directory for detections documents")
    p.add_argument("--debug-dir", help="write edge, accumulator and rectified-panel PGMs here")
    p.add_argument("--jobs", type=int, default=1)
    _add_config_flags(p)
    p.set_defaults(func=cmd_detect)

    for name, func, helptext in (("rectify", cmd_rectify, "rectify one detected panel"),
                                 ("hotspot", cmd_hotspot, "flag hotspots on one detected panel")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--detections", required=True, help="prior detections document")
        p.add_argument("--image", required=True)
        p.add_argument("--calib", help="calibration sidecar (default: image path + suffix)")
        p.add_argument("--calib-suffix", default=".calib")
        p.add_argument("--panel", type=int, help="panel index (default: prominent panel)")
        p.add_argument("--out", required=(name == "rectify"))
        _add_config_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="score detections against ground-truth labels")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True, help="metrics CSV path")
    p.add_argument("--theta-tol", type=float, help="degrees; alias of --eval-theta-tol-deg")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="render synthetic scenes with labels")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", help="render the grid-line metrics table")
    p.add_argument("--metrics", help="metrics CSV written by eval")
    for c in ("tp", "err", "fp", "fn"):
        p.add_argument("--" + c, type=int)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception:  # noqa: BLE001
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
