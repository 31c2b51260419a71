import json
import math

import numpy as np
import pytest

from pvscan import cli
from pvscan.config import PipelineConfig, load_config
from pvscan.errors import ConfigError, UnmatchedImage
from pvscan.evalharness import aggregate, line_segment_error
from pvscan.imagery import GrayImage, MaskRegion, Sidecar, TempCalibration, load_pgm
from pvscan.pipeline import SCHEMA_VERSION, run_image
from pvscan.synthgen import SceneSpec, render_scene, write_scene


@pytest.fixture(scope="module")
def default_scene():
    return render_scene(SceneSpec())


@pytest.fixture
def scenes(tmp_path):
    d = tmp_path / "scenes"
    write_scene(SceneSpec(name="a"), d)
    write_scene(SceneSpec(name="b", noise_sigma=1.0, seed=2, hotspots=((4, 5, 3, 8.0),)), d)
    return d


# -- config ---------------------------------------------------------------------

def test_config_defaults_and_fingerprint():
    c = PipelineConfig()
    assert c.vote_threshold == 60 and c.theta_step == pytest.approx(math.pi / 180)
    assert c.fingerprint() == PipelineConfig().fingerprint()
    assert c.fingerprint() != c.updated(vote_threshold=61).fingerprint()


@pytest.mark.parametrize("bad", [{"vote_threshold": 0}, {"blur_sigma": -1},
                                 {"canny_low": 200}, {"nonsense": 1}, {"cell_rows": 2.5},
                                 {"split_angle_deg": 50}, {"eps_err": 4}])
def test_config_rejects(bad):
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict(bad)


def test_load_config_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{"vote_threshold": 40, "cell_rows": 5.0}')
    c = load_config(p)
    assert c.vote_threshold == 40 and c.cell_rows == 5 and isinstance(c.cell_rows, int)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


# -- pipeline -------------------------------------------------------------------

def test_noise_free_scene_document(default_scene):
    det = run_image(default_scene.image, Sidecar(default_scene.calib), PipelineConfig(), "s")
    doc = det.to_document()
    assert doc["schema_version"] == SCHEMA_VERSION
    assert doc["config_fingerprint"] == PipelineConfig().fingerprint()
    assert len(doc["lines"]) == 7 and len(doc["panels"]) == 6
    assert doc["hotspots"]["flagged"] == [] and doc["warnings"] == []
    for seg in default_scene.truth.lines:
        assert min(line_segment_error(ln, seg) for ln in det.grid.lines) <= 2.0


def test_all_masked_image_warns():
    img = GrayImage(np.zeros((20, 20)))
    sc = Sidecar(TempCalibration(40, 20, 255, 0), (MaskRegion(0, 0, 20, 20),))
    doc = run_image(img, sc, PipelineConfig(), "m").to_document()
    assert doc["lines"] == [] and doc["warnings"]


def test_featureless_image_reports_no_panels():
    img = GrayImage(np.full((30, 30), 10))
    doc = run_image(img, Sidecar(TempCalibration(40, 20, 255, 0)), PipelineConfig(),
                    "x").to_document()
    assert doc["panels"] == [] and doc["prominent_panel"] is None and doc["warnings"]


def test_hotspot_found_end_to_end():
    spec = SceneSpec(grid_rows=1, grid_cols=1, corners=((60, 40), (420, 40), (420, 280), (60, 280)),
                     hotspots=((0, 4, 2, 8.0),))
    scene = render_scene(spec)
    det = run_image(scene.image, Sidecar(scene.calib), PipelineConfig(), "h")
    assert [(r, c) for r, c, _ in det.hotspots.flagged] == [(4, 2)]
    assert det.hotspots.flagged[0][2] == pytest.approx(8.0, abs=1.0)


# -- CLI ------------------------------------------------------------------------

def test_detect_eval_round_trip(scenes, tmp_path, capsys):
    out = tmp_path / "det"
    dbg = tmp_path / "dbg"
    assert cli.main(["detect", "--input", str(scenes / "*.pgm"), "--out", str(out),
                     "--debug-dir", str(dbg), "--jobs", "2"]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["a.detections.json", "b.detections.json"]
    for stem in "ab":
        for kind in ("edges", "accumulator", "rectified"):
            load_pgm((dbg / f"{stem}.{kind}.pgm").read_bytes())
    metrics = tmp_path / "m.csv"
    assert cli.main(["eval", "--pred", str(out), "--truth", str(scenes),
                     "--out", str(metrics)]) == 0
    row = dict(zip(*[ln.split(",") for ln in metrics.read_text().splitlines()]))
    assert row["tp"] == "14" and row["fp"] == "0" and row["fn"] == "0"
    assert "Recall" in capsys.readouterr().out


def test_detect_is_deterministic_across_jobs(scenes, tmp_path):
    for jobs, name in ((1, "one"), (3, "three")):
        assert cli.main(["detect", "--input", str(scenes / "*.pgm"), "--out",
                         str(tmp_path / name), "--jobs", str(jobs)]) == 0
    for f in ("a", "b"):
        assert ((tmp_path / "one" / f"{f}.detections.json").read_bytes()
                == (tmp_path / "three" / f"{f}.detections.json").read_bytes())


def test_detect_missing_sidecar(scenes, tmp_path, capsys):
    (scenes / "a.calib").unlink()
    assert cli.main(["detect", "--input", str(scenes / "a.pgm"), "--out", str(tmp_path)]) == 2
    assert "a.calib" in capsys.readouterr().err
    # one good image is enough for success
    assert cli.main(["detect", "--input", str(scenes / "*.pgm"), "--out", str(tmp_path)]) == 0


def test_detect_no_match_and_bad_config(tmp_path, scenes):
    assert cli.main(["detect", "--input", str(tmp_path / "none*.pgm"), "--out", "x"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"vote_threshold": 0}')
    assert cli.main(["detect", "--input", str(scenes / "a.pgm"), "--out", str(tmp_path),
                     "--config", str(bad)]) == 2


def test_config_precedence(tmp_path, scenes, monkeypatch):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"vote_threshold": 0, "cell_rows": 5}')
    monkeypatch.setenv("PVSCAN_CONFIG", str(cfg))
    out = tmp_path / "o"
    # the flag repairs the file's out-of-range value; the file's other key survives
    assert cli.main(["detect", "--input", str(scenes / "a.pgm"), "--out", str(out),
                     "--vote-threshold", "55"]) == 0
    doc = json.loads((out / "a.detections.json").read_text())
    expected = PipelineConfig(vote_threshold=55, cell_rows=5).fingerprint()
    assert doc["config_fingerprint"] == expected


def test_rectify_and_hotspot_commands(scenes, tmp_path, capsys):
    det = tmp_path / "det"
    cli.main(["detect", "--input", str(scenes / "b.pgm"), "--out", str(det)])
    doc_path = det / "b.detections.json"
    rect = tmp_path / "rect"
    assert cli.main(["rectify", "--detections", str(doc_path), "--image",
                     str(scenes / "b.pgm"), "--out", str(rect), "--panel", "0"]) == 0
    img = load_pgm((rect / "b.panel0.pgm").read_bytes())
    assert (img.width, img.height) == (120, 200)
    capsys.readouterr()
    assert cli.main(["hotspot", "--detections", str(doc_path), "--image",
                     str(scenes / "b.pgm")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["panel"] == 4
    assert [(f["row"], f["col"]) for f in report["flagged"]] == [(5, 3)]
    assert cli.main(["hotspot", "--detections", str(doc_path), "--image",
                     str(scenes / "b.pgm"), "--panel", "99"]) == 2


def test_eval_unmatched_prediction(tmp_path, scenes):
    pred = tmp_path / "p"
    pred.mkdir()
    (pred / "zz.detections.json").write_text('{"image": "zz", "lines": []}')
    assert cli.main(["eval", "--pred", str(pred), "--truth", str(scenes),
                     "--out", str(tmp_path / "m.csv")]) == 2
    with pytest.raises(UnmatchedImage):
        cli.run_eval(cli.load_predictions(pred), cli.load_truths(scenes), PipelineConfig())


def test_eval_missing_predictions_count_as_misses(tmp_path, scenes):
    empty = tmp_path / "empty"
    empty.mkdir()
    m, per_image = cli.run_eval({}, cli.load_truths(scenes), PipelineConfig())
    assert (m.recall, m.miss_rate, m.fn) == (0.0, 1.0, 14)
    assert len(per_image) == 2


def test_eval_is_additive_over_image_sets(scenes, tmp_path):
    det = tmp_path / "det"
    cli.main(["detect", "--input", str(scenes / "*.pgm"), "--out", str(det)])
    preds, truths = cli.load_predictions(det), cli.load_truths(scenes)
    cfg = PipelineConfig()
    _, per_a = cli.run_eval({"a": preds["a"]}, {"a": truths["a"]}, cfg)
    _, per_b = cli.run_eval({"b": preds["b"]}, {"b": truths["b"]}, cfg)
    both, _ = cli.run_eval(preds, truths, cfg)
    assert both == aggregate(e.outcome for e in per_a + per_b)


def test_eval_theta_tol_flag(scenes, tmp_path):
    det = tmp_path / "det"
    cli.main(["detect", "--input", str(scenes / "a.pgm"), "--out", str(det)])
    assert cli.main(["eval", "--pred", str(det), "--truth", str(scenes), "--out",
                     str(tmp_path / "m.csv"), "--eps-tp", "5", "--eps-err", "15",
                     "--theta-tol", "5"]) == 0
    assert cli.main(["eval", "--pred", str(det), "--truth", str(scenes), "--out",
                     str(tmp_path / "m.csv"), "--eps-tp", "20", "--eps-err", "15"]) == 2


def test_synth_command(tmp_path):
    spec = tmp_path / "s.json"
    spec.write_text('{"name": "t", "grid_rows": 2, "grid_cols": 3, "seed": 1}')
    assert cli.main(["synth", "--spec", str(spec), "--out", str(tmp_path / "o")]) == 0
    names = sorted(p.name for p in (tmp_path / "o").iterdir())
    assert names == ["t.calib", "t.labels.json", "t.pgm"]
    labels = json.loads((tmp_path / "o" / "t.labels.json").read_text())
    assert len(labels["lines"]) == 7
    spec.write_text('{"corners": [[0, 0], [10, 10], [0, 10], [10, 0]]}')
    assert cli.main(["synth", "--spec", str(spec), "--out", str(tmp_path / "bad")]) == 2
    assert not (tmp_path / "bad").exists()


def test_report_command(capsys, tmp_path):
    assert cli.main(["report", "--tp", "463", "--err", "86", "--fp", "23", "--fn", "206"]) == 0
    out = capsys.readouterr().out
    for s in ("61.3%", "15.7%", "95.3%", "27.3%"):
        assert s in out
    assert cli.main(["report", "--tp", "1"]) == 2
    csv = tmp_path / "m.csv"
    csv.write_text("tp,err,fp,fn,total,recall,error_rate,precision,miss_rate\n"
                   "463,86,23,206,755,,,,\n")
    assert cli.main(["report", "--metrics", str(csv)]) == 0


def test_internal_error_exit_code(monkeypatch, scenes, tmp_path):
    def boom(*a, **k):
        raise RuntimeError("boom")

    monkeypatch.setattr(cli, "run_image", boom)
    assert cli.main(["detect", "--input", str(scenes / "a.pgm"), "--out", str(tmp_path)]) == 1


def test_sixteen_bit_input_matches_eight_bit(default_scene):
    img16 = GrayImage(default_scene.image.samples.astype(np.uint32) * 257, 16)
    cal16 = TempCalibration(default_scene.calib.t_high_c, default_scene.calib.t_low_c,
                            65535.0, 0.0)
    det8 = run_image(default_scene.image, Sidecar(default_scene.calib), PipelineConfig(), "s")
    det16 = run_image(img16, Sidecar(cal16), PipelineConfig(), "s")
    assert len(det16.grid.lines) == len(det8.grid.lines) == 7
    assert len(det16.grid.panels) == 6 and det16.hotspots.flagged == []
