import argparse

import pytest

from monofcw import cli, formats, geometry
from tests import factories


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_no_command_prints_help(capsys):
    code, out, _ = run(capsys)
    assert code == 2
    assert "available commands" in out


def test_calibrate(tmp_path, capsys):
    truth = factories.camera(h=1.2, alpha=0.12, f_y=1000.0, v0=360.0)
    points = tmp_path / "points.txt"
    formats.write_points(points, factories.points(truth, distances=(4, 5, 7)))
    output = tmp_path / "camera.txt"

    code, out, _ = run(
        capsys, "calibrate", "--height", 1.2, "--points", points, "--output", output
    )
    assert code == 0
    params = formats.read_calibration(output)
    for name in ("alpha", "f_y", "v0"):
        assert getattr(params, name) == pytest.approx(getattr(truth, name), rel=1e-9)
    lines = out.splitlines()
    assert len(lines) == 3
    assert lines[0].split()[0] == "4.000000"


def test_calibrate_writes_best_fit_without_convergence(tmp_path, capsys):
    truth = factories.camera(h=1.2, alpha=0.12, f_y=1000.0, v0=360.0)
    points = tmp_path / "points.txt"
    formats.write_points(
        points, factories.points(truth, distances=(4, 5, 7, 10, 15), noise=0.5)
    )
    output = tmp_path / "camera.txt"

    code, _, err = run(
        capsys,
        "calibrate", "--height", 1.2, "--points", points, "--output", output,
        "--max-iter", 0,
    )
    assert code == 1
    assert err.startswith("monofcw: error: no convergence")
    assert formats.read_calibration(output).h == 1.2


def test_calibrate_image_size(tmp_path, capsys):
    truth = factories.camera(h=1.2, alpha=0.12, f_y=1000.0, v0=360.0)
    points = tmp_path / "points.txt"
    formats.write_points(points, factories.points(truth))
    output = tmp_path / "camera.txt"
    code, _, _ = run(
        capsys,
        "calibrate", "--height", 1.2, "--points", points, "--output", output,
        "--image-size", 640, 480,
    )
    assert code == 0
    params = formats.read_calibration(output)
    assert (params.image_w, params.image_h) == (640, 480)


def test_measure(calibration_file, capsys):
    code, out, _ = run(
        capsys, "measure", "--calibration", calibration_file, "--row", 461, 500
    )
    assert code == 0
    first, second = out.split()
    assert float(first) == pytest.approx(5.792, abs=1e-3)
    assert len(first.split(".")[1]) == 6
    assert float(second) < float(first)


def test_measure_above_horizon(calibration_file, capsys):
    code, out, err = run(
        capsys, "measure", "--calibration", calibration_file, "--row", 100
    )
    assert code == 1
    assert out == ""
    assert err.startswith("monofcw: error: row 100.0 is at or above the horizon")
    assert len(err.splitlines()) == 1


def test_measure_calibration_from_config(tmp_path, calibration_file, capsys):
    cfg = tmp_path / "monofcw.conf"
    cfg.write_text(f"calibration = {calibration_file}\n")
    code, out, _ = run(capsys, "--config", cfg, "measure", "--row", 461)
    assert code == 0
    assert float(out) == pytest.approx(5.792, abs=1e-3)


def test_measure_without_calibration(capsys):
    code, _, err = run(capsys, "measure", "--row", 461)
    assert code == 1
    assert "--calibration is required" in err


def test_horizon(calibration_file, capsys, params):
    code, out, _ = run(capsys, "horizon", "--calibration", calibration_file)
    assert code == 0
    assert out.strip() == f"{geometry.horizon_row(params):.6f}"


def test_flag_given_twice(calibration_file, capsys):
    with pytest.raises(SystemExit) as exc_info:
        cli.main(
            ["horizon", "--calibration", str(calibration_file),
             "--calibration", str(calibration_file)]
        )
    assert exc_info.value.code == 2
    assert "more than once" in capsys.readouterr().err


def test_bad_flag_value(calibration_file, capsys):
    with pytest.raises(SystemExit):
        cli.main(["measure", "--calibration", str(calibration_file), "--row", "nan"])


def test_unknown_config_key(tmp_path, calibration_file, capsys):
    cfg = tmp_path / "monofcw.conf"
    cfg.write_text("speed = 3\n")
    code, _, err = run(
        capsys, "--config", cfg, "horizon", "--calibration", calibration_file
    )
    assert code == 1
    assert f"{cfg}:1: unknown key 'speed'" in err


def test_load_config_flags_win(tmp_path):
    cfg = tmp_path / "monofcw.conf"
    cfg.write_text("d_min = 6\nd_max = 30\nfcw.d_alert = 5\n")
    parser_args = argparse.Namespace(config=cfg, d_min=8.0, d_alert=None)
    loaded = cli.load_config(parser_args)
    assert loaded.d_min == 8.0
    assert loaded.d_max == 30.0
    assert loaded.fcw.d_alert == 5.0


def test_load_config_rejects_bad_fcw(tmp_path):
    cfg = tmp_path / "monofcw.conf"
    cfg.write_text("fcw.d_alert = 20\n")
    with pytest.raises(ValueError):
        cli.load_config(argparse.Namespace(config=cfg))


def test_plan(calibration_file, tmp_path, capsys, params):
    output = tmp_path / "plan.txt"
    code, out, _ = run(
        capsys, "plan", "--calibration", calibration_file, "--output", output
    )
    assert code == 0
    plan = formats.read_plan(output, params)
    assert out.split()[:2] == [str(len(plan.bands)), "bands"]

    baseline = tmp_path / "baseline.txt"
    code, out, _ = run(
        capsys,
        "plan", "--calibration", calibration_file, "--output", baseline, "--exhaustive",
    )
    assert code == 0
    assert len(formats.read_plan(baseline, params).bands) == 25


def test_plan_with_anchor_file(calibration_file, tmp_path, capsys, params):
    anchors = tmp_path / "anchors.txt"
    anchors.write_text("10 110 95\n")
    output = tmp_path / "plan.txt"
    code, out, _ = run(
        capsys,
        "plan", "--calibration", calibration_file, "--anchors", anchors,
        "--d-min", 10, "--d-max", 10, "--v-tol-frac", 0, "--output", output,
    )
    assert code == 0
    assert out.split() == ["1", "bands", "84", "windows"]


def test_synth(calibration_file, tmp_path, capsys):
    output = tmp_path / "corpus"
    code, out, _ = run(
        capsys,
        "synth", "--calibration", calibration_file, "--output-dir", output,
        "--scenes", 3, "--seed", 2,
    )
    assert code == 0
    assert sorted(p.name for p in output.glob("*.ppm")) == [
        "scene_0000.ppm", "scene_0001.ppm", "scene_0002.ppm"
    ]
    annotations = formats.read_annotations(output / "annotations.txt")
    assert out.split()[:2] == ["3", "scenes"]
    assert int(out.split()[2]) == len(annotations)
    assert formats.read_image(output / "scene_0000.ppm").shape == (720, 1280, 3)


def test_train(calibration_file, tmp_path, capsys, params, vehicle_plan):
    plan = tmp_path / "plan.txt"
    formats.write_plan(plan, vehicle_plan)
    output = tmp_path / "model.txt"
    code, out, _ = run(
        capsys,
        "train", "--calibration", calibration_file, "--plan", plan,
        "--output", output, "--positives", 30, "--negatives", 60, "--rounds", 4,
    )
    assert code == 0
    clf = formats.read_classifier(output)
    assert 1 <= len(clf.trees) <= 4
    assert out.split()[1] == "trees"


def test_detect_and_eval(calibration_file, tmp_path, capsys, vehicle_plan, classifier):
    plan = tmp_path / "plan.txt"
    formats.write_plan(plan, vehicle_plan)
    model = tmp_path / "model.txt"
    formats.write_classifier(model, classifier)
    corpus = tmp_path / "corpus"
    assert run(
        capsys,
        "synth", "--calibration", calibration_file, "--output-dir", corpus,
        "--scenes", 3,
    )[0] == 0

    images = sorted(corpus.glob("*.ppm"))
    detections = tmp_path / "detections.txt"
    code, out, _ = run(
        capsys,
        "detect", "--calibration", calibration_file, "--plan", plan,
        "--classifier", model, "--output", detections, "--fcw", "--images", *images,
    )
    assert code == 0
    assert out.split()[:2] == ["3", "images"]
    entries = formats.read_detections(detections)
    assert all(level is not None for _, _, level in entries)

    code, out, _ = run(
        capsys,
        "eval", "--detections", detections, "--annotations", corpus / "annotations.txt",
    )
    assert code == 0
    lines = out.splitlines()
    assert lines[0].startswith("detection_rate ")
    assert lines[1].startswith("fppi ")
    assert 0.0 <= float(lines[0].split()[1]) <= 1.0


def test_quantize_study(calibration_file, capsys):
    code, out, _ = run(
        capsys, "quantize-study", "--calibration", calibration_file, "--trials", 200
    )
    assert code == 0
    lines = out.splitlines()
    assert len(lines) == 7
    assert lines[-1].split()[0] == "17.000000"


def test_missing_file(tmp_path, capsys):
    code, _, err = run(
        capsys, "horizon", "--calibration", tmp_path / "missing.txt"
    )
    assert code == 1
    assert err.startswith("monofcw: error:")


def test_measure_column(calibration_file, capsys, params):
    code, out, _ = run(
        capsys,
        "measure", "--calibration", calibration_file, "--row", 461, 500,
        "--column", 640,
    )
    assert code == 0
    lines = [line.split() for line in out.splitlines()]
    assert [lateral for _, lateral in lines] == ["0.000000", "0.000000"]
    assert float(lines[0][0]) == pytest.approx(5.792, abs=1e-3)


def test_measure_column_offset(calibration_file, capsys, params):
    code, out, _ = run(
        capsys,
        "measure", "--calibration", calibration_file, "--row", 461,
        "--column", 1280,
    )
    assert code == 0
    d, lateral = (float(x) for x in out.split())
    assert lateral == pytest.approx(640 * d / params.f_y, abs=1e-5)


def test_detect_with_out_of_range_feature(calibration_file, tmp_path, capsys, vehicle_plan):
    plan = tmp_path / "plan.txt"
    formats.write_plan(plan, vehicle_plan)
    model = tmp_path / "model.txt"
    model.write_text(
        f"{formats.CLASSIFIER_HEADER}\n"
        "window_model 48 40 4\n"
        "0 0 99999 1.5 1 2 0.0\n"
        "0 1 -1 0.0 -1 -1 -0.5\n"
        "0 2 -1 0.0 -1 -1 0.5\n"
        "cascade -0.5\n"
    )
    image = tmp_path / "frame.ppm"
    formats.write_image(image, factories.image(1280, 720))
    code, out, err = run(
        capsys,
        "detect", "--calibration", calibration_file, "--plan", plan,
        "--classifier", model, "--output", tmp_path / "out.txt", "--images", image,
    )
    assert code == 1
    assert out == ""
    assert err.startswith(f"monofcw: error: {model}:3: feature 99999")
    assert len(err.splitlines()) == 1


def test_synth_and_plan_are_byte_identical_across_runs(calibration_file, tmp_path, capsys):
    corpus = tmp_path / "corpus"
    plan = tmp_path / "plan.txt"
    outputs = []
    for _ in range(2):
        assert run(
            capsys,
            "synth", "--calibration", calibration_file, "--output-dir", corpus,
            "--scenes", 2, "--seed", 5,
        )[0] == 0
        assert run(
            capsys, "plan", "--calibration", calibration_file, "--output", plan
        )[0] == 0
        files = sorted(corpus.iterdir()) + [plan]
        outputs.append([(p.name, p.read_bytes()) for p in files])
    assert outputs[0] == outputs[1]
    assert len(outputs[0]) == 4
