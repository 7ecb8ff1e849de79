import numpy as np
import pytest

from monofcw import boosting, formats
from monofcw.schema import CalibrationPoint, GroundTruth, SizeAnchor, WarningLevel
from tests import factories


def rewrite(tmp_path, path, read, write, *args):
    """Read path and write it again, returning both files' bytes."""
    again = tmp_path / ("again-" + path.name)
    write(again, read(path, *args))
    return path.read_bytes(), again.read_bytes()


def toy_classifier():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(80, 1200))
    y = np.where(x[:, 3] + x[:, 700] > 0, 1.0, -1.0)
    clf, _ = boosting.boost(x, y, rounds=5, depth=2)
    return clf


def test_format_error_message():
    exc = formats.FormatError("points.txt", 3, "bad value")
    assert str(exc) == "points.txt:3: bad value"
    assert (exc.path, exc.line, exc.problem) == ("points.txt", 3, "bad value")


def test_calibration_round_trip(tmp_path, params):
    path = tmp_path / "camera.txt"
    formats.write_calibration(path, params)
    assert formats.read_calibration(path) == params
    first, second = rewrite(
        tmp_path, path, formats.read_calibration, formats.write_calibration
    )
    assert first == second
    assert path.read_text().splitlines()[0] == "h_m = 1.225"


def test_calibration_ignores_comments_and_order(tmp_path, params):
    path = tmp_path / "camera.txt"
    path.write_text(
        "# reference drive recorder\n"
        "image_h = 720\n"
        "\n"
        "v0_px = 363.331\n"
        "fy_px = 1094.313\n"
        "alpha_rad = 0.1194\n"
        "image_w = 1280\n"
        "h_m = 1.225\n"
    )
    assert formats.read_calibration(path) == params


@pytest.mark.parametrize(
    "text,line",
    [
        ("h_m = 1.225\nh_m = 1.3\n", 2),
        ("h_m = 1.225\nfocal = 1000\n", 2),
        ("h_m = tall\n", 1),
        ("h_m 1.225\n", 1),
        ("h_m = 1.225\nalpha_rad = 0.1\n", 3),
    ],
)
def test_calibration_errors(tmp_path, text, line):
    path = tmp_path / "camera.txt"
    path.write_text(text)
    with pytest.raises(formats.FormatError) as exc_info:
        formats.read_calibration(path)
    assert exc_info.value.line == line


def test_calibration_invalid_camera(tmp_path, params):
    path = tmp_path / "camera.txt"
    formats.write_calibration(path, params)
    path.write_text(path.read_text().replace("h_m = 1.225", "h_m = -1.0"))
    with pytest.raises(formats.FormatError):
        formats.read_calibration(path)


def test_points_round_trip(tmp_path, params):
    path = tmp_path / "points.txt"
    points = factories.points(params, distances=(4, 5, 7, 10))
    formats.write_points(path, points)
    assert formats.read_points(path) == points
    first, second = rewrite(tmp_path, path, formats.read_points, formats.write_points)
    assert first == second


def test_points_error_line(tmp_path):
    path = tmp_path / "points.txt"
    path.write_text("# d_m v_px\n4 461\n\n5 428 extra\n")
    with pytest.raises(formats.FormatError) as exc_info:
        formats.read_points(path)
    assert exc_info.value.line == 4
    assert str(exc_info.value).startswith(f"{path}:4: ")


def test_points_invalid_distance(tmp_path):
    path = tmp_path / "points.txt"
    path.write_text("4 461\n-5 428\n")
    with pytest.raises(formats.FormatError) as exc_info:
        formats.read_points(path)
    assert exc_info.value.line == 2


def test_anchors_round_trip(tmp_path):
    path = tmp_path / "anchors.txt"
    anchors = [SizeAnchor(d=5, w=400, h=275), SizeAnchor(d=10, w=110.5, h=95)]
    formats.write_anchors(path, anchors)
    assert formats.read_anchors(path) == anchors
    assert path.read_text() == "5.0 400.0 275.0\n10.0 110.5 95.0\n"


def test_anchors_empty(tmp_path):
    path = tmp_path / "anchors.txt"
    path.write_text("# nothing\n")
    with pytest.raises(formats.FormatError):
        formats.read_anchors(path)


def test_plan_round_trip(tmp_path, params, vehicle_plan):
    path = tmp_path / "plan.txt"
    formats.write_plan(path, vehicle_plan)
    assert formats.read_plan(path, params) == vehicle_plan
    first, second = rewrite(
        tmp_path, path, formats.read_plan, formats.write_plan, params
    )
    assert first == second
    assert path.read_text().startswith(formats.PLAN_HEADER + "\n")


def test_plan_bad_header(tmp_path, params):
    path = tmp_path / "plan.txt"
    path.write_text("10.0 366.0 0.0 110 95 14 12\n")
    with pytest.raises(formats.FormatError) as exc_info:
        formats.read_plan(path, params)
    assert exc_info.value.line == 1


def test_plan_bad_band(tmp_path, params):
    path = tmp_path / "plan.txt"
    path.write_text(f"{formats.PLAN_HEADER}\n10.0 366.0 0.0 110 95 0 12\n")
    with pytest.raises(formats.FormatError) as exc_info:
        formats.read_plan(path, params)
    assert exc_info.value.line == 2


def test_classifier_round_trip(tmp_path):
    clf = toy_classifier()
    path = tmp_path / "model.txt"
    formats.write_classifier(path, clf)
    loaded = formats.read_classifier(path)

    assert loaded.window_model == clf.window_model
    assert loaded.shrink == clf.shrink
    np.testing.assert_array_equal(loaded.weights, clf.weights)
    np.testing.assert_array_equal(loaded.cascade_thresholds, clf.cascade_thresholds)
    for a, b in zip(loaded.trees, clf.trees):
        assert a.nodes() == b.nodes()
    x = np.random.default_rng(1).normal(size=(30, 1200))
    np.testing.assert_array_equal(loaded.score(x), clf.score(x))

    first, second = rewrite(
        tmp_path, path, formats.read_classifier, formats.write_classifier
    )
    assert first == second


def test_classifier_missing_cascade(tmp_path):
    path = tmp_path / "model.txt"
    formats.write_classifier(path, toy_classifier())
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(formats.FormatError):
        formats.read_classifier(path)


def test_classifier_nodes_out_of_order(tmp_path):
    path = tmp_path / "model.txt"
    path.write_text(
        f"{formats.CLASSIFIER_HEADER}\n"
        "window_model 48 40 4\n"
        "0 1 -1 0.0 -1 -1 0.5\n"
        "cascade 0.5\n"
    )
    with pytest.raises(formats.FormatError) as exc_info:
        formats.read_classifier(path)
    assert exc_info.value.line == 3


def test_classifier_leaves_disagree(tmp_path):
    path = tmp_path / "model.txt"
    path.write_text(
        f"{formats.CLASSIFIER_HEADER}\n"
        "window_model 48 40 4\n"
        "0 0 5 1.5 1 2 0.0\n"
        "0 1 -1 0.0 -1 -1 -0.5\n"
        "0 2 -1 0.0 -1 -1 0.7\n"
        "cascade -0.5\n"
    )
    with pytest.raises(formats.FormatError):
        formats.read_classifier(path)


def test_detections_round_trip(tmp_path):
    path = tmp_path / "detections.txt"
    entries = [
        ("scene_0000.ppm", factories.detection(10, 20, 110, 95, 1.5, 10.25, 0), None),
        ("scene_0000.ppm", factories.detection(400, 300, 50, 42, 0.25, None, 1), None),
        ("scene_0001.ppm", factories.detection(0, 0, 48, 40, -0.5, 7.5, 2), None),
    ]
    formats.write_detections(path, entries)
    assert formats.read_detections(path) == entries
    assert path.read_text().splitlines()[1].split()[-1] == "-1.0"
    first, second = rewrite(
        tmp_path, path, formats.read_detections, formats.write_detections
    )
    assert first == second


def test_detections_with_levels(tmp_path):
    path = tmp_path / "detections.txt"
    entries = [
        ("a.ppm", factories.detection(10, 20, 110, 95, 1.5, 6.0, 0), WarningLevel.ALERT),
        ("b.ppm", factories.detection(10, 20, 110, 95, 1.5, 30.0, 1), WarningLevel.NONE),
    ]
    formats.write_detections(path, entries)
    assert path.read_text().splitlines()[0].endswith(" ALERT")
    assert formats.read_detections(path) == entries


def test_detections_unknown_level(tmp_path):
    path = tmp_path / "detections.txt"
    path.write_text("a.ppm 0 0 10 10 1.0 5.0 PANIC\n")
    with pytest.raises(formats.FormatError):
        formats.read_detections(path)


def test_detections_path_with_space(tmp_path):
    entries = [("my scene.ppm", factories.detection(0, 0, 1, 1), None)]
    with pytest.raises(ValueError):
        formats.write_detections(tmp_path / "detections.txt", entries)


def test_annotations_round_trip(tmp_path):
    path = tmp_path / "annotations.txt"
    entries = [
        ("scene_0000.ppm", GroundTruth(box=(541.5, 201.25, 197.0, 164.1), distance=10.0)),
        ("scene_0001.ppm", GroundTruth(box=(0.0, 10.0, 20.0, 30.0), distance=33.3)),
    ]
    formats.write_annotations(path, entries)
    assert formats.read_annotations(path) == entries
    first, second = rewrite(
        tmp_path, path, formats.read_annotations, formats.write_annotations
    )
    assert first == second


def test_image_round_trip(tmp_path):
    img = np.random.default_rng(2).integers(0, 256, (48, 64, 3), dtype=np.uint8)
    path = tmp_path / "frame.ppm"
    formats.write_image(path, img)
    assert path.read_bytes().startswith(b"P6")
    np.testing.assert_array_equal(formats.read_image(path), img)


def test_image_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        formats.read_image(tmp_path / "missing.ppm")
    with pytest.raises(ValueError):
        formats.write_image(tmp_path / "frame.ppm", np.zeros((4, 4), dtype=np.uint8))
    garbage = tmp_path / "garbage.ppm"
    garbage.write_text("not an image")
    with pytest.raises(formats.FormatError):
        formats.read_image(garbage)


def test_calibration_point_reads_as_floats(tmp_path):
    path = tmp_path / "points.txt"
    path.write_text("4 461\n")
    assert formats.read_points(path) == [CalibrationPoint(d=4.0, v=461.0)]


def model_file(tmp_path, nodes, cascade="cascade -0.5", window="window_model 48 40 4"):
    path = tmp_path / "model.txt"
    path.write_text(
        "\n".join([formats.CLASSIFIER_HEADER, window, *nodes, cascade]) + "\n"
    )
    return path


STUMP = ["0 0 5 1.5 1 2 0.0", "0 1 -1 0.0 -1 -1 -0.5", "0 2 -1 0.0 -1 -1 0.5"]


def test_classifier_stump_reads(tmp_path):
    clf = formats.read_classifier(model_file(tmp_path, STUMP))
    assert clf.n_features == 1200
    assert clf.weights.tolist() == [0.5]
    assert clf.trees[0].value.tolist() == [0.0, -1.0, 1.0]


@pytest.mark.parametrize(
    "nodes,line,problem",
    [
        (["0 0 99999 1.5 1 2 0.0"] + STUMP[1:], 3, "feature 99999 outside"),
        (["0 0 1200 1.5 1 2 0.0"] + STUMP[1:], 3, "feature 1200 outside"),
        (["0 0 -3 1.5 1 2 0.0"] + STUMP[1:], 3, "feature -3 outside"),
        (["0 0 5 1.5 0 0 0.0"] + STUMP[1:], 3, "children 0 0 of node 0"),
        (["0 0 5 1.5 1 7 0.0"] + STUMP[1:], 3, "children 1 7 of node 0"),
        (["0 0 5 nan 1 2 0.0"] + STUMP[1:], 3, "must be finite"),
        (STUMP[:2] + ["0 2 -1 0.0 -1 -1 inf"], 5, "must be finite"),
        (["0 0 5 1.5 1 1 0.0", "0 1 6 2.5 1 1 0.0"], 4, "children 1 1 of node 1"),
    ],
)
def test_classifier_rejects_bad_nodes(tmp_path, nodes, line, problem):
    with pytest.raises(formats.FormatError, match=problem) as exc_info:
        formats.read_classifier(model_file(tmp_path, nodes))
    assert exc_info.value.line == line


def test_classifier_rejects_infinite_cascade(tmp_path):
    path = model_file(tmp_path, STUMP, cascade="cascade inf")
    with pytest.raises(formats.FormatError, match="finite") as exc_info:
        formats.read_classifier(path)
    assert exc_info.value.line == 6


@pytest.mark.parametrize("window", ["window_model 48 40 0", "window_model 48 40 41"])
def test_classifier_rejects_bad_cells(tmp_path, window):
    with pytest.raises(formats.FormatError) as exc_info:
        formats.read_classifier(model_file(tmp_path, STUMP, window=window))
    assert exc_info.value.line == 2


def test_plan_round_trip_keeps_limits(tmp_path, params, vehicle_plan):
    path = tmp_path / "plan.txt"
    formats.write_plan(path, vehicle_plan)
    band = formats.read_plan(path, params).bands[0]
    assert band.v_min == vehicle_plan.bands[0].v_min
    assert len(path.read_text().splitlines()[1].split()) == 9


def test_plan_band_without_limits(tmp_path, params):
    path = tmp_path / "plan.txt"
    path.write_text(f"{formats.PLAN_HEADER}\n10.0 366.0 0.0 110 95 14 12\n")
    band = formats.read_plan(path, params).bands[0]
    assert band.v_min is None and band.v_max is None


def test_plan_band_with_one_limit(tmp_path, params):
    path = tmp_path / "plan.txt"
    path.write_text(f"{formats.PLAN_HEADER}\n10.0 366.0 0.0 110 95 14 12 350.0\n")
    with pytest.raises(formats.FormatError, match="v_min without v_max") as exc_info:
        formats.read_plan(path, params)
    assert exc_info.value.line == 2
