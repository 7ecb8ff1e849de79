"""Line oriented text files, and PPM images.

Every writer formats floats with repr, so reading a file back and writing it
again reproduces it byte for byte. Readers report problems as FormatError
with the offending path and 1-based line number.
"""
import logging
import math
from pathlib import Path

import cv2
import numpy as np
from pydantic import ValidationError

from monofcw.boosting import BoostedClassifier, Tree
from monofcw.channels import N_CHANNELS
from monofcw.schema import (
    CalibrationPoint,
    CameraParams,
    Detection,
    GroundTruth,
    SizeAnchor,
    WarningLevel,
    WindowBand,
    WindowPlan,
)


logger = logging.getLogger(__name__)

PLAN_HEADER = "#monofcw-plan v1"
CLASSIFIER_HEADER = "#monofcw-clf v1"
NO_DISTANCE = -1.0

# calibration file key -> CameraParams field
CALIBRATION_KEYS = {
    "h_m": "h",
    "alpha_rad": "alpha",
    "fy_px": "f_y",
    "v0_px": "v0",
    "image_w": "image_w",
    "image_h": "image_h",
}


class FormatError(ValueError):
    def __init__(self, path, line, problem):
        super().__init__(f"{path}:{line}: {problem}")
        self.path = path
        self.line = line
        self.problem = problem


def _number(value):
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return repr(float(value))


def _write_lines(path, lines):
    Path(path).write_text("".join(line + "\n" for line in lines))


def _read_lines(path):
    """(line number, stripped text) of every non blank, non comment line."""
    try:
        text = Path(path).read_text()
    except UnicodeDecodeError as exc:
        raise FormatError(path, 1, f"not a text file: {exc}")
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if line and not line.startswith("#"):
            yield number, line


def _fields(path, number, line, types, optional=0):
    parts = line.split()
    if not len(types) - optional <= len(parts) <= len(types):
        raise FormatError(
            path, number, f"expected {len(types)} fields, got {len(parts)}"
        )
    try:
        return [kind(part) for kind, part in zip(types, parts)]
    except ValueError as exc:
        raise FormatError(path, number, f"bad value: {exc}")


def _build(path, number, model, **values):
    try:
        return model(**values)
    except ValidationError as exc:
        raise FormatError(path, number, " ".join(str(exc).split()))


def read_key_values(path):
    """{key: (line number, raw value)} of a "key = value" file."""
    values = {}
    for number, line in _read_lines(path):
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise FormatError(path, number, f"expected 'key = value', got {line!r}")
        if key in values:
            raise FormatError(path, number, f"duplicate key {key!r}")
        values[key] = (number, value)
    return values


def read_calibration(path):
    values = read_key_values(path)
    fields = {}
    for key, (number, value) in values.items():
        if key not in CALIBRATION_KEYS:
            raise FormatError(path, number, f"unknown key {key!r}")
        kind = int if key in ("image_w", "image_h") else float
        try:
            fields[CALIBRATION_KEYS[key]] = kind(value)
        except ValueError:
            raise FormatError(path, number, f"{key} is not a number: {value!r}")
    missing = [key for key in CALIBRATION_KEYS if key not in values]
    if missing:
        last = max((number for number, _ in values.values()), default=0)
        raise FormatError(path, last + 1, f"missing keys: {', '.join(missing)}")
    return _build(path, 1, CameraParams, **fields)


def write_calibration(path, params):
    _write_lines(
        path,
        [
            f"{key} = {_number(getattr(params, name))}"
            for key, name in CALIBRATION_KEYS.items()
        ],
    )


def read_points(path):
    points = []
    for number, line in _read_lines(path):
        d, v = _fields(path, number, line, (float, float))
        points.append(_build(path, number, CalibrationPoint, d=d, v=v))
    return points


def write_points(path, points):
    _write_lines(path, [f"{_number(p.d)} {_number(p.v)}" for p in points])


def read_anchors(path):
    anchors = []
    for number, line in _read_lines(path):
        d, w, h = _fields(path, number, line, (float, float, float))
        anchors.append(_build(path, number, SizeAnchor, d=d, w=w, h=h))
    if not anchors:
        raise FormatError(path, 1, "no anchors")
    return anchors


def write_anchors(path, anchors):
    _write_lines(
        path, [f"{_number(a.d)} {_number(a.w)} {_number(a.h)}" for a in anchors]
    )


def _check_header(path, header):
    try:
        with open(path) as f:
            first = f.readline().rstrip("\n")
    except UnicodeDecodeError as exc:
        raise FormatError(path, 1, f"not a text file: {exc}")
    if first != header:
        raise FormatError(path, 1, f"expected header {header!r}, got {first!r}")


def read_plan(path, params):
    """Plan file bands, for the camera the plan was made for.

    A band line may end with the band's v_min and v_max bottom row limits.
    """
    _check_header(path, PLAN_HEADER)
    bands = []
    last = 1
    for number, line in _read_lines(path):
        if len(line.split()) == 8:
            raise FormatError(path, number, "v_min without v_max")
        d, v_anchor, v_tol, w, h, x_stride, v_stride, v_min, v_max = _fields(
            path,
            number,
            line,
            (float, float, float, int, int, int, int, float, float),
            optional=2,
        ) + [None] * (9 - len(line.split()))
        bands.append(
            _build(
                path,
                number,
                WindowBand,
                d=d,
                v_anchor=v_anchor,
                v_tol=v_tol,
                w=w,
                h=h,
                x_stride=x_stride,
                v_stride=v_stride,
                v_min=v_min,
                v_max=v_max,
            )
        )
        last = number
    return _build(path, last, WindowPlan, bands=bands, params=params)


def write_plan(path, plan):
    lines = [PLAN_HEADER]
    for band in plan.bands:
        values = [
            band.d,
            band.v_anchor,
            band.v_tol,
            band.w,
            band.h,
            band.x_stride,
            band.v_stride,
        ]
        if band.v_min is not None:
            values += [band.v_min, band.v_max]
        lines.append(" ".join(_number(value) for value in values))
    _write_lines(path, lines)


def read_classifier(path):
    """Classifier file.

    A leaf stores its tree's weight times its vote, so the weight is read
    back as the magnitude of any leaf of the tree.
    """
    _check_header(path, CLASSIFIER_HEADER)
    window_model = shrink = None
    cascade = cascade_line = None
    nodes = {}
    for number, line in _read_lines(path):
        kind = line.split()[0]
        if kind == "window_model":
            _, w, h, shrink = _fields(path, number, line, (str, int, int, int))
            if not 0 < shrink <= min(w, h):
                raise FormatError(
                    path, number, f"window model {w}x{h} with {shrink} px cells"
                )
            window_model = (w, h)
        elif kind == "cascade":
            cascade_line = number
            try:
                cascade = [float(x) for x in line.split()[1:]]
            except ValueError as exc:
                raise FormatError(path, number, f"bad cascade threshold: {exc}")
            if not all(math.isfinite(x) for x in cascade):
                raise FormatError(path, number, "cascade thresholds must be finite")
        else:
            tree, node, feature, threshold, left, right, leaf = _fields(
                path, number, line, (int, int, int, float, int, int, float)
            )
            expected = len(nodes.setdefault(tree, []))
            if tree != len(nodes) - 1 or node != expected:
                raise FormatError(path, number, f"node {tree} {node} out of order")
            if not (math.isfinite(threshold) and math.isfinite(leaf)):
                raise FormatError(path, number, "threshold and leaf must be finite")
            nodes[tree].append((feature, threshold, left, right, leaf, number))

    if window_model is None:
        raise FormatError(path, 2, "missing window_model line")
    if cascade is None or len(cascade) != len(nodes):
        raise FormatError(
            path,
            cascade_line or 2,
            f"need a cascade line with one threshold per tree ({len(nodes)})",
        )

    w, h = window_model
    n_features = N_CHANNELS * (w // shrink) * (h // shrink)
    trees, weights = [], []
    for tree_nodes in nodes.values():
        for index, (feature, _, left, right, _, number) in enumerate(tree_nodes):
            if feature == -1:
                continue
            if not 0 <= feature < n_features:
                raise FormatError(
                    path,
                    number,
                    f"feature {feature} outside the {n_features} features of a "
                    f"{w}x{h} model",
                )
            # children after their parent keeps every tree acyclic
            if not index < left < len(tree_nodes) or not index < right < len(
                tree_nodes
            ):
                raise FormatError(
                    path, number, f"children {left} {right} of node {index}"
                )
        leaves = [n for n in tree_nodes if n[0] == -1]
        number = tree_nodes[0][-1]
        if not leaves:
            raise FormatError(path, number, "tree without leaves")
        weight = abs(leaves[0][4])
        if not weight > 0 or any(abs(n[4]) != weight for n in leaves):
            raise FormatError(path, number, "tree leaves disagree on the tree weight")
        weights.append(weight)
        trees.append(
            Tree.from_nodes(
                [
                    (f, t, left, right, leaf / weight if f < 0 else 0.0)
                    for f, t, left, right, leaf, _ in tree_nodes
                ]
            )
        )
    return BoostedClassifier(
        trees=tuple(trees),
        weights=np.array(weights),
        cascade_thresholds=np.array(cascade),
        window_model=window_model,
        shrink=shrink,
    )


def write_classifier(path, clf):
    w, h = clf.window_model
    lines = [CLASSIFIER_HEADER, f"window_model {w} {h} {clf.shrink}"]
    for index, (tree, weight) in enumerate(zip(clf.trees, clf.weights)):
        for node, (feature, threshold, left, right, value) in enumerate(tree.nodes()):
            leaf = float(weight) * value if feature < 0 else 0.0
            lines.append(
                f"{index} {node} {feature} {_number(threshold)} {left} {right} "
                f"{_number(leaf)}"
            )
    lines.append(
        " ".join(["cascade"] + [_number(t) for t in clf.cascade_thresholds])
    )
    _write_lines(path, lines)


def _check_path(image_path):
    if not str(image_path) or any(c.isspace() for c in str(image_path)):
        raise ValueError(f"image path {str(image_path)!r} must not contain whitespace")
    return str(image_path)


def read_detections(path):
    """[(image_path, Detection, WarningLevel or None)] in file order."""
    entries = []
    for number, line in _read_lines(path):
        image, x, y, w, h, score, d, level = _fields(
            path,
            number,
            line,
            (str, float, float, float, float, float, float, str),
            optional=1,
        ) + [None] * (8 - len(line.split()))
        if level is not None:
            try:
                level = WarningLevel[level]
            except KeyError:
                raise FormatError(path, number, f"unknown warning level {level!r}")
        detection = _build(
            path,
            number,
            Detection,
            box=(x, y, w, h),
            score=score,
            distance=None if d == NO_DISTANCE else d,
            window_index=len(entries),
        )
        entries.append((image, detection, level))
    return entries


def write_detections(path, entries):
    lines = []
    for image, det, level in entries:
        fields = [_check_path(image)]
        fields += [_number(float(v)) for v in det.box]
        fields.append(_number(det.score))
        fields.append(_number(NO_DISTANCE if det.distance is None else det.distance))
        if level is not None:
            fields.append(WarningLevel(level).name)
        lines.append(" ".join(fields))
    _write_lines(path, lines)


def read_annotations(path):
    """[(image_path, GroundTruth)] in file order."""
    entries = []
    for number, line in _read_lines(path):
        image, x, y, w, h, d = _fields(
            path, number, line, (str, float, float, float, float, float)
        )
        entries.append(
            (image, _build(path, number, GroundTruth, box=(x, y, w, h), distance=d))
        )
    return entries


def write_annotations(path, entries):
    _write_lines(
        path,
        [
            " ".join(
                [_check_path(image)]
                + [_number(float(v)) for v in gt.box]
                + [_number(gt.distance)]
            )
            for image, gt in entries
        ],
    )


def write_image(path, image):
    """Write an RGB image. A .ppm path gives a binary P6 file."""
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an 8-bit RGB image, got {image.dtype} {image.shape}")
    if not cv2.imwrite(str(path), cv2.cvtColor(image, cv2.COLOR_RGB2BGR)):
        raise FormatError(path, 1, "could not write image")


def read_image(path):
    if not Path(path).exists():
        raise FileNotFoundError(f"no such image: {path}")
    image = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if image is None:
        raise FormatError(path, 1, "not a readable image")
    return cv2.cvtColor(image, cv2.COLOR_BGR2RGB)
