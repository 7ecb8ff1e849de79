#!/usr/bin/env python3
import argparse
import logging
import math
import sys
from pathlib import Path

from monofcw import (
    calibration,
    config,
    fcw_engine,
    formats,
    geometry,
    harness,
    schema,
    window_planner,
)
from monofcw.detector import detect


logger = logging.getLogger(__name__)

# every module error, and pydantic.ValidationError, is a ValueError
DOMAIN_ERRORS = (ValueError, OSError)

# Config fields that map straight onto a flag of the same name
CONFIG_FLAGS = (
    "d_min",
    "d_max",
    "bins_per_octave",
    "v_tol_frac",
    "stride_frac",
    "rounds",
    "depth",
    "score_min",
    "cascade_margin",
    "iou",
    "seed",
)
FCW_FLAGS = ("d_alert", "d_caution", "headway_alert", "smoothing")


class Once(argparse.Action):
    """Store a flag's value, refusing to see the flag twice."""

    def __call__(self, parser, namespace, values, option_string=None):
        seen = getattr(namespace, "_seen", set())
        if self.dest in seen:
            parser.error(f"argument {option_string}: given more than once")
        seen.add(self.dest)
        namespace._seen = seen
        setattr(namespace, self.dest, values)


def load_config(args):
    """Config from --config, with explicit flags taking precedence."""
    values, fcw = {}, {}
    if args.config:
        for key, (number, value) in formats.read_key_values(args.config).items():
            name = key.replace("-", "_")
            if name.startswith("fcw."):
                fcw[name[4:]] = value
            elif name in schema.Config.__fields__ and name != "fcw":
                values[name] = value
            else:
                raise formats.FormatError(args.config, number, f"unknown key {key!r}")

    for name in CONFIG_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            values[name] = value
    for name in FCW_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            fcw[name] = value
    return schema.Config(fcw=schema.FcwConfig(**fcw), **values)


def _path(args, cfg, name):
    """A file given by flag, or else by the config file."""
    value = getattr(args, name, None) or getattr(cfg, name)
    if value is None:
        raise ValueError(f"--{name} is required, as a flag or in the --config file")
    return value


def _format(x):
    return f"{x:.6f}"


def calibrate_cmd(args, cfg):
    """Solve the camera from a measured height and ground points."""
    points = formats.read_points(args.points)
    width, height = args.image_size
    try:
        report = calibration.calibrate(
            args.height, points, image_w=width, image_h=height, max_iter=args.max_iter
        )
    except calibration.NonConvergence as exc:
        logger.warning(f"{exc}; writing the best parameters found")
        formats.write_calibration(args.output, exc.report.params)
        raise
    formats.write_calibration(args.output, report.params)
    for point, residual in zip(points, report.residuals):
        print(f"{_format(point.d)} {_format(point.v)} {_format(residual)}")


def measure_cmd(args, cfg):
    """Convert image rows to ground distances, and lateral offsets of a column."""
    params = formats.read_calibration(_path(args, cfg, "calibration"))
    for v in args.row:
        d = geometry.distance_from_row(params, v)
        if args.column is None:
            print(_format(d))
        else:
            lateral = geometry.lateral_from_pixel(params, args.column, d)
            print(f"{_format(d)} {_format(lateral)}")


def horizon_cmd(args, cfg):
    params = formats.read_calibration(_path(args, cfg, "calibration"))
    print(_format(geometry.horizon_row(params)))


def plan_cmd(args, cfg):
    """Build a window plan, or the exhaustive baseline, for a calibration."""
    params = formats.read_calibration(_path(args, cfg, "calibration"))
    anchors = formats.read_anchors(args.anchors) if args.anchors else None
    if args.exhaustive:
        plan = window_planner.exhaustive_plan(
            params,
            anchors,
            d_min=cfg.d_min,
            d_max=cfg.d_max,
            scales_per_octave=args.scales_per_octave,
            stride_frac=cfg.stride_frac,
        )
    else:
        plan = window_planner.plan_windows(
            params,
            anchors,
            d_min=cfg.d_min,
            d_max=cfg.d_max,
            bins_per_octave=cfg.bins_per_octave,
            v_tol_frac=cfg.v_tol_frac,
            stride_frac=cfg.stride_frac,
        )
    formats.write_plan(args.output, plan)
    print(f"{len(plan.bands)} bands {window_planner.count_windows(plan)} windows")


def synth_cmd(args, cfg):
    """Render the standard synthetic corpus with its annotations."""
    params = formats.read_calibration(_path(args, cfg, "calibration"))
    output = Path(args.output_dir)
    output.mkdir(parents=True, exist_ok=True)
    entries = []
    for index, spec in enumerate(harness.standard_corpus(params, args.scenes, cfg.seed)):
        image, truth = harness.render_scene(spec)
        path = output / f"scene_{index:04d}.ppm"
        formats.write_image(path, image)
        entries.extend((str(path), gt) for gt in truth)
    formats.write_annotations(output / "annotations.txt", entries)
    print(f"{args.scenes} scenes {len(entries)} vehicles")


def train_cmd(args, cfg):
    """Train a classifier on windows of rendered scenes."""
    params = formats.read_calibration(_path(args, cfg, "calibration"))
    plan = formats.read_plan(_path(args, cfg, "plan"), params)
    clf, history = harness.train_detector(
        params,
        plan,
        args.positives,
        args.negatives,
        cfg.rounds,
        cfg.depth,
        seed=cfg.seed,
    )
    formats.write_classifier(args.output, clf)
    print(f"{len(clf.trees)} trees training error {_format(history[-1].training_error)}")


def detect_cmd(args, cfg):
    """Detect vehicles in images, optionally with collision warnings."""
    params = formats.read_calibration(_path(args, cfg, "calibration"))
    plan = formats.read_plan(_path(args, cfg, "plan"), params)
    clf = formats.read_classifier(_path(args, cfg, "classifier"))

    frames = []
    for image_path in args.images:
        image = formats.read_image(image_path)
        detections = detect(
            image, plan, clf, cfg.score_min, cfg.cascade_margin, cfg.iou
        )
        frames.append(detections)
        logger.info(f"{image_path}: {len(detections)} detections")

    levels = [None] * len(frames)
    if args.fcw:
        leads = [
            fcw_engine.nearest_in_path(dets, params.image_w, cfg.fcw.corridor_frac)
            for dets in frames
        ]
        steps = fcw_engine.run_sequence(
            [None if lead is None else lead.distance for lead in leads],
            args.dt,
            cfg.fcw,
        )
        levels = [level for _, level in steps]

    entries = [
        (image_path, det, level)
        for image_path, detections, level in zip(args.images, frames, levels)
        for det in detections
    ]
    formats.write_detections(args.output, entries)
    print(f"{len(args.images)} images {len(entries)} detections")


def eval_cmd(args, cfg):
    """Score a detections file against annotations."""
    truth = formats.read_annotations(_path(args, cfg, "annotations"))
    found = formats.read_detections(args.detections)
    images = list(dict.fromkeys([image for image, _ in truth] + [i for i, _, _ in found]))
    truths = {image: [] for image in images}
    detections = {image: [] for image in images}
    for image, gt in truth:
        truths[image].append(gt)
    for image, det, _ in found:
        detections[image].append(det)

    n_images = args.images or len(images)
    report = harness.evaluate(
        [detections[i] for i in images],
        [truths[i] for i in images],
        args.iou_min,
        n_images,
    )
    print(f"detection_rate {_format(report.detection_rate)}")
    print(f"fppi {_format(report.fppi)}")
    print(f"matched {report.matched} of {report.total_gt}")
    if report.errors:
        print(harness.format_error_table(report.errors))


def quantize_study_cmd(args, cfg):
    """Monte Carlo distance error from whole pixel row readings."""
    params = formats.read_calibration(_path(args, cfg, "calibration"))
    rows = harness.quantization_study(
        params,
        args.distances,
        trials=args.trials,
        row_noise=args.row_noise,
        seed=cfg.seed,
        rounding=not args.no_rounding,
    )
    print(harness.format_study_table(rows))


def _finite(value):
    x = float(value)
    if not math.isfinite(x):
        raise argparse.ArgumentTypeError(f"{value} is not a finite number")
    return x


def _real(value):
    x = float(value)
    if math.isnan(x):
        raise argparse.ArgumentTypeError(f"{value} is not a number")
    return x


def main(argv):
    parser = argparse.ArgumentParser(
        prog="monofcw",
        description="Monocular forward vehicle distance measurement and detection",
    )

    def show_help(*args, **kwargs):
        parser.print_help()
        return 2

    parser.set_defaults(function=show_help)
    parser.add_argument(
        "--config", action=Once, type=Path, help="key = value file of defaults"
    )
    parser.add_argument(
        "--log-level",
        action=Once,
        default=None,
        help="logging level (default: $LOG_LEVEL or info)",
    )

    # a holder for shared arguments for each subcommand
    calibrated = argparse.ArgumentParser(add_help=False)
    calibrated.add_argument(
        "--calibration", action=Once, type=Path, help="calibration file"
    )

    planner = argparse.ArgumentParser(add_help=False)
    planner.add_argument("--d-min", dest="d_min", action=Once, type=_finite)
    planner.add_argument("--d-max", dest="d_max", action=Once, type=_finite)
    planner.add_argument("--bins-per-octave", dest="bins_per_octave", action=Once, type=int)
    planner.add_argument("--v-tol-frac", dest="v_tol_frac", action=Once, type=_finite)
    planner.add_argument("--stride-frac", dest="stride_frac", action=Once, type=_finite)

    seeded = argparse.ArgumentParser(add_help=False)
    seeded.add_argument("--seed", action=Once, type=int, help="random seed (default: 0)")

    subparsers = parser.add_subparsers(
        title="available commands", dest="command", description="", metavar="COMMAND"
    )

    calibrate_parser = subparsers.add_parser(
        "calibrate", help="solve camera pitch, focal length and principal row"
    )
    calibrate_parser.add_argument(
        "--height", action=Once, type=_finite, required=True, help="camera height, m"
    )
    calibrate_parser.add_argument(
        "--points", action=Once, type=Path, required=True, help="'d_m v_px' points file"
    )
    calibrate_parser.add_argument("--output", action=Once, type=Path, required=True)
    calibrate_parser.add_argument(
        "--image-size",
        dest="image_size",
        action=Once,
        type=int,
        nargs=2,
        metavar=("W", "H"),
        default=(calibration.IMAGE_W, calibration.IMAGE_H),
    )
    calibrate_parser.add_argument(
        "--max-iter", dest="max_iter", action=Once, type=int, default=config.MAX_ITER
    )
    calibrate_parser.set_defaults(function=calibrate_cmd)

    measure_parser = subparsers.add_parser(
        "measure", help="ground distance of image rows", parents=[calibrated]
    )
    measure_parser.add_argument(
        "--row", action=Once, type=_finite, nargs="+", required=True, help="image rows"
    )
    measure_parser.add_argument(
        "--column",
        action=Once,
        type=_finite,
        help="also print the lateral offset, m, of this column at each distance",
    )
    measure_parser.set_defaults(function=measure_cmd)

    horizon_parser = subparsers.add_parser(
        "horizon", help="print the horizon row", parents=[calibrated]
    )
    horizon_parser.set_defaults(function=horizon_cmd)

    plan_parser = subparsers.add_parser(
        "plan", help="build a sliding window plan", parents=[calibrated, planner]
    )
    plan_parser.add_argument("--anchors", action=Once, type=Path, help="anchor file")
    plan_parser.add_argument("--output", action=Once, type=Path, required=True)
    plan_parser.add_argument(
        "--exhaustive",
        action="store_true",
        help="conventional multi-scale baseline over every row",
    )
    plan_parser.add_argument(
        "--scales-per-octave",
        dest="scales_per_octave",
        action=Once,
        type=int,
        default=config.BASELINE_SCALES_PER_OCTAVE,
        help="baseline scales per octave",
    )
    plan_parser.set_defaults(function=plan_cmd)

    synth_parser = subparsers.add_parser(
        "synth", help="render synthetic scenes", parents=[calibrated, seeded]
    )
    synth_parser.add_argument(
        "--output-dir", dest="output_dir", action=Once, type=Path, required=True
    )
    synth_parser.add_argument("--scenes", action=Once, type=int, default=200)
    synth_parser.set_defaults(function=synth_cmd)

    train_parser = subparsers.add_parser(
        "train", help="train a classifier on synthetic scenes", parents=[calibrated, seeded]
    )
    train_parser.add_argument("--plan", action=Once, type=Path)
    train_parser.add_argument("--output", action=Once, type=Path, required=True)
    train_parser.add_argument("--positives", action=Once, type=int, default=500)
    train_parser.add_argument("--negatives", action=Once, type=int, default=2000)
    train_parser.add_argument("--rounds", action=Once, type=int)
    train_parser.add_argument("--depth", action=Once, type=int)
    train_parser.set_defaults(function=train_cmd)

    detect_parser = subparsers.add_parser(
        "detect", help="detect vehicles in images", parents=[calibrated]
    )
    detect_parser.add_argument("--plan", action=Once, type=Path)
    detect_parser.add_argument("--classifier", action=Once, type=Path)
    detect_parser.add_argument("--images", action=Once, nargs="+", required=True)
    detect_parser.add_argument("--output", action=Once, type=Path, required=True)
    detect_parser.add_argument("--score-min", dest="score_min", action=Once, type=_finite)
    detect_parser.add_argument(
        "--cascade-margin", dest="cascade_margin", action=Once, type=_real
    )
    detect_parser.add_argument("--iou", action=Once, type=_finite, help="NMS IoU limit")
    detect_parser.add_argument(
        "--fcw", action="store_true", help="add a warning level column"
    )
    detect_parser.add_argument(
        "--dt", action=Once, type=_finite, default=config.FRAME_DT, help="seconds per frame"
    )
    for name in FCW_FLAGS:
        detect_parser.add_argument(
            f"--{name.replace('_', '-')}", dest=name, action=Once, type=_finite
        )
    detect_parser.set_defaults(function=detect_cmd)

    eval_parser = subparsers.add_parser("eval", help="score detections")
    eval_parser.add_argument("--detections", action=Once, type=Path, required=True)
    eval_parser.add_argument("--annotations", action=Once, type=Path)
    eval_parser.add_argument(
        "--iou", dest="iou_min", action=Once, type=_finite, default=config.IOU_MIN
    )
    eval_parser.add_argument(
        "--images", action=Once, type=int, help="image count (default: files seen)"
    )
    eval_parser.set_defaults(function=eval_cmd)

    study_parser = subparsers.add_parser(
        "quantize-study",
        help="distance error from whole pixel rows",
        parents=[calibrated, seeded],
    )
    study_parser.add_argument(
        "--distances",
        action=Once,
        type=_finite,
        nargs="+",
        default=[d for d, *_ in harness.REPORTED_ERROR_TABLE],
    )
    study_parser.add_argument("--trials", action=Once, type=int, default=10000)
    study_parser.add_argument(
        "--row-noise", dest="row_noise", action=Once, type=_finite, default=1.0
    )
    study_parser.add_argument(
        "--no-rounding", dest="no_rounding", action="store_true"
    )
    study_parser.set_defaults(function=quantize_study_cmd)

    args = parser.parse_args(argv)
    config.setup_logging(args.log_level)
    try:
        cfg = load_config(args)
        return args.function(args, cfg) or 0
    except DOMAIN_ERRORS as exc:
        print(f"monofcw: error: {' '.join(str(exc).split())}", file=sys.stderr)
        return 1


def run():  # pragma: no cover
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":  # pragma: no cover
    run()
