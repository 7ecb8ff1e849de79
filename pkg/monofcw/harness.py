"""Synthetic scenes, detection metrics and the row quantization study.

Scenes are rendered with the same ground-plane camera the measurements use:
a vehicle at distance d stands on row row_from_distance(d) and is
f_y * size / d pixels big, so the ground truth is exact by construction.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from monofcw import config
from monofcw.boosting import boost
from monofcw.channels import compute_channels
from monofcw.detector import ScanStats, extract_features, iou_matrix, scan
from monofcw.geometry import (
    distance_from_row,
    horizon_row,
    row_from_distance,
    row_sensitivity,
)
from monofcw.schema import (
    CalibrationPoint,
    DistanceError,
    GroundTruth,
    MetricsReport,
    QuantizationRow,
    SceneSpec,
    Vehicle,
)
from monofcw.window_planner import enumerate_windows


logger = logging.getLogger(__name__)

# (d, d', e*, e_r %) rows of the reported test-car measurements
REPORTED_ERROR_TABLE = (
    (5.00, 5.00, 0.00, 0.00),
    (7.00, 6.98, 0.02, 0.29),
    (9.00, 9.08, 0.08, 0.89),
    (11.00, 11.11, 0.11, 1.00),
    (15.00, 15.26, 0.26, 1.73),
    (17.00, 17.31, 0.31, 1.82),
)

NOISE_SIGMA = 3.0
SKY_LIFT = np.array([70.0, 80.0, 95.0])

# vehicle parts as (x, y, w, h) fractions of the vehicle box
WINDOW_PART = (0.12, 0.08, 0.76, 0.30)
LIGHT_PARTS = ((0.06, 0.45, 0.16, 0.12), (0.78, 0.45, 0.16, 0.12))
PLATE_PART = (0.38, 0.55, 0.24, 0.10)
BUMPER_PART = (0.0, 0.72, 1.0, 0.10)
SHADOW_PART = (0.0, 0.88, 1.0, 0.12)
GLASS = np.array([170.0, 190.0, 210.0])
LIGHT = np.array([200.0, 30.0, 30.0])
PLATE = np.array([225.0, 225.0, 215.0])
SHADOW = np.array([15.0, 15.0, 15.0])

# standard corpus
REAL_W = (1.7, 1.9)
REAL_H = (1.4, 1.6)
MAX_LATERAL = 5.0  # meters
EDGE_MARGIN = 8  # pixels between a vehicle and the frame edge
GAP = 4  # pixels between two vehicles
PLACEMENT_ATTEMPTS = 50

# training windows
POSITIVE_IOU = 0.65
# up to, not including, the IoU at which a detection counts as a match
HARD_IOU = (0.1, config.IOU_MIN)
NEGATIVES_PER_SCENE = 10
MAX_TRAINING_SCENES = 5000
# share of the negatives mined from a first classifier's false alarms
MINED_FRAC = 0.25
MAX_MINING_SCENES = 400


class HarnessError(ValueError):
    pass


def vehicle_box(params, vehicle):
    """Unclipped (x, y, w, h) box of a vehicle, bottom on its ground row."""
    w = params.f_y * vehicle.real_w / vehicle.d
    h = params.f_y * vehicle.real_h / vehicle.d
    bottom = row_from_distance(params, vehicle.d)
    centre = params.image_w / 2 + params.f_y * vehicle.lateral / vehicle.d
    return (centre - w / 2, bottom - h, w, h)


def clip_box(box, image_w, image_h):
    x, y, w, h = box
    x0, y0 = max(x, 0.0), max(y, 0.0)
    x1, y1 = min(x + w, float(image_w)), min(y + h, float(image_h))
    if x1 <= x0 or y1 <= y0:
        return None
    return (x0, y0, x1 - x0, y1 - y0)


def _span(start, size, limit):
    """Pixels whose centres lie in [start, start + size), clipped to [0, limit)."""
    first = math.ceil(start - 0.5)
    last = math.ceil(start + size - 0.5)
    return max(first, 0), min(last, limit)


def _fill(canvas, box, colour):
    x, y, w, h = box
    c0, c1 = _span(x, w, canvas.shape[1])
    r0, r1 = _span(y, h, canvas.shape[0])
    if c0 < c1 and r0 < r1:
        canvas[r0:r1, c0:c1] = colour


def _part(box, fraction):
    x, y, w, h = box
    fx, fy, fw, fh = fraction
    return (x + fx * w, y + fy * h, fw * w, fh * h)


def _draw_vehicle(canvas, box, shade):
    body = np.array([shade, shade, min(255, shade + 12)], dtype=float)
    _fill(canvas, box, body)
    _fill(canvas, _part(box, WINDOW_PART), 0.35 * body + 0.65 * GLASS)
    for light in LIGHT_PARTS:
        _fill(canvas, _part(box, light), LIGHT)
    _fill(canvas, _part(box, PLATE_PART), PLATE)
    _fill(canvas, _part(box, BUMPER_PART), 0.6 * body)
    _fill(canvas, _part(box, SHADOW_PART), SHADOW)


def render_scene(spec):
    """Render a scene to an 8-bit RGB image and its ground truth.

    A pixel belongs to a box when its centre does. Ground truth boxes are
    the real valued vehicle boxes clipped to the frame, in vehicle order;
    vehicles entirely outside the frame are left out.
    """
    params = spec.params
    height, width = params.image_h, params.image_w
    road = np.full(3, float(spec.background))
    canvas = np.empty((height, width, 3))
    canvas[:] = road

    sky_rows = int(np.clip(math.ceil(horizon_row(params) - 0.5), 0, height))
    canvas[:sky_rows] = np.minimum(road + SKY_LIFT, 255.0)

    boxes = [vehicle_box(params, v) for v in spec.vehicles]
    far_to_near = sorted(range(len(boxes)), key=lambda i: -spec.vehicles[i].d)
    for i in far_to_near:
        _draw_vehicle(canvas, boxes[i], spec.vehicles[i].shade)

    rng = np.random.default_rng(spec.seed)
    canvas += rng.normal(0.0, NOISE_SIGMA, canvas.shape)
    image = np.clip(np.floor(canvas + 0.5), 0, 255).astype(np.uint8)

    truth = []
    for vehicle, box in zip(spec.vehicles, boxes):
        clipped = clip_box(box, width, height)
        if clipped is None:
            continue
        truth.append(GroundTruth(box=clipped, distance=vehicle.d))
    return image, truth


def _boxes_apart(a, b, gap):
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    return (
        ax + aw + gap <= bx
        or bx + bw + gap <= ax
        or ay + ah + gap <= by
        or by + bh + gap <= ay
    )


def random_vehicle(params, rng, d_min=config.D_MIN, d_max=config.D_MAX):
    """A vehicle drawn fully inside the frame, or None if this draw can't be."""
    d = float(math.exp(rng.uniform(math.log(d_min), math.log(d_max))))
    real_w = float(rng.uniform(*REAL_W))
    real_h = float(rng.uniform(*REAL_H))
    if rng.random() < 0.5:
        shade = int(rng.integers(20, 81))
    else:
        shade = int(rng.integers(150, 231))

    w_px = params.f_y * real_w / d
    room = params.image_w / 2 - w_px / 2 - EDGE_MARGIN
    if room < 0:
        return None
    limit = min(room * d / params.f_y, MAX_LATERAL)
    lateral = float(rng.uniform(-limit, limit))

    vehicle = Vehicle(d=d, lateral=lateral, real_w=real_w, real_h=real_h, shade=shade)
    _, y, _, h = vehicle_box(params, vehicle)
    if y < 0 or y + h > params.image_h:
        return None
    return vehicle


def standard_corpus(params, n_scenes=200, seed=config.SEED):
    """Seeded scenes of 1 to 4 separated vehicles fully inside the frame."""
    rng = np.random.default_rng(seed)
    scenes = []
    for _ in range(n_scenes):
        wanted = int(rng.integers(1, 5))
        vehicles, boxes = [], []
        for _ in range(wanted):
            for _ in range(PLACEMENT_ATTEMPTS):
                vehicle = random_vehicle(params, rng)
                if vehicle is None:
                    continue
                box = vehicle_box(params, vehicle)
                if all(_boxes_apart(box, other, GAP) for other in boxes):
                    vehicles.append(vehicle)
                    boxes.append(box)
                    break
        scenes.append(
            SceneSpec(
                params=params,
                vehicles=vehicles,
                background=int(rng.integers(90, 131)),
                seed=int(rng.integers(2**31)),
            )
        )
    logger.debug(
        f"corpus of {n_scenes} scenes, {sum(len(s.vehicles) for s in scenes)} vehicles"
    )
    return scenes


def _pick(rng, candidates, k):
    if len(candidates) <= k:
        return list(candidates)
    return list(rng.choice(candidates, size=k, replace=False))


def training_set(
    params,
    plan,
    n_pos=500,
    n_neg=2000,
    window_model=config.WINDOW_MODEL,
    seed=config.SEED,
):
    """Labelled feature rows from rendered scenes.

    Features are read through the scan's own cell lookup. Positives are the
    ground truth boxes plus one plan window per vehicle overlapping it by at
    least POSITIVE_IOU. Negatives are plan windows, half well away from every
    vehicle and half partly overlapping one (HARD_IOU).
    """
    rng = np.random.default_rng(seed)
    windows = np.array(enumerate_windows(plan), dtype=float)
    want_easy = n_neg // 2
    want_hard = n_neg - want_easy

    positives, easy, hard = [], [], []
    scenes = 0
    while len(positives) < n_pos or len(easy) < want_easy or len(hard) < want_hard:
        if scenes >= MAX_TRAINING_SCENES:
            raise HarnessError(
                f"only {len(positives)} positives, {len(easy)} + {len(hard)} "
                f"negatives after {scenes} scenes"
            )
        spec = standard_corpus(params, 1, seed=int(rng.integers(2**31)))[0]
        image, truth = render_scene(spec)
        scenes += 1
        stack = compute_channels(image)

        gt_boxes = [t.box for t in truth]
        overlaps = iou_matrix(windows, gt_boxes)
        best = overlaps.max(axis=1) if gt_boxes else np.zeros(len(windows))

        boxes = []
        for j, gt in enumerate(gt_boxes):
            if len(positives) + len(boxes) < n_pos:
                boxes.append(gt)
            close = np.flatnonzero(overlaps[:, j] >= POSITIVE_IOU)
            if close.size and len(positives) + len(boxes) < n_pos:
                boxes.append(tuple(windows[rng.choice(close)]))
        if boxes:
            positives.extend(extract_features(stack, boxes, window_model))

        if len(easy) < want_easy:
            away = np.flatnonzero(best < HARD_IOU[0])
            k = min(NEGATIVES_PER_SCENE, want_easy - len(easy))
            chosen = _pick(rng, away, k)
            if chosen:
                easy.extend(extract_features(stack, windows[chosen], window_model))
        if len(hard) < want_hard:
            near = np.flatnonzero((best >= HARD_IOU[0]) & (best < HARD_IOU[1]))
            k = min(NEGATIVES_PER_SCENE, want_hard - len(hard))
            chosen = _pick(rng, near, k)
            if chosen:
                hard.extend(extract_features(stack, windows[chosen], window_model))

    logger.info(
        f"training set from {scenes} scenes: {len(positives)} positives, "
        f"{len(easy)} background and {len(hard)} hard negatives"
    )
    features = np.array(positives + easy + hard)
    labels = np.concatenate(
        [np.ones(len(positives)), -np.ones(len(easy) + len(hard))]
    )
    return features, labels


def mine_negatives(
    params,
    plan,
    clf,
    n,
    score_min=config.SCORE_MIN,
    cascade_margin=config.CASCADE_MARGIN,
    seed=config.SEED,
):
    """Feature rows of up to n plan windows clf wrongly fires on.

    Fresh scenes are scanned without suppression. A window is a false alarm
    when its IoU with every vehicle stays below HARD_IOU[1]; each scene gives
    its best scoring NEGATIVES_PER_SCENE of them, ties in window order.
    """
    rng = np.random.default_rng(seed)
    mined = []
    scenes = 0
    while len(mined) < n and scenes < MAX_MINING_SCENES:
        spec = standard_corpus(params, 1, seed=int(rng.integers(2**31)))[0]
        image, truth = render_scene(spec)
        scenes += 1
        stack = compute_channels(image, clf.shrink)

        raw = scan(stack, plan, clf, score_min, cascade_margin)
        if not raw:
            continue
        boxes = [det.box for det in raw]
        if truth:
            best = iou_matrix(boxes, [t.box for t in truth]).max(axis=1)
        else:
            best = np.zeros(len(raw))
        false = [i for i in range(len(raw)) if best[i] < HARD_IOU[1]]
        false.sort(key=lambda i: (-raw[i].score, raw[i].window_index))
        chosen = [boxes[i] for i in false[: min(NEGATIVES_PER_SCENE, n - len(mined))]]
        if chosen:
            mined.extend(extract_features(stack, chosen, clf.window_model))

    logger.info(f"mined {len(mined)} false alarms from {scenes} scenes")
    return np.array(mined, dtype=float).reshape(len(mined), clf.n_features)


def train_detector(
    params,
    plan,
    n_pos=500,
    n_neg=2000,
    rounds=config.ROUNDS,
    depth=config.DEPTH,
    seed=config.SEED,
    mined_frac=MINED_FRAC,
):
    """Two stage training of a vehicle classifier for a plan.

    A first classifier is boosted on training_set windows with all but
    mined_frac of the negatives. Its false alarms on fresh scenes make up the
    rest, and the final classifier is boosted on the lot. Returns the
    classifier and its boosting rounds.
    """
    if not 0 <= mined_frac < 1:
        raise HarnessError(f"mined_frac must be in [0, 1), got {mined_frac}")
    n_mined = int(n_neg * mined_frac)
    features, labels = training_set(params, plan, n_pos, n_neg - n_mined, seed=seed)
    clf, history = boost(features, labels, rounds, depth)
    if not n_mined:
        return clf, history

    mined = mine_negatives(params, plan, clf, n_mined, seed=seed + 1)
    if not len(mined):
        return clf, history
    features = np.concatenate([features, mined])
    labels = np.concatenate([labels, -np.ones(len(mined))])
    return boost(features, labels, rounds, depth)


def points_from_truth(params, distances, noise=0.0, seed=config.SEED):
    """Calibration points a camera with params would see, rows optionally noisy."""
    rng = np.random.default_rng(seed)
    points = []
    for d in distances:
        v = row_from_distance(params, d)
        if noise:
            v += float(rng.uniform(-noise, noise))
        points.append(CalibrationPoint(d=d, v=v))
    return points


def _order(detections):
    return sorted(
        range(len(detections)),
        key=lambda i: (-detections[i].score, detections[i].window_index, i),
    )


def _match_key(det, gt, overlap):
    """Most overlap first, then the nearest distance, then the box."""
    gap = abs(gt.distance - det.distance) if det.distance is not None else 0.0
    return (-overlap, gap, gt.distance, gt.box)


def evaluate(detections, truths, iou_min=config.IOU_MIN, n_images=None):
    """Detection rate, FPPI and distance errors over a set of images.

    detections and truths are per-image lists. Within an image, detections
    are matched best score first, each to the unmatched ground truth it
    overlaps most, provided the IoU reaches iou_min. Equal overlaps go to the
    ground truth closest in distance, so the ground truth order never changes
    the result.
    """
    if not 0 < iou_min < 1:
        raise HarnessError(f"iou_min must be in (0, 1), got {iou_min}")
    if len(detections) != len(truths):
        raise HarnessError(
            f"{len(detections)} detection lists for {len(truths)} images"
        )
    if n_images is None:
        n_images = len(truths)

    matched = false_positives = total = 0
    errors = []
    for image_detections, image_truth in zip(detections, truths):
        total += len(image_truth)
        free = np.ones(len(image_truth), dtype=bool)
        overlaps = iou_matrix(
            [det.box for det in image_detections], [gt.box for gt in image_truth]
        )
        for i in _order(image_detections):
            det = image_detections[i]
            candidates = [
                j
                for j in range(len(image_truth))
                if free[j] and overlaps[i, j] >= iou_min
            ]
            if not candidates:
                false_positives += 1
                continue
            j = min(
                candidates,
                key=lambda j: _match_key(det, image_truth[j], overlaps[i, j]),
            )
            free[j] = False
            matched += 1
            if det.distance is not None:
                errors.extend(distance_errors([(image_truth[j].distance, det.distance)]))

    return MetricsReport(
        detection_rate=matched / total if total else 1.0,
        fppi=false_positives / n_images if n_images else 0.0,
        matched=matched,
        total_gt=total,
        false_positives=false_positives,
        n_images=n_images,
        errors=errors,
    )


def distance_errors(pairs):
    """e* = |d - d'| and e_r = e* / d for (d, d') pairs."""
    errors = []
    for d_true, d_est in pairs:
        if not d_true > 0:
            raise HarnessError(f"true distance must be > 0, got {d_true}")
        e_star = abs(d_true - d_est)
        errors.append(
            DistanceError(d_true=d_true, d_est=d_est, e_star=e_star, e_rel=e_star / d_true)
        )
    return errors


def quantization_study(
    params,
    distances,
    trials=10000,
    row_noise=1.0,
    seed=config.SEED,
    rounding=True,
):
    """Monte Carlo distance error from reading the ground row imprecisely.

    Each trial reads row_from_distance(d) plus uniform noise of +-row_noise
    pixels, rounded to a whole pixel if rounding is set, and converts it back.
    Trials landing at or above the horizon are counted in excluded and left
    out of the means. Each row also carries the first order resolution,
    row_sensitivity, in meters per pixel. Each distance draws from its own
    stream, seeded by its position in distances, so appending distances leaves
    earlier rows as they were.
    """
    if trials < 1:
        raise HarnessError(f"trials must be >= 1, got {trials}")
    horizon = horizon_row(params)
    rows = []
    for index, d in enumerate(distances):
        rng = np.random.default_rng([seed, index])
        v = row_from_distance(params, d) + rng.uniform(-row_noise, row_noise, trials)
        if rounding:
            v = np.floor(v + 0.5)
        valid = v > horizon
        if valid.any():
            estimates = np.asarray(distance_from_row(params, v[valid]), dtype=float)
            e_star = np.abs(estimates - d)
            mean_estimate = float(estimates.mean())
            mean_e_star = float(e_star.mean())
            mean_e_rel = mean_e_star / d
        else:
            mean_estimate = mean_e_star = mean_e_rel = math.nan
        excluded = int(trials - valid.sum())
        if excluded:
            logger.warning(f"{excluded} of {trials} trials at {d} m read at or above the horizon")
        rows.append(
            QuantizationRow(
                d=d,
                mean_estimate=mean_estimate,
                mean_e_star=mean_e_star,
                mean_e_rel=mean_e_rel,
                resolution=row_sensitivity(params, d),
                trials=trials,
                excluded=excluded,
            )
        )
    return rows


def _table(header, lines):
    widths = [max(len(row[i]) for row in [header] + lines) for i in range(len(header))]
    return "\n".join(
        "  ".join(cell.rjust(width) for cell, width in zip(row, widths))
        for row in [header] + lines
    )


def format_error_table(errors, decimals=6):
    header = ["d / m", "d' / m", "e* / m", "e_r / %"]
    lines = [
        [
            f"{e.d_true:.{decimals}f}",
            f"{e.d_est:.{decimals}f}",
            f"{e.e_star:.{decimals}f}",
            f"{100 * e.e_rel:.{decimals}f}",
        ]
        for e in errors
    ]
    return _table(header, lines)


def format_study_table(rows):
    header = ["d / m", "d' / m", "e* / m", "e_r / %", "m / px", "excluded"]
    lines = [
        [
            f"{r.d:.6f}",
            f"{r.mean_estimate:.6f}",
            f"{r.mean_e_star:.6f}",
            f"{100 * r.mean_e_rel:.6f}",
            f"{r.resolution:.6f}",
            str(r.excluded),
        ]
        for r in rows
    ]
    return _table(header, lines)


@dataclass
class Benchmark:
    plan: ScanStats
    baseline: ScanStats

    @property
    def window_ratio(self):
        return self.plan.windows / self.baseline.windows

    @property
    def time_ratio(self):
        return self.plan.seconds / self.baseline.seconds


def benchmark(images, plan, baseline, clf, workers=None):
    """Scan the same frames with a plan and a baseline plan.

    Channel computation is shared and left out of both timings.
    """
    plan_stats, baseline_stats = ScanStats(), ScanStats()
    for image in images:
        stack = compute_channels(image, clf.shrink)
        scan(stack, plan, clf, workers=workers, stats=plan_stats)
        scan(stack, baseline, clf, workers=workers, stats=baseline_stats)
    result = Benchmark(plan=plan_stats, baseline=baseline_stats)
    logger.info(
        f"plan scanned {plan_stats.windows} windows in {plan_stats.seconds:.3f}s, "
        f"baseline {baseline_stats.windows} in {baseline_stats.seconds:.3f}s"
    )
    return result

