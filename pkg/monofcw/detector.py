"""Scanning a window plan with a boosted classifier."""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from monofcw import config
from monofcw.channels import compute_channels
from monofcw.geometry import GeometryError, distance_from_row, horizon_row
from monofcw.schema import Detection
from monofcw.window_planner import band_columns, band_rows


logger = logging.getLogger(__name__)

# band aspect ratios further than this from the model's are refused
MAX_ASPECT_MISMATCH = 0.5


class DetectorError(ValueError):
    pass


class ModelPlanMismatch(DetectorError):
    pass


@dataclass
class ScanStats:
    bands: int = 0
    windows: int = 0
    tree_evaluations: int = 0  # window x tree pairs actually evaluated
    survivors: int = 0  # windows that reached the last tree
    seconds: float = 0.0

    def add(self, other):
        self.bands += other.bands
        self.windows += other.windows
        self.tree_evaluations += other.tree_evaluations
        self.survivors += other.survivors


def cell_index(starts, sizes, model_size, n_cells, limit, shrink):
    """Stack cell under each model cell centre, for windows of the given size.

    Returns an int array (windows, n_cells), clipped to [0, limit).
    """
    starts = np.asarray(starts, dtype=float)
    sizes = np.broadcast_to(np.asarray(sizes, dtype=float), starts.shape)
    centres = (np.arange(n_cells) + 0.5) * shrink / model_size
    pixels = starts[:, None] + sizes[:, None] * centres[None, :]
    return np.clip(np.floor(pixels / shrink).astype(int), 0, limit - 1)


def extract_features(stack, boxes, window_model=config.WINDOW_MODEL):
    """Feature rows, as a classifier sees them, for (x, y, w, h) boxes."""
    boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
    model_w, model_h = window_model
    columns, rows = model_w // stack.shrink, model_h // stack.shrink
    col_cells = cell_index(
        boxes[:, 0], boxes[:, 2], model_w, columns, stack.width, stack.shrink
    )
    row_cells = cell_index(
        boxes[:, 1], boxes[:, 3], model_h, rows, stack.height, stack.shrink
    )
    values = stack.data[:, row_cells[:, :, None], col_cells[:, None, :]]
    return values.transpose(1, 0, 2, 3).reshape(len(boxes), -1)


def _check_band(band, clf):
    model_w, model_h = clf.window_model
    ratio = (band.w / band.h) / (model_w / model_h)
    if abs(ratio - 1) > MAX_ASPECT_MISMATCH:
        raise ModelPlanMismatch(
            f"band at {band.d:.3f} m has {band.w}x{band.h} windows, too far from "
            f"the {model_w}x{model_h} model's aspect ratio"
        )


def _window_distance(params, bottom):
    if bottom <= horizon_row(params):
        return None
    try:
        return distance_from_row(params, bottom)
    except GeometryError:
        return None


def _scan_band(stack, band, first_index, clf, params, score_min, cascade_margin):
    tops = band_rows(band, params.image_h)
    lefts = band_columns(band, params.image_w)
    n = len(tops) * len(lefts)
    stats = ScanStats(bands=1, windows=n)
    if not n:
        return [], stats

    model_w, model_h = clf.window_model
    columns, rows = clf.cells
    row_cells = cell_index(tops, band.h, model_h, rows, stack.height, stack.shrink)
    col_cells = cell_index(lefts, band.w, model_w, columns, stack.width, stack.shrink)
    iy, ix = np.divmod(np.arange(n), len(lefts))
    per_channel = rows * columns

    def lookup_for(windows):
        def lookup(samples, features):
            at = windows[samples]
            channel, rest = np.divmod(features, per_channel)
            r, q = np.divmod(rest, columns)
            return stack.data[channel, row_cells[iy[at], r], col_cells[ix[at], q]]

        return lookup

    scores = np.zeros(n)
    alive = np.arange(n)
    floors = np.asarray(clf.cascade_thresholds, dtype=float) - cascade_margin
    for tree, weight, floor in zip(clf.trees, clf.weights, floors):
        if not len(alive):
            break
        stats.tree_evaluations += len(alive)
        scores[alive] += weight * tree.evaluate(lookup_for(alive), len(alive))
        alive = alive[scores[alive] >= floor]
    stats.survivors = len(alive)

    detections = []
    for i in alive[scores[alive] >= score_min]:
        x, y = int(lefts[ix[i]]), int(tops[iy[i]])
        detections.append(
            Detection(
                box=(x, y, band.w, band.h),
                score=float(scores[i]),
                distance=_window_distance(params, y + band.h),
                window_index=first_index + int(i),
            )
        )
    return detections, stats


def scan(
    stack,
    plan,
    clf,
    score_min=config.SCORE_MIN,
    cascade_margin=config.CASCADE_MARGIN,
    workers=None,
    stats=None,
):
    """Every plan window whose score reaches score_min.

    A window is dropped once its running score falls below the classifier's
    cascade threshold for that many trees minus cascade_margin. An infinite
    margin evaluates every tree on every window. Detections come back in plan
    window order, band by band, regardless of how many threads scan.
    """
    params = plan.params
    if stack.shrink != clf.shrink:
        raise DetectorError(
            f"channels pooled over {stack.shrink} px cells, classifier expects {clf.shrink}"
        )
    expected = (params.image_h // stack.shrink, params.image_w // stack.shrink)
    if (stack.height, stack.width) != expected:
        raise DetectorError(
            f"channel stack is {stack.width}x{stack.height} cells, the plan's "
            f"{params.image_w}x{params.image_h} image needs {expected[1]}x{expected[0]}"
        )
    for band in plan.bands:
        _check_band(band, clf)

    offsets, total = [], 0
    for band in plan.bands:
        offsets.append(total)
        total += len(band_rows(band, params.image_h)) * len(
            band_columns(band, params.image_w)
        )

    workers = workers or config.scan_workers()
    start = time.perf_counter()
    jobs = [
        (stack, band, offset, clf, params, score_min, cascade_margin)
        for band, offset in zip(plan.bands, offsets)
    ]
    if workers == 1 or len(jobs) < 2:
        results = [_scan_band(*job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda job: _scan_band(*job), jobs))

    detections = []
    totals = ScanStats()
    for band_detections, band_stats in results:
        detections.extend(band_detections)
        totals.add(band_stats)
    totals.seconds = time.perf_counter() - start
    if stats is not None:
        stats.add(totals)
        stats.seconds += totals.seconds

    logger.debug(
        f"scanned {totals.windows} windows in {totals.bands} bands, "
        f"{totals.tree_evaluations} tree evaluations, {len(detections)} detections "
        f"in {totals.seconds:.3f}s"
    )
    return detections


def iou(a, b):
    """Intersection over union of two (x, y, w, h) boxes."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    iw = min(ax + aw, bx + bw) - max(ax, bx)
    ih = min(ay + ah, by + bh) - max(ay, by)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (aw * ah + bw * bh - inter)


def iou_matrix(boxes_a, boxes_b):
    a = np.asarray(boxes_a, dtype=float).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=float).reshape(-1, 4)
    iw = np.minimum(
        a[:, None, 0] + a[:, None, 2], b[None, :, 0] + b[None, :, 2]
    ) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(
        a[:, None, 1] + a[:, None, 3], b[None, :, 1] + b[None, :, 3]
    ) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.maximum(iw, 0.0) * np.maximum(ih, 0.0)
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    return np.where(inter > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def nms(detections, iou_max=config.IOU_MAX):
    """Greedy non-maximum suppression.

    Takes detections best score first (lower window_index on equal scores)
    and drops any whose IoU with an already kept one exceeds iou_max. The kept
    detections come back in that same order.
    """
    if not detections:
        return []
    boxes = np.array([det.box for det in detections], dtype=float)
    x1, y1 = boxes[:, 0], boxes[:, 1]
    x2, y2 = x1 + boxes[:, 2], y1 + boxes[:, 3]
    areas = boxes[:, 2] * boxes[:, 3]
    scores = np.array([det.score for det in detections])
    indexes = np.array([det.window_index for det in detections])
    order = np.lexsort((np.arange(len(detections)), indexes, -scores))

    keep = []
    while order.size > 0:
        i = order[0]
        keep.append(i)
        rest = order[1:]
        w = np.maximum(0.0, np.minimum(x2[i], x2[rest]) - np.maximum(x1[i], x1[rest]))
        h = np.maximum(0.0, np.minimum(y2[i], y2[rest]) - np.maximum(y1[i], y1[rest]))
        inter = w * h
        overlap = np.where(inter > 0, inter / (areas[i] + areas[rest] - inter), 0.0)
        order = rest[overlap <= iou_max]
    return [detections[i] for i in keep]


def detect(
    image,
    plan,
    clf,
    score_min=config.SCORE_MIN,
    cascade_margin=config.CASCADE_MARGIN,
    iou_max=config.DETECT_IOU_MAX,
    workers=None,
    stats=None,
):
    """Channels, scan and suppression for one RGB frame."""
    stack = compute_channels(image, clf.shrink)
    raw = scan(stack, plan, clf, score_min, cascade_margin, workers, stats)
    kept = nms(raw, iou_max)
    logger.debug(f"{len(raw)} raw detections, {len(kept)} after suppression")
    return kept
