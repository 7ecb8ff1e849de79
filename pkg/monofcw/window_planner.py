"""Distance-indexed sliding window plans.

A calibrated camera tells us on which row a vehicle at distance d touches the
ground, and size anchors tell us how big it looks there. Instead of sliding
every window size over the whole frame, each distance bin gets one window size
sliding along a narrow band of rows around that ground contact row.
"""
import logging
import math

import numpy as np

from monofcw import config
from monofcw.geometry import row_from_distance
from monofcw.schema import SizeAnchor, WindowBand, WindowPlan


logger = logging.getLogger(__name__)


class PlannerError(ValueError):
    pass


class NoAnchors(PlannerError):
    pass


class EmptyPlan(PlannerError):
    pass


def default_anchors():
    return [SizeAnchor(d=d, w=w, h=h) for d, w, h in config.DEFAULT_ANCHORS]


def pinhole_anchors(params, real_w, real_h, distances=(5.0, 10.0, 20.0)):
    """Anchors for a vehicle of fixed physical size seen by a pinhole camera."""
    return [
        SizeAnchor(d=d, w=params.f_y * real_w / d, h=params.f_y * real_h / d)
        for d in distances
    ]


def _round(x):
    return int(math.floor(x + 0.5))


def interpolate_size(anchors, d):
    """Window (w, h) in pixels expected at distance d.

    Width and height are interpolated separately, linearly in log-log space
    between the bracketing anchors. Outside the anchors the size scales as 1/d
    from the nearest one.
    """
    if not anchors:
        raise NoAnchors("at least one size anchor is needed")
    if not d > 0:
        raise PlannerError(f"distance must be > 0, got {d}")
    for a, b in zip(anchors, anchors[1:]):
        if not b.d > a.d:
            raise PlannerError(f"anchor distances must increase: {a.d} then {b.d}")

    for anchor in anchors:
        if d == anchor.d:
            return anchor.w, anchor.h

    first, last = anchors[0], anchors[-1]
    if d < first.d:
        return first.w * first.d / d, first.h * first.d / d
    if d > last.d:
        return last.w * last.d / d, last.h * last.d / d

    for near, far in zip(anchors, anchors[1:]):
        if near.d < d < far.d:
            s = (math.log(d) - math.log(near.d)) / (math.log(far.d) - math.log(near.d))
            w = math.exp(math.log(near.w) + s * (math.log(far.w) - math.log(near.w)))
            h = math.exp(math.log(near.h) + s * (math.log(far.h) - math.log(near.h)))
            return w, h
    raise AssertionError(f"no anchor bracket for {d}")  # pragma: no cover


def bin_distances(d_min, d_max, bins_per_octave):
    """Geometric bin centres from d_min, bins_per_octave per doubling."""
    n = int(math.floor(bins_per_octave * math.log2(d_max / d_min) + 1e-9))
    return [d_min * 2.0 ** (k / bins_per_octave) for k in range(n + 1)]


def _check_knobs(d_min, d_max, bins_per_octave, v_tol_frac, stride_frac):
    if not 0 < d_min <= d_max:
        raise PlannerError(f"need 0 < d_min <= d_max, got {d_min}, {d_max}")
    if bins_per_octave < 1:
        raise PlannerError(f"bins_per_octave must be >= 1, got {bins_per_octave}")
    if not 0 <= v_tol_frac <= 1:
        raise PlannerError(f"v_tol_frac must be in [0, 1], got {v_tol_frac}")
    if not 0 < stride_frac <= 1:
        raise PlannerError(f"stride_frac must be in (0, 1], got {stride_frac}")


def _make_band(d, v_anchor, w, h, v_tol, stride_frac, limits=(None, None)):
    v_min, v_max = limits
    return WindowBand(
        d=d,
        v_anchor=v_anchor,
        v_tol=v_tol,
        w=w,
        h=h,
        x_stride=max(1, _round(stride_frac * w)),
        v_stride=max(1, _round(stride_frac * h)),
        v_min=v_min,
        v_max=v_max,
    )


def neighbour_limits(params, bins, index, bins_per_octave):
    """Ground rows (v_min, v_max) of the bins either side of bins[index].

    The first and last bins look one bin step past the range.
    """
    step = 2.0 ** (1.0 / bins_per_octave)
    d = bins[index]
    nearer = bins[index - 1] if index > 0 else d / step
    farther = bins[index + 1] if index + 1 < len(bins) else d * step
    return row_from_distance(params, farther), row_from_distance(params, nearer)


def plan_windows(
    params,
    anchors=None,
    d_min=config.D_MIN,
    d_max=config.D_MAX,
    bins_per_octave=config.BINS_PER_OCTAVE,
    v_tol_frac=config.V_TOL_FRAC,
    stride_frac=config.STRIDE_FRAC,
):
    if anchors is None:
        anchors = default_anchors()
    _check_knobs(d_min, d_max, bins_per_octave, v_tol_frac, stride_frac)

    bands = []
    bins = bin_distances(d_min, d_max, bins_per_octave)
    for index, d in enumerate(bins):
        w, h = interpolate_size(anchors, d)
        w, h = max(1, _round(w)), max(1, _round(h))
        band = _make_band(
            d,
            row_from_distance(params, d),
            w,
            h,
            v_tol_frac * h,
            stride_frac,
            neighbour_limits(params, bins, index, bins_per_octave),
        )
        if count_band_windows(band, params.image_w, params.image_h):
            bands.append(band)
        else:
            logger.debug(f"dropping band at {d:.3f} m: no {w}x{h} window fits the image")

    if not bands:
        raise EmptyPlan(
            f"no band between {d_min} and {d_max} m fits a "
            f"{params.image_w}x{params.image_h} image"
        )
    plan = WindowPlan(bands=bands, params=params)
    logger.info(f"planned {len(bands)} bands, {count_windows(plan)} windows")
    return plan


def exhaustive_plan(
    params,
    anchors=None,
    d_min=config.D_MIN,
    d_max=config.D_MAX,
    scales_per_octave=config.BASELINE_SCALES_PER_OCTAVE,
    stride_frac=config.STRIDE_FRAC,
):
    """Conventional multi-scale baseline over the same window size range.

    Every scale slides over every row of the image, ignoring where a vehicle
    of that size could touch the ground.
    """
    if anchors is None:
        anchors = default_anchors()
    _check_knobs(d_min, d_max, scales_per_octave, 0, stride_frac)

    bands = []
    for d in bin_distances(d_min, d_max, scales_per_octave):
        w, h = interpolate_size(anchors, d)
        w, h = max(1, _round(w)), max(1, _round(h))
        if w > params.image_w or h > params.image_h:
            continue
        # bottom rows cover [h, image_h]
        v_anchor = (params.image_h + h) / 2
        bands.append(
            _make_band(d, v_anchor, w, h, (params.image_h - h) / 2, stride_frac)
        )

    if not bands:
        raise EmptyPlan(f"no scale between {d_min} and {d_max} m fits the image")
    return WindowPlan(bands=bands, params=params)


def band_rows(band, image_h):
    """Top rows of the band's windows that lie fully inside the image.

    Bottom rows outside the band's [v_min, v_max], when it has one, are left
    out as well.
    """
    k = int(math.floor(band.v_tol / band.v_stride + 1e-9))
    bottoms = band.v_anchor + band.v_stride * np.arange(-k, k + 1)
    tops = np.floor(bottoms - band.h + 0.5).astype(int)
    keep = (tops >= 0) & (tops + band.h <= image_h)
    if band.v_min is not None:
        keep &= (tops + band.h >= band.v_min) & (tops + band.h <= band.v_max)
    return tops[keep]


def band_columns(band, image_w):
    if band.w > image_w:
        return np.zeros(0, dtype=int)
    return np.arange(0, image_w - band.w + 1, band.x_stride)


def count_band_windows(band, image_w, image_h):
    return len(band_rows(band, image_h)) * len(band_columns(band, image_w))


def count_windows(plan):
    return sum(
        count_band_windows(band, plan.params.image_w, plan.params.image_h)
        for band in plan.bands
    )


def enumerate_windows(plan):
    """Every window of the plan as (x, y, w, h), by band, then y, then x."""
    windows = []
    for band in plan.bands:
        columns = band_columns(band, plan.params.image_w)
        for y in band_rows(band, plan.params.image_h):
            windows.extend((int(x), int(y), band.w, band.h) for x in columns)
    return windows
