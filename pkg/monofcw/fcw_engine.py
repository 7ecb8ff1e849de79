"""Forward collision warning from per-frame lead vehicle distances.

The engine is a pure function of (state, observation): the caller keeps the
TrackState and passes it back in on the next frame.
"""
import logging
import math

from monofcw import config
from monofcw.schema import FcwConfig, TrackState, WarningLevel


logger = logging.getLogger(__name__)


class FcwError(ValueError):
    pass


def warning_level(d, closing_speed, cfg):
    """ALERT inside d_alert or under headway_alert seconds to contact, CAUTION
    inside d_caution, NONE otherwise."""
    if d < cfg.d_alert:
        return WarningLevel.ALERT
    if closing_speed > 0 and d / closing_speed < cfg.headway_alert:
        return WarningLevel.ALERT
    if d < cfg.d_caution:
        return WarningLevel.CAUTION
    return WarningLevel.NONE


def time_to_contact(state):
    """Seconds until the gap closes at the current closing speed, or inf."""
    if state.last_d is None or not state.closing_speed > 0:
        return math.inf
    return state.last_d / state.closing_speed


def update(state, d, dt=config.FRAME_DT, cfg=None):
    """Fold one measured distance into the track.

    The first observation only sets the distance; after that the raw closing
    speed over the time since the last observation is exponentially smoothed.
    """
    cfg = cfg or FcwConfig()
    if not (math.isfinite(d) and d > 0):
        raise FcwError(f"distance must be finite and > 0, got {d}")
    if not (math.isfinite(dt) and dt > 0):
        raise FcwError(f"dt must be finite and > 0, got {dt}")

    if state.last_d is None:
        speed = 0.0
    else:
        raw = (state.last_d - d) / (state.unobserved + dt)
        speed = cfg.smoothing * raw + (1 - cfg.smoothing) * state.closing_speed

    new = TrackState(last_d=d, closing_speed=speed, unobserved=0.0)
    return new, warning_level(d, speed, cfg)


def coast(state, dt=config.FRAME_DT, cfg=None):
    """Advance a frame without an observation.

    The track holds its last distance and speed, and so its level, until
    reset_after seconds pass unobserved; then it resets to empty.
    """
    cfg = cfg or FcwConfig()
    if not (math.isfinite(dt) and dt > 0):
        raise FcwError(f"dt must be finite and > 0, got {dt}")
    if state.last_d is None:
        return TrackState(), WarningLevel.NONE

    unobserved = state.unobserved + dt
    if unobserved >= cfg.reset_after:
        logger.debug(f"no lead vehicle for {unobserved:.3f}s, track reset")
        return TrackState(), WarningLevel.NONE

    new = TrackState(
        last_d=state.last_d, closing_speed=state.closing_speed, unobserved=unobserved
    )
    return new, warning_level(state.last_d, state.closing_speed, cfg)


def in_path(detection, image_w, corridor_frac):
    """Whether the box overlaps the centred corridor of corridor_frac x image_w."""
    half = corridor_frac * image_w / 2
    left, right = image_w / 2 - half, image_w / 2 + half
    x, _, w, _ = detection.box
    return x < right and x + w > left


def nearest_in_path(detections, image_w, corridor_frac=config.CORRIDOR_FRAC):
    """Closest detection with a distance that overlaps the driving corridor."""
    candidates = [
        det
        for det in detections
        if det.distance is not None and in_path(det, image_w, corridor_frac)
    ]
    if not candidates:
        return None
    return min(candidates, key=lambda det: (det.distance, det.window_index))


def run_sequence(distances, dt=config.FRAME_DT, cfg=None):
    """Levels for a sequence of per-frame distances; None means no observation."""
    cfg = cfg or FcwConfig()
    state = TrackState()
    levels = []
    for d in distances:
        if d is None:
            state, level = coast(state, dt, cfg)
        else:
            state, level = update(state, d, dt, cfg)
        levels.append((state, level))
    return levels
