import logging
import os
import sys
from pathlib import Path


# cap on scan worker threads, 0 means one per cpu
THREADS = int(os.environ.get("MONOFCW_THREADS", "0"))
assert THREADS >= 0, "MONOFCW_THREADS must be >= 0"

# calibration file served by the measurement service
CALIBRATION = os.environ.get("MONOFCW_CALIBRATION", None)
if CALIBRATION is not None:
    CALIBRATION = Path(CALIBRATION)

LOG_LEVEL = os.environ.get("LOG_LEVEL", "info")

# channel features
SHRINK = 4
N_ORIENTATIONS = 6
GRADIENT_NORM_CONST = 0.005
# (w, h) in pixels of the window the boosted trees index into
WINDOW_MODEL = (48, 40)

# window planner, (d_m, w_px, h_px) anchors as measured on the reference camera
DEFAULT_ANCHORS = ((5.0, 400.0, 275.0), (10.0, 110.0, 95.0), (20.0, 50.0, 45.0))
D_MIN = 5.0
D_MAX = 40.0
BINS_PER_OCTAVE = 4
V_TOL_FRAC = 0.25
STRIDE_FRAC = 0.125
BASELINE_SCALES_PER_OCTAVE = 8

# detector
ROUNDS = 64
DEPTH = 2
SCORE_MIN = 0.0
CASCADE_MARGIN = 1.0
IOU_MAX = 0.5
# the frame pipeline suppresses harder than plain nms
DETECT_IOU_MAX = 0.3
IOU_MIN = 0.5

# calibration refinement
MAX_ITER = 50
TOL = 1e-10

# forward collision warning
D_ALERT = 7.0
D_CAUTION = 15.0
HEADWAY_ALERT = 1.5
SMOOTHING = 0.4
RESET_AFTER = 1.0
CORRIDOR_FRAC = 0.3
FRAME_DT = 1.0 / 30.0

SEED = 0


def scan_workers():
    """Number of worker threads scan may use."""
    if THREADS:
        return THREADS
    return os.cpu_count() or 1


def setup_logging(level=None):
    logger = logging.getLogger("monofcw")
    logger.setLevel(logging.getLevelName((level or LOG_LEVEL).upper()))
    if logger.handlers:
        return
    # stdout carries command output, so logs go to stderr
    handler = logging.StreamHandler(sys.stderr)
    # if running under uvicorn, reuse it's formatter
    uvicorn_handlers = logging.getLogger("uvicorn").handlers
    if uvicorn_handlers:  # pragma: no cover
        handler.setFormatter(uvicorn_handlers[0].formatter)
    logger.addHandler(handler)
