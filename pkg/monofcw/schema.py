"""Domain value types shared across monofcw.

All of them are immutable pydantic models: constructing one that breaks an
invariant raises pydantic.ValidationError.
"""
import math
from enum import Enum, IntEnum
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, Field, root_validator, validator

from monofcw import config


def _finite(value, name):
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")
    return value


def _positive(value, name):
    _finite(value, name)
    if not value > 0:
        raise ValueError(f"{name} must be > 0, got {value}")
    return value


class FrozenModel(BaseModel):
    class Config:
        # do not allow anyone to set values after instantiation
        allow_mutation = False


class CameraParams(FrozenModel):
    """Calibrated ground-plane pinhole camera.

    Rows grow downwards, and a ground point ahead of the camera images below
    the horizon row. f_y is the focal length in vertical pixel units.
    """

    h: float = Field(description="camera height above the ground, meters")
    alpha: float = Field(description="downward pitch of the optical axis, radians")
    f_y: float = Field(description="vertical focal length, pixels")
    v0: float = Field(description="principal point row, pixels")
    image_w: int = Field(description="image width, pixels")
    image_h: int = Field(description="image height, pixels")

    @validator("h", "f_y")
    def check_positive(cls, value, field):
        return _positive(value, field.name)

    @validator("alpha")
    def check_alpha(cls, value):
        _finite(value, "alpha")
        if not abs(value) < math.pi / 2:
            raise ValueError(f"|alpha| must be < pi/2, got {value}")
        return value

    @validator("v0")
    def check_v0(cls, value):
        return _finite(value, "v0")

    @validator("image_w", "image_h")
    def check_image_size(cls, value, field):
        if value <= 0:
            raise ValueError(f"{field.name} must be a positive integer, got {value}")
        return value

    @root_validator(skip_on_failure=True)
    def check_horizon(cls, values):
        horizon = values["v0"] - values["f_y"] * math.tan(values["alpha"])
        _finite(horizon, "horizon row")
        return values


class CalibrationPoint(FrozenModel):
    """A measured ground point: its distance and the row it images to."""

    d: float = Field(description="ground distance from the camera foot, meters")
    v: float = Field(description="image row, pixels")

    @validator("d")
    def check_distance(cls, value):
        return _positive(value, "d")

    @validator("v")
    def check_row(cls, value):
        return _finite(value, "v")


class CalibrationMethod(str, Enum):
    THREE_POINT_EXACT = "three-point-exact"
    LEAST_SQUARES = "least-squares"


class CalibrationReport(FrozenModel):
    params: CameraParams
    residuals: list[float]  # per point row residual, pixels
    method: CalibrationMethod
    iterations: int = 0
    converged: bool = True

    @root_validator(skip_on_failure=True)
    def check_exact(cls, values):
        if values["method"] == CalibrationMethod.THREE_POINT_EXACT:
            worst = max((abs(r) for r in values["residuals"]), default=0.0)
            if worst >= 1e-6:
                raise ValueError(f"exact solution has residual {worst} px")
        return values

    @property
    def rms(self):
        if not self.residuals:
            return 0.0
        return math.sqrt(sum(r * r for r in self.residuals) / len(self.residuals))


class SizeAnchor(FrozenModel):
    """Expected vehicle window size at a distance."""

    d: float
    w: float
    h: float

    @validator("d", "w", "h")
    def check_positive(cls, value, field):
        return _positive(value, field.name)


class WindowBand(FrozenModel):
    """Windows of one size sliding along a narrow band of rows.

    v_anchor is the row of the window BOTTOM edge for the band's distance.
    When set, v_min and v_max bound the bottom rows a window may take, so a
    band never reaches past the ground rows of its neighbouring bins.
    """

    d: float
    v_anchor: float
    v_tol: float
    w: int
    h: int
    x_stride: int
    v_stride: int
    v_min: Optional[float] = None
    v_max: Optional[float] = None

    @validator("d")
    def check_distance(cls, value):
        return _positive(value, "d")

    @validator("v_anchor")
    def check_anchor(cls, value):
        return _finite(value, "v_anchor")

    @validator("v_tol")
    def check_tolerance(cls, value):
        _finite(value, "v_tol")
        if value < 0:
            raise ValueError(f"v_tol must be >= 0, got {value}")
        return value

    @validator("w", "h", "x_stride", "v_stride")
    def check_pixels(cls, value, field):
        if value <= 0:
            raise ValueError(f"{field.name} must be a positive integer, got {value}")
        return value

    @root_validator(skip_on_failure=True)
    def check_limits(cls, values):
        v_min, v_max = values["v_min"], values["v_max"]
        if (v_min is None) != (v_max is None):
            raise ValueError("v_min and v_max must be given together")
        if v_min is not None:
            _finite(v_min, "v_min")
            _finite(v_max, "v_max")
            if not v_min <= values["v_anchor"] <= v_max:
                raise ValueError(
                    f"v_anchor {values['v_anchor']} outside [{v_min}, {v_max}]"
                )
        return values


class WindowPlan(FrozenModel):
    bands: list[WindowBand]
    params: CameraParams

    @validator("bands")
    def check_bands(cls, bands):
        for near, far in zip(bands, bands[1:]):
            if not far.d > near.d:
                raise ValueError(
                    f"band distances must be strictly increasing: {near.d} then {far.d}"
                )
            if far.w > near.w or far.h > near.h:
                raise ValueError(
                    f"window sizes must not grow with distance: "
                    f"{near.w}x{near.h} at {near.d} m, {far.w}x{far.h} at {far.d} m"
                )
        return bands


class Detection(FrozenModel):
    box: tuple[float, float, float, float]  # x, y, w, h in pixels
    score: float
    distance: Optional[float] = None  # meters, from the box bottom row
    window_index: int = 0  # position in the scan's window order

    @validator("score")
    def check_score(cls, value):
        return _finite(value, "score")

    @property
    def bottom(self):
        return self.box[1] + self.box[3]


class GroundTruth(FrozenModel):
    box: tuple[float, float, float, float]
    distance: float

    @validator("distance")
    def check_distance(cls, value):
        return _positive(value, "distance")


class WarningLevel(IntEnum):
    NONE = 0
    CAUTION = 1
    ALERT = 2


class FcwConfig(FrozenModel):
    d_alert: float = config.D_ALERT
    d_caution: float = config.D_CAUTION
    headway_alert: float = config.HEADWAY_ALERT
    smoothing: float = config.SMOOTHING
    reset_after: float = config.RESET_AFTER
    corridor_frac: float = config.CORRIDOR_FRAC

    @validator("d_alert", "headway_alert", "reset_after")
    def check_positive(cls, value, field):
        return _positive(value, field.name)

    @validator("smoothing", "corridor_frac")
    def check_fraction(cls, value, field):
        if not 0 < value <= 1:
            raise ValueError(f"{field.name} must be in (0, 1], got {value}")
        return value

    @root_validator(skip_on_failure=True)
    def check_thresholds(cls, values):
        if not values["d_alert"] < values["d_caution"]:
            raise ValueError("d_alert must be smaller than d_caution")
        return values


class TrackState(FrozenModel):
    last_d: Optional[float] = None
    closing_speed: float = 0.0  # m/s, positive when approaching
    unobserved: float = 0.0  # seconds since the last observation

    @validator("last_d")
    def check_last_d(cls, value):
        if value is not None:
            _finite(value, "last_d")
        return value

    @validator("closing_speed", "unobserved")
    def check_finite(cls, value, field):
        return _finite(value, field.name)


class Vehicle(FrozenModel):
    d: float
    lateral: float = 0.0
    real_w: float = 1.8
    real_h: float = 1.5
    shade: int = 60

    @validator("d", "real_w", "real_h")
    def check_positive(cls, value, field):
        return _positive(value, field.name)

    @validator("shade")
    def check_shade(cls, value):
        if not 0 <= value <= 255:
            raise ValueError(f"shade must be 8-bit, got {value}")
        return value


class SceneSpec(FrozenModel):
    params: CameraParams
    vehicles: list[Vehicle] = []
    background: int = 110
    seed: int = 0

    @validator("background")
    def check_background(cls, value):
        if not 0 <= value <= 255:
            raise ValueError(f"background must be 8-bit, got {value}")
        return value


class DistanceError(FrozenModel):
    d_true: float
    d_est: float
    e_star: float  # meters
    e_rel: float  # fraction of d_true


class MetricsReport(FrozenModel):
    detection_rate: float
    fppi: float
    matched: int
    total_gt: int
    false_positives: int
    n_images: int
    errors: list[DistanceError] = []


class QuantizationRow(FrozenModel):
    d: float
    mean_estimate: float
    mean_e_star: float
    mean_e_rel: float
    resolution: float  # meters per pixel row at d
    trials: int
    excluded: int = 0


class Config(FrozenModel):
    """Knobs for a CLI run. Defaults follow monofcw.config."""

    calibration: Optional[Path] = None
    plan: Optional[Path] = None
    classifier: Optional[Path] = None
    annotations: Optional[Path] = None

    d_min: float = config.D_MIN
    d_max: float = config.D_MAX
    bins_per_octave: int = config.BINS_PER_OCTAVE
    v_tol_frac: float = config.V_TOL_FRAC
    stride_frac: float = config.STRIDE_FRAC

    rounds: int = config.ROUNDS
    depth: int = config.DEPTH
    score_min: float = config.SCORE_MIN
    cascade_margin: float = config.CASCADE_MARGIN
    iou: float = config.DETECT_IOU_MAX

    fcw: FcwConfig = FcwConfig()
    seed: int = config.SEED

    @validator("d_min", "d_max")
    def check_distance(cls, value, field):
        return _positive(value, field.name)

    @validator("bins_per_octave", "rounds")
    def check_count(cls, value, field):
        if value < 1:
            raise ValueError(f"{field.name} must be >= 1, got {value}")
        return value

    @validator("stride_frac")
    def check_stride(cls, value):
        if not 0 < value <= 1:
            raise ValueError(f"stride_frac must be in (0, 1], got {value}")
        return value

    @validator("v_tol_frac")
    def check_tolerance(cls, value):
        if not 0 <= value <= 1:
            raise ValueError(f"v_tol_frac must be in [0, 1], got {value}")
        return value

    @validator("depth")
    def check_depth(cls, value):
        if value not in (1, 2):
            raise ValueError(f"depth must be 1 or 2, got {value}")
        return value

    @validator("iou")
    def check_iou(cls, value):
        if not 0 <= value <= 1:
            raise ValueError(f"iou must be in [0, 1], got {value}")
        return value

    @validator("cascade_margin")
    def check_margin(cls, value):
        if math.isnan(value):
            raise ValueError("cascade_margin must not be NaN")
        return value

    @root_validator(skip_on_failure=True)
    def check_range(cls, values):
        if not values["d_min"] <= values["d_max"]:
            raise ValueError("d_min must not exceed d_max")
        return values


class RowList(BaseModel):
    rows: list[float]


class DistanceList(BaseModel):
    distances: list[float]


class FcwRequest(BaseModel):
    state: TrackState = TrackState()
    distance: Optional[float] = None  # None when no lead vehicle was seen
    dt: float = config.FRAME_DT
    config: FcwConfig = FcwConfig()

    @validator("dt")
    def check_dt(cls, value):
        return _positive(value, "dt")


class FcwResponse(BaseModel):
    state: TrackState
    level: str
    time_to_contact: Optional[float] = None  # seconds, None when not closing
