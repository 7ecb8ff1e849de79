"""Ground-plane pinhole geometry.

Image rows grow downwards and a ground point ahead of the camera images below
the horizon row. Under that convention

    d(v) = h / tan(alpha + arctan((v - v0) / f_y))
    v(d) = v0 + f_y * tan(arctan(h / d) - alpha)

Distances are measured along the ground from the foot of the camera. Every
function takes a float or a numpy array; arrays are converted element-wise and
an error is raised if any element leaves the valid domain.
"""
import math

import numpy as np


class GeometryError(ValueError):
    pass


class AtOrAboveHorizon(GeometryError):
    """The row images the horizon, the sky, or a point behind the camera."""


class AngleOverflow(GeometryError):
    """The row images a point at or behind the vertical under the camera."""


def _result(value):
    if np.ndim(value) == 0:
        return float(value)
    return value


def horizon_row(params):
    return params.v0 - params.f_y * math.tan(params.alpha)


def distance_from_row(params, v):
    v = np.asarray(v, dtype=float)
    horizon = horizon_row(params)
    # angle below horizontal of the ray through row v
    angle = params.alpha + np.arctan((v - params.v0) / params.f_y)
    # compare rows too: at the horizon row the angle sum can round to +1 ulp
    above = ~(v > horizon) | ~(angle > 0)
    if np.any(above):
        raise AtOrAboveHorizon(
            f"row {_describe(v, above)} is at or above the horizon ({horizon:.6f})"
        )
    if np.any(angle >= math.pi / 2):
        raise AngleOverflow(
            f"row {_describe(v, angle >= math.pi / 2)} images a point under the camera"
        )
    return _result(params.h / np.tan(angle))


def row_from_distance(params, d):
    """Row of a ground point at distance d. The row may fall outside the image."""
    d = np.asarray(d, dtype=float)
    if np.any(~(d > 0)):
        raise GeometryError(f"distance must be > 0, got {_describe(d, ~(d > 0))}")
    return _result(
        params.v0 + params.f_y * np.tan(np.arctan(params.h / d) - params.alpha)
    )


def row_sensitivity(params, d):
    """Meters of distance per pixel of row at distance d, i.e. |dd/dv|."""
    v = np.asarray(row_from_distance(params, d), dtype=float)
    x = (v - params.v0) / params.f_y
    angle = params.alpha + np.arctan(x)
    return _result(params.h / (params.f_y * np.sin(angle) ** 2 * (1 + x * x)))


def lateral_from_pixel(params, u, d):
    """Lateral ground offset of column u at distance d.

    Assumes square pixels (f_x = f_y) and the principal point in the middle
    column, the same model the synthetic renderer projects with.
    """
    u = np.asarray(u, dtype=float)
    return _result((u - params.image_w / 2) * np.asarray(d, dtype=float) / params.f_y)


def _describe(values, mask):
    values = np.asarray(values, dtype=float)
    if values.ndim == 0:
        return f"{float(values)!r}"
    bad = values[np.broadcast_to(mask, values.shape)]
    first = float(bad[0])
    return f"{first!r} (and {bad.size - 1} more)" if bad.size > 1 else f"{first!r}"
