"""Aggregated channel features.

Ten channels per cell: L, U, V colour, gradient magnitude, and six unsigned
gradient orientation bins. Each channel is sum-pooled over shrink x shrink
pixel cells and lightly smoothed across cells, so a feature is a single cell
lookup.
"""
import math
from dataclasses import dataclass

import cv2
import numpy as np

from monofcw import config


N_COLOUR = 3
N_CHANNELS = N_COLOUR + 1 + config.N_ORIENTATIONS
MAGNITUDE = N_COLOUR
ORIENTATION = N_COLOUR + 1
# separable cell smoothing applied after pooling
SMOOTHING_KERNEL = np.array([1.0, 2.0, 1.0]) / 4.0


class ChannelError(ValueError):
    pass


class ImageTooSmall(ChannelError):
    pass


@dataclass(frozen=True)
class ChannelStack:
    data: np.ndarray  # (N_CHANNELS, height, width) cell sums
    shrink: int = config.SHRINK

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    def features(self):
        """Flattened features, indexed channel, then cell row, then cell column."""
        return self.data.ravel()


def _luv(image):
    # float input gives L in [0, 100], u in [-134, 220], v in [-140, 122]
    luv = cv2.cvtColor(image.astype(np.float32) / 255.0, cv2.COLOR_RGB2Luv)
    luv = luv.astype(np.float64)
    return (
        luv[..., 0] / 100.0,
        (luv[..., 1] + 134.0) / 354.0,
        (luv[..., 2] + 140.0) / 262.0,
    )


def gradient(plane):
    """Central difference gradient (one sided at the borders): (magnitude, angle).

    The angle is unsigned, folded into [0, pi).
    """
    gy, gx = np.gradient(plane)
    magnitude = np.hypot(gx, gy)
    angle = np.mod(np.arctan2(gy, gx), math.pi)
    return magnitude, angle


def orientation_histogram(magnitude, angle, n_bins=config.N_ORIENTATIONS):
    """Split each pixel's magnitude linearly between its two nearest bin centres.

    Bin k is centred on k * pi / n_bins, so the planes sum back to magnitude.
    """
    position = angle / (math.pi / n_bins)
    lower = np.floor(position)
    upper_share = position - lower
    lower = lower.astype(int) % n_bins
    upper = (lower + 1) % n_bins

    planes = np.zeros((n_bins,) + magnitude.shape)
    for k in range(n_bins):
        planes[k] += np.where(lower == k, (1.0 - upper_share) * magnitude, 0.0)
        planes[k] += np.where(upper == k, upper_share * magnitude, 0.0)
    return planes


def pool(plane, shrink):
    rows, cols = plane.shape[0] // shrink, plane.shape[1] // shrink
    return plane.reshape(rows, shrink, cols, shrink).sum(axis=(1, 3))


def smooth(plane):
    """[1 2 1] / 4 filter along both axes, edges reflected."""
    return cv2.sepFilter2D(
        plane,
        -1,
        SMOOTHING_KERNEL,
        SMOOTHING_KERNEL,
        borderType=cv2.BORDER_REFLECT,
    )


def compute_channels(
    image, shrink=config.SHRINK, normalize_gradient=False, smoothing=True
):
    """Channel stack of an H x W x 3 8-bit RGB image.

    Cells are floor(H / shrink) x floor(W / shrink); pixels beyond the last
    full cell are ignored. With normalize_gradient the magnitude is divided by
    its local box average plus GRADIENT_NORM_CONST. With smoothing every pooled
    plane goes through smooth.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ChannelError(f"expected an H x W x 3 image, got shape {image.shape}")
    if image.dtype != np.uint8:
        raise ChannelError(f"expected an 8-bit image, got {image.dtype}")
    height, width = image.shape[:2]
    if height < shrink or width < shrink:
        raise ImageTooSmall(
            f"image {width}x{height} is smaller than one {shrink}x{shrink} cell"
        )

    rows, cols = (height // shrink) * shrink, (width // shrink) * shrink
    image = image[:rows, :cols]

    lightness, u, v = _luv(image)
    magnitude, angle = gradient(lightness)
    if normalize_gradient:
        local = cv2.blur(magnitude, (11, 11), borderType=cv2.BORDER_REFLECT)
        magnitude = magnitude / (local + config.GRADIENT_NORM_CONST)

    planes = [lightness, u, v, magnitude]
    planes.extend(orientation_histogram(magnitude, angle))
    pooled = [pool(p, shrink) for p in planes]
    if smoothing:
        pooled = [smooth(p) for p in pooled]
    return ChannelStack(data=np.stack(pooled), shrink=shrink)
