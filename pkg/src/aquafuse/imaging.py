"""Pixel buffer types and the channel-space / smoothing primitives.

Everything downstream works on normalized linear intensities in [0, 1].
8-bit sources are divided by 255 with no gamma linearization by default;
``srgb_to_linear`` is available for callers that want a linear pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionMismatchError, ParameterError

MIN_DIMENSION = 8  # floor for the SSIM window and corner-region fallbacks

_FLOAT_SLACK = 4e-7  # tolerated overshoot from float32 round-trips


def _check_unit_range(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise ParameterError(f"{what} contains non-finite values")
    lo = float(arr.min()) if arr.size else 0.0
    hi = float(arr.max()) if arr.size else 0.0
    if lo < -_FLOAT_SLACK or hi > 1.0 + _FLOAT_SLACK:
        raise ParameterError(f"{what} values must lie in [0, 1], got [{lo:g}, {hi:g}]")


@dataclass(frozen=True, eq=False)
class Image:
    """H x W x 3 buffer of RGB intensities in [0, 1].

    Treat instances as immutable; operations always allocate new buffers.
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ParameterError(f"image must be (H, W, 3), got {arr.shape}")
        if arr.shape[0] < MIN_DIMENSION or arr.shape[1] < MIN_DIMENSION:
            raise ParameterError(
                f"image must be at least {MIN_DIMENSION}x{MIN_DIMENSION}, got "
                f"{arr.shape[0]}x{arr.shape[1]}"
            )
        if not np.issubdtype(arr.dtype, np.floating):
            raise ParameterError("image data must be floating point")
        _check_unit_range(arr, "image")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[:2]

    def channel(self, index: int) -> np.ndarray:
        return self.data[:, :, index]

    @classmethod
    def from_array(cls, arr: np.ndarray, clip: bool = False) -> "Image":
        """Build an Image, optionally clipping stray values into [0, 1]."""
        arr = np.asarray(arr)
        if np.issubdtype(arr.dtype, np.integer):
            arr = arr.astype(np.float32) / float(np.iinfo(arr.dtype).max)
        if clip:
            arr = np.clip(arr, 0.0, 1.0)
        return cls(arr)


@dataclass(frozen=True, eq=False)
class DepthMap:
    """H x W buffer of relative scene depth in [0, 1] (0 = nearest)."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.values)
        if arr.ndim != 2:
            raise ParameterError(f"depth map must be 2-D, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.floating):
            raise ParameterError("depth values must be floating point")
        _check_unit_range(arr, "depth")
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def require_same_shape(image: Image, depth: DepthMap) -> None:
    if image.shape != depth.shape:
        raise DimensionMismatchError(
            f"image is {image.shape}, depth map is {depth.shape}"
        )


@dataclass(frozen=True, eq=False)
class RmiPlanes:
    """Channel decomposition {R, M = max(G, B), I = mean(R, G, B)}.

    Red attenuates fastest under water, so the spread between the R plane and
    the blue/green envelope M carries most of the usable depth signal.
    """

    r_plane: np.ndarray
    m_plane: np.ndarray
    i_plane: np.ndarray

    def __post_init__(self) -> None:
        if not (self.r_plane.shape == self.m_plane.shape == self.i_plane.shape):
            raise DimensionMismatchError("RMI planes must share dimensions")


def to_rmi(image: Image) -> RmiPlanes:
    """Decompose an image into its R / max(G,B) / intensity planes."""
    data = image.data
    r = data[:, :, 0]
    m = np.maximum(data[:, :, 1], data[:, :, 2])
    i = data.mean(axis=2)
    return RmiPlanes(r_plane=r, m_plane=m, i_plane=i)


def _median_filter(values: np.ndarray, kernel: int, chunk_rows: int = 64) -> np.ndarray:
    """Exact kernel x kernel median with edge replication, row-chunked."""
    radius = kernel // 2
    mid = (kernel * kernel) // 2
    padded = np.pad(values, radius, mode="edge")
    out = np.empty_like(values)
    height = values.shape[0]
    for row0 in range(0, height, chunk_rows):
        row1 = min(row0 + chunk_rows, height)
        windows = sliding_window_view(padded[row0 : row1 + 2 * radius], (kernel, kernel))
        flat = windows.reshape(windows.shape[0], windows.shape[1], kernel * kernel)
        part = np.partition(flat, mid, axis=2)
        out[row0:row1] = part[..., mid]
    return out


def median_blur(depth: DepthMap, kernel: int) -> DepthMap:
    """Median-filter a depth map; borders are handled by edge replication.

    The kernel must be odd and no larger than the smaller map dimension.
    The output range is always a subset of the input range.
    """
    if kernel < 1 or kernel % 2 == 0:
        raise ParameterError(f"median kernel must be odd and >= 1, got {kernel}")
    if kernel > min(depth.shape):
        raise ParameterError(
            f"median kernel {kernel} exceeds map dimensions {depth.shape}"
        )
    if kernel == 1:
        return depth
    return DepthMap(_median_filter(depth.values, kernel))


def srgb_to_linear(image: Image) -> Image:
    """Apply the sRGB electro-optical transfer function."""
    x = image.data
    out = np.where(x <= 0.04045, x / 12.92, ((x + 0.055) / 1.055) ** 2.4)
    return Image(np.clip(out, 0.0, 1.0).astype(x.dtype))


def linear_to_srgb(image: Image) -> Image:
    """Inverse of :func:`srgb_to_linear`."""
    x = image.data
    out = np.where(x <= 0.0031308, x * 12.92, 1.055 * np.maximum(x, 0.0) ** (1 / 2.4) - 0.055)
    return Image(np.clip(out, 0.0, 1.0).astype(x.dtype))
