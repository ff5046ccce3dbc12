"""Gaussian keypoint heatmaps: encoding, peak decoding, and L2 loss.

Cell (col, row) of a heatmap with stride s covers input pixel
(col*s, row*s); values are exp(-d^2 / (2*sigma^2)) of the pixel distance d
from the cell to the keypoint. Decoding returns the argmax cell with an
optional quarter-cell shift toward the larger neighbor on each axis.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class HeatmapError(Exception):
    pass


@dataclass
class Heatmap:
    width: int
    height: int
    stride: float  # input pixels per cell
    values: np.ndarray  # (height, width) float64 in [0, 1]
    truncated: bool = False  # keypoint fell outside the grid when encoding

    def __post_init__(self):
        if self.values.shape != (self.height, self.width):
            raise HeatmapError(
                f"value block {self.values.shape} does not match "
                f"{(self.height, self.width)}"
            )
        if not np.all(np.isfinite(self.values)):
            raise HeatmapError("heatmap values must be finite")


@dataclass(frozen=True)
class DecodedPeak:
    x: float
    y: float
    confidence: float
    degenerate: bool = False  # all-equal map, position is arbitrary


def encode(keypoint, sigma: float, grid) -> Heatmap:
    """Render a keypoint (x, y in px) as a Gaussian heatmap on (w, h, stride).

    A keypoint outside the grid still produces its (truncated) tail and the
    result is flagged.
    """
    if sigma <= 0:
        raise HeatmapError(f"sigma must be positive: {sigma}")
    width, height, stride = grid
    kx, ky = keypoint
    xs = np.arange(width, dtype=np.float64) * stride
    ys = np.arange(height, dtype=np.float64) * stride
    d2 = (xs[None, :] - kx) ** 2 + (ys[:, None] - ky) ** 2
    values = np.exp(-d2 / (2.0 * sigma * sigma))
    outside = not (0.0 <= kx <= (width - 1) * stride and 0.0 <= ky <= (height - 1) * stride)
    return Heatmap(
        width=width, height=height, stride=stride, values=values, truncated=outside
    )


def decode(heatmap: Heatmap, refine: bool = True) -> DecodedPeak:
    """Locate the heatmap peak in input-pixel coordinates.

    Ties go to the lowest (row, col) cell. With `refine`, the peak shifts a
    quarter cell toward the larger neighbor per axis. A constant map returns
    the center cell flagged degenerate.
    """
    values = heatmap.values
    if values.size == 0:
        raise HeatmapError("empty heatmap")
    if float(values.max()) == float(values.min()):
        row = (heatmap.height - 1) // 2
        col = (heatmap.width - 1) // 2
        return DecodedPeak(
            x=col * heatmap.stride,
            y=row * heatmap.stride,
            confidence=float(values[row, col]),
            degenerate=True,
        )
    flat = int(np.argmax(values))
    row, col = divmod(flat, heatmap.width)
    x = float(col)
    y = float(row)
    if refine:
        if 0 < col < heatmap.width - 1:
            x += 0.25 * np.sign(values[row, col + 1] - values[row, col - 1])
        if 0 < row < heatmap.height - 1:
            y += 0.25 * np.sign(values[row + 1, col] - values[row - 1, col])
    return DecodedPeak(
        x=x * heatmap.stride,
        y=y * heatmap.stride,
        confidence=float(values[row, col]),
    )


def l2_loss(predicted: Heatmap, target: Heatmap) -> float:
    """Mean squared cell difference between two equally shaped heatmaps."""
    if (predicted.width, predicted.height) != (target.width, target.height):
        raise HeatmapError(
            f"heatmap shapes differ: {(predicted.width, predicted.height)} "
            f"vs {(target.width, target.height)}"
        )
    diff = predicted.values - target.values
    return float(np.mean(diff * diff))


_HEADER = struct.Struct("<IId")  # width, height, stride


def write_heatmap(heatmap: Heatmap, path) -> None:
    """Serialize as a small header plus the flat float64 value array."""
    payload = _HEADER.pack(heatmap.width, heatmap.height, heatmap.stride)
    payload += heatmap.values.astype("<f8").tobytes()
    Path(path).write_bytes(payload)


def read_heatmap(path) -> Heatmap:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise HeatmapError(f"{path}: truncated header")
    width, height, stride = _HEADER.unpack_from(raw)
    expected = _HEADER.size + width * height * 8
    if len(raw) != expected:
        raise HeatmapError(f"{path}: expected {expected} bytes, got {len(raw)}")
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(
        (height, width)
    )
    return Heatmap(width=width, height=height, stride=stride, values=values.copy())
