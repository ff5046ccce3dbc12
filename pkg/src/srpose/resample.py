"""Bicubic resampling, PSNR, and low-resolution dataset construction.

The resampler is a separable cubic convolution (Catmull-Rom when a=-0.5)
evaluated directly on stored 8-bit code values, with center-aligned source
mapping and edge-clamped addressing. It doubles as the built-in "bicubic"
super-resolution baseline.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import coco
from .coco import Dataset, scale_annotations, scaled_dimension

logger = logging.getLogger(__name__)


class ResampleError(Exception):
    """Raised for malformed raster inputs."""


@dataclass
class RasterImage:
    width: int
    height: int
    channels: int
    samples: np.ndarray  # uint8, shape (height, width, channels), row-major

    def __post_init__(self):
        expected = (self.height, self.width, self.channels)
        if self.samples.shape != expected:
            raise ResampleError(
                f"sample block {self.samples.shape} does not match {expected}"
            )
        if self.channels not in (1, 3):
            raise ResampleError(f"channels must be 1 or 3, got {self.channels}")
        if self.samples.dtype != np.uint8:
            raise ResampleError(f"samples must be uint8, got {self.samples.dtype}")

    @classmethod
    def from_array(cls, array: np.ndarray) -> "RasterImage":
        arr = np.asarray(array, dtype=np.uint8)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        h, w, c = arr.shape
        return cls(width=w, height=h, channels=c, samples=arr)


@dataclass(frozen=True)
class ResampleSpec:
    factor: float
    kernel_a: float = -0.5

    def __post_init__(self):
        if not (math.isfinite(self.factor) and self.factor > 0):
            raise ResampleError(f"factor must be finite and positive: {self.factor}")


def cubic_kernel(t, a: float = -0.5):
    """Cubic convolution weight for (possibly array) offsets t."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    out = np.zeros_like(t)
    near = t <= 1.0
    far = (t > 1.0) & (t < 2.0)
    tn = t[near]
    tf = t[far]
    out[near] = (a + 2.0) * tn**3 - (a + 3.0) * tn**2 + 1.0
    out[far] = a * tf**3 - 5.0 * a * tf**2 + 8.0 * a * tf - 4.0 * a
    return out


def _axis_matrix(n_out: int, n_in: int, factor: float, a: float) -> np.ndarray:
    """Dense (n_out, n_in) cubic-convolution weight matrix for one axis.

    Source positions use the center-aligned mapping src = (dst+0.5)/factor-0.5
    and the four taps are edge-clamped, so clamped duplicates accumulate.
    """
    dst = np.arange(n_out, dtype=np.float64)
    src = (dst + 0.5) / factor - 0.5
    base = np.floor(src).astype(np.int64)
    frac = src - base
    # Taps at base-1 .. base+2 sit at kernel offsets frac+1, frac, frac-1, frac-2.
    offsets = frac[:, None] + np.array([1.0, 0.0, -1.0, -2.0])[None, :]
    weights = cubic_kernel(offsets, a)
    indices = np.clip(base[:, None] + np.array([-1, 0, 1, 2])[None, :], 0, n_in - 1)
    matrix = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.repeat(np.arange(n_out), 4)
    np.add.at(matrix, (rows, indices.ravel()), weights.ravel())
    return matrix


def resample(image: RasterImage, spec: ResampleSpec) -> RasterImage:
    """Resample an image by spec.factor with 4x4 cubic convolution."""
    out_w = scaled_dimension(image.width, spec.factor)
    out_h = scaled_dimension(image.height, spec.factor)
    wx = _axis_matrix(out_w, image.width, spec.factor, spec.kernel_a)
    wy = _axis_matrix(out_h, image.height, spec.factor, spec.kernel_a)
    src = image.samples.astype(np.float64)
    full = np.einsum("oh,hwc,pw->opc", wy, src, wx, optimize=True)
    samples = np.floor(np.clip(full, 0.0, 255.0) + 0.5).astype(np.uint8)
    return RasterImage(width=out_w, height=out_h, channels=image.channels, samples=samples)


def psnr(a: RasterImage, b: RasterImage) -> float:
    """Peak signal-to-noise ratio in dB; inf when the images are identical."""
    if (a.width, a.height, a.channels) != (b.width, b.height, b.channels):
        raise ResampleError(
            f"image shapes differ: {(a.width, a.height, a.channels)} "
            f"vs {(b.width, b.height, b.channels)}"
        )
    diff = a.samples.astype(np.float64) - b.samples.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return float("inf")
    return 10.0 * math.log10(255.0**2 / mse)


def load_image(path) -> RasterImage:
    from PIL import Image

    with Image.open(path) as img:
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB")
        arr = np.asarray(img, dtype=np.uint8)
    return RasterImage.from_array(arr)


def save_png(image: RasterImage, path) -> None:
    from PIL import Image

    arr = image.samples
    if image.channels == 1:
        arr = arr[:, :, 0]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path, format="PNG")


@dataclass
class LrBuildResult:
    dataset: Dataset
    manifest: dict
    failures: list = field(default_factory=list)


def build_lr_dataset(
    dataset: Dataset,
    images_dir,
    factor: float,
    out_dir,
    kernel_a: float = -0.5,
    workers: int | None = None,
) -> LrBuildResult:
    """Resample every dataset image by `factor` and rescale the annotations.

    Writes scaled images as PNG under out_dir/images, the scaled annotation
    file, and a manifest mapping image id -> output path and dimensions.
    Per-image read failures are recorded and skipped.
    """
    if not (0 < factor <= 1):
        raise ValueError(f"downsampling factor must be in (0, 1], got {factor}")
    images_dir = Path(images_dir)
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    spec = ResampleSpec(factor=factor, kernel_a=kernel_a)

    def process(img: coco.ImageRecord):
        src_path = images_dir / img.file_name
        out_name = Path(img.file_name).stem + ".png"
        out_path = out_dir / "images" / out_name
        raster = load_image(src_path)
        if (raster.width, raster.height) != (img.width, img.height):
            raise ResampleError(
                f"image {img.id}: file is {raster.width}x{raster.height}, "
                f"annotations say {img.width}x{img.height}"
            )
        scaled = resample(raster, spec)
        save_png(scaled, out_path)
        return img.id, out_name, scaled.width, scaled.height

    manifest = {}
    failures = []
    max_workers = workers or min(8, len(dataset.images) or 1)
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = {pool.submit(process, img): img for img in dataset.images}
        for future, img in futures.items():
            try:
                image_id, out_name, w, h = future.result()
            except Exception as exc:  # per-image failure, run continues
                logger.warning("image %s failed: %s", img.id, exc)
                failures.append({"image_id": img.id, "error": str(exc)})
                continue
            manifest[image_id] = {
                "path": f"images/{out_name}",
                "width": w,
                "height": h,
                "factor": factor,
            }

    scaled_dataset = scale_annotations(dataset, factor)
    scaled_dataset = Dataset(
        images=tuple(
            coco.ImageRecord(
                id=img.id,
                width=img.width,
                height=img.height,
                file_name=manifest[img.id]["path"]
                if img.id in manifest
                else img.file_name,
            )
            for img in scaled_dataset.images
        ),
        annotations=scaled_dataset.annotations,
    )
    coco.write_dataset(scaled_dataset, out_dir / "annotations.json")
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8"
    )
    if failures:
        logger.warning(
            "%d of %d images failed to resample", len(failures), len(dataset.images)
        )
    return LrBuildResult(dataset=scaled_dataset, manifest=manifest, failures=failures)
