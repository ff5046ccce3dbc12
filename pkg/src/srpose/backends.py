"""Model backend interfaces and the subprocess protocol client.

Backends exchange data exclusively through files: image directories where
every file is named `<image_id>.<ext>`, and COCO results JSON for boxes and
keypoints. External executables are invoked as

    <exe> --task {upscale|detect|keypoints} --input <path> --output <path>
          [--scale r] [--boxes <file>]

with exit code 0 on success; any other exit code is a backend failure and
stderr carries the diagnostic. `upscale` writes one output image per input
image, mirroring filenames. `detect` writes scored boxes (with per-detection
mask "area" when the model segments). `keypoints` reads `--boxes` and writes
one keypoint record per input box, preserving per-image box order.
"""

from __future__ import annotations

import abc
import shutil
import subprocess
from pathlib import Path

from . import resample

DEFAULT_TIMEOUT = 600.0  # seconds per backend invocation

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


class BackendError(Exception):
    """An external or builtin backend failed to produce usable output."""


def image_files(directory) -> list:
    """Image files in a directory, sorted by name."""
    return sorted(
        p
        for p in Path(directory).iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )


def image_id_of(path) -> int:
    """Recover the image id encoded in a staged image filename."""
    stem = Path(path).stem
    try:
        return int(stem)
    except ValueError:
        raise BackendError(f"image filename does not encode an id: {path}")


def stage_images(image_paths, out_dir) -> dict:
    """Copy images into a directory under the `<image_id>.<ext>` convention.

    `image_paths` maps image id -> source path. Returns id -> staged path.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    staged = {}
    for image_id, src in sorted(image_paths.items()):
        src = Path(src)
        if not src.exists():
            raise BackendError(f"missing input image for id {image_id}: {src}")
        dst = out_dir / f"{image_id}{src.suffix.lower()}"
        shutil.copyfile(src, dst)
        staged[image_id] = dst
    return staged


def list_staged(directory) -> dict:
    """Map image id -> path for every image file in a staged directory."""
    return {image_id_of(path): path for path in image_files(directory)}


class UpscaleBackend(abc.ABC):
    """Writes an upscaled copy of every image in a directory."""

    name = "upscale"
    version = "unknown"

    @abc.abstractmethod
    def upscale(self, in_dir, out_dir, scale: int) -> None:
        raise NotImplementedError


class DetectBackend(abc.ABC):
    """Writes scored person boxes for a directory of images."""

    name = "detect"
    version = "unknown"

    @abc.abstractmethod
    def detect(self, in_dir, out_file) -> None:
        raise NotImplementedError


class KeypointBackend(abc.ABC):
    """Writes keypoint records for given boxes on a directory of images."""

    name = "keypoints"
    version = "unknown"

    @abc.abstractmethod
    def keypoints(self, in_dir, out_file, boxes_file) -> None:
        raise NotImplementedError


class BicubicUpscaler(UpscaleBackend):
    """Builtin analytic upscaler; the no-model baseline."""

    name = "builtin-bicubic"

    def __init__(self):
        from . import __version__

        self.version = __version__

    def upscale(self, in_dir, out_dir, scale: int) -> None:
        if scale < 1:
            raise BackendError(f"upscale factor must be >= 1: {scale}")
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        spec = resample.ResampleSpec(factor=float(scale))
        for src in image_files(in_dir):
            dst = out_dir / (src.stem + ".png")
            if scale == 1 and src.suffix.lower() == ".png":
                shutil.copyfile(src, dst)
                continue
            resample.save_png(resample.resample(resample.load_image(src), spec), dst)


class SubprocessBackend(UpscaleBackend, DetectBackend, KeypointBackend):
    """Client for executables speaking the file protocol above.

    `command` is the argv prefix, e.g. ["python3", "adapter.py"] or a single
    executable path. One instance can serve any of the three tasks; which
    tasks the executable actually supports is its own business.
    """

    def __init__(self, command, name=None, version="unknown", timeout=DEFAULT_TIMEOUT):
        if isinstance(command, (str, Path)):
            command = [str(command)]
        if not command:
            raise BackendError("backend command must not be empty")
        self.command = [str(part) for part in command]
        self.name = name if name is not None else Path(self.command[0]).name
        self.version = version
        self.timeout = timeout

    def _run(self, task: str, args) -> None:
        argv = self.command + ["--task", task] + [str(a) for a in args]
        try:
            proc = subprocess.run(
                argv, capture_output=True, text=True, timeout=self.timeout
            )
        except OSError as exc:
            raise BackendError(f"{self.name}: cannot launch {argv[0]}: {exc}") from exc
        except subprocess.TimeoutExpired as exc:
            raise BackendError(
                f"{self.name}: {task} timed out after {self.timeout:.0f}s"
            ) from exc
        if proc.returncode != 0:
            detail = proc.stderr.strip() or "(no stderr)"
            raise BackendError(
                f"{self.name}: {task} exited {proc.returncode}: {detail}"
            )

    def upscale(self, in_dir, out_dir, scale: int) -> None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        self._run(
            "upscale",
            ["--input", in_dir, "--output", out_dir, "--scale", scale],
        )
        produced = {p.stem for p in image_files(out_dir)}
        for src in image_files(in_dir):
            if src.stem not in produced:
                raise BackendError(
                    f"{self.name}: upscale produced no output for {src.name}"
                )

    def detect(self, in_dir, out_file) -> None:
        self._run("detect", ["--input", in_dir, "--output", out_file])
        if not Path(out_file).exists():
            raise BackendError(f"{self.name}: detect wrote no output file")

    def keypoints(self, in_dir, out_file, boxes_file) -> None:
        self._run(
            "keypoints",
            ["--input", in_dir, "--output", out_file, "--boxes", boxes_file],
        )
        if not Path(out_file).exists():
            raise BackendError(f"{self.name}: keypoints wrote no output file")
