"""Shared helpers for the adapter test suite."""

from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
from PIL import Image

ADAPTER = (sys.executable, "-m", "srpose_adapters")


def run_adapter(*args):
    """Invoke the adapter executable with string-converted arguments."""
    return subprocess.run(
        [*ADAPTER, *map(str, args)], capture_output=True, text=True, timeout=600
    )


def stage_image(directory: Path, image_id: int, width: int, height: int, seed=20250816):
    """Write a deterministic RGB test image named <image_id>.png."""
    rng = np.random.default_rng(seed + image_id)
    pixels = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
    directory.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels, mode="RGB").save(directory / f"{image_id}.png")
    return pixels


def load_png(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def write_json(path: Path, payload) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path
