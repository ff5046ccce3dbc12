"""Adapter configuration: which model family serves which task, and how."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path


class AdapterError(Exception):
    """The adapter cannot serve the request as configured."""


# family -> (tasks it serves, whether a weights file is mandatory)
FAMILIES = {
    "stub": ({"upscale", "detect", "keypoints"}, False),
    "esrgan": ({"upscale"}, True),
    "usrnet": ({"upscale"}, True),
    "detector": ({"detect"}, True),
    "keypoints": ({"keypoints"}, True),
}


@dataclass(frozen=True)
class AdapterConfig:
    family: str
    weights: Path | None = None
    device: str = "cpu"
    batch_size: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise AdapterError(
                f"unknown model family {self.family!r}; "
                f"choose from {sorted(FAMILIES)}"
            )
        if self.batch_size < 1:
            raise AdapterError(f"batch size must be >= 1: {self.batch_size}")
        tasks, needs_weights = FAMILIES[self.family]
        if needs_weights:
            if self.weights is None:
                raise AdapterError(f"family {self.family!r} requires --weights")
            if not Path(self.weights).is_file():
                raise AdapterError(f"weights file not found: {self.weights}")

    def supports(self, task: str) -> bool:
        return task in FAMILIES[self.family][0]
