"""Shared fixture builders: synthetic datasets, images, and stub backends."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import pytest

from srpose import backends, coco, resample

DEFAULT_SEED = 20250816


def pytest_addoption(parser):
    parser.addoption(
        "--fixture-seed",
        action="store",
        type=int,
        default=DEFAULT_SEED,
        help="seed for randomized fixture generators",
    )


@pytest.fixture
def fixture_seed(request):
    return request.config.getoption("--fixture-seed")


# Deterministic spread of 17 keypoint positions over the unit square,
# shared by dataset builders and the scripted keypoint stubs so a box maps
# to exactly one pose.
KP_U = tuple(((i * 5) % 17 + 0.5) / 17.0 for i in range(17))
KP_V = tuple(((i * 3) % 17 + 0.5) / 17.0 for i in range(17))


def pose_in_box(bbox, visibility=2) -> tuple:
    """The canonical 17-keypoint pose for a box, as a flat 51-tuple."""
    x, y, w, h = bbox
    triples = []
    for u, v in zip(KP_U, KP_V):
        triples.extend((x + u * w, y + v * h, float(visibility)))
    return tuple(triples)


def square_person(
    ann_id,
    image_id,
    cx,
    cy,
    side,
    visibility=2,
    iscrowd=False,
) -> coco.PersonAnnotation:
    """Axis-aligned square person: polygon mask, bbox and area all agree."""
    x = cx - side / 2.0
    y = cy - side / 2.0
    bbox = (x, y, side, side)
    polygon = [x, y, x + side, y, x + side, y + side, x, y + side]
    return coco.PersonAnnotation(
        id=ann_id,
        image_id=image_id,
        keypoints=pose_in_box(bbox, visibility),
        bbox=bbox,
        area=side * side,
        segmentation=[polygon],
        iscrowd=iscrowd,
    )


def make_dataset(images, annotations) -> coco.Dataset:
    return coco.Dataset(images=tuple(images), annotations=tuple(annotations))


def perfect_keypoint_results(dataset, score=0.95) -> list:
    """One keypoint record per person, equal to its ground truth."""
    out = []
    for ann in dataset.annotations:
        if ann.iscrowd:
            continue
        out.append(
            coco.KeypointRecord(
                image_id=ann.image_id, keypoints=ann.keypoints, score=score
            )
        )
    return out


def perfect_detection_results(dataset, score=0.95) -> list:
    out = []
    for ann in dataset.annotations:
        if ann.iscrowd:
            continue
        out.append(
            coco.DetectionRecord(
                image_id=ann.image_id, bbox=ann.bbox, score=score, area=ann.area
            )
        )
    return out


def gradient_image(width, height, channels=3, tilt=0.7) -> resample.RasterImage:
    """Smooth diagonal gradient; detail survives downsampling well."""
    xs = np.linspace(0.0, 255.0, width)[None, :]
    ys = np.linspace(0.0, 255.0, height)[:, None]
    base = (1.0 - tilt) * xs + tilt * ys
    planes = [
        np.clip(base * (1.0 - 0.2 * c) + 20.0 * c, 0.0, 255.0)
        for c in range(channels)
    ]
    samples = np.floor(np.stack(planes, axis=-1) + 0.5).astype(np.uint8)
    return resample.RasterImage.from_array(samples)


def write_image_dir(tmp_path, dataset, width=64, height=64) -> Path:
    """Write one gradient PNG per dataset image under its file_name."""
    images_dir = Path(tmp_path) / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    for img in dataset.images:
        raster = gradient_image(img.width, img.height)
        resample.save_png(raster, images_dir / img.file_name)
    return images_dir


def random_eval_instance(rng, mode):
    """One randomized scoring problem: [(image_id, gts, preds)] by image id.

    Geometry is adversarial on purpose: crowd regions, keypointless people,
    overlapping boxes, duplicated predictions, and heavily tied scores.
    """
    n_images = int(rng.integers(1, 21))
    image_ids = sorted(rng.choice(10_000, size=n_images, replace=False).tolist())
    ann_ids = rng.permutation(10_000)[: 20 * n_images].tolist()
    next_ann = iter(ann_ids)

    images = []
    for image_id in image_ids:
        gts = []
        for _ in range(int(rng.integers(0, 11))):
            side = float(rng.uniform(6.0, 120.0))
            cx = float(rng.uniform(60.0, 400.0))
            cy = float(rng.uniform(60.0, 400.0))
            person = square_person(
                next(next_ann),
                image_id,
                cx,
                cy,
                side,
                iscrowd=bool(rng.random() < 0.15),
            )
            if rng.random() < 0.12:  # keypointless region
                person = coco.PersonAnnotation(
                    id=person.id,
                    image_id=image_id,
                    keypoints=tuple(0.0 for _ in range(51)),
                    bbox=person.bbox,
                    area=person.area,
                    segmentation=person.segmentation,
                    iscrowd=person.iscrowd,
                )
            gts.append(person)

        preds = []
        for _ in range(int(rng.integers(0, 11))):
            score = float(rng.integers(1, 11)) / 10.0  # coarse: many ties
            if gts and rng.random() < 0.75:
                target = gts[int(rng.integers(0, len(gts)))]
                x, y, w, h = target.bbox
                jitter = float(rng.choice([0.02, 0.1, 0.3, 0.8])) * w
                dx = float(rng.normal(0.0, jitter))
                dy = float(rng.normal(0.0, jitter))
                bbox = (x + dx, y + dy, w * float(rng.uniform(0.7, 1.3)), h)
                kps = list(target.keypoints)
                for i in range(17):
                    kps[3 * i] += float(rng.normal(0.0, jitter))
                    kps[3 * i + 1] += float(rng.normal(0.0, jitter))
                    kps[3 * i + 2] = float(rng.uniform(0.1, 1.0))
            else:
                bbox = (
                    float(rng.uniform(0.0, 400.0)),
                    float(rng.uniform(0.0, 400.0)),
                    float(rng.uniform(4.0, 150.0)),
                    float(rng.uniform(4.0, 150.0)),
                )
                kps = []
                for _ in range(17):
                    kps.extend(
                        (
                            float(rng.uniform(0.0, 450.0)),
                            float(rng.uniform(0.0, 450.0)),
                            float(rng.uniform(0.1, 1.0)),
                        )
                    )
            if mode == "detection":
                preds.append(
                    coco.DetectionRecord(image_id=image_id, bbox=bbox, score=score)
                )
            else:
                preds.append(
                    coco.KeypointRecord(
                        image_id=image_id, keypoints=tuple(kps), score=score
                    )
                )
        images.append((image_id, gts, preds))
    return images


# --- in-process stub backends -------------------------------------------------


class NearestUpscaler(backends.UpscaleBackend):
    """Pixel-repeat upscaler; exact inverse of integer subsampling."""

    name = "stub-nearest"
    version = "test"

    def upscale(self, in_dir, out_dir, scale: int) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for src in backends.image_files(in_dir):
            raster = resample.load_image(src)
            grown = np.repeat(np.repeat(raster.samples, scale, 0), scale, 1)
            resample.save_png(
                resample.RasterImage.from_array(grown), out_dir / (src.stem + ".png")
            )


class ScriptedDetector(backends.DetectBackend):
    """Emits a fixed list of detections per image id."""

    name = "stub-detector"
    version = "test"

    def __init__(self, detections_by_image):
        self.detections_by_image = dict(detections_by_image)

    def detect(self, in_dir, out_file) -> None:
        records = []
        for image_id in sorted(backends.list_staged(in_dir)):
            records.extend(self.detections_by_image.get(image_id, []))
        coco.write_results(records, out_file)


class KeypointCall:
    """One keypoint-backend invocation, for call-log assertions."""

    def __init__(self, image_id, image_size, boxes):
        self.image_id = image_id
        self.image_size = image_size  # (width, height) of the image handed in
        self.boxes = boxes  # DetectionRecords from the boxes file


class AffineKeypoints(backends.KeypointBackend):
    """Derives the canonical pose from each box, plus optional noise.

    `noise_fn(box_area) -> displacement in px` perturbs every keypoint by
    that magnitude (fixed per-keypoint directions), modelling a pose
    estimator whose accuracy depends on how large it sees the person.
    """

    name = "stub-keypoints"
    version = "test"

    def __init__(self, noise_fn=None, score=0.9):
        self.noise_fn = noise_fn
        self.score = score
        self.calls = []

    def keypoints(self, in_dir, out_file, boxes_file) -> None:
        staged = backends.list_staged(in_dir)
        boxes = [
            rec
            for rec in coco.parse_results(boxes_file)
            if isinstance(rec, coco.DetectionRecord)
        ]
        for image_id, path in staged.items():
            raster = resample.load_image(path)
            self.calls.append(
                KeypointCall(
                    image_id=image_id,
                    image_size=(raster.width, raster.height),
                    boxes=[b for b in boxes if b.image_id == image_id],
                )
            )
        records = []
        for box in boxes:
            kps = list(pose_in_box(box.bbox, visibility=self.score))
            if self.noise_fn is not None:
                shift = float(self.noise_fn(box.bbox[2] * box.bbox[3]))
                for i in range(17):
                    angle = 2.0 * math.pi * i / 17.0
                    kps[3 * i] += shift * math.cos(angle)
                    kps[3 * i + 1] += shift * math.sin(angle)
            for i in range(17):
                kps[3 * i + 2] = self.score
            records.append(
                coco.KeypointRecord(
                    image_id=box.image_id, keypoints=tuple(kps), score=self.score
                )
            )
        coco.write_results(records, out_file)


class FailingBackend(backends.UpscaleBackend, backends.DetectBackend, backends.KeypointBackend):
    """Raises on every call; exercises failure accounting."""

    name = "stub-failing"
    version = "test"

    def __init__(self, fail_ids=None):
        self.fail_ids = fail_ids  # None = fail always

    def _maybe_fail(self, in_dir):
        if self.fail_ids is None:
            raise backends.BackendError("stub failure")
        for image_id in backends.list_staged(in_dir):
            if image_id in self.fail_ids:
                raise backends.BackendError(f"stub failure for image {image_id}")

    def upscale(self, in_dir, out_dir, scale):
        self._maybe_fail(in_dir)
        NearestUpscaler().upscale(in_dir, out_dir, scale)

    def detect(self, in_dir, out_file):
        self._maybe_fail(in_dir)
        coco.write_results([], out_file)

    def keypoints(self, in_dir, out_file, boxes_file):
        self._maybe_fail(in_dir)
        coco.write_results([], out_file)


# --- subprocess stub adapter ----------------------------------------------------

_ADAPTER_TEMPLATE = '''
import argparse
import json
import sys
from pathlib import Path

SCENARIO = json.loads(Path(__file__).with_suffix(".scenario.json").read_text())

KP_U = {kp_u!r}
KP_V = {kp_v!r}


def image_entries(input_dir):
    out = []
    for p in sorted(Path(input_dir).iterdir()):
        if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp"):
            out.append((int(p.stem), p))
    return out


def do_upscale(args):
    from PIL import Image

    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    for _, path in image_entries(args.input):
        with Image.open(path) as im:
            grown = im.resize((im.width * args.scale, im.height * args.scale), Image.NEAREST)
            grown.save(out_dir / (path.stem + ".png"))


def do_detect(args):
    records = []
    for image_id, _ in image_entries(args.input):
        for det in SCENARIO.get("detections", {{}}).get(str(image_id), []):
            records.append(
                {{
                    "image_id": image_id,
                    "category_id": 1,
                    "bbox": det["bbox"],
                    "area": det["area"],
                    "score": det["score"],
                }}
            )
    Path(args.output).write_text(json.dumps(records))


def do_keypoints(args):
    boxes = json.loads(Path(args.boxes).read_text())
    records = []
    for box in boxes:
        x, y, w, h = box["bbox"]
        kps = []
        for u, v in zip(KP_U, KP_V):
            kps.extend((x + u * w, y + v * h, 1.0))
        records.append(
            {{
                "image_id": box["image_id"],
                "category_id": 1,
                "keypoints": kps,
                "score": 0.9,
            }}
        )
    Path(args.output).write_text(json.dumps(records))


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--task", required=True, choices=("upscale", "detect", "keypoints"))
    parser.add_argument("--input", required=True)
    parser.add_argument("--output", required=True)
    parser.add_argument("--scale", type=int, default=4)
    parser.add_argument("--boxes")
    args = parser.parse_args()
    if SCENARIO.get("fail_task") == args.task:
        print("scenario says fail", file=sys.stderr)
        return 7
    {{"upscale": do_upscale, "detect": do_detect, "keypoints": do_keypoints}}[args.task](args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
'''


def write_stub_adapter(directory, scenario=None, name="adapter") -> list:
    """Write a protocol-speaking executable; returns its command argv."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    script = directory / f"{name}.py"
    script.write_text(_ADAPTER_TEMPLATE.format(kp_u=KP_U, kp_v=KP_V), encoding="utf-8")
    scenario_file = directory / f"{name}.scenario.json"
    scenario_file.write_text(json.dumps(scenario or {}), encoding="utf-8")
    return ["python3", str(script)]
