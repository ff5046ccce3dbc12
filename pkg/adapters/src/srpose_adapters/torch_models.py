"""Torch-backed model families.

Super-resolution models load as TorchScript archives, so no network
architecture lives here; detection and keypoint models use torchvision's
shipped Mask R-CNN and Keypoint R-CNN graphs with locally stored state
dicts. Nothing in this module ever downloads weights; scripts/fetch_weights.py
is the one documented way to obtain them.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import protocol
from .config import AdapterConfig, AdapterError

DETECT_SCORE_FLOOR = 0.05
MASK_THRESHOLD = 0.5
BOX_MATCH_IOU = 0.1
PERSON_LABEL = 1


def _torch():
    try:
        import torch
    except ImportError as exc:
        raise AdapterError(
            "this model family needs torch; install the [torch] extra"
        ) from exc
    return torch


def _device(torch, config: AdapterConfig):
    try:
        device = torch.device(config.device)
        torch.zeros(1, device=device)
    except (RuntimeError, AssertionError) as exc:
        raise AdapterError(f"device {config.device!r} is unusable: {exc}")
    return device


def _to_tensor(torch, pixels: np.ndarray, device):
    data = torch.from_numpy(pixels.astype(np.float32) / 255.0)
    return data.permute(2, 0, 1).to(device)


def _batched(pairs, size: int):
    for start in range(0, len(pairs), size):
        yield pairs[start : start + size]


def upscale_torchscript(config: AdapterConfig, in_dir, out_dir, scale: int) -> None:
    """Run a scripted super-resolution network over a staged directory."""
    if scale < 1:
        raise AdapterError(f"upscale factor must be >= 1: {scale}")
    torch = _torch()
    device = _device(torch, config)
    try:
        model = torch.jit.load(str(config.weights), map_location=device)
    except (RuntimeError, ValueError) as exc:
        raise AdapterError(
            f"cannot load TorchScript archive {config.weights}: {exc}"
        )
    model.eval()
    out_dir = Path(out_dir)
    with torch.no_grad():
        for image_id, path in protocol.staged_images(in_dir):
            pixels = protocol.load_rgb(path)
            output = model(_to_tensor(torch, pixels, device).unsqueeze(0))
            if output.ndim != 4 or output.shape[0] != 1 or output.shape[1] != 3:
                raise AdapterError(
                    f"model returned shape {tuple(output.shape)}, "
                    "expected (1, 3, h, w)"
                )
            got = (output.shape[3], output.shape[2])
            want = (pixels.shape[1] * scale, pixels.shape[0] * scale)
            if got != want:
                raise AdapterError(
                    f"model upscaled {path.name} to {got}, expected {want}; "
                    f"is this a x{scale} checkpoint?"
                )
            grown = (
                output.squeeze(0).clamp(0.0, 1.0).mul(255.0).round().byte()
            )
            protocol.save_png(
                grown.permute(1, 2, 0).cpu().numpy(), out_dir / f"{path.stem}.png"
            )


def _load_rcnn(torch, config: AdapterConfig, build):
    model = build()
    state = torch.load(str(config.weights), map_location="cpu")
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise AdapterError(
            f"state dict {config.weights} does not fit the model: {exc}"
        )
    device = _device(torch, config)
    model.to(device)
    model.eval()
    return model, device


def detect_maskrcnn(config: AdapterConfig, in_dir, out_file) -> None:
    """Person boxes with mask pixel counts from a Mask R-CNN state dict."""
    torch = _torch()
    from torchvision.models.detection import maskrcnn_resnet50_fpn

    model, device = _load_rcnn(
        torch,
        config,
        lambda: maskrcnn_resnet50_fpn(weights=None, weights_backbone=None),
    )
    records = []
    staged = protocol.staged_images(in_dir)
    with torch.no_grad():
        for batch in _batched(staged, config.batch_size):
            tensors = [
                _to_tensor(torch, protocol.load_rgb(path), device)
                for _, path in batch
            ]
            outputs = model(tensors)
            for (image_id, _), output in zip(batch, outputs):
                keep = (output["labels"] == PERSON_LABEL) & (
                    output["scores"] >= DETECT_SCORE_FLOOR
                )
                boxes = output["boxes"][keep].cpu().numpy()
                scores = output["scores"][keep].cpu().numpy()
                masks = output["masks"][keep].cpu().numpy()
                for box, score, mask in zip(boxes, scores, masks):
                    x1, y1, x2, y2 = (float(v) for v in box)
                    area = float((mask[0] >= MASK_THRESHOLD).sum())
                    records.append(
                        protocol.detection_record(
                            image_id,
                            (x1, y1, x2 - x1, y2 - y1),
                            float(score),
                            area,
                        )
                    )
    protocol.write_results(records, out_file)


def _box_iou(a, b) -> float:
    ax2, ay2 = a[0] + a[2], a[1] + a[3]
    bx2, by2 = b[0] + b[2], b[1] + b[3]
    iw = min(ax2, bx2) - max(a[0], b[0])
    ih = min(ay2, by2) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union > 0 else 0.0


def keypoints_keypointrcnn(config: AdapterConfig, in_dir, out_file, boxes_file) -> None:
    """One keypoint record per requested box, from a Keypoint R-CNN state dict.

    The network predicts its own instances; each requested box is answered
    by the best-overlapping prediction. A box nothing overlaps still gets a
    record (centered points, zero scores) so output order mirrors input.
    """
    boxes = protocol.read_boxes(boxes_file)
    staged = dict(protocol.staged_images(in_dir))
    wanted_ids = []
    for box in boxes:
        if box["image_id"] not in staged:
            raise AdapterError(
                f"boxes reference image {box['image_id']} which was not staged"
            )
        if box["image_id"] not in wanted_ids:
            wanted_ids.append(box["image_id"])

    torch = _torch()
    from torchvision.models.detection import keypointrcnn_resnet50_fpn

    model, device = _load_rcnn(
        torch,
        config,
        lambda: keypointrcnn_resnet50_fpn(weights=None, weights_backbone=None),
    )

    predictions = {}
    pairs = [(image_id, staged[image_id]) for image_id in wanted_ids]
    with torch.no_grad():
        for batch in _batched(pairs, config.batch_size):
            tensors = [
                _to_tensor(torch, protocol.load_rgb(path), device)
                for _, path in batch
            ]
            outputs = model(tensors)
            for (image_id, _), output in zip(batch, outputs):
                keep = output["scores"] >= DETECT_SCORE_FLOOR
                kept_boxes = output["boxes"][keep].cpu().numpy()
                predictions[image_id] = {
                    "boxes": [
                        (float(b[0]), float(b[1]), float(b[2] - b[0]), float(b[3] - b[1]))
                        for b in kept_boxes
                    ],
                    "scores": output["scores"][keep].cpu().numpy(),
                    "keypoints": output["keypoints"][keep].cpu().numpy(),
                    "keypoints_scores": output["keypoints_scores"][keep].cpu().numpy(),
                }

    records = []
    for box in boxes:
        found = predictions.get(box["image_id"], {"boxes": []})
        best, best_iou = None, BOX_MATCH_IOU
        for index, candidate in enumerate(found["boxes"]):
            overlap = _box_iou(box["bbox"], candidate)
            if overlap >= best_iou:
                best, best_iou = index, overlap
        if best is None:
            x, y, w, h = box["bbox"]
            cx, cy = x + w / 2.0, y + h / 2.0
            values = [cx, cy, 0.0] * protocol.NUM_KEYPOINTS
            records.append(protocol.keypoint_record(box["image_id"], values, 0.0))
            continue
        values = []
        for point, point_score in zip(
            found["keypoints"][best], found["keypoints_scores"][best]
        ):
            values.extend((float(point[0]), float(point[1]), float(point_score)))
        records.append(
            protocol.keypoint_record(
                box["image_id"], values, float(found["scores"][best])
            )
        )
    protocol.write_results(records, out_file)
