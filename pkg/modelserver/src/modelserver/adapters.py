"""Detector + segmenter adapters behind the service.

The service composes two stages the way open-vocabulary pipelines do: a
detector proposes labeled, scored boxes for a text prompt, then each box is
fed as a prompt to a segmenter that returns one mask per box. Which models
implement the stages is configuration, not contract; any pair that fills
this interface serves the same wire protocol.

Two built-in adapters:

* ``fixture:<dir>`` replays detections from a directory in the scene-bundle
  fixture format (detections.json plus 8-bit mask images) for offline
  deployment tests;
* ``color`` is a tiny self-contained detector that matches color words in
  the prompt against flat-shaded regions, useful against synthetic scenes
  and as a wiring demo. Prompts without a known color word yield no boxes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol

import cv2
import numpy as np


@dataclass(frozen=True)
class BoxProposal:
    """Detector output; ``ref`` is opaque context handed to the segmenter."""

    label: str
    score: float
    bbox: tuple[float, float, float, float]
    ref: Any = field(default=None, compare=False)


@dataclass(frozen=True)
class RawDetection:
    label: str
    score: float
    bbox: tuple[float, float, float, float]
    mask: np.ndarray


class DetectorSegmenter(Protocol):
    def propose_boxes(self, image: np.ndarray, prompt: str,
                      threshold: float) -> list[BoxProposal]: ...

    def segment_box(self, image: np.ndarray, box: BoxProposal) -> np.ndarray: ...


def run_detection(model: DetectorSegmenter, image: np.ndarray, prompt: str,
                  threshold: float) -> list[RawDetection]:
    """Detector pass, then one segmenter call per surviving box."""
    out = []
    for box in model.propose_boxes(image, prompt, threshold):
        if box.score < threshold:
            continue
        mask = model.segment_box(image, box)
        out.append(RawDetection(box.label, box.score, box.bbox, mask))
    return out


class FixtureModel:
    """Replays stored detections; segmentation masks come from mask files."""

    def __init__(self, fixture_dir: str | Path):
        self.root = Path(fixture_dir)
        path = self.root / "detections.json"
        if not path.is_file():
            raise FileNotFoundError(f"no detections.json in {self.root}")
        with open(path, "r", encoding="utf-8") as fh:
            self.entries = json.load(fh)

    def propose_boxes(self, image, prompt, threshold):
        return [
            BoxProposal(str(rec["label"]), float(rec["score"]),
                        tuple(float(v) for v in rec["bbox_xyxy"]),
                        ref=rec["mask_file"])
            for rec in self.entries.get(prompt, [])
        ]

    def segment_box(self, image, box):
        img = cv2.imread(str(self.root / box.ref), cv2.IMREAD_GRAYSCALE)
        if img is None:
            raise FileNotFoundError(f"cannot read mask {box.ref}")
        return img > 0


_COLOR_WORDS = {
    "white": (235, 235, 235),
    "black": (40, 40, 40),
    "gray": (180, 180, 190),
    "grey": (180, 180, 190),
    "railing": (180, 180, 190),
    "green": (90, 180, 90),
    "orange": (60, 120, 200),
    "blue": (200, 120, 60),
    "brown": (60, 100, 150),
}


class ColorRegionModel:
    """Color-word detector over flat-shaded images.

    Boxes come from connected components of pixels close to the prompted
    color; the segmenter recovers the component mask inside the box.
    """

    def __init__(self, tolerance: float = 40.0, min_area: int = 64):
        self.tolerance = tolerance
        self.min_area = min_area

    def _color_for(self, prompt: str):
        for word in prompt.lower().replace(".", " ").split():
            if word in _COLOR_WORDS:
                return np.array(_COLOR_WORDS[word], dtype=np.float64)
        return None

    def propose_boxes(self, image, prompt, threshold):
        color = self._color_for(prompt)
        if color is None:
            return []
        dist = np.linalg.norm(image.astype(np.float64) - color[None, None, :], axis=2)
        close = (dist <= self.tolerance).astype(np.uint8)
        count, labels, stats, _ = cv2.connectedComponentsWithStats(close, connectivity=8)
        boxes = []
        for lbl in range(1, count):
            x, y, w, h, area = stats[lbl]
            if area < self.min_area:
                continue
            mean_dist = float(dist[labels == lbl].mean())
            score = round(max(0.05, min(0.99, 1.0 - mean_dist / 255.0)), 4)
            boxes.append(BoxProposal(prompt, score,
                                     (float(x), float(y), float(x + w), float(y + h)),
                                     ref=(labels, int(lbl))))
        return boxes

    def segment_box(self, image, box):
        labels, lbl = box.ref
        return labels == lbl


def make_model(spec: str) -> DetectorSegmenter:
    """Adapter factory: ``color`` or ``fixture:<dir>``."""
    if spec == "color":
        return ColorRegionModel()
    if spec.startswith("fixture:"):
        return FixtureModel(spec.split(":", 1)[1])
    raise ValueError(f"unknown model spec {spec!r} (want 'color' or 'fixture:<dir>')")
