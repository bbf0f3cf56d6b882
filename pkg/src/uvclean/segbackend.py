"""Detection/segmentation backend contract with fixture and remote clients.

The foundation models themselves (open-vocabulary detector + box-prompted
segmenter) live behind this contract: a backend takes an RGB image, a text
prompt, and a confidence threshold and returns labeled, scored, masked
detections. Two implementations are provided:

* :class:`FixtureBackend` replays detections stored in a scene bundle,
  deterministic and offline, used for tests and benchmarks;
* :class:`RemoteBackend` speaks the HTTP wire protocol below to a model
  server.

Wire protocol (the model server must match this bit for bit):

* ``POST /v1/detect`` with JSON body ``{"image_png_base64": str,
  "prompt": str, "confidence_threshold": float, "return_masks": true}``;
* 200 response ``{"detections": [{"label": str, "score": float,
  "bbox_xyxy": [x0, y0, x1, y1], "mask": {"encoding": "rle_rowmajor",
  "size": [height, width], "runs": [int, ...]}}]}``;
* errors: 400 bad image/fields, 503 model not ready, both with
  ``{"error": str}``; ``GET /v1/health`` returns ``{"status": "ok"}``.

Masks travel as row-major run-length encodings: runs alternate clear/set
starting with the clear count (possibly 0); run sums must equal
width * height.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import cv2
import numpy as np
import requests

from .errors import FixtureError, MalformedMaskError, ServerError, TransportError

RLE_ENCODING = "rle_rowmajor"
DETECTIONS_FILE = "detections.json"
DEFAULT_TIMEOUT_S = 30.0


@dataclass(frozen=True, eq=False)
class Detection:
    """One detected instance: label, confidence, box, and full-image mask."""

    label: str
    score: float
    bbox: tuple[float, float, float, float]
    mask: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")
        x0, y0, x1, y1 = self.bbox
        m = np.asarray(self.mask, dtype=bool)
        h, w = m.shape
        if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
            raise ValueError(f"bbox {self.bbox} invalid for {w}x{h} image")
        object.__setattr__(self, "bbox", (float(x0), float(y0), float(x1), float(y1)))
        object.__setattr__(self, "mask", m)


@dataclass(frozen=True, eq=False)
class DetectRequest:
    image: np.ndarray
    prompt: str
    confidence_threshold: float

    def __post_init__(self):
        img = np.asarray(self.image)
        if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] == 0 or img.shape[1] == 0:
            raise ValueError(f"image must be (H, W, 3) with H, W > 0, got {img.shape}")
        if not self.prompt:
            raise ValueError("prompt must be nonempty")
        if not 0 < self.confidence_threshold < 1:
            raise ValueError(f"confidence_threshold must be in (0, 1), got {self.confidence_threshold}")
        object.__setattr__(self, "image", img)


class SegmentationBackend(Protocol):
    def detect(self, req: DetectRequest) -> list[Detection]:
        """Return detections scoring at least the request threshold; may be empty."""
        ...


def rle_encode(mask: np.ndarray) -> dict:
    """Row-major run-length encoding, first run counting clear pixels."""
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2:
        raise ValueError(f"mask must be 2D, got shape {m.shape}")
    flat = m.ravel()
    boundaries = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    edges = np.concatenate(([0], boundaries, [flat.size]))
    runs = np.diff(edges).tolist()
    if flat.size and flat[0]:
        runs = [0] + runs
    return {"encoding": RLE_ENCODING, "size": [int(m.shape[0]), int(m.shape[1])], "runs": runs}


def rle_decode(obj: dict) -> np.ndarray:
    """Inverse of :func:`rle_encode`; raises MalformedMaskError on bad input."""
    if obj.get("encoding") != RLE_ENCODING:
        raise MalformedMaskError(f"unsupported mask encoding {obj.get('encoding')!r}")
    size = obj.get("size")
    if not (isinstance(size, (list, tuple)) and len(size) == 2):
        raise MalformedMaskError(f"bad mask size field {size!r}")
    h, w = int(size[0]), int(size[1])
    if h <= 0 or w <= 0:
        raise MalformedMaskError(f"bad mask size {h}x{w}")
    runs = obj.get("runs")
    if not isinstance(runs, (list, tuple)) or not all(isinstance(r, int) for r in runs):
        raise MalformedMaskError("runs must be a list of integers")
    if any(r < 0 for r in runs) or any(r == 0 for r in runs[1:]):
        raise MalformedMaskError("runs must be positive (first may be 0)")
    total = sum(runs)
    if total != h * w:
        raise MalformedMaskError(f"run sum {total} does not equal {h}x{w}={h * w}")
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    for i, r in enumerate(runs):
        if i % 2 == 1:
            flat[pos:pos + r] = True
        pos += r
    return flat.reshape(h, w)


class FixtureBackend:
    """Deterministic file-backed stand-in for the foundation models.

    Reads ``detections.json`` from a scene bundle directory, mapping each
    prompt to a list of ``{label, score, bbox_xyxy, mask_file}`` records;
    mask files are 8-bit single-channel images relative to the bundle.
    """

    def __init__(self, bundle_dir: str | Path):
        self.bundle_dir = Path(bundle_dir)
        path = self.bundle_dir / DETECTIONS_FILE
        if not path.is_file():
            raise FixtureError(f"no {DETECTIONS_FILE} in {self.bundle_dir}")
        with open(path, "r", encoding="utf-8") as fh:
            self._entries = json.load(fh)
        if not isinstance(self._entries, dict):
            raise FixtureError(f"{path} must map prompts to detection lists")

    def detect(self, req: DetectRequest) -> list[Detection]:
        if req.prompt not in self._entries:
            raise FixtureError(
                f"fixture has no entry for prompt {req.prompt!r} "
                f"(available: {sorted(self._entries)})"
            )
        out = []
        for rec in self._entries[req.prompt]:
            score = float(rec["score"])
            if score < req.confidence_threshold:
                continue
            mask_path = self.bundle_dir / rec["mask_file"]
            img = cv2.imread(str(mask_path), cv2.IMREAD_GRAYSCALE)
            if img is None:
                raise FixtureError(f"cannot read mask file {mask_path}")
            mask = img > 0
            if mask.shape != req.image.shape[:2]:
                raise FixtureError(
                    f"mask {mask_path} is {mask.shape}, image is {req.image.shape[:2]}"
                )
            out.append(Detection(str(rec["label"]), score, tuple(rec["bbox_xyxy"]), mask))
        return out


class RemoteBackend:
    """HTTP client for a model server implementing the wire protocol."""

    def __init__(self, endpoint: str, timeout: float = DEFAULT_TIMEOUT_S):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout

    def detect(self, req: DetectRequest) -> list[Detection]:
        ok, png = cv2.imencode(".png", req.image)
        if not ok:
            raise ValueError("failed to encode request image as PNG")
        payload = {
            "image_png_base64": base64.b64encode(png.tobytes()).decode("ascii"),
            "prompt": req.prompt,
            "confidence_threshold": req.confidence_threshold,
            "return_masks": True,
        }
        try:
            resp = requests.post(self.endpoint + "/v1/detect", json=payload, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(f"cannot reach backend at {self.endpoint}: {exc}") from exc
        if resp.status_code != 200:
            message = ""
            try:
                message = resp.json().get("error", "")
            except ValueError:
                pass
            raise ServerError(resp.status_code, message)
        try:
            body = resp.json()
        except ValueError as exc:
            raise ServerError(200, f"response is not JSON: {exc}") from exc

        detections = []
        for rec in body.get("detections", []):
            mask = rle_decode(rec["mask"])
            if mask.shape != req.image.shape[:2]:
                raise MalformedMaskError(
                    f"mask is {mask.shape}, request image is {req.image.shape[:2]}"
                )
            score = float(rec["score"])
            if score < req.confidence_threshold:
                continue
            detections.append(Detection(str(rec["label"]), score, tuple(rec["bbox_xyxy"]), mask))
        return detections

    def health(self) -> bool:
        try:
            resp = requests.get(self.endpoint + "/v1/health", timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(f"cannot reach backend at {self.endpoint}: {exc}") from exc
        return resp.status_code == 200
