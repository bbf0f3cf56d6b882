"""FastAPI application implementing the detection wire protocol.

Endpoints:

* ``POST /v1/detect`` with JSON ``{"image_png_base64", "prompt",
  "confidence_threshold", "return_masks"}``; responds with labeled, scored,
  boxed detections whose masks are run-length encoded row-major;
* ``GET /v1/health`` returns ``{"status": "ok"}`` once the model is loaded,
  503 before that.

Errors are ``{"error": str}``: 400 for undecodable or oversized images and
bad fields, 503 while the model is not ready.
"""

from __future__ import annotations

import base64
import binascii
import threading
from dataclasses import dataclass

import cv2
import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .adapters import DetectorSegmenter, make_model, run_detection
from .rle import encode_mask

DEFAULT_MAX_PIXELS = 16_000_000


@dataclass(frozen=True)
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = 8750
    model: str = "color"
    device: str = "cpu"  # reserved for adapters with accelerator support
    max_pixels: int = DEFAULT_MAX_PIXELS

    def __post_init__(self):
        if not 0 <= self.port <= 65535:
            raise ValueError(f"invalid port {self.port}")
        if self.max_pixels <= 0:
            raise ValueError("max_pixels must be positive")


class DetectBody(BaseModel):
    image_png_base64: str = Field(min_length=1)
    prompt: str = Field(min_length=1)
    confidence_threshold: float = Field(gt=0.0, lt=1.0)
    return_masks: bool = True


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def create_app(config: ServerConfig | None = None, defer_load: bool = False) -> FastAPI:
    """Build the service; with ``defer_load`` the model loads only when
    :func:`load_model` is called (requests meanwhile get 503)."""
    config = config or ServerConfig()
    app = FastAPI(title="detection model server")
    app.state.config = config
    app.state.model = None
    app.state.lock = threading.Lock()
    if not defer_load:
        load_model(app)

    @app.exception_handler(RequestValidationError)
    async def _validation_handler(request: Request, exc: RequestValidationError):
        return _error(400, f"invalid request body: {exc.errors()[:1]}")

    @app.get("/v1/health")
    def health():
        if app.state.model is None:
            return _error(503, "model not ready")
        return {"status": "ok"}

    @app.post("/v1/detect")
    def detect(body: DetectBody):
        model: DetectorSegmenter | None = app.state.model
        if model is None:
            return _error(503, "model not ready")
        try:
            png = base64.b64decode(body.image_png_base64, validate=True)
        except (binascii.Error, ValueError):
            return _error(400, "image_png_base64 is not valid base64")
        image = cv2.imdecode(np.frombuffer(png, dtype=np.uint8), cv2.IMREAD_COLOR)
        if image is None:
            return _error(400, "cannot decode image")
        h, w = image.shape[:2]
        if h * w > app.state.config.max_pixels:
            return _error(400, f"image has {h * w} pixels, limit is {app.state.config.max_pixels}")

        # Adapters keep per-call state between the box and mask stages.
        with app.state.lock:
            detections = run_detection(model, image, body.prompt, body.confidence_threshold)

        records = []
        for det in detections:
            rec = {
                "label": det.label,
                "score": det.score,
                "bbox_xyxy": list(det.bbox),
            }
            if body.return_masks:
                mask = np.asarray(det.mask, dtype=bool)
                if mask.shape != (h, w):
                    return _error(500, "adapter produced a mask of the wrong size")
                rec["mask"] = encode_mask(mask)
            records.append(rec)
        return {"detections": records}

    return app


def load_model(app: FastAPI) -> None:
    app.state.model = make_model(app.state.config.model)
