from __future__ import annotations

import json

import cv2
import numpy as np
import pytest


@pytest.fixture(scope="session")
def golden_fixture_dir(tmp_path_factory):
    """Fixture directory whose replay matches the golden response exactly."""
    root = tmp_path_factory.mktemp("golden_fixture")
    (root / "masks").mkdir()
    h, w = 6, 8
    mask_a = np.zeros((h, w), dtype=bool)
    mask_a[1:4, 1:5] = True
    mask_b = np.zeros((h, w), dtype=bool)
    mask_b[0, 0] = True
    cv2.imwrite(str(root / "masks" / "a.png"), np.where(mask_a, 255, 0).astype(np.uint8))
    cv2.imwrite(str(root / "masks" / "b.png"), np.where(mask_b, 255, 0).astype(np.uint8))
    entries = {
        "white table": [
            {"label": "white table", "score": 0.7, "bbox_xyxy": [1, 1, 5, 4],
             "mask_file": "masks/a.png"},
            {"label": "white table", "score": 0.42, "bbox_xyxy": [0, 0, 1, 1],
             "mask_file": "masks/b.png"},
        ],
        "string. accessories": [],
    }
    (root / "detections.json").write_text(json.dumps(entries))
    return root
