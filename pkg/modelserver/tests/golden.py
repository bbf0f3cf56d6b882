"""Golden wire-protocol vectors shared with the pipeline client's tests."""

from __future__ import annotations

import json
from pathlib import Path

DATA = Path(__file__).parent / "data"


def golden_request() -> dict:
    return json.loads((DATA / "golden_detect_request.json").read_text())


def golden_response() -> dict:
    return json.loads((DATA / "golden_detect_response.json").read_text())
