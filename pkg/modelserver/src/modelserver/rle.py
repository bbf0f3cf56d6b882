"""Row-major run-length mask encoding for the wire protocol.

Runs alternate clear/set, the first run counts clear pixels (possibly 0),
and the run sum equals width * height.
"""

from __future__ import annotations

import numpy as np

ENCODING = "rle_rowmajor"


def encode_mask(mask: np.ndarray) -> dict:
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2:
        raise ValueError(f"mask must be 2D, got {m.shape}")
    flat = m.ravel()
    boundaries = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    edges = np.concatenate(([0], boundaries, [flat.size]))
    runs = np.diff(edges).tolist()
    if flat.size and flat[0]:
        runs = [0] + runs
    return {"encoding": ENCODING, "size": [int(m.shape[0]), int(m.shape[1])], "runs": runs}
