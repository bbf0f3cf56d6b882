"""Binary mask algebra and the two-pass target / non-target refinement.

Masks are 2D boolean numpy arrays (row-major, shape (height, width)).
Erosion uses a k x k all-ones structuring element with the anchor at
(k // 2, k // 2): the window for output pixel i spans input indices
i - k//2 .. i + k - 1 - k//2. Pixels outside the image count as set, so a
fully set mask is a fixed point and image borders do not erode inward.

The refinement flow: the target mask is the union of the target-prompt
detection masks, then eroded to suppress segmentation noise. The non-target
mask starts from the inverted *unfiltered* target mask, is eroded with a
larger kernel (which destroys thin structures), and the separately detected
fine-feature masks are unioned back in so thin objects stay excluded.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

if TYPE_CHECKING:
    from .segbackend import Detection

FINE_FEATURE_PROMPT = "string. accessories"


@dataclass(frozen=True)
class RefinementConfig:
    """Pixel-space constants of the mask refinement.

    Pixel-denominated defaults assume 640x480 input; scale them for other
    resolutions.
    """

    target_erosion_kernel: int = 10
    inverted_erosion_kernel: int = 20
    fine_feature_area_max: int = 20_000
    fine_feature_prompt: str = FINE_FEATURE_PROMPT
    target_confidence: float = 0.35
    fine_confidence: float = 0.2

    def __post_init__(self):
        if self.target_erosion_kernel < 1 or self.inverted_erosion_kernel < 1:
            raise ValueError("erosion kernels must be >= 1")
        if self.fine_feature_area_max < 0:
            raise ValueError("fine_feature_area_max must be >= 0")
        for name in ("target_confidence", "fine_confidence"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must be in (0, 1), got {v}")
        if not self.fine_feature_prompt:
            raise ValueError("fine_feature_prompt must be nonempty")


def _as_mask(mask: np.ndarray) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ValueError(f"mask must be 2D, got shape {m.shape}")
    return m.astype(bool, copy=False)


def _check_same_shape(masks: Iterable[np.ndarray]) -> tuple[int, int]:
    shapes = {m.shape for m in masks}
    if len(shapes) != 1:
        raise ValueError(f"mask dimensions differ: {sorted(shapes)}")
    return shapes.pop()


def _window_count_1d(values: np.ndarray, k: int, axis: int) -> np.ndarray:
    """Sum of ``values`` over the erosion window along ``axis``.

    Out-of-bounds positions contribute nothing.
    """
    v = np.moveaxis(values, axis, -1)
    n = v.shape[-1]
    csum = np.zeros(v.shape[:-1] + (n + 1,), dtype=np.int64)
    np.cumsum(v, axis=-1, out=csum[..., 1:])
    lo = np.clip(np.arange(n) - k // 2, 0, n)
    hi = np.clip(np.arange(n) + (k - 1 - k // 2) + 1, 0, n)
    counts = csum[..., hi] - csum[..., lo]
    return np.moveaxis(counts, -1, axis)


def erode(mask: np.ndarray, k: int) -> np.ndarray:
    """Binary erosion by a k x k all-ones kernel, borders treated as set.

    Runs as two 1-D sliding-window passes (rows, then columns); the result is
    bit-identical to scanning the full k x k window per pixel because the
    all-ones erosion is separable.
    """
    if k <= 0:
        raise ValueError(f"kernel size must be >= 1, got {k}")
    m = _as_mask(mask)
    rows = _window_count_1d((~m).astype(np.int64), k, axis=1) == 0
    return _window_count_1d((~rows).astype(np.int64), k, axis=0) == 0


def dilate(mask: np.ndarray, k: int) -> np.ndarray:
    """Binary dilation by a k x k all-ones kernel, borders treated as clear."""
    if k <= 0:
        raise ValueError(f"kernel size must be >= 1, got {k}")
    m = _as_mask(mask)
    out = _window_count_1d(m.astype(np.int64), k, axis=1) > 0
    return _window_count_1d(out.astype(np.int64), k, axis=0) > 0


def invert(mask: np.ndarray) -> np.ndarray:
    return ~_as_mask(mask)


def union(masks: Sequence[np.ndarray]) -> np.ndarray:
    """Pixelwise OR; all inputs must share dimensions."""
    ms = [_as_mask(m) for m in masks]
    if not ms:
        raise ValueError("union of zero masks is undefined; pass an explicit empty mask")
    _check_same_shape(ms)
    out = ms[0].copy()
    for m in ms[1:]:
        out |= m
    return out


def area(mask: np.ndarray) -> int:
    return int(np.count_nonzero(_as_mask(mask)))


def build_target_mask(detections: Sequence["Detection"], shape: tuple[int, int],
                      erosion_kernel: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Union all target detection masks, then erode.

    Returns ``(raw, eroded)``. With no detections both masks are empty, which
    the pipeline reports as "target not found".
    """
    raw = np.zeros(shape, dtype=bool)
    for det in detections:
        m = _as_mask(det.mask)
        if m.shape != tuple(shape):
            raise ValueError(f"detection mask {m.shape} does not match image {tuple(shape)}")
        raw |= m
    return raw, erode(raw, erosion_kernel)


def build_fine_feature_mask(detections: Sequence["Detection"], shape: tuple[int, int],
                            area_max: int = 20_000) -> np.ndarray:
    """Union the detection masks strictly smaller than ``area_max`` pixels.

    No erosion is applied, so thin structures survive. The size filter is
    per detection, not on the combined mask.
    """
    out = np.zeros(shape, dtype=bool)
    for det in detections:
        m = _as_mask(det.mask)
        if m.shape != tuple(shape):
            raise ValueError(f"detection mask {m.shape} does not match image {tuple(shape)}")
        if area(m) < area_max:
            out |= m
    return out


def build_non_target_mask(raw_target: np.ndarray, fine_feature: np.ndarray,
                          inverted_erosion_kernel: int = 20) -> np.ndarray:
    """Erode the inverted raw target mask, then merge the fine features back.

    Inversion deliberately uses the unfiltered target mask; the large erosion
    kernel removes noise but also thin objects, which the fine-feature union
    reintroduces.
    """
    raw_target = _as_mask(raw_target)
    fine_feature = _as_mask(fine_feature)
    _check_same_shape([raw_target, fine_feature])
    return erode(~raw_target, inverted_erosion_kernel) | fine_feature


def mask_to_u8(mask: np.ndarray) -> np.ndarray:
    """8-bit image encoding: 0 = clear, 255 = set."""
    return np.where(_as_mask(mask), np.uint8(255), np.uint8(0))


def u8_to_mask(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image)
    if img.ndim == 3:
        img = img[..., 0]
    return img > 0
