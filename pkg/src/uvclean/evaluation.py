"""Segmentation scoring against ground truth, with and without the
non-target-mask refinement.

A target region earns its weight when at least half of its visible,
unobstructed pixels are covered by the predicted target mask. Each
non-target object scores 1 only when the predicted target mask leaks at
most ``tolerance_px`` pixels onto it (default 0: any visible
mis-segmentation forfeits the object).

The two evaluation variants share the same predicted target mask for T;
only the NT computation differs: the "with" variant first subtracts the
final non-target mask from the prediction.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

VARIANT_WITHOUT = "without_ntm"
VARIANT_WITH = "with_ntm"


@dataclass(frozen=True, eq=False)
class TargetRegion:
    name: str
    mask: np.ndarray
    weight: float


@dataclass(frozen=True, eq=False)
class ObjectMask:
    name: str
    mask: np.ndarray


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Reference masks for one scene.

    ``visible_target`` is the target surface minus every object mask: the
    part a correct segmentation could actually cover.
    """

    regions: tuple[TargetRegion, ...]
    objects: tuple[ObjectMask, ...]
    visible_target: np.ndarray

    def __post_init__(self):
        if not self.regions:
            raise ValueError("ground truth needs at least one target region")
        shapes = {r.mask.shape for r in self.regions}
        shapes |= {o.mask.shape for o in self.objects}
        shapes.add(np.asarray(self.visible_target).shape)
        if len(shapes) != 1:
            raise ValueError(f"ground truth mask dimensions differ: {sorted(shapes)}")
        total = sum(r.weight for r in self.regions)
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"region weights must sum to 1, got {total}")


@dataclass(frozen=True)
class ScoreReport:
    T: float
    nt_per_object: tuple[tuple[str, int], ...]
    NT: float | None
    variant: str

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "T": self.T,
            "NT": self.NT,
            "nt_per_object": [{"name": n, "score": s} for n, s in self.nt_per_object],
        }


def score_target(pred_target: np.ndarray, gt: GroundTruth) -> float:
    """Weighted sum over regions covered on at least half their visible pixels."""
    pred = np.asarray(pred_target, dtype=bool)
    visible = np.asarray(gt.visible_target, dtype=bool)
    if pred.shape != visible.shape:
        raise ValueError(f"prediction {pred.shape} does not match ground truth {visible.shape}")

    credits = []
    for region in gt.regions:
        visible_region = np.asarray(region.mask, dtype=bool) & visible
        denom = int(np.count_nonzero(visible_region))
        if denom == 0:
            log.warning("region %r has no visible pixels; skipped and weights renormalized",
                        region.name)
            continue
        covered = int(np.count_nonzero(pred & visible_region))
        credits.append((region.weight, covered / denom >= 0.5))
    total_weight = sum(w for w, _ in credits)
    if total_weight == 0:
        log.warning("no scorable target region; T = 0")
        return 0.0
    return float(sum(w for w, hit in credits if hit) / total_weight)


def score_non_target(pred_target: np.ndarray, gt: GroundTruth,
                     tolerance_px: int = 0) -> list[tuple[str, int]]:
    """Per object: 1 if the prediction leaks at most ``tolerance_px`` onto it."""
    pred = np.asarray(pred_target, dtype=bool)
    out = []
    for obj in gt.objects:
        overlap = int(np.count_nonzero(pred & np.asarray(obj.mask, dtype=bool)))
        out.append((obj.name, 1 if overlap <= tolerance_px else 0))
    return out


def _report(pred_for_t: np.ndarray, pred_for_nt: np.ndarray, gt: GroundTruth,
            tolerance_px: int, variant: str) -> ScoreReport:
    t = score_target(pred_for_t, gt)
    per_object = tuple(score_non_target(pred_for_nt, gt, tolerance_px))
    nt = float(np.mean([s for _, s in per_object])) if per_object else None
    return ScoreReport(T=t, nt_per_object=per_object, NT=nt, variant=variant)


def compare_variants(eroded_target: np.ndarray, non_target_mask: np.ndarray,
                     gt: GroundTruth, tolerance_px: int = 0) -> tuple[ScoreReport, ScoreReport]:
    """Score the eroded target mask without and with the non-target refinement.

    T is computed from the eroded target mask in both variants; the refined
    variant subtracts the non-target mask only for the NT computation.
    Returns ``(without_ntm, with_ntm)``.
    """
    eroded_target = np.asarray(eroded_target, dtype=bool)
    refined = eroded_target & ~np.asarray(non_target_mask, dtype=bool)
    without = _report(eroded_target, eroded_target, gt, tolerance_px, VARIANT_WITHOUT)
    with_ = _report(eroded_target, refined, gt, tolerance_px, VARIANT_WITH)
    if without.T != with_.T:
        raise AssertionError("T must be identical across variants by construction")
    return without, with_


def reports_to_json(reports: dict[str, ScoreReport]) -> str:
    return json.dumps({k: r.to_dict() for k, r in reports.items()}, indent=2, sort_keys=True)


def format_table(rows: list[dict]) -> str:
    """Plain-text table with T / NT-without / NT-with columns per row.

    Each row dict needs: name, t, nt_without, nt_with, objects (count).
    """
    def fmt(v) -> str:
        return "-" if v is None else f"{100.0 * v:5.1f}"

    header = f"{'scene/archetype':<28} {'T(%)':>6} {'NT(%) woNTM':>12} {'NT(%) wNTM':>11} {'objs':>5}"
    lines = [header, "-" * len(header)]
    for row in rows:
        lines.append(
            f"{row['name']:<28} {fmt(row['t']):>6} {fmt(row['nt_without']):>12} "
            f"{fmt(row['nt_with']):>11} {row['objects']:>5}"
        )
    return "\n".join(lines)
