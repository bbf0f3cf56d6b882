"""End-to-end pipeline: detect, refine masks, lift to 3D, select, plan.

The flow mirrors the processing chain the CLI exposes: two detection passes
(user prompt for the target surface, fixed prompt for thin objects), mask
refinement, back-projection of the final masks, transform to the base frame
plus reach filtering, cleaning-point selection, then normal estimation,
standoff waypoints, and visit ordering.

Every run ends with a brute-force safety check that no cleaning point lies
strictly inside the buffer distance of the downsampled non-target cloud.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bundles, maskops
from .errors import StageError
from .evaluation import ScoreReport, compare_variants
from .geometry import (PointCloud, ROLE_NON_TARGET, ROLE_TARGET, back_project, reach_filter,
                       transform_points)
from .planning import ORDER_TSP, Waypoint, estimate_normals, make_waypoints, order_tsp, order_zigzag
from .segbackend import DetectRequest, Detection, FixtureBackend, RemoteBackend, SegmentationBackend
from .selection import SelectionResult, min_squared_separation, select_cleaning_points

log = logging.getLogger(__name__)

STATUS_OK = "ok"
STATUS_TARGET_NOT_FOUND = "target_not_found"


@dataclass(frozen=True, eq=False)
class RunArtifacts:
    """Everything one pipeline run produces, traceable per stage."""

    status: str
    raw_target_mask: np.ndarray
    eroded_target_mask: np.ndarray
    fine_feature_mask: np.ndarray | None = None
    non_target_mask: np.ndarray | None = None
    target_cloud: PointCloud | None = None
    non_target_cloud: PointCloud | None = None
    selection: SelectionResult | None = None
    waypoints: list[Waypoint] = field(default_factory=list)
    dropped_invalid_normals: int = 0
    reports: tuple[ScoreReport, ScoreReport] | None = None
    stage_counts: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)


def make_backend(cfg: bundles.PipelineConfig, bundle: bundles.SceneBundle) -> SegmentationBackend:
    if cfg.backend == bundles.BACKEND_REMOTE:
        return RemoteBackend(cfg.endpoint)
    return FixtureBackend(bundle.path)


def run_pipeline(bundle: bundles.SceneBundle, cfg: bundles.PipelineConfig,
                 backend: SegmentationBackend | None = None) -> RunArtifacts:
    if backend is None:
        backend = make_backend(cfg, bundle)
    shape = bundle.rgb.shape[:2]
    timings: dict[str, float] = {}
    counts: dict = {}

    def timed(stage: str, fn, *args, **kwargs):
        t0 = time.perf_counter()
        out = fn(*args, **kwargs)
        timings[stage] = time.perf_counter() - t0
        return out

    target_dets: list[Detection] = timed(
        "detect_target", backend.detect,
        DetectRequest(bundle.rgb, cfg.target_prompt, cfg.refinement.target_confidence))
    counts["target_detections"] = len(target_dets)
    raw_target, eroded_target = timed(
        "target_mask", maskops.build_target_mask,
        target_dets, shape, cfg.refinement.target_erosion_kernel)

    if not target_dets:
        log.warning("no detections for target prompt %r", cfg.target_prompt)
        return RunArtifacts(status=STATUS_TARGET_NOT_FOUND, raw_target_mask=raw_target,
                            eroded_target_mask=eroded_target, stage_counts=counts,
                            timings=timings)

    fine_dets: list[Detection] = timed(
        "detect_fine", backend.detect,
        DetectRequest(bundle.rgb, cfg.refinement.fine_feature_prompt,
                      cfg.refinement.fine_confidence))
    counts["fine_detections"] = len(fine_dets)
    fine_mask = timed("fine_feature_mask", maskops.build_fine_feature_mask,
                      fine_dets, shape, cfg.refinement.fine_feature_area_max)
    non_target_mask = timed("non_target_mask", maskops.build_non_target_mask,
                            raw_target, fine_mask, cfg.refinement.inverted_erosion_kernel)

    def lift(mask, role):
        cloud = back_project(bundle.depth, mask, bundle.intrinsics, role)
        cloud = transform_points(cloud, bundle.extrinsics)
        return reach_filter(cloud, cfg.selection.max_reach)

    target_cloud = timed("backproject_target", lift, eroded_target, ROLE_TARGET)
    non_target_cloud = timed("backproject_non_target", lift, non_target_mask, ROLE_NON_TARGET)
    counts["target_points"] = len(target_cloud)
    counts["non_target_points"] = len(non_target_cloud)

    result = timed("selection", select_cleaning_points, target_cloud, non_target_cloud,
                   cfg.selection)
    counts.update(result.counts)
    if result.empty_stage:
        counts["empty_stage"] = result.empty_stage

    waypoints: list[Waypoint] = []
    dropped = 0
    clean = result.clean
    if len(clean) >= 3:
        k = min(cfg.planning.normal_k, len(clean))
        viewpoint = bundle.extrinsics.translation
        normals, valid = timed("normals", estimate_normals, clean, k, viewpoint)
        dropped = int(np.count_nonzero(~valid))
        waypoints = make_waypoints(clean.points[valid], normals[valid], cfg.planning.standoff)
        if waypoints:
            if cfg.planning.ordering == ORDER_TSP:
                waypoints = timed("ordering", order_tsp, waypoints)
            else:
                waypoints = timed("ordering", order_zigzag, waypoints, cfg.selection.v_t)
    elif len(clean) > 0:
        log.warning("only %d cleaning points; skipping waypoint generation", len(clean))
    counts["waypoints"] = len(waypoints)
    counts["dropped_invalid_normals"] = dropped

    t0 = time.perf_counter()
    min_d2 = min_squared_separation(clean, result.non_target_down)
    timings["safety_check"] = time.perf_counter() - t0
    if min_d2 < cfg.selection.v_t ** 2:
        raise StageError("safety", f"cleaning point within buffer: "
                                   f"min distance {np.sqrt(min_d2):.6f} < v_t {cfg.selection.v_t}")

    reports = None
    if bundle.ground_truth is not None:
        reports = timed("score", compare_variants, eroded_target, non_target_mask,
                        bundle.ground_truth)

    return RunArtifacts(
        status=STATUS_OK,
        raw_target_mask=raw_target,
        eroded_target_mask=eroded_target,
        fine_feature_mask=fine_mask,
        non_target_mask=non_target_mask,
        target_cloud=target_cloud,
        non_target_cloud=non_target_cloud,
        selection=result,
        waypoints=waypoints,
        dropped_invalid_normals=dropped,
        reports=reports,
        stage_counts=counts,
        timings=timings,
    )


def waypoints_to_json(waypoints: list[Waypoint]) -> list[dict]:
    out = []
    for w in waypoints:
        rec = {
            "position": w.position.tolist(),
            "approach": w.approach.tolist(),
            "surface_point": w.surface_point.tolist(),
        }
        if w.dwell is not None:
            rec["dwell"] = w.dwell
        out.append(rec)
    return out


def write_artifacts(artifacts: RunArtifacts, out_dir: str | Path) -> None:
    """Write all run outputs; timings last so they never gate the data files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    bundles.write_mask(out / "target_mask_raw.png", artifacts.raw_target_mask)
    bundles.write_mask(out / "target_mask_eroded.png", artifacts.eroded_target_mask)
    if artifacts.fine_feature_mask is not None:
        bundles.write_mask(out / "fine_feature_mask.png", artifacts.fine_feature_mask)
    if artifacts.non_target_mask is not None:
        bundles.write_mask(out / "non_target_mask.png", artifacts.non_target_mask)
    if artifacts.target_cloud is not None:
        bundles.save_xyz(out / "cloud_target.xyz", artifacts.target_cloud.points)
    if artifacts.non_target_cloud is not None:
        bundles.save_xyz(out / "cloud_non_target.xyz", artifacts.non_target_cloud.points)
    if artifacts.selection is not None:
        clean = artifacts.selection.clean
        bundles.save_xyz(out / "cleaning_points.xyz", clean.points)
        bundles.write_json_atomic(out / "cleaning_points.json", {
            "frame": clean.frame,
            "role": clean.role,
            "points": clean.points.tolist(),
        })
    bundles.write_json_atomic(out / "waypoints.json", waypoints_to_json(artifacts.waypoints))
    stages = {"status": artifacts.status, "counts": artifacts.stage_counts}
    if artifacts.selection is not None and artifacts.selection.warnings:
        stages["warnings"] = list(artifacts.selection.warnings)
    bundles.write_json_atomic(out / "stages.json", stages)
    if artifacts.reports is not None:
        without, with_ = artifacts.reports
        bundles.write_json_atomic(out / "score_report.json", {
            "without_ntm": without.to_dict(),
            "with_ntm": with_.to_dict(),
        })
    bundles.write_json_atomic(out / "timings.json", artifacts.timings)
