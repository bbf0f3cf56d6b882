"""Scene-bundle directory format, loading, validation, and pipeline config.

Bundle layout::

    rgb.png               8-bit 3-channel color image
    depth.png             16-bit single-channel depth, millimeters, 0 invalid
    intrinsics.json       fx, fy, cx, cy, width, height, depth_scale
    extrinsics.json       camera-to-base rotation (3x3) + translation
    detections.json       prompt -> [{label, score, bbox_xyxy, mask_file}]
    masks/*.png           8-bit detection masks (0 clear, 255 set)
    scene.json            optional metadata (name, archetype, target_prompt)
    ground_truth/         optional: gt_target.png, gt_visible_target.png,
                          regions.json + regions/*.png, objects/*.png

RGB and depth must share dimensions with the intrinsics (the toolkit assumes
pre-registered streams); mismatches are validation findings, not warnings.

Config files are JSON with units spelled out in key names (v_t_m and friends);
unknown keys are errors so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

import json
import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .errors import ValidationError
from .evaluation import GroundTruth, ObjectMask, TargetRegion
from .geometry import BASE_FRAME, CAMERA_FRAME, CameraIntrinsics, RigidTransform
from .maskops import RefinementConfig, mask_to_u8, u8_to_mask
from .planning import PlanningConfig
from .selection import SelectionConfig

RGB_FILE = "rgb.png"
DEPTH_FILE = "depth.png"
INTRINSICS_FILE = "intrinsics.json"
EXTRINSICS_FILE = "extrinsics.json"
DETECTIONS_FILE = "detections.json"
SCENE_META_FILE = "scene.json"
GT_DIR = "ground_truth"

BACKEND_FIXTURE = "fixture"
BACKEND_REMOTE = "remote"


# ---------------------------------------------------------------------------
# Atomic file helpers
# ---------------------------------------------------------------------------


def write_atomic(path: str | Path, data: bytes) -> None:
    """Write-then-rename so readers never observe partial files."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _encode_png(image: np.ndarray) -> bytes:
    ok, buf = cv2.imencode(".png", image)
    if not ok:
        raise ValueError("PNG encoding failed")
    return buf.tobytes()


def write_image(path: str | Path, image: np.ndarray) -> None:
    write_atomic(path, _encode_png(image))


def write_mask(path: str | Path, mask: np.ndarray) -> None:
    write_image(path, mask_to_u8(mask))


def read_mask(path: str | Path) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if img is None:
        raise ValidationError([f"cannot read mask image {path}"])
    return u8_to_mask(img)


def write_text_atomic(path: str | Path, text: str) -> None:
    write_atomic(path, text.encode("utf-8"))


def write_json_atomic(path: str | Path, obj) -> None:
    write_text_atomic(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def save_xyz(path: str | Path, points: np.ndarray) -> None:
    """ASCII point cloud: one "x y z" line per point, meters."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    lines = "".join(f"{x:.9f} {y:.9f} {z:.9f}\n" for x, y, z in pts)
    write_text_atomic(path, lines)


def load_xyz(path: str | Path) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(v) for v in line.split()])
    return np.asarray(rows, dtype=np.float64).reshape(-1, 3)


def _safe_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", name)


# ---------------------------------------------------------------------------
# SceneBundle
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SceneBundle:
    """Loaded scene observation: images, calibration, fixture detections,
    optional ground truth."""

    path: Path
    rgb: np.ndarray
    depth: np.ndarray
    intrinsics: CameraIntrinsics
    extrinsics: RigidTransform
    ground_truth: GroundTruth | None = None
    meta: dict = field(default_factory=dict)


def validate_bundle(path: str | Path) -> list[str]:
    """Structural findings for a bundle directory; empty list means loadable."""
    root = Path(path)
    findings: list[str] = []
    if not root.is_dir():
        return [f"{root} is not a directory"]

    for name in (RGB_FILE, DEPTH_FILE, INTRINSICS_FILE, EXTRINSICS_FILE, DETECTIONS_FILE):
        if not (root / name).is_file():
            findings.append(f"{name} absent")
    if findings:
        return findings

    rgb = cv2.imread(str(root / RGB_FILE), cv2.IMREAD_COLOR)
    if rgb is None:
        findings.append(f"{RGB_FILE} unreadable")
    depth = cv2.imread(str(root / DEPTH_FILE), cv2.IMREAD_UNCHANGED)
    if depth is None:
        findings.append(f"{DEPTH_FILE} unreadable")
    elif depth.dtype != np.uint16 or depth.ndim != 2:
        findings.append(f"{DEPTH_FILE} must be 16-bit single-channel, got {depth.dtype}")

    intr = None
    try:
        with open(root / INTRINSICS_FILE, "r", encoding="utf-8") as fh:
            intr = CameraIntrinsics(**json.load(fh))
    except (ValueError, TypeError, KeyError) as exc:
        findings.append(f"{INTRINSICS_FILE} invalid: {exc}")

    try:
        with open(root / EXTRINSICS_FILE, "r", encoding="utf-8") as fh:
            ext = json.load(fh)
        RigidTransform(np.asarray(ext["rotation"]), np.asarray(ext["translation"]),
                       ext.get("from_frame", CAMERA_FRAME), ext.get("to_frame", BASE_FRAME))
    except (ValueError, TypeError, KeyError) as exc:
        findings.append(f"{EXTRINSICS_FILE} invalid: {exc}")

    if rgb is not None and depth is not None and depth.ndim == 2:
        if rgb.shape[:2] != depth.shape:
            findings.append(
                f"unregistered streams: rgb {rgb.shape[:2]} vs depth {depth.shape}"
            )
        if intr is not None and rgb.shape[:2] != intr.shape:
            findings.append(f"rgb {rgb.shape[:2]} does not match intrinsics {intr.shape}")

    try:
        with open(root / DETECTIONS_FILE, "r", encoding="utf-8") as fh:
            dets = json.load(fh)
        if not isinstance(dets, dict):
            findings.append(f"{DETECTIONS_FILE} must map prompts to lists")
        else:
            for prompt, records in dets.items():
                for rec in records:
                    mask_file = root / rec["mask_file"]
                    if not mask_file.is_file():
                        findings.append(f"mask file {rec['mask_file']} absent (prompt {prompt!r})")
    except (ValueError, TypeError, KeyError) as exc:
        findings.append(f"{DETECTIONS_FILE} invalid: {exc}")

    gt_dir = root / GT_DIR
    if gt_dir.is_dir():
        for name in ("gt_target.png", "gt_visible_target.png", "regions.json"):
            if not (gt_dir / name).is_file():
                findings.append(f"{GT_DIR}/{name} absent")
        regions_file = gt_dir / "regions.json"
        if regions_file.is_file():
            try:
                with open(regions_file, "r", encoding="utf-8") as fh:
                    regions = json.load(fh)["regions"]
                weights = sum(float(r["weight"]) for r in regions)
                if abs(weights - 1.0) > 1e-6:
                    findings.append(f"region weights sum to {weights}, expected 1")
                for rec in regions:
                    if not (gt_dir / rec["mask_file"]).is_file():
                        findings.append(f"region mask {rec['mask_file']} absent")
            except (ValueError, TypeError, KeyError) as exc:
                findings.append(f"{GT_DIR}/regions.json invalid: {exc}")
    return findings


def load_bundle(path: str | Path) -> SceneBundle:
    """Load and validate a bundle; raises ValidationError listing findings."""
    root = Path(path)
    findings = validate_bundle(root)
    if findings:
        raise ValidationError(findings)

    rgb = cv2.imread(str(root / RGB_FILE), cv2.IMREAD_COLOR)
    depth = cv2.imread(str(root / DEPTH_FILE), cv2.IMREAD_UNCHANGED)
    with open(root / INTRINSICS_FILE, "r", encoding="utf-8") as fh:
        intrinsics = CameraIntrinsics(**json.load(fh))
    with open(root / EXTRINSICS_FILE, "r", encoding="utf-8") as fh:
        ext = json.load(fh)
    extrinsics = RigidTransform(
        np.asarray(ext["rotation"]), np.asarray(ext["translation"]),
        ext.get("from_frame", CAMERA_FRAME), ext.get("to_frame", BASE_FRAME),
    )

    ground_truth = None
    gt_dir = root / GT_DIR
    if gt_dir.is_dir():
        with open(gt_dir / "regions.json", "r", encoding="utf-8") as fh:
            region_recs = json.load(fh)["regions"]
        regions = tuple(
            TargetRegion(rec["name"], read_mask(gt_dir / rec["mask_file"]), float(rec["weight"]))
            for rec in region_recs
        )
        objects = []
        objects_dir = gt_dir / "objects"
        if objects_dir.is_dir():
            index_file = objects_dir / "objects.json"
            with open(index_file, "r", encoding="utf-8") as fh:
                object_recs = json.load(fh)["objects"]
            objects = [
                ObjectMask(rec["name"], read_mask(objects_dir / rec["mask_file"]))
                for rec in object_recs
            ]
        visible = read_mask(gt_dir / "gt_visible_target.png")
        ground_truth = GroundTruth(regions=regions, objects=tuple(objects), visible_target=visible)

    meta = {}
    meta_file = root / SCENE_META_FILE
    if meta_file.is_file():
        with open(meta_file, "r", encoding="utf-8") as fh:
            meta = json.load(fh)

    return SceneBundle(
        path=root, rgb=rgb, depth=depth, intrinsics=intrinsics,
        extrinsics=extrinsics, ground_truth=ground_truth, meta=meta,
    )


def save_rendered_scene(scene, out_dir: str | Path) -> Path:
    """Write a synthscene render as a bundle directory; returns the path."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(exist_ok=True)

    write_image(root / RGB_FILE, scene.rgb)
    write_image(root / DEPTH_FILE, scene.depth)
    intr = scene.intrinsics
    write_json_atomic(root / INTRINSICS_FILE, {
        "fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
        "width": intr.width, "height": intr.height, "depth_scale": intr.depth_scale,
    })
    write_json_atomic(root / EXTRINSICS_FILE, {
        "rotation": scene.extrinsics.rotation.tolist(),
        "translation": scene.extrinsics.translation.tolist(),
        "from_frame": scene.extrinsics.from_frame,
        "to_frame": scene.extrinsics.to_frame,
    })

    detections_index: dict[str, list[dict]] = {}
    for p_idx, (prompt, dets) in enumerate(sorted(scene.detections.items())):
        records = []
        for d_idx, det in enumerate(dets):
            mask_file = f"masks/p{p_idx}_{d_idx}_{_safe_name(det.label)}.png"
            write_mask(root / mask_file, det.mask)
            records.append({
                "label": det.label,
                "score": det.score,
                "bbox_xyxy": list(det.bbox),
                "mask_file": mask_file,
            })
        detections_index[prompt] = records
    write_json_atomic(root / DETECTIONS_FILE, detections_index)
    write_json_atomic(root / SCENE_META_FILE, scene.meta)

    gt = scene.ground_truth
    gt_dir = root / GT_DIR
    (gt_dir / "regions").mkdir(parents=True, exist_ok=True)
    (gt_dir / "objects").mkdir(exist_ok=True)
    gt_target = np.zeros_like(gt.visible_target)
    region_records = []
    for region in gt.regions:
        mask_file = f"regions/{_safe_name(region.name)}.png"
        write_mask(gt_dir / mask_file, region.mask)
        region_records.append({"name": region.name, "weight": region.weight,
                               "mask_file": mask_file})
        gt_target |= region.mask
    write_mask(gt_dir / "gt_target.png", gt_target)
    write_mask(gt_dir / "gt_visible_target.png", gt.visible_target)
    write_json_atomic(gt_dir / "regions.json", {"regions": region_records})
    object_records = []
    for obj in gt.objects:
        mask_file = f"{_safe_name(obj.name)}.png"
        write_mask(gt_dir / "objects" / mask_file, obj.mask)
        object_records.append({"name": obj.name, "mask_file": mask_file})
    write_json_atomic(gt_dir / "objects" / "objects.json", {"objects": object_records})
    return root


# ---------------------------------------------------------------------------
# Pipeline configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PipelineConfig:
    target_prompt: str = "white table"
    refinement: RefinementConfig = field(default_factory=RefinementConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    planning: PlanningConfig = field(default_factory=PlanningConfig)
    backend: str = BACKEND_FIXTURE
    endpoint: str | None = None

    def __post_init__(self):
        if not self.target_prompt:
            raise ValueError("target_prompt must be nonempty")
        if self.backend not in (BACKEND_FIXTURE, BACKEND_REMOTE):
            raise ValueError(f"backend must be fixture or remote, got {self.backend!r}")
        if self.backend == BACKEND_REMOTE and not self.endpoint:
            raise ValueError("remote backend requires an endpoint")


_REFINEMENT_KEYS = {
    "target_erosion_kernel_px": "target_erosion_kernel",
    "inverted_erosion_kernel_px": "inverted_erosion_kernel",
    "fine_feature_area_max_px": "fine_feature_area_max",
    "fine_feature_prompt": "fine_feature_prompt",
    "target_confidence": "target_confidence",
    "fine_confidence": "fine_confidence",
}
_SELECTION_KEYS = {
    "v_t_m": "v_t",
    "v_nt_m": "v_nt",
    "max_reach_m": "max_reach",
    "sor_neighbors": "sor_neighbors",
    "sor_std_ratio": "sor_std_ratio",
    "voxel_center": "voxel_center",
}
_PLANNING_KEYS = {
    "standoff_m": "standoff",
    "normal_k": "normal_k",
    "ordering": "ordering",
}
_TOP_KEYS = ("target_prompt", "backend", "endpoint", "refinement", "selection", "planning")


def _parse_section(obj: dict, mapping: dict[str, str], section: str, cls):
    unknown = set(obj) - set(mapping)
    if unknown:
        raise ValidationError([f"unknown config key {section}.{k}" for k in sorted(unknown)])
    try:
        return cls(**{mapping[k]: v for k, v in obj.items()})
    except ValueError as exc:
        raise ValidationError([f"config section {section!r}: {exc}"]) from exc


def config_from_dict(obj: dict) -> PipelineConfig:
    unknown = set(obj) - set(_TOP_KEYS)
    if unknown:
        raise ValidationError([f"unknown config key {k}" for k in sorted(unknown)])
    refinement = _parse_section(obj.get("refinement", {}), _REFINEMENT_KEYS,
                                "refinement", RefinementConfig)
    selection = _parse_section(obj.get("selection", {}), _SELECTION_KEYS,
                               "selection", SelectionConfig)
    planning = _parse_section(obj.get("planning", {}), _PLANNING_KEYS,
                              "planning", PlanningConfig)
    try:
        return PipelineConfig(
            target_prompt=obj.get("target_prompt", PipelineConfig.target_prompt),
            refinement=refinement, selection=selection, planning=planning,
            backend=obj.get("backend", BACKEND_FIXTURE),
            endpoint=obj.get("endpoint"),
        )
    except ValueError as exc:
        raise ValidationError([str(exc)]) from exc


def config_to_dict(cfg: PipelineConfig) -> dict:
    r, s, p = cfg.refinement, cfg.selection, cfg.planning
    out = {
        "target_prompt": cfg.target_prompt,
        "backend": cfg.backend,
        "refinement": {
            "target_erosion_kernel_px": r.target_erosion_kernel,
            "inverted_erosion_kernel_px": r.inverted_erosion_kernel,
            "fine_feature_area_max_px": r.fine_feature_area_max,
            "fine_feature_prompt": r.fine_feature_prompt,
            "target_confidence": r.target_confidence,
            "fine_confidence": r.fine_confidence,
        },
        "selection": {
            "v_t_m": s.v_t, "v_nt_m": s.v_nt, "max_reach_m": s.max_reach,
            "sor_neighbors": s.sor_neighbors, "sor_std_ratio": s.sor_std_ratio,
            "voxel_center": s.voxel_center,
        },
        "planning": {
            "standoff_m": p.standoff, "normal_k": p.normal_k, "ordering": p.ordering,
        },
    }
    if cfg.endpoint is not None:
        out["endpoint"] = cfg.endpoint
    return out


def load_config(path: str | Path) -> PipelineConfig:
    """Parse a config file; an empty file yields the full default config."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read().strip()
    if not text:
        return PipelineConfig()
    try:
        obj = json.loads(text)
    except ValueError as exc:
        raise ValidationError([f"config {path} is not valid JSON: {exc}"]) from exc
    if not isinstance(obj, dict):
        raise ValidationError([f"config {path} must be a JSON object"])
    return config_from_dict(obj)


def save_config(cfg: PipelineConfig, path: str | Path) -> None:
    write_json_atomic(path, config_to_dict(cfg))
