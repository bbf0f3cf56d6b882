"""Deterministic synthetic scene bundles for testing the pipeline.

Scenes are ray-cast against analytic primitives (rectangular surface
patches, boxes, cylinders), producing a 16-bit millimeter depth image, a
flat-shaded color image, exact per-surface ground-truth masks, and fixture
detections derived from the ground truth with controllable corruption:

* ``boundary_dilate_px`` grows detection masks to simulate segmenter bleed;
* ``noise_px`` flips isolated pixels on and off (what erosion exists to fix);
* ``fine_feature_dropout`` removes thin objects' cutouts from the
  target-pass detections while keeping the objects in the fine-feature-pass
  detections, planting exactly the mis-segmentation the non-target
  refinement is meant to repair.

Three archetypes are provided (tabletop, railing, chair) with up to three
non-target objects each; the chair carries two equally weighted target
regions (seat and backrest).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import maskops
from .errors import ValidationError
from .evaluation import GroundTruth, ObjectMask, TargetRegion
from .geometry import BASE_FRAME, CAMERA_FRAME, CameraIntrinsics, RigidTransform, look_at
from .segbackend import Detection

_NEAR_CLIP = 0.05

SHAPE_CUBOID = "cuboid"
SHAPE_CYLINDER = "cylinder"
SHAPE_TUBE = "tube"

SURFACE_SLAB = "slab"
SURFACE_BOX = "box"

ARCHETYPES = ("tabletop", "railing", "chair")


@dataclass(frozen=True)
class TargetSurfaceSpec:
    """A target surface: a thin rectangular patch or a full box, posed in base."""

    name: str
    kind: str
    dimensions: tuple[float, ...]
    pose: RigidTransform
    weight: float = 1.0


@dataclass(frozen=True)
class ObjectSpec:
    """A non-target object; tubes count as thin for the dropout corruption."""

    name: str
    shape: str
    dimensions: tuple[float, ...]
    pose: RigidTransform

    @property
    def thin(self) -> bool:
        return self.shape == SHAPE_TUBE


@dataclass(frozen=True)
class CameraSpec:
    intrinsics: CameraIntrinsics
    pose: RigidTransform  # camera -> base


@dataclass(frozen=True)
class Corruption:
    boundary_dilate_px: int = 0
    fine_feature_dropout: bool = False
    noise_px: int = 0


@dataclass(frozen=True)
class SceneSpec:
    name: str
    archetype: str
    target_prompt: str
    targets: tuple[TargetSurfaceSpec, ...]
    objects: tuple[ObjectSpec, ...]
    camera: CameraSpec
    corruption: Corruption = Corruption()

    def validate(self) -> list[str]:
        findings = []
        if not self.targets:
            findings.append("scene has no target surface")
        if abs(sum(t.weight for t in self.targets) - 1.0) > 1e-6:
            findings.append("target weights do not sum to 1")
        if not self.target_prompt:
            findings.append("target_prompt is empty")
        for t in self.targets:
            if t.kind not in (SURFACE_SLAB, SURFACE_BOX):
                findings.append(f"target {t.name}: unknown kind {t.kind!r}")
            if any(d <= 0 for d in t.dimensions):
                findings.append(f"target {t.name}: nonpositive dimension")
        for o in self.objects:
            if o.shape not in (SHAPE_CUBOID, SHAPE_CYLINDER, SHAPE_TUBE):
                findings.append(f"object {o.name}: unknown shape {o.shape!r}")
            if any(d <= 0 for d in o.dimensions):
                findings.append(f"object {o.name}: nonpositive dimension")
            if o.shape == SHAPE_TUBE:
                # Radius must render at least one pixel wide at the tube's far end.
                radius = o.dimensions[0]
                far = (np.linalg.norm(self.camera.pose.translation - o.pose.translation)
                       + max(o.dimensions))
                if radius * self.camera.intrinsics.fx / far < 1.0:
                    findings.append(f"object {o.name}: tube radius below one rendered pixel")
        return findings


# ---------------------------------------------------------------------------
# Ray casting
# ---------------------------------------------------------------------------


def _rays(camera: CameraSpec) -> tuple[np.ndarray, np.ndarray]:
    """Ray origin (3,) and directions (H, W, 3) in the base frame.

    Directions carry camera-frame z component 1, so the ray parameter equals
    camera depth.
    """
    intr = camera.intrinsics
    us = np.arange(intr.width, dtype=np.float64)
    vs = np.arange(intr.height, dtype=np.float64)
    du = (us - intr.cx) / intr.fx
    dv = (vs - intr.cy) / intr.fy
    dirs_cam = np.empty((intr.height, intr.width, 3), dtype=np.float64)
    dirs_cam[..., 0] = du[None, :]
    dirs_cam[..., 1] = dv[:, None]
    dirs_cam[..., 2] = 1.0
    dirs_base = dirs_cam @ camera.pose.rotation.T
    return camera.pose.translation.copy(), dirs_base


def _to_local(pose: RigidTransform, origin: np.ndarray, dirs: np.ndarray):
    rot_t = pose.rotation.T
    o = rot_t @ (origin - pose.translation)
    d = dirs @ rot_t.T
    return o, d


def _intersect_slab(origin, dirs, pose: RigidTransform, width: float, depth: float) -> np.ndarray:
    """Rectangle of size width x depth in the local z=0 plane."""
    o, d = _to_local(pose, origin, dirs)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = -o[2] / d[..., 2]
    x = o[0] + s * d[..., 0]
    y = o[1] + s * d[..., 1]
    hit = (s > _NEAR_CLIP) & (np.abs(x) <= width / 2) & (np.abs(y) <= depth / 2)
    return np.where(hit, s, np.inf)


def _intersect_box(origin, dirs, pose: RigidTransform, sx: float, sy: float, sz: float) -> np.ndarray:
    """Axis-aligned box in the local frame, centered, with full extents sx, sy, sz."""
    o, d = _to_local(pose, origin, dirs)
    half = np.array([sx, sy, sz]) / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - o) / d
        t2 = (half - o) / d
    tmin = np.minimum(t1, t2).max(axis=-1)
    tmax = np.maximum(t1, t2).min(axis=-1)
    hit = (tmax >= tmin) & (tmin > _NEAR_CLIP)
    return np.where(hit, tmin, np.inf)


def _intersect_cylinder(origin, dirs, pose: RigidTransform, radius: float, length: float) -> np.ndarray:
    """Capped cylinder along the local z axis, z in [-length/2, length/2]."""
    o, d = _to_local(pose, origin, dirs)
    half = length / 2.0
    a = d[..., 0] ** 2 + d[..., 1] ** 2
    b = 2.0 * (o[0] * d[..., 0] + o[1] * d[..., 1])
    c = o[0] ** 2 + o[1] ** 2 - radius * radius
    disc = b * b - 4.0 * a * c
    with np.errstate(divide="ignore", invalid="ignore"):
        sqrt_disc = np.sqrt(np.where(disc >= 0, disc, np.nan))
        t_side = np.where(disc >= 0, (-b - sqrt_disc) / (2.0 * a), np.inf)
    z_side = o[2] + t_side * d[..., 2]
    side_ok = np.isfinite(t_side) & (t_side > _NEAR_CLIP) & (np.abs(z_side) <= half)
    best = np.where(side_ok, t_side, np.inf)
    for cap_z in (-half, half):
        with np.errstate(divide="ignore", invalid="ignore"):
            t_cap = (cap_z - o[2]) / d[..., 2]
        x = o[0] + t_cap * d[..., 0]
        y = o[1] + t_cap * d[..., 1]
        cap_ok = np.isfinite(t_cap) & (t_cap > _NEAR_CLIP) & (x * x + y * y <= radius * radius)
        best = np.minimum(best, np.where(cap_ok, t_cap, np.inf))
    return best


def _intersect_target(origin, dirs, t: TargetSurfaceSpec) -> np.ndarray:
    if t.kind == SURFACE_SLAB:
        return _intersect_slab(origin, dirs, t.pose, *t.dimensions[:2])
    return _intersect_box(origin, dirs, t.pose, *t.dimensions[:3])


def _intersect_object(origin, dirs, o: ObjectSpec) -> np.ndarray:
    if o.shape == SHAPE_CUBOID:
        return _intersect_box(origin, dirs, o.pose, *o.dimensions[:3])
    # cylinders and tubes share the primitive: (radius, length)
    return _intersect_cylinder(origin, dirs, o.pose, *o.dimensions[:2])


# ---------------------------------------------------------------------------
# Rendering and fixture synthesis
# ---------------------------------------------------------------------------

_ARCHETYPE_TARGET_COLOR = {
    "tabletop": (235, 235, 235),
    "railing": (180, 180, 190),
    "chair": (40, 40, 40),
}

_OBJECT_COLORS = [
    (60, 120, 200), (200, 120, 60), (90, 180, 90), (200, 200, 70),
    (150, 90, 170), (90, 190, 190),
]

_BACKGROUND_COLOR = (52, 52, 56)


@dataclass(frozen=True, eq=False)
class RenderedScene:
    """In-memory render: images, masks, fixture detections, ground truth."""

    spec: SceneSpec
    rgb: np.ndarray
    depth: np.ndarray
    intrinsics: CameraIntrinsics
    extrinsics: RigidTransform
    ground_truth: GroundTruth
    detections: dict[str, list[Detection]]
    meta: dict = field(default_factory=dict)


def _bbox_of(mask: np.ndarray) -> tuple[float, float, float, float] | None:
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return None
    return (float(xs.min()), float(ys.min()), float(xs.max()) + 1.0, float(ys.max()) + 1.0)


def _apply_noise(mask: np.ndarray, noise_px: int, rng: np.random.Generator) -> np.ndarray:
    if noise_px <= 0:
        return mask
    h, w = mask.shape
    out = mask.copy()
    salt = (rng.integers(0, h, noise_px), rng.integers(0, w, noise_px))
    pepper = (rng.integers(0, h, noise_px), rng.integers(0, w, noise_px))
    out[salt] = True
    out[pepper] = False
    return out


def render(spec: SceneSpec, seed: int = 0) -> RenderedScene:
    """Ray-cast the scene and derive ground truth and fixture detections."""
    findings = spec.validate()
    if findings:
        raise ValidationError(findings)

    intr = spec.camera.intrinsics
    origin, dirs = _rays(spec.camera)

    # Depth candidates: targets first, then objects. id 0 is background.
    layers = [_intersect_target(origin, dirs, t) for t in spec.targets]
    layers += [_intersect_object(origin, dirs, o) for o in spec.objects]
    stack = np.stack([np.full(intr.shape, np.inf)] + layers)
    ids = np.argmin(stack, axis=0)
    depth_m = np.take_along_axis(stack, ids[None], axis=0)[0]
    ids[~np.isfinite(depth_m)] = 0
    depth_m = np.where(np.isfinite(depth_m), depth_m, 0.0)

    depth_mm = np.clip(np.round(depth_m * 1000.0), 0, 65535).astype(np.uint16)

    n_targets = len(spec.targets)
    target_ids = range(1, 1 + n_targets)
    object_ids = range(1 + n_targets, 1 + n_targets + len(spec.objects))

    # Full (unoccluded) region masks come from casting the targets alone.
    full_region_masks = [np.isfinite(layer) for layer in layers[:n_targets]]
    visible_target = np.isin(ids, list(target_ids))
    object_masks = [ids == oid for oid in object_ids]

    if not any(m.any() for m in full_region_masks):
        raise ValidationError([f"camera does not see any target surface in scene {spec.name!r}"])

    rgb = np.empty(intr.shape + (3,), dtype=np.uint8)
    rgb[:] = _BACKGROUND_COLOR
    target_color = _ARCHETYPE_TARGET_COLOR.get(spec.archetype, (200, 200, 200))
    for tid in target_ids:
        rgb[ids == tid] = target_color
    for i, oid in enumerate(object_ids):
        rgb[ids == oid] = _OBJECT_COLORS[i % len(_OBJECT_COLORS)]

    ground_truth = GroundTruth(
        regions=tuple(
            TargetRegion(t.name, full_region_masks[i], t.weight)
            for i, t in enumerate(spec.targets)
        ),
        objects=tuple(
            ObjectMask(o.name, object_masks[i]) for i, o in enumerate(spec.objects)
        ),
        visible_target=visible_target,
    )

    rng = np.random.default_rng(seed)
    thin_visible = [object_masks[i] for i, o in enumerate(spec.objects) if o.thin]

    target_detections = []
    for i, t in enumerate(spec.targets):
        mask = (ids == (1 + i)).copy()
        if spec.corruption.fine_feature_dropout:
            # The segmenter "paints over" thin objects lying on this region.
            for tm in thin_visible:
                mask |= tm & full_region_masks[i]
        if spec.corruption.boundary_dilate_px > 0:
            mask = maskops.dilate(mask, 2 * spec.corruption.boundary_dilate_px + 1)
        mask = _apply_noise(mask, spec.corruption.noise_px, rng)
        bbox = _bbox_of(mask)
        if bbox is None:
            continue
        score = round(float(rng.uniform(0.5, 0.95)), 4)
        target_detections.append(Detection(spec.target_prompt, score, bbox, mask))

    fine_detections = []
    for i, o in enumerate(spec.objects):
        small = maskops.area(object_masks[i]) < 1500
        if not (o.thin or small):
            continue
        mask = object_masks[i]
        bbox = _bbox_of(mask)
        if bbox is None:
            continue
        score = round(float(rng.uniform(0.25, 0.6)), 4)
        fine_detections.append(Detection(o.name, score, bbox, mask))
    if spec.corruption.fine_feature_dropout and maskops.area(visible_target) >= 21_000:
        # Oversized spurious detection; the area threshold must reject it.
        bbox = _bbox_of(visible_target)
        fine_detections.append(Detection("surface", 0.3, bbox, visible_target.copy()))

    meta = {
        "name": spec.name,
        "archetype": spec.archetype,
        "target_prompt": spec.target_prompt,
        "seed": int(seed),
        "corruption": {
            "boundary_dilate_px": spec.corruption.boundary_dilate_px,
            "fine_feature_dropout": spec.corruption.fine_feature_dropout,
            "noise_px": spec.corruption.noise_px,
        },
    }

    return RenderedScene(
        spec=spec,
        rgb=rgb,
        depth=depth_mm,
        intrinsics=intr,
        extrinsics=replace_frames(spec.camera.pose),
        ground_truth=ground_truth,
        detections={
            spec.target_prompt: target_detections,
            maskops.FINE_FEATURE_PROMPT: fine_detections,
        },
        meta=meta,
    )


def replace_frames(pose: RigidTransform) -> RigidTransform:
    """Relabel a camera pose as the camera-to-base extrinsics."""
    return RigidTransform(pose.rotation, pose.translation,
                          from_frame=CAMERA_FRAME, to_frame=BASE_FRAME)


# ---------------------------------------------------------------------------
# Archetype builders and the standard suite
# ---------------------------------------------------------------------------


def _pose(x: float, y: float, z: float, rotation: np.ndarray | None = None) -> RigidTransform:
    rot = np.eye(3) if rotation is None else rotation
    return RigidTransform(rot, np.array([x, y, z]), from_frame="object", to_frame=BASE_FRAME)


def _rot_x(angle_rad: float) -> np.ndarray:
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _default_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=380.0, fy=380.0, cx=319.5, cy=239.5, width=640, height=480)


def _tabletop(count: int) -> tuple[tuple[TargetSurfaceSpec, ...], tuple[ObjectSpec, ...], CameraSpec, str]:
    table_z = 0.0
    targets = (
        TargetSurfaceSpec("tabletop", SURFACE_SLAB, (1.0, 0.6), _pose(0.62, 0.0, table_z)),
    )
    objects = (
        ObjectSpec("oxygen tube", SHAPE_TUBE, (0.006, 0.55),
                   _pose(0.56, 0.05, table_z + 0.006, _rot_x(np.pi / 2))),
        ObjectSpec("mobile phone", SHAPE_CUBOID, (0.16, 0.08, 0.012),
                   _pose(0.78, -0.14, table_z + 0.006)),
        ObjectSpec("water bottle", SHAPE_CYLINDER, (0.035, 0.21),
                   _pose(0.46, -0.17, table_z + 0.105)),
    )[:count]
    camera = CameraSpec(
        _default_intrinsics(),
        look_at(position=(0.08, 0.0, 0.78), target=(0.62, 0.0, table_z)),
    )
    return targets, objects, camera, "white table"


def _railing(count: int) -> tuple[tuple[TargetSurfaceSpec, ...], tuple[ObjectSpec, ...], CameraSpec, str]:
    bar_z = 0.12
    targets = (
        TargetSurfaceSpec("railing", SURFACE_BOX, (0.06, 1.05, 0.07), _pose(0.66, 0.0, bar_z)),
    )
    objects = (
        ObjectSpec("drainage tube", SHAPE_TUBE, (0.0055, 0.5),
                   _pose(0.66, 0.12, bar_z + 0.041, _rot_x(np.pi / 2))),
        ObjectSpec("sanitizer holder", SHAPE_CUBOID, (0.07, 0.09, 0.12),
                   _pose(0.66, -0.3, bar_z + 0.095)),
        ObjectSpec("clip light", SHAPE_CYLINDER, (0.02, 0.05),
                   _pose(0.66, 0.33, bar_z + 0.06)),
    )[:count]
    camera = CameraSpec(
        _default_intrinsics(),
        look_at(position=(0.06, 0.0, 0.62), target=(0.66, 0.0, bar_z)),
    )
    return targets, objects, camera, "railing"


def _chair(count: int) -> tuple[tuple[TargetSurfaceSpec, ...], tuple[ObjectSpec, ...], CameraSpec, str]:
    seat_z = -0.02
    targets = (
        TargetSurfaceSpec("seat", SURFACE_BOX, (0.45, 0.45, 0.05),
                          _pose(0.66, 0.0, seat_z), weight=0.5),
        TargetSurfaceSpec("backrest", SURFACE_BOX, (0.05, 0.45, 0.5),
                          _pose(0.9, 0.0, seat_z + 0.27), weight=0.5),
    )
    objects = (
        ObjectSpec("strap", SHAPE_TUBE, (0.006, 0.4),
                   _pose(0.62, -0.02, seat_z + 0.031, _rot_x(np.pi / 2))),
        ObjectSpec("thin book", SHAPE_CUBOID, (0.15, 0.21, 0.015),
                   _pose(0.72, 0.12, seat_z + 0.033)),
        ObjectSpec("water bottle", SHAPE_CYLINDER, (0.033, 0.2),
                   _pose(0.58, 0.14, seat_z + 0.125)),
    )[:count]
    camera = CameraSpec(
        _default_intrinsics(),
        look_at(position=(0.02, 0.0, 0.72), target=(0.72, 0.0, seat_z + 0.1)),
    )
    return targets, objects, camera, "black chair"


_BUILDERS = {"tabletop": _tabletop, "railing": _railing, "chair": _chair}


def archetype_scene(archetype: str, object_count: int, corruption: Corruption = Corruption(),
                    name: str | None = None) -> SceneSpec:
    if archetype not in _BUILDERS:
        raise ValidationError([f"unknown archetype {archetype!r} (want one of {ARCHETYPES})"])
    if not 0 <= object_count <= 3:
        raise ValidationError([f"object_count must be 0..3, got {object_count}"])
    targets, objects, camera, prompt = _BUILDERS[archetype](object_count)
    return SceneSpec(
        name=name or f"{archetype}_{object_count}obj",
        archetype=archetype,
        target_prompt=prompt,
        targets=targets,
        objects=objects,
        camera=camera,
        corruption=corruption,
    )


def standard_suite(seed: int = 0) -> list[tuple[SceneSpec, int]]:
    """Scene specs plus per-scene seeds: 12 clean scenes (3 archetypes x 0..3
    objects) and 9 corrupted ones planting the fine-feature mis-segmentation
    (counts 1..3, whose first object is always a tube)."""
    out = []
    index = 0
    for archetype in ARCHETYPES:
        for count in range(4):
            spec = archetype_scene(archetype, count,
                                   name=f"{archetype}_{count}obj_clean")
            out.append((spec, seed * 1000 + index))
            index += 1
    corrupt = Corruption(boundary_dilate_px=2, fine_feature_dropout=True, noise_px=120)
    for archetype in ARCHETYPES:
        for count in range(1, 4):
            spec = archetype_scene(archetype, count, corruption=corrupt,
                                   name=f"{archetype}_{count}obj_corrupt")
            out.append((spec, seed * 1000 + index))
            index += 1
    return out


# ---------------------------------------------------------------------------
# Scene spec (de)serialization for the gen command
# ---------------------------------------------------------------------------


def _pose_to_json(p: RigidTransform) -> dict:
    return {"rotation": p.rotation.tolist(), "translation": p.translation.tolist()}


def _pose_from_json(obj: dict) -> RigidTransform:
    return RigidTransform(
        np.asarray(obj["rotation"], dtype=np.float64),
        np.asarray(obj["translation"], dtype=np.float64),
        from_frame="object", to_frame=BASE_FRAME,
    )


def spec_to_json(spec: SceneSpec) -> dict:
    return {
        "name": spec.name,
        "archetype": spec.archetype,
        "target_prompt": spec.target_prompt,
        "targets": [
            {"name": t.name, "kind": t.kind, "dimensions": list(t.dimensions),
             "pose": _pose_to_json(t.pose), "weight": t.weight}
            for t in spec.targets
        ],
        "objects": [
            {"name": o.name, "shape": o.shape, "dimensions": list(o.dimensions),
             "pose": _pose_to_json(o.pose)}
            for o in spec.objects
        ],
        "camera": {
            "intrinsics": {
                "fx": spec.camera.intrinsics.fx, "fy": spec.camera.intrinsics.fy,
                "cx": spec.camera.intrinsics.cx, "cy": spec.camera.intrinsics.cy,
                "width": spec.camera.intrinsics.width, "height": spec.camera.intrinsics.height,
                "depth_scale": spec.camera.intrinsics.depth_scale,
            },
            "pose": _pose_to_json(spec.camera.pose),
        },
        "corruption": {
            "boundary_dilate_px": spec.corruption.boundary_dilate_px,
            "fine_feature_dropout": spec.corruption.fine_feature_dropout,
            "noise_px": spec.corruption.noise_px,
        },
    }


def spec_from_json(obj: dict) -> SceneSpec:
    if "archetype" in obj and "targets" not in obj:
        # Shorthand: {"archetype": ..., "object_count": ..., "corruption": {...}}
        corruption = Corruption(**obj.get("corruption", {}))
        return archetype_scene(obj["archetype"], int(obj.get("object_count", 0)),
                               corruption, name=obj.get("name"))
    cam = obj["camera"]
    camera = CameraSpec(
        CameraIntrinsics(**cam["intrinsics"]),
        RigidTransform(
            np.asarray(cam["pose"]["rotation"], dtype=np.float64),
            np.asarray(cam["pose"]["translation"], dtype=np.float64),
            from_frame=CAMERA_FRAME, to_frame=BASE_FRAME,
        ),
    )
    return SceneSpec(
        name=obj.get("name", "scene"),
        archetype=obj.get("archetype", "custom"),
        target_prompt=obj["target_prompt"],
        targets=tuple(
            TargetSurfaceSpec(t["name"], t["kind"], tuple(t["dimensions"]),
                              _pose_from_json(t["pose"]), t.get("weight", 1.0))
            for t in obj["targets"]
        ),
        objects=tuple(
            ObjectSpec(o["name"], o["shape"], tuple(o["dimensions"]),
                       _pose_from_json(o["pose"]))
            for o in obj.get("objects", [])
        ),
        camera=camera,
        corruption=Corruption(**obj.get("corruption", {})),
    )


def load_spec(path) -> SceneSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return spec_from_json(json.load(fh))
