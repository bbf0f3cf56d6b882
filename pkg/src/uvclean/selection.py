"""Cleaning-point selection: outlier removal, voxel filtering, buffer zone.

The target cloud is cleaned up with statistical outlier removal (skipped for
the non-target cloud so thin features survive), both clouds are voxel
downsampled keeping one original point per occupied voxel, and finally every
target point strictly closer than the buffer distance to any downsampled
non-target point is discarded. Survivors are the cleaning points.

All stages return subsets of their input, so each cleaning point is an
actually observed surface point.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import BASE_FRAME, PointCloud, ROLE_TARGET

log = logging.getLogger(__name__)

VOXEL_CENTER_CELL = "cell"
VOXEL_CENTER_POINTS = "points"


@dataclass(frozen=True)
class SelectionConfig:
    """Distances are meters; the target voxel size doubles as the buffer radius.

    v_t should sit between half and the full diameter of the UV emitter
    footprint; 0.070 matches a 125 mm circular end effector.
    """

    v_t: float = 0.070
    v_nt: float = 0.010
    max_reach: float = 1.3
    sor_neighbors: int = 20
    sor_std_ratio: float = 2.0
    voxel_center: str = VOXEL_CENTER_CELL

    def __post_init__(self):
        for name in ("v_t", "v_nt", "max_reach", "sor_std_ratio"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.sor_neighbors < 1:
            raise ValueError(f"sor_neighbors must be >= 1, got {self.sor_neighbors}")
        if self.voxel_center not in (VOXEL_CENTER_CELL, VOXEL_CENTER_POINTS):
            raise ValueError(f"unknown voxel_center mode {self.voxel_center!r}")


@dataclass(frozen=True)
class SelectionResult:
    """Cleaning points plus per-stage diagnostics."""

    clean: PointCloud
    non_target_down: PointCloud
    counts: dict[str, int]
    empty_stage: str | None = None
    warnings: tuple[str, ...] = ()


def statistical_outlier_removal(cloud: PointCloud, k: int = 20,
                                std_ratio: float = 2.0) -> PointCloud:
    """Drop points whose mean k-nearest-neighbor distance exceeds mu + ratio * sigma.

    Neighbor distances exclude the point itself; mu and sigma are the mean and
    population standard deviation of the per-point means over the whole cloud.
    Clouds with at most k points are returned unchanged (not enough neighbors).
    """
    n = len(cloud)
    if n == 0:
        raise ValueError("statistical outlier removal requires a nonempty cloud")
    if k < 1:
        raise ValueError(f"neighbor count must be >= 1, got {k}")
    if std_ratio <= 0:
        raise ValueError(f"std_ratio must be positive, got {std_ratio}")
    if n <= k:
        log.warning("outlier removal skipped: cloud has %d points, need more than k=%d", n, k)
        return cloud
    tree = cKDTree(cloud.points)
    dists, _ = tree.query(cloud.points, k=k + 1, workers=-1)
    mean_d = dists[:, 1:].mean(axis=1)
    keep = mean_d <= mean_d.mean() + std_ratio * mean_d.std()
    return cloud.with_points(cloud.points[keep])


def _voxel_indices(points: np.ndarray, v: float) -> np.ndarray:
    return np.floor(points / v).astype(np.int64)


def voxel_downsample_nearest(cloud: PointCloud, v: float,
                             center: str = VOXEL_CENTER_CELL) -> PointCloud:
    """Keep, per occupied voxel, the input point nearest the voxel center.

    ``center`` selects the reference: the geometric center of the voxel cell
    (default) or the centroid of the points inside it. Distance ties break on
    the lowest input index; output points keep input order. The output is a
    subset of the input, never synthesized coordinates.
    """
    if v <= 0:
        raise ValueError(f"voxel size must be positive, got {v}")
    if center not in (VOXEL_CENTER_CELL, VOXEL_CENTER_POINTS):
        raise ValueError(f"unknown voxel center mode {center!r}")
    n = len(cloud)
    if n == 0:
        return cloud
    pts = cloud.points
    idx = _voxel_indices(pts, v)
    _, inverse, group_counts = np.unique(idx, axis=0, return_inverse=True, return_counts=True)
    if center == VOXEL_CENTER_CELL:
        ref = (idx + 0.5) * v
    else:
        sums = np.zeros((group_counts.shape[0], 3), dtype=np.float64)
        np.add.at(sums, inverse, pts)
        ref = (sums / group_counts[:, None])[inverse]
    d2 = np.einsum("ij,ij->i", pts - ref, pts - ref)
    order = np.lexsort((np.arange(n), d2, inverse))
    first_of_group = np.ones(n, dtype=bool)
    first_of_group[1:] = inverse[order][1:] != inverse[order][:-1]
    selected = np.sort(order[first_of_group])
    return cloud.with_points(pts[selected])


def buffer_exclude(target: PointCloud, non_target: PointCloud, v_t: float) -> PointCloud:
    """Remove target points strictly closer than ``v_t`` to any non-target point.

    Points at exactly v_t survive. Candidate pairs come from a uniform grid
    hash with cell size v_t over the non-target cloud (27-cell neighborhood);
    the survivor set is identical to the all-pairs check.
    """
    if v_t <= 0:
        raise ValueError(f"buffer distance must be positive, got {v_t}")
    if target.frame != non_target.frame:
        raise ValueError(
            f"clouds in different frames: {target.frame!r} vs {non_target.frame!r}"
        )
    if len(target) == 0 or len(non_target) == 0:
        return target

    tpts, npts = target.points, non_target.points
    v2 = v_t * v_t

    nt_cells = _voxel_indices(npts, v_t)
    nt_order = np.lexsort((nt_cells[:, 2], nt_cells[:, 1], nt_cells[:, 0]))
    nt_sorted = npts[nt_order]
    cells_sorted = nt_cells[nt_order]
    starts = np.ones(len(nt_order), dtype=bool)
    starts[1:] = np.any(cells_sorted[1:] != cells_sorted[:-1], axis=1)
    start_rows = np.flatnonzero(starts)
    bounds = np.append(start_rows, len(nt_order))
    cell_span = {
        tuple(cells_sorted[row]): (bounds[i], bounds[i + 1])
        for i, row in enumerate(start_rows)
    }

    offsets = np.array([(dx, dy, dz)
                        for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)],
                       dtype=np.int64)

    t_cells = _voxel_indices(tpts, v_t)
    _, t_inverse = np.unique(t_cells, axis=0, return_inverse=True)
    excluded = np.zeros(len(target), dtype=bool)
    for group in range(t_inverse.max() + 1):
        members = np.flatnonzero(t_inverse == group)
        cell = t_cells[members[0]]
        spans = [cell_span[key] for key in map(tuple, cell + offsets) if key in cell_span]
        if not spans:
            continue
        cands = np.concatenate([nt_sorted[a:b] for a, b in spans])
        diff = tpts[members][:, None, :] - cands[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        excluded[members] = (d2 < v2).any(axis=1)
    return target.with_points(tpts[~excluded])


def min_squared_separation(a: PointCloud, b: PointCloud, chunk: int = 2048) -> float:
    """Brute-force minimum squared distance between two clouds; inf if either
    is empty. Squared form uses the same arithmetic as the buffer exclusion,
    so boundary comparisons against v_t**2 are exact."""
    if len(a) == 0 or len(b) == 0:
        return float("inf")
    best = np.inf
    bp = b.points
    for i in range(0, len(a), chunk):
        diff = a.points[i:i + chunk, None, :] - bp[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        best = min(best, float(d2.min()))
    return best


def min_separation(a: PointCloud, b: PointCloud, chunk: int = 2048) -> float:
    """Brute-force minimum distance between two clouds; inf if either is empty."""
    return float(np.sqrt(min_squared_separation(a, b, chunk)))


def select_cleaning_points(target: PointCloud, non_target: PointCloud,
                           cfg: SelectionConfig) -> SelectionResult:
    """Full selection chain producing the cleaning points.

    Both clouds must already be in the base frame and reach filtered. Stages:
    outlier removal on the target cloud, voxel downsampling of both clouds,
    then buffer exclusion against the downsampled non-target cloud. An empty
    target cloud after any stage short-circuits with the stage name recorded.
    """
    if target.role != ROLE_TARGET:
        raise ValueError(f"expected a target cloud, got role {target.role!r}")
    if target.frame != BASE_FRAME or non_target.frame != BASE_FRAME:
        raise ValueError("selection expects clouds in the base frame")

    counts = {"target_in": len(target), "non_target_in": len(non_target)}
    warnings: tuple[str, ...] = ()
    empty_clean = PointCloud(np.zeros((0, 3)), BASE_FRAME, ROLE_TARGET)

    nt_down = voxel_downsample_nearest(non_target, cfg.v_nt, cfg.voxel_center)
    counts["non_target_down"] = len(nt_down)

    if len(target) == 0:
        counts.update(sor=0, target_down=0, buffered=0)
        return SelectionResult(empty_clean.as_clean(), nt_down, counts, empty_stage="input")

    if len(target) <= cfg.sor_neighbors:
        warnings += (f"outlier removal skipped: {len(target)} points, "
                     f"need more than k={cfg.sor_neighbors}",)
    cloud = statistical_outlier_removal(target, cfg.sor_neighbors, cfg.sor_std_ratio)
    counts["sor"] = len(cloud)
    if len(cloud) == 0:
        counts.update(target_down=0, buffered=0)
        return SelectionResult(empty_clean.as_clean(), nt_down, counts,
                               empty_stage="sor", warnings=warnings)

    cloud = voxel_downsample_nearest(cloud, cfg.v_t, cfg.voxel_center)
    counts["target_down"] = len(cloud)
    if len(cloud) == 0:
        counts["buffered"] = 0
        return SelectionResult(empty_clean.as_clean(), nt_down, counts,
                               empty_stage="voxel", warnings=warnings)

    cloud = buffer_exclude(cloud, nt_down, cfg.v_t)
    counts["buffered"] = len(cloud)
    empty_stage = "buffer" if len(cloud) == 0 else None
    return SelectionResult(cloud.as_clean(), nt_down, counts,
                           empty_stage=empty_stage, warnings=warnings)
